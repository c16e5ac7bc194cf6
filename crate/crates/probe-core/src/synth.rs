//! Deterministic synthetic scenes and the independent oracles used to
//! validate the analytic pipeline (brute-force correlation, Monte-Carlo
//! occupancy marginalization, translation-robustness sweeps, and a
//! two-pass loop harness for retrieval/eval experiments).
//!
//! Nothing here shares kernels with `descriptor` or `matching`; the
//! oracles evaluate their definitions literally.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{make_descriptor, PolarConfig};
use crate::error::{Error, Result};
use crate::matching::kl_jaccard;
use crate::pointcloud::{Point3, PointCloud, Trajectory, TrajectoryFrame};

/// Parameters for one synthetic scene. Identical specs produce identical
/// clouds bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_structures: usize,
    /// Scene extent in meters, centered on the sensor.
    pub area: (f64, f64),
    pub points_per_structure: usize,
    /// Gaussian surface noise, meters.
    pub noise_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_structures: 24,
            area: (140.0, 140.0),
            points_per_structure: 1200,
            noise_std: 0.02,
        }
    }
}

const SENSOR_HEIGHT: f64 = 1.7;

fn sample_structure(rng: &mut ChaCha8Rng, spec: &SceneSpec, out: &mut Vec<Point3>) {
    let (w, h) = spec.area;
    let cx = rng.gen_range(-w / 2.0..w / 2.0);
    let cy = rng.gen_range(-h / 2.0..h / 2.0);
    let noise = Normal::new(0.0, spec.noise_std.max(1e-12)).unwrap();
    let kind = rng.gen_range(0..3u8);
    let base = -SENSOR_HEIGHT;
    match kind {
        // wall: vertical plane of random length and orientation
        0 => {
            let len = rng.gen_range(8.0..28.0);
            let height = rng.gen_range(3.0..7.0);
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (dir.cos(), dir.sin());
            for _ in 0..spec.points_per_structure {
                let t = rng.gen_range(-len / 2.0..len / 2.0);
                let z = rng.gen_range(0.0..height);
                out.push(Point3::new(
                    cx + t * dx + noise.sample(rng),
                    cy + t * dy + noise.sample(rng),
                    base + z + noise.sample(rng),
                ));
            }
        }
        // pillar: cylinder surface
        1 => {
            let radius = rng.gen_range(0.4..1.6);
            let height = rng.gen_range(4.0..10.0);
            for _ in 0..spec.points_per_structure {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = rng.gen_range(0.0..height);
                out.push(Point3::new(
                    cx + radius * a.cos() + noise.sample(rng),
                    cy + radius * a.sin() + noise.sample(rng),
                    base + z + noise.sample(rng),
                ));
            }
        }
        // box: four vertical side faces
        _ => {
            let half_w = rng.gen_range(1.0..4.5);
            let half_d = rng.gen_range(1.0..4.5);
            let height = rng.gen_range(2.0..6.0);
            for _ in 0..spec.points_per_structure {
                let z = rng.gen_range(0.0..height);
                let t = rng.gen_range(-1.0..1.0);
                let (px, py) = match rng.gen_range(0..4u8) {
                    0 => (t * half_w, half_d),
                    1 => (t * half_w, -half_d),
                    2 => (half_w, t * half_d),
                    _ => (-half_w, t * half_d),
                };
                out.push(Point3::new(
                    cx + px + noise.sample(rng),
                    cy + py + noise.sample(rng),
                    base + z + noise.sample(rng),
                ));
            }
        }
    }
}

/// Builds a deterministic cloud of vertical structures.
pub fn generate_scene(spec: &SceneSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.n_structures * spec.points_per_structure);
    for _ in 0..spec.n_structures {
        sample_structure(&mut rng, spec, &mut points);
    }
    PointCloud::new(points)
}

/// Rigid 2-D transform `p' = R(yaw) p + t` on (x, y); z is untouched.
pub fn transform_cloud(cloud: &PointCloud, yaw: f64, translation: (f64, f64)) -> PointCloud {
    let (c, s) = (yaw.cos(), yaw.sin());
    let points = cloud
        .points
        .iter()
        .map(|p| {
            Point3::new(
                c * p.x - s * p.y + translation.0,
                s * p.x + c * p.y + translation.1,
                p.z,
            )
        })
        .collect();
    PointCloud::new(points)
}

/// Direct sampling estimator of the expected occupancy under isotropic
/// translation noise: each sample draws one Cartesian offset, displaces
/// every cell center, re-bins it, and reads the occupancy there (0
/// outside the grid). Returns the per-cell mean and its standard error.
pub fn monte_carlo_mu(
    occ: &Array2<f64>,
    cfg: &PolarConfig,
    n_samples: usize,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let (rings, sectors) = occ.dim();
    let dr = cfg.ring_width();
    let dtheta = cfg.sector_width();

    // cell centers in Cartesian coordinates
    let mut centers = Vec::with_capacity(rings * sectors);
    for r in 0..rings {
        let rc = cfg.ring_center(r);
        for s in 0..sectors {
            let theta = (s as f64 + 0.5) * dtheta;
            centers.push((rc * theta.cos(), rc * theta.sin()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.sigma_t.max(0.0)).unwrap();
    let offsets: Vec<(f64, f64)> = (0..n_samples)
        .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();

    // integer hit counts keep the parallel reduction order-independent
    let counts = offsets
        .par_iter()
        .fold(
            || vec![0u32; rings * sectors],
            |mut acc, &(dx, dy)| {
                for (cell, &(cx, cy)) in centers.iter().enumerate() {
                    let px = cx + dx;
                    let py = cy + dy;
                    let radius = px.hypot(py);
                    if radius >= cfg.max_range {
                        continue;
                    }
                    let ring = ((radius / dr) as usize).min(rings - 1);
                    let mut theta = py.atan2(px);
                    if theta < 0.0 {
                        theta += std::f64::consts::TAU;
                    }
                    let sector = ((theta / dtheta) as usize) % sectors;
                    if occ[[ring, sector]] != 0.0 {
                        acc[cell] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; rings * sectors],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let n = n_samples as f64;
    let mut mu_hat = Array2::zeros((rings, sectors));
    let mut std_err = Array2::zeros((rings, sectors));
    for (cell, hits) in counts.iter().enumerate() {
        let p = *hits as f64 / n;
        mu_hat[[cell / sectors, cell % sectors]] = p;
        std_err[[cell / sectors, cell % sectors]] = (p * (1.0 - p) / n).sqrt();
    }
    (mu_hat, std_err)
}

/// Literal triple-loop evaluation of the normalized circular
/// cross-correlation; the FFT path is checked against this.
pub fn brute_force_cc(g_m: &Array2<f64>, g_q: &Array2<f64>) -> Result<Vec<f64>> {
    if g_m.dim() != g_q.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            g_m.dim(),
            g_q.dim()
        )));
    }
    let norm = |g: &Array2<f64>| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (nm, nq) = (norm(g_m), norm(g_q));
    if nm <= 0.0 || nq <= 0.0 {
        return Err(Error::DegenerateDescriptor(
            "height grid has zero Frobenius norm".into(),
        ));
    }
    let (rings, sectors) = g_m.dim();
    let mut cc = vec![0.0; sectors];
    for (delta, out) in cc.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..rings {
            for s in 0..sectors {
                acc += g_m[[r, s]] * g_q[[r, (s + delta) % sectors]];
            }
        }
        *out = acc / (nm * nq);
    }
    Ok(cc)
}

/// Random structured occupancy: bands of rings covered by dense angular
/// arcs. Band edges start at ring 8 so the grid stays within the regime
/// where the first-order polar-noise model is tight.
pub fn random_arc_grid(seed: u64, cfg: &PolarConfig) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occ = Array2::zeros((cfg.rings, cfg.sectors));
    let bands = rng.gen_range(4..8);
    for _ in 0..bands {
        let start = rng.gen_range(8..cfg.rings.saturating_sub(4));
        let thickness = rng.gen_range(2..6).min(cfg.rings - start);
        let arc_len = rng.gen_range((cfg.sectors * 3) / 4..=cfg.sectors);
        let arc_start = rng.gen_range(0..cfg.sectors);
        for r in start..start + thickness {
            for k in 0..arc_len {
                occ[[r, (arc_start + k) % cfg.sectors]] = 1.0;
            }
        }
    }
    occ
}

/// One cell of a translation-robustness sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub offset_m: f64,
    pub sigma_t: f64,
    pub mean_jkl: f64,
    pub std_jkl: f64,
}

/// Translates a scene along three fixed directions (0, 120, 240 degrees)
/// by each offset, rebuilds descriptors at each blur level, and averages
/// the KL Jaccard evaluated at the true rotation (no alignment search).
pub fn robustness_sweep(
    spec: &SceneSpec,
    offsets: &[f64],
    sigma_ts: &[f64],
    base_cfg: &PolarConfig,
) -> Result<Vec<RobustnessRow>> {
    const DIRECTIONS: [f64; 3] = [0.0, 120.0, 240.0];
    let scene = generate_scene(spec);

    let configs: Vec<PolarConfig> = sigma_ts
        .iter()
        .map(|&sigma_t| PolarConfig {
            sigma_t,
            ..base_cfg.clone()
        })
        .collect();
    let references = configs
        .iter()
        .map(|cfg| make_descriptor(&scene, cfg))
        .collect::<Result<Vec<_>>>()?;

    // J for every (offset, direction, sigma) cell, in parallel
    let cells: Vec<(usize, usize)> = (0..offsets.len())
        .flat_map(|o| (0..DIRECTIONS.len()).map(move |d| (o, d)))
        .collect();
    let per_cell: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(oi, di)| {
            let angle = DIRECTIONS[di].to_radians();
            let shift = (offsets[oi] * angle.cos(), offsets[oi] * angle.sin());
            let moved = transform_cloud(&scene, 0.0, shift);
            configs
                .iter()
                .zip(&references)
                .map(|(cfg, reference)| {
                    let query = make_descriptor(&moved, cfg)?;
                    let (j, _) = kl_jaccard(
                        &reference.mu,
                        &reference.sigma,
                        &query.mu,
                        &query.sigma,
                        cfg,
                    )?;
                    Ok(j)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(offsets.len() * sigma_ts.len());
    for (oi, &offset) in offsets.iter().enumerate() {
        for (si, &sigma_t) in sigma_ts.iter().enumerate() {
            let vals: Vec<f64> = (0..DIRECTIONS.len())
                .map(|di| per_cell[oi * DIRECTIONS.len() + di][si])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            rows.push(RobustnessRow {
                offset_m: offset,
                sigma_t,
                mean_jkl: mean,
                std_jkl: var.sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Parameters for the two-pass square-loop harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopSpec {
    pub seed: u64,
    /// Square side length, meters.
    pub side_length: f64,
    /// Spacing between consecutive frames, meters.
    pub frame_spacing: f64,
    /// Lateral (outward) offset of the second pass, meters.
    pub lateral_offset: f64,
    /// Number of perimeter passes (1 = no revisit).
    pub passes: usize,
    pub n_structures: usize,
    pub points_per_structure: usize,
    /// World surface noise, meters.
    pub noise_std: f64,
    /// Fraction of visible world points kept per frame.
    pub keep_fraction: f64,
    /// Per-frame measurement jitter, meters.
    pub jitter_std: f64,
    /// Render cutoff radius, meters.
    pub crop_range: f64,
    /// Replicates each structure this many times, rotated about the
    /// world origin with a small placement jitter. Values above 1 make
    /// distinct places look alike, which is what stresses a ranking.
    pub world_symmetry: usize,
    /// Fraction of structures that stay unique landmarks when
    /// `world_symmetry > 1`; the rest are replicated look-alikes.
    pub unique_fraction: f64,
}

impl Default for LoopSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            side_length: 160.0,
            frame_spacing: 2.5,
            lateral_offset: 2.5,
            passes: 2,
            n_structures: 130,
            points_per_structure: 700,
            noise_std: 0.02,
            keep_fraction: 0.7,
            jitter_std: 0.02,
            crop_range: 85.0,
            world_symmetry: 1,
            unique_fraction: 0.2,
        }
    }
}

/// The static world the loop is driven through.
pub fn loop_world(spec: &LoopSpec) -> PointCloud {
    let half = spec.side_length / 2.0 + 55.0;
    let scene_spec = SceneSpec {
        seed: spec.seed,
        n_structures: spec.n_structures,
        area: (2.0 * half, 2.0 * half),
        points_per_structure: spec.points_per_structure,
        noise_std: spec.noise_std,
    };
    let sym = spec.world_symmetry.max(1);
    if sym == 1 {
        return generate_scene(&scene_spec);
    }
    // most structures are rotated near-copies of a shared template set
    // (places look alike); a small unique remainder keeps places
    // tellable apart
    let n_unique = (spec.n_structures as f64 * spec.unique_fraction.clamp(0.0, 1.0)) as usize;
    let template = generate_scene(&SceneSpec {
        n_structures: (spec.n_structures - n_unique).div_ceil(sym),
        ..scene_spec.clone()
    });
    let unique = generate_scene(&SceneSpec {
        seed: spec.seed ^ 0x00c0ffee,
        n_structures: n_unique,
        ..scene_spec
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5ca1ab1e);
    let mut points = Vec::with_capacity(template.len() * sym + unique.len());
    points.extend(unique.points);
    for k in 0..sym {
        let angle = k as f64 * std::f64::consts::TAU / sym as f64 + rng.gen_range(-0.05..0.05);
        let nudge = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        // copies share footprints but not height profiles, so occupancy
        // aliases while the height cue stays informative
        let z_scale = rng.gen_range(0.7..1.4);
        points.extend(
            transform_cloud(&template, angle, nudge)
                .points
                .into_iter()
                .map(|p| Point3::new(p.x, p.y, -SENSOR_HEIGHT + (p.z + SENSOR_HEIGHT) * z_scale)),
        );
    }
    PointCloud::new(points)
}

/// Poses along the square perimeter; later passes are pushed outward by
/// `lateral_offset`.
pub fn loop_trajectory(spec: &LoopSpec) -> Trajectory {
    let half = spec.side_length / 2.0;
    // corner order: (-h,-h) -> (h,-h) -> (h,h) -> (-h,h); headings +x, +y, -x, -y
    let sides = [
        ([-half, -half], [1.0, 0.0], [0.0, -1.0]),
        ([half, -half], [0.0, 1.0], [1.0, 0.0]),
        ([half, half], [-1.0, 0.0], [0.0, 1.0]),
        ([-half, half], [0.0, -1.0], [-1.0, 0.0]),
    ];
    let per_side = (spec.side_length / spec.frame_spacing).floor() as usize;
    let mut frames = Vec::new();
    for pass in 0..spec.passes {
        let offset = pass as f64 * spec.lateral_offset;
        for (start, dir, normal) in sides {
            for i in 0..per_side {
                let t = i as f64 * spec.frame_spacing;
                let x = start[0] + dir[0] * t + normal[0] * offset;
                let y = start[1] + dir[1] * t + normal[1] * offset;
                frames.push(TrajectoryFrame {
                    frame_id: frames.len() as u64,
                    position: [x, y, 0.0],
                    yaw: Some(dir[1].atan2(dir[0])),
                });
            }
        }
    }
    Trajectory { frames }
}

/// Renders the world into the sensor frame of one trajectory pose, with
/// per-frame deterministic subsampling and jitter.
pub fn render_loop_frame(
    world: &PointCloud,
    frame: &TrajectoryFrame,
    spec: &LoopSpec,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed
            .wrapping_add(frame.frame_id.wrapping_mul(0x9e3779b97f4a7c15))
            .wrapping_add(spec.lateral_offset.to_bits()),
    );
    let jitter = Normal::new(0.0, spec.jitter_std.max(1e-12)).unwrap();
    let yaw = frame.yaw.unwrap_or(0.0);
    let (c, s) = (yaw.cos(), yaw.sin());
    let mut points = Vec::new();
    for p in &world.points {
        let dx = p.x - frame.position[0];
        let dy = p.y - frame.position[1];
        if dx * dx + dy * dy > spec.crop_range * spec.crop_range {
            continue;
        }
        if rng.gen::<f64>() > spec.keep_fraction {
            continue;
        }
        // world -> sensor: rotate by -yaw
        points.push(Point3::new(
            c * dx + s * dy + jitter.sample(&mut rng),
            -s * dx + c * dy + jitter.sample(&mut rng),
            p.z + jitter.sample(&mut rng),
        ));
    }
    PointCloud::new(points)
}

/// Renders every frame of the loop (parallel over frames).
pub fn generate_loop(spec: &LoopSpec) -> (Vec<PointCloud>, Trajectory) {
    let world = loop_world(spec);
    let traj = loop_trajectory(spec);
    let clouds = traj
        .frames
        .par_iter()
        .map(|f| render_loop_frame(&world, f, spec))
        .collect();
    (clouds, traj)
}
