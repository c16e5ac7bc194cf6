//! Polar BEV descriptor construction.
//!
//! A cloud is binned into `R` rings x `S` sectors. Each cell keeps the
//! maximum point height (offset and clamped at zero) plus a binary
//! occupancy bit. Isotropic Cartesian translation noise of scale
//! `sigma_t` maps through the polar Jacobian to decoupled per-cell
//! perturbations: radial width `sigma_t / dr` (position independent) and
//! angular width `sigma_t * sqrt(rho(r)) / (r_center * dtheta)`, which
//! shrinks with range and with ring sparsity. Marginalizing occupancy
//! over that noise is a separable blur: a wrapped 1-D Gaussian along each
//! ring followed by a zero-padded 1-D Gaussian along each sector. The
//! blurred grid is the Bernoulli mean `mu`; `sigma = sqrt(mu (1 - mu))`
//! is the per-cell uncertainty. The retrieval key concatenates per-ring
//! means of the height grid and of `mu`, which makes it invariant to
//! sector rotations.

use std::cell::RefCell;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{voxel_downsample, PointCloud};

/// Grid, blur, and scoring hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarConfig {
    /// Ring count R.
    pub rings: usize,
    /// Sector count S.
    pub sectors: usize,
    /// Maximum range in meters; points at or beyond it are ignored.
    pub max_range: f64,
    /// Expected translation uncertainty in meters. Zero disables the blur.
    pub sigma_t: f64,
    /// Probability clamp applied before KL evaluation.
    pub bernoulli_clamp: f64,
    /// Soft-union threshold on `mu_m + mu_q`.
    pub union_eps: f64,
    /// Voxel edge for downsampling; zero skips downsampling.
    pub voxel_size: f64,
    /// Added to z before height clamping so ordinary ground returns stay
    /// positive and empty cells remain distinguishable at zero.
    pub height_offset: f64,
    /// Gaussian kernels are truncated at this many standard deviations.
    pub kernel_truncation: f64,
    /// Upper bound on the angular kernel width in sector cells; the
    /// Jacobian width diverges as r -> 0 and must not smear whole rings.
    pub sigma_theta_cap: f64,
}

impl Default for PolarConfig {
    fn default() -> Self {
        Self {
            rings: 40,
            sectors: 60,
            max_range: 80.0,
            sigma_t: 2.0,
            bernoulli_clamp: 1e-6,
            union_eps: 1e-3,
            voxel_size: 0.5,
            height_offset: 2.0,
            kernel_truncation: 4.0,
            sigma_theta_cap: 15.0,
        }
    }
}

impl PolarConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        // NaN fails every check below via the is_finite guards
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.rings < 2 || self.sectors < 2 {
            return fail(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rings, self.sectors
            ));
        }
        if !positive(self.max_range) {
            return fail(format!(
                "max_range must be positive, got {}",
                self.max_range
            ));
        }
        if !self.sigma_t.is_finite() || self.sigma_t < 0.0 {
            return fail(format!(
                "sigma_t must be finite and >= 0, got {}",
                self.sigma_t
            ));
        }
        if !positive(self.bernoulli_clamp) || self.bernoulli_clamp >= 0.5 {
            return fail(format!(
                "bernoulli_clamp must lie in (0, 0.5), got {}",
                self.bernoulli_clamp
            ));
        }
        if !positive(self.union_eps) {
            return fail(format!(
                "union_eps must be positive, got {}",
                self.union_eps
            ));
        }
        if !self.voxel_size.is_finite() || self.voxel_size < 0.0 {
            return fail(format!(
                "voxel_size must be finite and >= 0, got {}",
                self.voxel_size
            ));
        }
        if !positive(self.kernel_truncation) {
            return fail(format!(
                "kernel_truncation must be positive, got {}",
                self.kernel_truncation
            ));
        }
        if !positive(self.sigma_theta_cap) {
            return fail(format!(
                "sigma_theta_cap must be positive, got {}",
                self.sigma_theta_cap
            ));
        }
        Ok(())
    }

    /// Radial cell extent in meters.
    pub fn ring_width(&self) -> f64 {
        self.max_range / self.rings as f64
    }

    /// Angular cell extent in radians.
    pub fn sector_width(&self) -> f64 {
        std::f64::consts::TAU / self.sectors as f64
    }

    /// Radius of the ring's center line in meters.
    pub fn ring_center(&self, ring: usize) -> f64 {
        (ring as f64 + 0.5) * self.ring_width()
    }
}

/// Immutable descriptor of one scan.
///
/// `occupancy` is a construction byproduct; the serialized container
/// carries only heights, `mu`, `sigma`, and the key, so loaded
/// descriptors have `occupancy == None`.
#[derive(Debug, Clone)]
pub struct Descriptor {
    pub config: PolarConfig,
    /// Max-height grid G, meters after offset, 0 = empty.
    pub heights: Array2<f64>,
    /// Binary occupancy mask O (values exactly 0.0 or 1.0).
    pub occupancy: Option<Array2<f64>>,
    /// Bernoulli mean, in [0, 1].
    pub mu: Array2<f64>,
    /// Bernoulli std, sqrt(mu (1 - mu)), in [0, 0.5].
    pub sigma: Array2<f64>,
    /// Forward DFT of each height row, used by the pairwise correlator.
    pub row_spectra: Array2<Complex64>,
    /// Frobenius norm of the height grid.
    pub frob_norm: f64,
    /// Rotation-invariant retrieval key, length 2R.
    pub key: Vec<f64>,
}

thread_local! {
    static FFT_PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Runs the cached forward FFT plan for `len` over `buf` in place.
pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    FFT_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

/// Runs the cached inverse FFT plan (unnormalized) over `buf` in place.
pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    FFT_PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
}

/// Bins a cloud into the max-height grid G and occupancy mask O.
///
/// Points at radius `>= max_range` are ignored; heights are `z +
/// height_offset`, clamped below at zero.
pub fn build_polar_grid(
    cloud: &PointCloud,
    cfg: &PolarConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let dr = cfg.ring_width();
    let dtheta = cfg.sector_width();
    let mut heights = Array2::zeros((cfg.rings, cfg.sectors));
    let mut occ = Array2::zeros((cfg.rings, cfg.sectors));
    let mut binned = 0usize;
    for p in &cloud.points {
        let radius = p.x.hypot(p.y);
        if radius >= cfg.max_range {
            continue;
        }
        let ring = ((radius / dr) as usize).min(cfg.rings - 1);
        let mut theta = p.y.atan2(p.x);
        if theta < 0.0 {
            theta += std::f64::consts::TAU;
        }
        // theta == 2*pi wraps back to sector 0
        let sector = ((theta / dtheta) as usize) % cfg.sectors;
        let h = (p.z + cfg.height_offset).max(0.0);
        if h > heights[[ring, sector]] {
            heights[[ring, sector]] = h;
        }
        occ[[ring, sector]] = 1.0;
        binned += 1;
    }
    if binned == 0 {
        return Err(Error::EmptyDescriptor);
    }
    Ok((heights, occ))
}

/// Per-ring occupancy rate rho.
pub fn ring_density(occ: &ArrayView2<f64>) -> Vec<f64> {
    let sectors = occ.ncols() as f64;
    occ.rows()
        .into_iter()
        .map(|row| row.sum() / sectors)
        .collect()
}

/// Angular kernel width for one ring, in sector cells.
///
/// `sigma_eff = sigma_t * sqrt(rho)` scales the blur down on sparse
/// rings; the result is `sigma_eff / (r_center * dtheta)` capped at
/// `sigma_theta_cap`.
pub fn angular_kernel_width(ring: usize, density: f64, cfg: &PolarConfig) -> f64 {
    let sigma_eff = cfg.sigma_t * density.sqrt();
    if sigma_eff <= 0.0 {
        return 0.0;
    }
    let cells = sigma_eff / (cfg.ring_center(ring) * cfg.sector_width());
    cells.min(cfg.sigma_theta_cap)
}

/// Symmetric 1-D Gaussian taps, truncated at `truncation` sigmas (radius
/// rounded up) and renormalized to unit sum. Width zero yields the
/// identity kernel.
///
/// Taps are the Gaussian mass integrated over each unit cell,
/// `Phi(j+1/2) - Phi(j-1/2)`, not point samples of the density: the tap
/// for shift `j` must equal the probability that a displaced cell center
/// lands `j` cells away, which point sampling badly understates once
/// `sigma` drops below a cell.
fn gaussian_kernel(sigma: f64, truncation: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (truncation * sigma).ceil() as i64;
    let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / (sigma * std::f64::consts::SQRT_2)));
    let mut taps = Vec::with_capacity(2 * radius as usize + 1);
    for j in -radius..=radius {
        taps.push(phi(j as f64 + 0.5) - phi(j as f64 - 0.5));
    }
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Angular pass: wrapped 1-D Gaussian along each ring with the
/// density-adaptive width. Wrap plus a unit-sum kernel preserves each
/// ring's total mass.
pub(crate) fn angular_blur(occ: &ArrayView2<f64>, cfg: &PolarConfig) -> Array2<f64> {
    let (rings, sectors) = occ.dim();
    let rho = ring_density(occ);
    let mut out = Array2::zeros((rings, sectors));
    for r in 0..rings {
        let row = occ.row(r);
        let width = angular_kernel_width(r, rho[r], cfg);
        if width <= 0.0 {
            out.row_mut(r).assign(&row);
            continue;
        }
        let taps = gaussian_kernel(width, cfg.kernel_truncation);
        let radius = (taps.len() / 2) as i64;
        for s in 0..sectors {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let idx = (s as i64 + k as i64 - radius).rem_euclid(sectors as i64) as usize;
                acc += w * row[idx];
            }
            out[[r, s]] = acc;
        }
    }
    out
}

/// Radial pass: 1-D Gaussian of width `sigma_t / dr` along each sector,
/// zero-padded beyond both grid edges (no occupancy evidence outside).
pub(crate) fn radial_blur(grid: &Array2<f64>, cfg: &PolarConfig) -> Array2<f64> {
    let sigma_r = cfg.sigma_t / cfg.ring_width();
    if sigma_r <= 0.0 {
        return grid.clone();
    }
    let (rings, sectors) = grid.dim();
    let taps = gaussian_kernel(sigma_r, cfg.kernel_truncation);
    let radius = (taps.len() / 2) as i64;
    let mut out = Array2::zeros((rings, sectors));
    for s in 0..sectors {
        for r in 0..rings {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let idx = r as i64 + k as i64 - radius;
                if idx >= 0 && idx < rings as i64 {
                    acc += w * grid[[idx as usize, s]];
                }
            }
            out[[r, s]] = acc;
        }
    }
    out
}

/// Expected occupancy under the translation model: angular pass, then
/// radial pass, clamped to [0, 1]. `sigma_t == 0` returns O unchanged.
pub fn marginalize_occupancy(occ: &ArrayView2<f64>, cfg: &PolarConfig) -> Array2<f64> {
    if cfg.sigma_t == 0.0 {
        return occ.to_owned();
    }
    let blurred = radial_blur(&angular_blur(occ, cfg), cfg);
    blurred.mapv(|v| v.clamp(0.0, 1.0))
}

/// Bernoulli std `sqrt(mu (1 - mu))`, elementwise.
pub fn bernoulli_sigma(mu: &ArrayView2<f64>) -> Array2<f64> {
    mu.mapv(|m| (m * (1.0 - m)).max(0.0).sqrt())
}

/// Retrieval key: per-ring means of the height grid, then of `mu`.
///
/// Each ring is summed in sorted order, which makes the mean a function
/// of the ring's value multiset alone; circular shifts then leave the key
/// bit-identical.
pub fn ring_key(heights: &ArrayView2<f64>, mu: &ArrayView2<f64>) -> Vec<f64> {
    let sectors = heights.ncols() as f64;
    let sorted_mean = |row: ndarray::ArrayView1<f64>| {
        let mut vals = row.to_vec();
        vals.sort_unstable_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
        vals.iter().sum::<f64>() / sectors
    };
    let mut key = Vec::with_capacity(2 * heights.nrows());
    key.extend(heights.rows().into_iter().map(sorted_mean));
    key.extend(mu.rows().into_iter().map(sorted_mean));
    key
}

fn row_spectra_of(heights: &Array2<f64>) -> Array2<Complex64> {
    let (rings, sectors) = heights.dim();
    let mut spectra = Array2::from_elem((rings, sectors), Complex64::new(0.0, 0.0));
    let mut buf = vec![Complex64::new(0.0, 0.0); sectors];
    for r in 0..rings {
        for (b, v) in buf.iter_mut().zip(heights.row(r)) {
            *b = Complex64::new(*v, 0.0);
        }
        fft_forward(&mut buf);
        for (dst, src) in spectra.row_mut(r).iter_mut().zip(&buf) {
            *dst = *src;
        }
    }
    spectra
}

/// Full construction pipeline: optional voxel downsample, polar binning,
/// occupancy marginalization, Bernoulli uncertainty, key, and row
/// spectra.
pub fn make_descriptor(cloud: &PointCloud, cfg: &PolarConfig) -> Result<Descriptor> {
    cfg.validate()?;
    let filtered;
    let cloud = if cfg.voxel_size > 0.0 {
        filtered = voxel_downsample(cloud, cfg.voxel_size)?;
        &filtered
    } else {
        cloud
    };
    let (heights, occ) = build_polar_grid(cloud, cfg)?;
    let mu = marginalize_occupancy(&occ.view(), cfg);
    let sigma = bernoulli_sigma(&mu.view());
    let key = ring_key(&heights.view(), &mu.view());
    let row_spectra = row_spectra_of(&heights);
    let frob_norm = heights.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Descriptor {
        config: cfg.clone(),
        heights,
        occupancy: Some(occ),
        mu,
        sigma,
        row_spectra,
        frob_norm,
        key,
    })
}

// On-disk container: magic, version, R, S, max_range, sigma_t, then
// f32 arrays G, mu, sigma (row-major) and key. See docs/descriptor-format.md.
const MAGIC: &[u8; 8] = b"PBEVDSC\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 4 + 4;

impl Descriptor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (rings, sectors) = self.heights.dim();
        let cells = rings * sectors;
        let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * (3 * cells + self.key.len()));
        bytes.extend_from_slice(MAGIC);
        let mut scratch = [0u8; 4];
        LittleEndian::write_u32(&mut scratch, FORMAT_VERSION);
        bytes.extend_from_slice(&scratch);
        LittleEndian::write_u32(&mut scratch, rings as u32);
        bytes.extend_from_slice(&scratch);
        LittleEndian::write_u32(&mut scratch, sectors as u32);
        bytes.extend_from_slice(&scratch);
        LittleEndian::write_f32(&mut scratch, self.config.max_range as f32);
        bytes.extend_from_slice(&scratch);
        LittleEndian::write_f32(&mut scratch, self.config.sigma_t as f32);
        bytes.extend_from_slice(&scratch);
        let mut push_grid = |grid: &Array2<f64>, bytes: &mut Vec<u8>| {
            for v in grid.iter() {
                LittleEndian::write_f32(&mut scratch, *v as f32);
                bytes.extend_from_slice(&scratch);
            }
        };
        push_grid(&self.heights, &mut bytes);
        push_grid(&self.mu, &mut bytes);
        push_grid(&self.sigma, &mut bytes);
        for v in &self.key {
            let mut scratch = [0u8; 4];
            LittleEndian::write_f32(&mut scratch, *v as f32);
            bytes.extend_from_slice(&scratch);
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a descriptor container. Stored `f32` values are widened to
    /// `f64`; spectra and the Frobenius norm are recomputed; occupancy is
    /// not part of the container. Config fields beyond the header carry
    /// defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Descriptor> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |reason: &str| Error::MalformedDescriptor {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail("file shorter than header"));
        }
        if &bytes[0..8] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = LittleEndian::read_u32(&bytes[8..12]);
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let rings = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let sectors = LittleEndian::read_u32(&bytes[16..20]) as usize;
        let max_range = LittleEndian::read_f32(&bytes[20..24]) as f64;
        let sigma_t = LittleEndian::read_f32(&bytes[24..28]) as f64;
        let cells = rings
            .checked_mul(sectors)
            .ok_or_else(|| fail("grid dimensions overflow"))?;
        let expected = HEADER_LEN + 4 * (3 * cells + 2 * rings);
        if bytes.len() != expected {
            return Err(fail(&format!(
                "expected {expected} bytes for {rings}x{sectors}, found {}",
                bytes.len()
            )));
        }
        let mut offset = HEADER_LEN;
        let read_grid = |offset: &mut usize| {
            let mut data = Vec::with_capacity(cells);
            for _ in 0..cells {
                data.push(LittleEndian::read_f32(&bytes[*offset..*offset + 4]) as f64);
                *offset += 4;
            }
            Array2::from_shape_vec((rings, sectors), data).expect("sized above")
        };
        let heights = read_grid(&mut offset);
        let mu = read_grid(&mut offset);
        let sigma = read_grid(&mut offset);
        let mut key = Vec::with_capacity(2 * rings);
        for _ in 0..2 * rings {
            key.push(LittleEndian::read_f32(&bytes[offset..offset + 4]) as f64);
            offset += 4;
        }
        let config = PolarConfig {
            rings,
            sectors,
            max_range,
            sigma_t,
            ..PolarConfig::default()
        };
        config.validate()?;
        let row_spectra = row_spectra_of(&heights);
        let frob_norm = heights.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Descriptor {
            config,
            heights,
            occupancy: None,
            mu,
            sigma,
            row_spectra,
            frob_norm,
            key,
        })
    }
}
