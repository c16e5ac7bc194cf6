//! Command-line pipeline: scan ingestion, descriptor construction,
//! pairwise matching, indexing, evaluation, and the synthetic harnesses.
//!
//! Exit codes: 0 success, 2 parse/config, 3 I/O, 4 degenerate data,
//! 5 partial batch failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use probe_core::descriptor::{make_descriptor, Descriptor, PolarConfig};
use probe_core::eval::{multisession_eval, online_eval, EvalParams, EvalReport};
use probe_core::matching::{score_pair, ScoreMode};
use probe_core::pointcloud::{load_poses, load_scan_bin, save_scan_bin, Trajectory};
use probe_core::retrieval::DescriptorIndex;
use probe_core::synth::{
    generate_scene, loop_trajectory, loop_world, render_loop_frame, robustness_sweep, LoopSpec,
    SceneSpec,
};

#[derive(Parser)]
#[command(
    name = "probe",
    version,
    about = "Probabilistic occupancy BEV place recognition"
)]
struct Cli {
    /// Worker threads for batch stages (default: all cores).
    #[arg(long, global = true, env = "PROBE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Grid and scoring overrides; every value defaults to the stock
/// configuration. Each flag mirrors a PROBE_* environment variable.
#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, env = "PROBE_RINGS")]
    rings: Option<usize>,
    #[arg(long, env = "PROBE_SECTORS")]
    sectors: Option<usize>,
    /// Maximum range in meters.
    #[arg(long, env = "PROBE_MAX_RANGE")]
    max_range: Option<f64>,
    /// Translation uncertainty in meters; 0 disables the blur.
    #[arg(long, env = "PROBE_SIGMA_T")]
    sigma_t: Option<f64>,
    /// Probability clamp for the KL scorer.
    #[arg(long, env = "PROBE_EPS_B")]
    eps_b: Option<f64>,
    /// Soft-union threshold.
    #[arg(long, env = "PROBE_EPS_U")]
    eps_u: Option<f64>,
    /// Voxel edge in meters; 0 skips downsampling.
    #[arg(long, env = "PROBE_VOXEL")]
    voxel: Option<f64>,
    /// Height offset added to z before clamping at zero.
    #[arg(long, env = "PROBE_HEIGHT_OFFSET")]
    height_offset: Option<f64>,
    /// Angular kernel cap in sector cells.
    #[arg(long, env = "PROBE_SIGMA_THETA_CAP")]
    sigma_theta_cap: Option<f64>,
}

impl ConfigArgs {
    fn build(&self) -> anyhow::Result<PolarConfig> {
        let mut cfg = PolarConfig::default();
        if let Some(v) = self.rings {
            cfg.rings = v;
        }
        if let Some(v) = self.sectors {
            cfg.sectors = v;
            // keep the cap at S/4 unless explicitly overridden
            cfg.sigma_theta_cap = v as f64 / 4.0;
        }
        if let Some(v) = self.max_range {
            cfg.max_range = v;
        }
        if let Some(v) = self.sigma_t {
            cfg.sigma_t = v;
        }
        if let Some(v) = self.eps_b {
            cfg.bernoulli_clamp = v;
        }
        if let Some(v) = self.eps_u {
            cfg.union_eps = v;
        }
        if let Some(v) = self.voxel {
            cfg.voxel_size = v;
        }
        if let Some(v) = self.height_offset {
            cfg.height_offset = v;
        }
        if let Some(v) = self.sigma_theta_cap {
            cfg.sigma_theta_cap = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build descriptor files from binary scans.
    Describe {
        /// Scan files or directories of .bin scans.
        #[arg(required = true)]
        scans: Vec<PathBuf>,
        /// Output directory for .pbev descriptor files.
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a descriptor pair and print the result as JSON.
    Match {
        map: PathBuf,
        query: PathBuf,
        #[arg(long, default_value = "fused", env = "PROBE_SCORE_MODE")]
        score_mode: ScoreMode,
    },
    /// Write a manifest over a directory of descriptor files.
    Index {
        /// Directory of .pbev files.
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a place-recognition evaluation and emit JSON/CSV reports.
    Eval {
        /// Directory of query .bin scans.
        #[arg(long)]
        scans: PathBuf,
        /// Query pose file (12 floats per line, row-major 3x4).
        #[arg(long)]
        poses: PathBuf,
        /// online: each query searches its own past; multisession:
        /// queries search a separate database session.
        #[arg(long, default_value = "online")]
        mode: EvalMode,
        /// Database scans (multisession only).
        #[arg(long)]
        db_scans: Option<PathBuf>,
        /// Database poses (multisession only).
        #[arg(long)]
        db_poses: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Ground-truth radius in meters.
        #[arg(long, default_value_t = 10.0, env = "PROBE_DGT")]
        dgt: f64,
        /// Online exclusion zone in meters of trajectory arc length.
        #[arg(long, default_value_t = 25.0, env = "PROBE_EXCLUSION")]
        exclusion: f64,
        /// Candidates fetched from the key index per query.
        #[arg(long, default_value_t = 25, env = "PROBE_TOPK")]
        topk: usize,
        #[arg(long, default_value = "fused", env = "PROBE_SCORE_MODE")]
        score_mode: ScoreMode,
        /// Database frame spacing in meters; 0 keeps every frame.
        /// Defaults to 0 online and 5 in multisession mode.
        #[arg(long, env = "PROBE_DB_SPACING")]
        db_spacing: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Translation-robustness sweep over synthetic scenes (CSV output).
    Robustness {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        n_structures: usize,
        /// Lateral offsets in meters.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        offsets: Vec<f64>,
        /// Blur levels to sweep.
        #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
        sigma_t_list: Vec<f64>,
        /// Output CSV path (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate synthetic datasets (a single scene scan or a full loop).
    Synth {
        #[arg(long, default_value = "loop")]
        kind: SynthKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory (scans plus poses.txt for loops).
        #[arg(long, short)]
        out: PathBuf,
        /// Square side length for loops, meters.
        #[arg(long, default_value_t = 120.0)]
        side_length: f64,
        /// Frame spacing for loops, meters.
        #[arg(long, default_value_t = 3.0)]
        frame_spacing: f64,
        /// Lateral offset of the second pass, meters.
        #[arg(long, default_value_t = 2.0)]
        lateral_offset: f64,
        #[arg(long, default_value_t = 2)]
        passes: usize,
        #[arg(long, default_value_t = 90)]
        n_structures: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum EvalMode {
    Online,
    Multisession,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum SynthKind {
    Scene,
    Loop,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Marker for batch runs that produced some outputs but not all.
#[derive(Debug)]
struct PartialFailure(usize);

impl std::fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} file(s) failed", self.0)
    }
}

impl std::error::Error for PartialFailure {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    use probe_core::Error as E;
    if err.downcast_ref::<PartialFailure>().is_some() {
        return 5;
    }
    match err.downcast_ref::<E>() {
        Some(E::InvalidParameter(_))
        | Some(E::MalformedScan { .. })
        | Some(E::PoseParse { .. })
        | Some(E::MalformedDescriptor { .. }) => 2,
        Some(E::Io { .. }) => 3,
        Some(E::EmptyCloud)
        | Some(E::EmptyDescriptor)
        | Some(E::ShapeMismatch(_))
        | Some(E::DegenerateDescriptor(_))
        | Some(E::EmptyUnion)
        | Some(E::NoCandidate) => 4,
        None => {
            if err.downcast_ref::<std::io::Error>().is_some() {
                3
            } else {
                1
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Describe { scans, out, config } => cmd_describe(&scans, &out, &config.build()?),
        Command::Match {
            map,
            query,
            score_mode,
        } => cmd_match(&map, &query, score_mode),
        Command::Index { descriptors, out } => cmd_index(&descriptors, &out),
        Command::Eval {
            scans,
            poses,
            mode,
            db_scans,
            db_poses,
            out,
            dgt,
            exclusion,
            topk,
            score_mode,
            db_spacing,
            config,
        } => {
            let params = EvalParams {
                d_gt: dgt,
                exclusion,
                top_k: topk,
                score_mode,
                db_spacing: match (db_spacing, mode) {
                    (Some(s), _) if s > 0.0 => Some(s),
                    (Some(_), _) => None,
                    (None, EvalMode::Online) => None,
                    (None, EvalMode::Multisession) => Some(5.0),
                },
            };
            cmd_eval(
                &scans,
                &poses,
                mode,
                db_scans.as_deref(),
                db_poses.as_deref(),
                &out,
                &params,
                &config.build()?,
            )
        }
        Command::Robustness {
            seed,
            n_structures,
            offsets,
            sigma_t_list,
            out,
            config,
        } => cmd_robustness(
            seed,
            n_structures,
            &offsets,
            &sigma_t_list,
            out.as_deref(),
            &config.build()?,
        ),
        Command::Synth {
            kind,
            seed,
            out,
            side_length,
            frame_spacing,
            lateral_offset,
            passes,
            n_structures,
        } => cmd_synth(
            kind,
            seed,
            &out,
            side_length,
            frame_spacing,
            lateral_offset,
            passes,
            n_structures,
        ),
    }
}

/// Collects .bin files from a mix of files and directories, sorted by
/// path for a stable frame order.
fn collect_scans(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in fs::read_dir(input).with_context(|| format!("reading {input:?}"))? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "bin") {
                    files.push(path);
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    files.sort();
    if files.is_empty() {
        bail!(probe_core::Error::InvalidParameter(format!(
            "no scan files found under {inputs:?}"
        )));
    }
    Ok(files)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {path:?}"))?;
    Ok(())
}

fn config_comment(cfg: &PolarConfig) -> String {
    format!(
        "# config {}",
        serde_json::to_string(cfg).expect("config serializes")
    )
}

fn cmd_describe(scans: &[PathBuf], out: &Path, cfg: &PolarConfig) -> anyhow::Result<()> {
    let files = collect_scans(scans)?;
    fs::create_dir_all(out).with_context(|| format!("creating {out:?}"))?;
    write_json(&out.join("config.json"), cfg)?;

    let results: Vec<(PathBuf, Result<f64, String>)> = files
        .par_iter()
        .map(|path| {
            let started = Instant::now();
            let result = (|| -> anyhow::Result<()> {
                let scan = load_scan_bin(path)?;
                if scan.dropped_non_finite > 0 {
                    eprintln!(
                        "warning: {path:?}: dropped {} non-finite point(s)",
                        scan.dropped_non_finite
                    );
                }
                let descriptor = make_descriptor(&scan.cloud, cfg)?;
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                descriptor.save(out.join(format!("{stem}.pbev")))?;
                Ok(())
            })();
            let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            (
                path.clone(),
                result.map(|_| elapsed_ms).map_err(|e| format!("{e:#}")),
            )
        })
        .collect();

    let mut times: Vec<f64> = Vec::new();
    let mut failures = 0usize;
    for (path, result) in &results {
        match result {
            Ok(ms) => times.push(*ms),
            Err(err) => {
                failures += 1;
                eprintln!("error: {path:?}: {err}");
            }
        }
    }
    if !times.is_empty() {
        times.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
        let pct = |q: f64| times[((times.len() - 1) as f64 * q) as usize];
        println!(
            "described {} scan(s): construction mean {:.2} ms, p50 {:.2} ms, p90 {:.2} ms, max {:.2} ms",
            times.len(),
            times.iter().sum::<f64>() / times.len() as f64,
            pct(0.5),
            pct(0.9),
            times.last().copied().unwrap_or_default()
        );
    }
    if failures > 0 {
        bail!(PartialFailure(failures));
    }
    Ok(())
}

#[derive(Serialize)]
struct MatchOutput<'a> {
    score_mode: ScoreMode,
    delta_star: usize,
    cosine: f64,
    kl_jaccard: f64,
    similarity: f64,
    distance: f64,
    empty_union: bool,
    union_size: usize,
    config: &'a PolarConfig,
}

fn cmd_match(map_path: &Path, query_path: &Path, mode: ScoreMode) -> anyhow::Result<()> {
    let map = Descriptor::load(map_path)?;
    let query = Descriptor::load(query_path)?;
    let score = score_pair(&map, &query, mode)?;
    let output = MatchOutput {
        score_mode: mode,
        delta_star: score.delta_star,
        cosine: score.cosine,
        kl_jaccard: score.kl_jaccard,
        similarity: score.similarity,
        distance: score.distance,
        empty_union: score.empty_union,
        union_size: score.union_size,
        config: &map.config,
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    frame_id: u64,
    path: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a PolarConfig,
    key_dim: usize,
    entries: Vec<ManifestEntry>,
}

fn cmd_index(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {dir:?}"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pbev"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(probe_core::Error::InvalidParameter(format!(
            "no .pbev files under {dir:?}"
        )));
    }
    let descriptors: Vec<Descriptor> = files
        .par_iter()
        .map(Descriptor::load)
        .collect::<probe_core::Result<_>>()?;
    // building the index validates key consistency; it is rebuilt on load
    let index = DescriptorIndex::from_descriptors(&descriptors)?;
    let manifest = Manifest {
        config: &descriptors[0].config,
        key_dim: index.dim(),
        entries: files
            .iter()
            .enumerate()
            .map(|(i, p)| ManifestEntry {
                frame_id: i as u64,
                path: p.to_string_lossy().into_owned(),
            })
            .collect(),
    };
    write_json(out, &manifest)?;
    println!(
        "indexed {} descriptor(s) into {}",
        files.len(),
        out.display()
    );
    Ok(())
}

fn load_session(
    scans: &Path,
    poses: &Path,
    cfg: &PolarConfig,
) -> anyhow::Result<(Vec<Descriptor>, Trajectory)> {
    let files = collect_scans(std::slice::from_ref(&scans.to_path_buf()))?;
    let traj = load_poses(poses)?;
    if traj.len() != files.len() {
        bail!(probe_core::Error::ShapeMismatch(format!(
            "{} scans vs {} poses",
            files.len(),
            traj.len()
        )));
    }
    let descriptors: Vec<Descriptor> = files
        .par_iter()
        .map(|p| -> probe_core::Result<Descriptor> {
            let scan = load_scan_bin(p)?;
            make_descriptor(&scan.cloud, cfg)
        })
        .collect::<probe_core::Result<_>>()?;
    Ok((descriptors, traj))
}

fn write_eval_outputs(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {out:?}"))?;
    write_json(&out.join("report.json"), report)?;

    let comment = config_comment(&report.config);
    let mut pr = String::new();
    pr.push_str(&comment);
    pr.push_str("\nthreshold,precision,recall\n");
    for p in &report.pr_points {
        pr.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    fs::write(out.join("pr_curve.csv"), pr)?;

    let mut summary = String::new();
    summary.push_str(&comment);
    summary.push_str("\nmode,queries,auc,recall_at_1,f1_max,no_positives\n");
    summary.push_str(&format!(
        "{},{},{},{},{},{}\n",
        report.mode,
        report.records.len(),
        report.auc,
        report.recall_at_1,
        report.f1_max,
        report.no_positives
    ));
    fs::write(out.join("summary.csv"), summary)?;
    println!(
        "{}: {} queries, AUC {:.4}, R@1 {:.4}, F1max {:.4}{}",
        report.mode,
        report.records.len(),
        report.auc,
        report.recall_at_1,
        report.f1_max,
        if report.no_positives {
            " (no ground-truth positives)"
        } else {
            ""
        }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    scans: &Path,
    poses: &Path,
    mode: EvalMode,
    db_scans: Option<&Path>,
    db_poses: Option<&Path>,
    out: &Path,
    params: &EvalParams,
    cfg: &PolarConfig,
) -> anyhow::Result<()> {
    let (descriptors, traj) = load_session(scans, poses, cfg)?;
    let report = match mode {
        EvalMode::Online => online_eval(&descriptors, &traj, params)?,
        EvalMode::Multisession => {
            let (db_scans, db_poses) = match (db_scans, db_poses) {
                (Some(s), Some(p)) => (s, p),
                _ => bail!(probe_core::Error::InvalidParameter(
                    "multisession mode needs --db-scans and --db-poses".into()
                )),
            };
            let (db_descriptors, db_traj) = load_session(db_scans, db_poses, cfg)?;
            multisession_eval(&descriptors, &traj, &db_descriptors, &db_traj, params)?
        }
    };
    write_eval_outputs(out, &report)
}

fn cmd_robustness(
    seed: u64,
    n_structures: usize,
    offsets: &[f64],
    sigma_ts: &[f64],
    out: Option<&Path>,
    cfg: &PolarConfig,
) -> anyhow::Result<()> {
    if !offsets.contains(&0.0) {
        bail!(probe_core::Error::InvalidParameter(
            "offsets must include 0 (the self-match anchor)".into()
        ));
    }
    let spec = SceneSpec {
        seed,
        n_structures,
        ..SceneSpec::default()
    };
    let rows = robustness_sweep(&spec, offsets, sigma_ts, cfg)?;
    let mut csv = String::new();
    csv.push_str(&config_comment(cfg));
    csv.push_str(&format!(
        "\n# scene {}\n",
        serde_json::to_string(&spec).expect("spec serializes")
    ));
    csv.push_str("offset_m,sigma_t,mean_jkl,std_jkl\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.offset_m, row.sigma_t, row.mean_jkl, row.std_jkl
        ));
    }
    match out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {path:?}"))?;
            println!("wrote {} sweep rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    kind: SynthKind,
    seed: u64,
    out: &Path,
    side_length: f64,
    frame_spacing: f64,
    lateral_offset: f64,
    passes: usize,
    n_structures: usize,
) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {out:?}"))?;
    match kind {
        SynthKind::Scene => {
            let spec = SceneSpec {
                seed,
                n_structures,
                ..SceneSpec::default()
            };
            let cloud = generate_scene(&spec);
            save_scan_bin(&cloud, out.join("scene.bin"))?;
            write_json(&out.join("spec.json"), &spec)?;
            println!("wrote scene.bin ({} points)", cloud.len());
        }
        SynthKind::Loop => {
            let spec = LoopSpec {
                seed,
                side_length,
                frame_spacing,
                lateral_offset,
                passes,
                n_structures,
                ..LoopSpec::default()
            };
            let world = loop_world(&spec);
            let traj = loop_trajectory(&spec);
            let scans_dir = out.join("scans");
            fs::create_dir_all(&scans_dir)?;
            let results: Vec<usize> = traj
                .frames
                .par_iter()
                .map(|frame| -> anyhow::Result<usize> {
                    let cloud = render_loop_frame(&world, frame, &spec);
                    save_scan_bin(&cloud, scans_dir.join(format!("{:06}.bin", frame.frame_id)))?;
                    Ok(cloud.len())
                })
                .collect::<anyhow::Result<_>>()?;

            let mut poses = String::new();
            for frame in &traj.frames {
                let yaw = frame.yaw.unwrap_or(0.0);
                let (c, s) = (yaw.cos(), yaw.sin());
                let [x, y, z] = frame.position;
                poses.push_str(&format!("{c} {} 0 {x} {s} {c} 0 {y} 0 0 1 {z}\n", -s));
            }
            fs::write(out.join("poses.txt"), poses)?;
            write_json(&out.join("spec.json"), &spec)?;
            println!(
                "wrote {} scans (mean {} points) and poses.txt",
                results.len(),
                results.iter().sum::<usize>() / results.len().max(1)
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_collection_rejects_empty_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(collect_scans(&[dir.path().to_path_buf()]).is_err());
    }

    #[test]
    fn exit_codes_map_error_classes() {
        let parse: anyhow::Error = probe_core::Error::InvalidParameter("x".into()).into();
        assert_eq!(exit_code_for(&parse), 2);
        let io: anyhow::Error = probe_core::Error::io("f", std::io::Error::other("nope")).into();
        assert_eq!(exit_code_for(&io), 3);
        let degenerate: anyhow::Error = probe_core::Error::NoCandidate.into();
        assert_eq!(exit_code_for(&degenerate), 4);
        let partial: anyhow::Error = PartialFailure(3).into();
        assert_eq!(exit_code_for(&partial), 5);
    }
}
