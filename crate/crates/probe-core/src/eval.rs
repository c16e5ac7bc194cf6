//! Place-recognition evaluation: online (single-session) and
//! multi-session protocols, PR curves, AUC, R@1, and F1max.
//!
//! A query is declared positive at threshold `tau` when its top-1
//! distance is at most `tau`; the sweep runs over all observed distances.
//! Ground truth is horizontal (x, y) distance, inclusive at `d_gt`. The
//! online exclusion zone is measured along the cumulative trajectory arc
//! length, not straight-line.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Descriptor, PolarConfig};
use crate::error::{Error, Result};
use crate::matching::ScoreMode;
use crate::pointcloud::Trajectory;
use crate::retrieval::{retrieve_best, DescriptorIndex};

/// Protocol parameters; defaults follow the online single-session setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalParams {
    /// Ground-truth positive radius, meters (inclusive).
    pub d_gt: f64,
    /// Online exclusion zone along the trajectory, meters.
    pub exclusion: f64,
    /// Candidates taken from the key index before re-ranking.
    pub top_k: usize,
    pub score_mode: ScoreMode,
    /// Minimum arc-length spacing between database frames; `None` keeps
    /// every frame.
    pub db_spacing: Option<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            d_gt: 10.0,
            exclusion: 25.0,
            top_k: 25,
            score_mode: ScoreMode::Fused,
            db_spacing: None,
        }
    }
}

impl EvalParams {
    /// Multi-session defaults: full database with 5 m frame spacing.
    pub fn multisession() -> Self {
        Self {
            db_spacing: Some(5.0),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.d_gt.is_finite() || self.d_gt <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "d_gt must be positive, got {}",
                self.d_gt
            )));
        }
        if !self.exclusion.is_finite() || self.exclusion < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "exclusion must be non-negative, got {}",
                self.exclusion
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retrieval outcome for one query frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub matched_id: Option<u64>,
    /// Score distance of the top-1 match, in [0, 1].
    pub distance: f64,
    /// Whether at least one database frame lies within `d_gt`.
    pub gt_positive: bool,
    /// Whether the matched frame lies within `d_gt` of the query.
    pub correct: bool,
}

/// One point of the PR sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub params: EvalParams,
    pub config: PolarConfig,
    pub records: Vec<QueryRecord>,
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    pub recall_at_1: f64,
    pub f1_max: f64,
    /// Set when no query had a ground-truth positive; metrics then
    /// default to zero instead of failing the batch.
    pub no_positives: bool,
}

/// Horizontal (x, y) distance between two trajectory positions.
pub fn horizontal_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Positive-pair relation between two trajectories.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    d_gt: f64,
    query_positions: Vec<[f64; 3]>,
    db_positions: Vec<[f64; 3]>,
}

impl GroundTruth {
    pub fn build(traj_q: &Trajectory, traj_db: &Trajectory, d_gt: f64) -> Result<Self> {
        if traj_q.is_empty() || traj_db.is_empty() {
            return Err(Error::InvalidParameter("empty trajectory".into()));
        }
        if !d_gt.is_finite() || d_gt <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "d_gt must be positive, got {d_gt}"
            )));
        }
        Ok(Self {
            d_gt,
            query_positions: traj_q.frames.iter().map(|f| f.position).collect(),
            db_positions: traj_db.frames.iter().map(|f| f.position).collect(),
        })
    }

    /// Inclusive at exactly `d_gt`.
    pub fn is_positive(&self, query_idx: usize, db_idx: usize) -> bool {
        horizontal_distance(&self.query_positions[query_idx], &self.db_positions[db_idx])
            <= self.d_gt
    }
}

/// Cumulative arc length along the trajectory, horizontal plane.
pub fn arc_lengths(traj: &Trajectory) -> Vec<f64> {
    let mut arc = Vec::with_capacity(traj.len());
    let mut total = 0.0;
    for (i, frame) in traj.frames.iter().enumerate() {
        if i > 0 {
            total += horizontal_distance(&traj.frames[i - 1].position, &frame.position);
        }
        arc.push(total);
    }
    arc
}

/// Indices kept when subsampling a trajectory at `spacing` meters of arc
/// length; the first frame is always kept.
fn subsample_by_arc(arc: &[f64], spacing: Option<f64>) -> Vec<usize> {
    match spacing {
        None => (0..arc.len()).collect(),
        Some(s) => {
            let mut kept = Vec::new();
            let mut last = f64::NEG_INFINITY;
            for (i, &a) in arc.iter().enumerate() {
                if kept.is_empty() || a - last >= s {
                    kept.push(i);
                    last = a;
                }
            }
            kept
        }
    }
}

fn check_counts(descriptors: &[Descriptor], traj: &Trajectory) -> Result<()> {
    if descriptors.len() != traj.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} descriptors vs {} trajectory frames",
            descriptors.len(),
            traj.len()
        )));
    }
    if descriptors.is_empty() {
        return Err(Error::InvalidParameter("nothing to evaluate".into()));
    }
    Ok(())
}

/// Single-session protocol: each query searches strictly earlier frames
/// whose along-trajectory distance exceeds the exclusion zone. Queries
/// with an empty database are skipped.
pub fn online_eval(
    descriptors: &[Descriptor],
    traj: &Trajectory,
    params: &EvalParams,
) -> Result<EvalReport> {
    check_counts(descriptors, traj)?;
    params.validate()?;
    let arc = arc_lengths(traj);
    let gt = GroundTruth::build(traj, traj, params.d_gt)?;
    let kept: HashSet<usize> = subsample_by_arc(&arc, params.db_spacing)
        .into_iter()
        .collect();

    let maybe_records: Vec<Option<Result<QueryRecord>>> = (0..descriptors.len())
        .into_par_iter()
        .map(|i| {
            let eligible: Vec<usize> = (0..i)
                .filter(|&j| kept.contains(&j) && arc[i] - arc[j] > params.exclusion)
                .collect();
            if eligible.is_empty() {
                return None;
            }
            Some(evaluate_query(
                &descriptors[i],
                traj.frames[i].frame_id,
                i,
                &eligible,
                descriptors,
                &gt,
                params,
            ))
        })
        .collect();

    let mut records = Vec::new();
    for r in maybe_records.into_iter().flatten() {
        records.push(r?);
    }
    Ok(assemble_report("online", records, params, descriptors))
}

/// Multi-session protocol: every query searches the full (optionally
/// subsampled) database session.
pub fn multisession_eval(
    query_descriptors: &[Descriptor],
    query_traj: &Trajectory,
    db_descriptors: &[Descriptor],
    db_traj: &Trajectory,
    params: &EvalParams,
) -> Result<EvalReport> {
    check_counts(query_descriptors, query_traj)?;
    check_counts(db_descriptors, db_traj)?;
    params.validate()?;
    let gt = GroundTruth::build(query_traj, db_traj, params.d_gt)?;
    let db_arc = arc_lengths(db_traj);
    let db_indices = subsample_by_arc(&db_arc, params.db_spacing);

    let entries: Vec<(u64, Vec<f64>)> = db_indices
        .iter()
        .map(|&j| (j as u64, db_descriptors[j].key.clone()))
        .collect();
    let index = DescriptorIndex::build(entries)?;

    let records: Vec<QueryRecord> = (0..query_descriptors.len())
        .into_par_iter()
        .map(|i| -> Result<QueryRecord> {
            let gt_positive = db_indices.iter().any(|&j| gt.is_positive(i, j));
            let (db_idx, score) = retrieve_best(
                &index,
                |id| &db_descriptors[id as usize],
                &query_descriptors[i],
                params.top_k,
                params.score_mode,
                &HashSet::new(),
            )?;
            Ok(QueryRecord {
                query_id: query_traj.frames[i].frame_id,
                matched_id: Some(db_traj.frames[db_idx as usize].frame_id),
                distance: score.distance,
                gt_positive,
                correct: gt.is_positive(i, db_idx as usize),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(assemble_report(
        "multisession",
        records,
        params,
        query_descriptors,
    ))
}

fn evaluate_query(
    query: &Descriptor,
    query_id: u64,
    query_idx: usize,
    eligible: &[usize],
    descriptors: &[Descriptor],
    gt: &GroundTruth,
    params: &EvalParams,
) -> Result<QueryRecord> {
    let gt_positive = eligible.iter().any(|&j| gt.is_positive(query_idx, j));
    let entries: Vec<(u64, Vec<f64>)> = eligible
        .iter()
        .map(|&j| (j as u64, descriptors[j].key.clone()))
        .collect();
    let index = DescriptorIndex::build(entries)?;
    let (matched, score) = retrieve_best(
        &index,
        |id| &descriptors[id as usize],
        query,
        params.top_k,
        params.score_mode,
        &HashSet::new(),
    )?;
    Ok(QueryRecord {
        query_id,
        matched_id: Some(matched),
        distance: score.distance,
        gt_positive,
        correct: gt.is_positive(query_idx, matched as usize),
    })
}

fn assemble_report(
    mode: &str,
    records: Vec<QueryRecord>,
    params: &EvalParams,
    descriptors: &[Descriptor],
) -> EvalReport {
    let curve = pr_curve(&records);
    EvalReport {
        mode: mode.to_string(),
        params: params.clone(),
        config: descriptors
            .first()
            .map(|d| d.config.clone())
            .unwrap_or_default(),
        records,
        pr_points: curve.pr_points,
        auc: curve.auc,
        recall_at_1: curve.recall_at_1,
        f1_max: curve.f1_max,
        no_positives: curve.no_positives,
    }
}

/// PR sweep outcome over a record set.
#[derive(Debug, Clone, Default)]
pub struct PrOutcome {
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    pub recall_at_1: f64,
    pub f1_max: f64,
    pub no_positives: bool,
}

/// Sweeps the declaration threshold over all observed match distances.
/// `TP = declared and correct`, `FP = declared and incorrect`,
/// `FN = undeclared but ground-truth positive`; AUC integrates precision
/// over recall with a trapezoid rule. With zero ground-truth positives
/// the report is flagged degenerate and all metrics are zero.
pub fn pr_curve(records: &[QueryRecord]) -> PrOutcome {
    let gt_total = records.iter().filter(|r| r.gt_positive).count();
    if gt_total == 0 {
        return PrOutcome {
            no_positives: true,
            ..PrOutcome::default()
        };
    }
    let correct_positives = records
        .iter()
        .filter(|r| r.gt_positive && r.correct)
        .count();
    let recall_at_1 = correct_positives as f64 / gt_total as f64;

    let mut thresholds: Vec<f64> = records
        .iter()
        .filter(|r| r.matched_id.is_some())
        .map(|r| r.distance)
        .collect();
    thresholds.sort_unstable_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    thresholds.dedup();

    let mut pr_points = Vec::with_capacity(thresholds.len());
    let mut f1_max: f64 = 0.0;
    for &tau in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for r in records {
            let declared = r.matched_id.is_some() && r.distance <= tau;
            if declared {
                if r.correct {
                    tp += 1;
                } else {
                    fp += 1;
                }
            } else if r.gt_positive {
                fn_ += 1;
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        if precision + recall > 0.0 {
            f1_max = f1_max.max(2.0 * precision * recall / (precision + recall));
        }
        pr_points.push(PrPoint {
            threshold: tau,
            precision,
            recall,
        });
    }

    // trapezoid over recall, anchored at (0, first precision); duplicate
    // recall values contribute zero width
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    let mut prev_precision = pr_points.first().map(|p| p.precision).unwrap_or(0.0);
    for p in &pr_points {
        auc += (p.recall - prev_recall) * 0.5 * (p.precision + prev_precision);
        prev_recall = p.recall;
        prev_precision = p.precision;
    }

    PrOutcome {
        pr_points,
        auc,
        recall_at_1,
        f1_max,
        no_positives: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::make_descriptor;
    use crate::pointcloud::TrajectoryFrame;
    use crate::synth::{generate_loop, LoopSpec};
    use approx::assert_abs_diff_eq;

    fn record(distance: f64, gt_positive: bool, correct: bool) -> QueryRecord {
        QueryRecord {
            query_id: 0,
            matched_id: Some(1),
            distance,
            gt_positive,
            correct,
        }
    }

    #[test]
    fn ground_truth_boundary_is_inclusive() {
        let traj_a = Trajectory {
            frames: vec![TrajectoryFrame {
                frame_id: 0,
                position: [0.0, 0.0, 0.0],
                yaw: None,
            }],
        };
        let positions = [[0.0, 0.0, 5.0], [10.0, 0.0, 0.0], [10.01, 0.0, 0.0]];
        let traj_b = Trajectory {
            frames: positions
                .iter()
                .enumerate()
                .map(|(i, p)| TrajectoryFrame {
                    frame_id: i as u64,
                    position: *p,
                    yaw: None,
                })
                .collect(),
        };
        let gt = GroundTruth::build(&traj_a, &traj_b, 10.0).unwrap();
        assert!(gt.is_positive(0, 0)); // same spot; z is ignored
        assert!(gt.is_positive(0, 1)); // exactly 10 m
        assert!(!gt.is_positive(0, 2));
    }

    #[test]
    fn perfect_records_score_perfectly() {
        let records = vec![record(0.0, true, true), record(0.0, true, true)];
        let out = pr_curve(&records);
        assert_eq!(out.auc, 1.0);
        assert_eq!(out.recall_at_1, 1.0);
        assert_eq!(out.f1_max, 1.0);
    }

    #[test]
    fn all_wrong_records_score_zero() {
        let records = vec![record(0.2, true, false), record(0.4, true, false)];
        let out = pr_curve(&records);
        assert_eq!(out.auc, 0.0);
        assert_eq!(out.recall_at_1, 0.0);
    }

    #[test]
    fn no_positives_is_flagged_degenerate() {
        let records = vec![record(0.2, false, false)];
        let out = pr_curve(&records);
        assert!(out.no_positives);
        assert_eq!(out.auc, 0.0);
    }

    #[test]
    fn toy_sweep_matches_hand_enumeration() {
        // two correct at 0.1/0.2, one wrong at 0.15, one miss (no match)
        let records = vec![
            record(0.1, true, true),
            record(0.15, true, false),
            record(0.2, true, true),
            QueryRecord {
                query_id: 3,
                matched_id: None,
                distance: 1.0,
                gt_positive: true,
                correct: false,
            },
        ];
        let out = pr_curve(&records);
        // tau = 0.1: P = 1, R = 1/4; tau = 0.15: P = 1/2, R = 1/3;
        // tau = 0.2: P = 2/3, R = 2/3
        assert_eq!(out.pr_points.len(), 3);
        assert_abs_diff_eq!(out.pr_points[0].precision, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pr_points[0].recall, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pr_points[1].precision, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pr_points[1].recall, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pr_points[2].precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.pr_points[2].recall, 2.0 / 3.0, epsilon = 1e-12);
        // trapezoid: 0.25 * 1 + (1/12)(1 + 0.5)/2 + (1/3)(0.5 + 2/3)/2
        assert_abs_diff_eq!(out.auc, 73.0 / 144.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.recall_at_1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.f1_max, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn recall_is_monotone_and_auc_ignores_duplicate_thresholds() {
        let records = vec![
            record(0.1, true, true),
            record(0.1, true, true), // duplicate threshold
            record(0.3, true, false),
            record(0.5, true, true),
            record(0.7, false, false),
        ];
        let out = pr_curve(&records);
        for pair in out.pr_points.windows(2) {
            assert!(pair[1].recall >= pair[0].recall);
        }
        // splitting one duplicate record into an epsilon-different
        // threshold leaves the integral unchanged
        let mut shifted = records.clone();
        shifted[1].distance = 0.1 + 1e-12;
        let out2 = pr_curve(&shifted);
        assert_abs_diff_eq!(out.auc, out2.auc, epsilon = 1e-9);
    }

    fn quick_loop(lateral_offset: f64, sigma_t: f64) -> (Vec<Descriptor>, Trajectory) {
        let spec = LoopSpec {
            seed: 11,
            side_length: 90.0,
            frame_spacing: 3.0,
            lateral_offset,
            n_structures: 90,
            points_per_structure: 400,
            ..LoopSpec::default()
        };
        let cfg = PolarConfig {
            sigma_t,
            ..PolarConfig::default()
        };
        let (clouds, traj) = generate_loop(&spec);
        let descriptors = clouds
            .iter()
            .map(|c| make_descriptor(c, &cfg).unwrap())
            .collect();
        (descriptors, traj)
    }

    #[test]
    fn online_no_revisit_is_degenerate() {
        let spec = LoopSpec {
            seed: 3,
            side_length: 80.0,
            frame_spacing: 4.0,
            passes: 1,
            n_structures: 60,
            points_per_structure: 300,
            ..LoopSpec::default()
        };
        let (clouds, traj) = generate_loop(&spec);
        let cfg = PolarConfig::default();
        // an open L-shaped path (two sides of the square) never returns
        let n = traj.len() / 2;
        let descriptors: Vec<Descriptor> = clouds[..n]
            .iter()
            .map(|c| make_descriptor(c, &cfg).unwrap())
            .collect();
        let traj = Trajectory {
            frames: traj.frames[..n].to_vec(),
        };
        let report = online_eval(&descriptors, &traj, &EvalParams::default()).unwrap();
        assert!(report.records.iter().all(|r| !r.gt_positive));
        assert!(report.no_positives);
        assert_eq!(report.auc, 0.0);
    }

    #[test]
    fn online_near_exact_revisit_has_high_recall() {
        let (descriptors, traj) = quick_loop(0.5, 2.0);
        let report = online_eval(&descriptors, &traj, &EvalParams::default()).unwrap();
        assert!(!report.no_positives);
        assert!(
            report.recall_at_1 >= 0.95,
            "recall@1 = {}",
            report.recall_at_1
        );

        // exclusion-zone correctness: no match within 25 m of arc length
        let arc = arc_lengths(&traj);
        for r in &report.records {
            let q = r.query_id as usize;
            let m = r.matched_id.unwrap() as usize;
            assert!(arc[q] - arc[m] > report.params.exclusion);
        }
    }

    #[test]
    fn online_runs_are_deterministic() {
        let (descriptors, traj) = quick_loop(0.5, 2.0);
        let a = online_eval(&descriptors, &traj, &EvalParams::default()).unwrap();
        let b = online_eval(&descriptors, &traj, &EvalParams::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn multisession_self_database_is_perfect() {
        let (descriptors, traj) = quick_loop(0.0, 2.0);
        let n = descriptors.len() / 2;
        let params = EvalParams {
            db_spacing: None,
            ..EvalParams::default()
        };
        let report = multisession_eval(
            &descriptors[..n],
            &Trajectory {
                frames: traj.frames[..n].to_vec(),
            },
            &descriptors[..n],
            &Trajectory {
                frames: traj.frames[..n].to_vec(),
            },
            &params,
        )
        .unwrap();
        assert_eq!(report.recall_at_1, 1.0);
    }

    #[test]
    fn multisession_disjoint_sessions_have_no_positives() {
        let (descriptors, traj) = quick_loop(0.0, 2.0);
        let n = 20;
        let far_frames: Vec<TrajectoryFrame> = traj.frames[..n]
            .iter()
            .map(|f| TrajectoryFrame {
                frame_id: f.frame_id,
                position: [f.position[0] + 500.0, f.position[1], f.position[2]],
                yaw: f.yaw,
            })
            .collect();
        let report = multisession_eval(
            &descriptors[..n],
            &Trajectory {
                frames: traj.frames[..n].to_vec(),
            },
            &descriptors[..n],
            &Trajectory { frames: far_frames },
            &EvalParams::multisession(),
        )
        .unwrap();
        assert!(report.records.iter().all(|r| !r.gt_positive));
        assert!(report.no_positives);
    }

    #[test]
    fn multisession_translation_favors_blur() {
        let (db_d, db_t) = quick_loop(0.0, 2.0);
        let (q_blur, q_t) = {
            let spec = LoopSpec {
                seed: 11,
                side_length: 90.0,
                frame_spacing: 3.0,
                lateral_offset: 2.0,
                passes: 1,
                n_structures: 90,
                points_per_structure: 400,
                ..LoopSpec::default()
            };
            let cfg = PolarConfig::default();
            let (clouds, traj) = generate_loop(&spec);
            let d: Vec<Descriptor> = clouds
                .iter()
                .map(|c| make_descriptor(c, &cfg).unwrap())
                .collect();
            (d, traj)
        };
        let n = db_d.len() / 2; // first pass only as the database
        let db_traj = Trajectory {
            frames: db_t.frames[..n].to_vec(),
        };
        let params = EvalParams {
            db_spacing: None,
            ..EvalParams::default()
        };
        let r_blur = multisession_eval(&q_blur, &q_t, &db_d[..n], &db_traj, &params).unwrap();

        // rebuild both sides with the blur disabled
        let cfg0 = PolarConfig {
            sigma_t: 0.0,
            ..PolarConfig::default()
        };
        let spec_db = LoopSpec {
            seed: 11,
            side_length: 90.0,
            frame_spacing: 3.0,
            lateral_offset: 0.0,
            passes: 1,
            n_structures: 90,
            points_per_structure: 400,
            ..LoopSpec::default()
        };
        let (db_clouds, _) = generate_loop(&spec_db);
        let db0: Vec<Descriptor> = db_clouds
            .iter()
            .map(|c| make_descriptor(c, &cfg0).unwrap())
            .collect();
        let spec_q = LoopSpec {
            lateral_offset: 2.0,
            ..spec_db
        };
        let (q_clouds, _) = generate_loop(&spec_q);
        let q0: Vec<Descriptor> = q_clouds
            .iter()
            .map(|c| make_descriptor(c, &cfg0).unwrap())
            .collect();
        let r_binary = multisession_eval(&q0, &q_t, &db0, &db_traj, &params).unwrap();

        assert!(
            r_blur.recall_at_1 >= r_binary.recall_at_1,
            "blur {} vs binary {}",
            r_blur.recall_at_1,
            r_binary.recall_at_1
        );
    }

    #[test]
    fn db_spacing_thins_the_database() {
        let arc = vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 11.5];
        assert_eq!(subsample_by_arc(&arc, Some(5.0)), vec![0, 3, 6]);
        assert_eq!(subsample_by_arc(&arc, None).len(), 7);
    }
}
