//! Rotation alignment and pairwise scoring.
//!
//! The heading offset between two descriptors is the argmax of the
//! normalized circular cross-correlation of their height grids, evaluated
//! through the convolution theorem on the precomputed row spectra
//! (`O(R*S + S log S)` per pair). The query's Bernoulli maps are shifted
//! to that offset and scored by a Bernoulli-KL Jaccard: per-cell
//! occupancies are shrunk toward 0.5 in proportion to their uncertainty,
//! the symmetric KL divergence is averaged over the soft union of
//! occupied cells, and `J = exp(-mean)`. The final similarity multiplies
//! `J` with the correlation value at the aligned offset, so either cue
//! alone can veto a match.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::descriptor::{fft_inverse, Descriptor, PolarConfig};
use crate::error::{Error, Result};

/// Which cues enter the final similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Product of the KL Jaccard and the height cosine.
    Fused,
    /// Height cosine alone.
    CosineOnly,
    /// KL Jaccard alone.
    KlOnly,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fused" => Ok(ScoreMode::Fused),
            "cosine" => Ok(ScoreMode::CosineOnly),
            "kl" => Ok(ScoreMode::KlOnly),
            other => Err(format!(
                "unknown score mode {other:?} (expected fused|cosine|kl)"
            )),
        }
    }
}

/// Outcome of scoring one descriptor pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchScore {
    /// Sector shift aligning the query to the map, in [0, S).
    pub delta_star: usize,
    /// Normalized cross-correlation at `delta_star`.
    pub cosine: f64,
    /// Bernoulli-KL Jaccard at `delta_star`; zero when the union was empty.
    pub kl_jaccard: f64,
    /// Similarity under the requested score mode.
    pub similarity: f64,
    /// `1 - similarity`.
    pub distance: f64,
    /// Set when the soft union was empty; such pairs score distance 1.
    pub empty_union: bool,
    /// Size of the soft union, kept for diagnostics on small overlaps.
    pub union_size: usize,
}

fn check_shapes(map: &Descriptor, query: &Descriptor) -> Result<()> {
    if map.heights.dim() != query.heights.dim() {
        return Err(Error::ShapeMismatch(format!(
            "map grid {:?} vs query grid {:?}",
            map.heights.dim(),
            query.heights.dim()
        )));
    }
    Ok(())
}

/// Normalized circular cross-correlation over all `S` sector shifts.
///
/// `CC[d] = sum_{r,s} G_m[r,s] G_q[r,(s+d) mod S] / (|G_m|_F |G_q|_F)`,
/// evaluated as one inverse FFT of the row-summed conjugate spectral
/// product.
pub fn circular_cross_correlation(map: &Descriptor, query: &Descriptor) -> Result<Vec<f64>> {
    check_shapes(map, query)?;
    if map.frob_norm <= 0.0 || query.frob_norm <= 0.0 {
        return Err(Error::DegenerateDescriptor(
            "height grid has zero Frobenius norm".into(),
        ));
    }
    let (rings, sectors) = map.heights.dim();
    let mut acc = vec![Complex64::new(0.0, 0.0); sectors];
    for r in 0..rings {
        let m_row = map.row_spectra.row(r);
        let q_row = query.row_spectra.row(r);
        for (a, (m, q)) in acc.iter_mut().zip(m_row.iter().zip(q_row.iter())) {
            *a += m.conj() * q;
        }
    }
    fft_inverse(&mut acc);
    let scale = 1.0 / (sectors as f64 * map.frob_norm * query.frob_norm);
    Ok(acc.into_iter().map(|c| c.re * scale).collect())
}

/// Argmax over shifts; ties resolve to the smallest shift.
pub fn best_rotation(cc: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in cc.iter().enumerate() {
        if *v > cc[best] {
            best = i;
        }
    }
    best
}

/// Returns `grid` with columns taken from `(s + shift) mod S`.
pub fn shift_columns(grid: &Array2<f64>, shift: usize) -> Array2<f64> {
    let (rows, cols) = grid.dim();
    let shift = shift % cols;
    Array2::from_shape_fn((rows, cols), |(r, s)| grid[[r, (s + shift) % cols]])
}

/// Circularly shifts the query's Bernoulli maps by `delta_star` so query
/// sector `(s + delta) mod S` lines up with map sector `s`.
pub fn align_query(query: &Descriptor, delta_star: usize) -> (Array2<f64>, Array2<f64>) {
    (
        shift_columns(&query.mu, delta_star),
        shift_columns(&query.sigma, delta_star),
    )
}

/// Shrinks an occupancy toward the uninformative prior in proportion to
/// its uncertainty: `p = mu (1 - sigma) + 0.5 sigma`, clamped to
/// `[clamp, 1 - clamp]`.
pub fn shrink(mu: f64, sigma: f64, clamp: f64) -> f64 {
    (mu * (1.0 - sigma) + 0.5 * sigma).clamp(clamp, 1.0 - clamp)
}

/// Symmetric KL divergence between two Bernoulli parameters.
pub fn symmetric_kl(p_m: f64, p_q: f64) -> f64 {
    fn kl(p: f64, q: f64) -> f64 {
        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    }
    0.5 * (kl(p_m, p_q) + kl(p_q, p_m))
}

/// Bernoulli-KL Jaccard over the soft union
/// `U = {(r,s) : mu_m + mu_q > union_eps}`.
///
/// Returns `(exp(-mean divergence), |U|)`; an empty union is an error so
/// callers can decide how a no-overlap pair ranks.
pub fn kl_jaccard(
    mu_m: &Array2<f64>,
    sigma_m: &Array2<f64>,
    mu_q: &Array2<f64>,
    sigma_q: &Array2<f64>,
    cfg: &PolarConfig,
) -> Result<(f64, usize)> {
    if mu_m.dim() != mu_q.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mu grids {:?} vs {:?}",
            mu_m.dim(),
            mu_q.dim()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (((mm, sm), mq), sq) in mu_m
        .iter()
        .zip(sigma_m.iter())
        .zip(mu_q.iter())
        .zip(sigma_q.iter())
    {
        if mm + mq > cfg.union_eps {
            let p_m = shrink(*mm, *sm, cfg.bernoulli_clamp);
            let p_q = shrink(*mq, *sq, cfg.bernoulli_clamp);
            total += symmetric_kl(p_m, p_q);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyUnion);
    }
    Ok(((-total / count as f64).exp(), count))
}

/// Full pairwise score: FFT alignment, KL Jaccard on the aligned maps,
/// and fusion per `mode`. An empty soft union scores distance 1 with the
/// flag set instead of failing.
pub fn score_pair(map: &Descriptor, query: &Descriptor, mode: ScoreMode) -> Result<MatchScore> {
    let cc = circular_cross_correlation(map, query)?;
    let delta_star = best_rotation(&cc);
    // FFT roundoff can push a perfect correlation a few ulps past 1;
    // clamping keeps similarity <= 1 and distance >= 0
    let cosine = cc[delta_star].clamp(-1.0, 1.0);
    let (mu_q, sigma_q) = align_query(query, delta_star);
    match kl_jaccard(&map.mu, &map.sigma, &mu_q, &sigma_q, &map.config) {
        Ok((kl, union_size)) => {
            let similarity = match mode {
                ScoreMode::Fused => kl * cosine,
                ScoreMode::CosineOnly => cosine,
                ScoreMode::KlOnly => kl,
            };
            Ok(MatchScore {
                delta_star,
                cosine,
                kl_jaccard: kl,
                similarity,
                distance: 1.0 - similarity,
                empty_union: false,
                union_size,
            })
        }
        Err(Error::EmptyUnion) => Ok(MatchScore {
            delta_star,
            cosine,
            kl_jaccard: 0.0,
            similarity: 0.0,
            distance: 1.0,
            empty_union: true,
            union_size: 0,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{make_descriptor, PolarConfig};
    use crate::pointcloud::{Point3, PointCloud};
    use crate::synth;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptor(seed: u64) -> Descriptor {
        let cfg = PolarConfig {
            voxel_size: 0.0,
            ..PolarConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point3> = (0..4000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-70.0..70.0),
                    rng.gen_range(-70.0..70.0),
                    rng.gen_range(-2.0..8.0),
                )
            })
            .collect();
        make_descriptor(&PointCloud::new(points), &cfg).unwrap()
    }

    /// Rebuilds a descriptor after replacing its height grid so the
    /// spectra and norms stay consistent.
    fn with_heights(d: &Descriptor, heights: Array2<f64>) -> Descriptor {
        let mut spectra = Array2::from_elem(heights.dim(), Complex64::new(0.0, 0.0));
        let mut buf = vec![Complex64::new(0.0, 0.0); heights.ncols()];
        for r in 0..heights.nrows() {
            for (b, v) in buf.iter_mut().zip(heights.row(r)) {
                *b = Complex64::new(*v, 0.0);
            }
            crate::descriptor::fft_forward(&mut buf);
            for (dst, src) in spectra.row_mut(r).iter_mut().zip(&buf) {
                *dst = *src;
            }
        }
        Descriptor {
            frob_norm: heights.iter().map(|v| v * v).sum::<f64>().sqrt(),
            row_spectra: spectra,
            heights,
            ..d.clone()
        }
    }

    #[test]
    fn self_correlation_peaks_at_zero() {
        let d = random_descriptor(1);
        let cc = circular_cross_correlation(&d, &d).unwrap();
        assert_abs_diff_eq!(cc[0], 1.0, epsilon = 1e-9);
        assert_eq!(best_rotation(&cc), 0);
    }

    #[test]
    fn shifted_copy_correlates_at_the_shift() {
        let d = random_descriptor(2);
        let shifted = with_heights(&d, shift_columns(&d.heights, 7));
        let cc = circular_cross_correlation(&d, &shifted).unwrap();
        // query columns were advanced by 7, so the peak sits at S - 7
        let sectors = d.heights.ncols();
        assert_eq!(best_rotation(&cc), sectors - 7);
        assert_abs_diff_eq!(cc[sectors - 7], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fft_correlation_matches_brute_force() {
        for seed in [3u64, 4, 5] {
            let a = random_descriptor(seed);
            let b = random_descriptor(seed + 100);
            let fast = circular_cross_correlation(&a, &b).unwrap();
            let slow = synth::brute_force_cc(&a.heights, &b.heights).unwrap();
            for (f, s) in fast.iter().zip(&slow) {
                assert_abs_diff_eq!(*f, *s, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_norm_grid_is_rejected() {
        let d = random_descriptor(6);
        let zeroed = with_heights(&d, Array2::zeros(d.heights.dim()));
        assert!(matches!(
            circular_cross_correlation(&zeroed, &d),
            Err(Error::DegenerateDescriptor(_))
        ));
    }

    #[test]
    fn argmax_breaks_ties_toward_zero() {
        let mut cc = vec![0.25; 60];
        assert_eq!(best_rotation(&cc), 0);
        cc[13] = 0.9;
        assert_eq!(best_rotation(&cc), 13);
    }

    #[test]
    fn align_is_identity_at_zero_and_modular() {
        let d = random_descriptor(7);
        let (mu0, sigma0) = align_query(&d, 0);
        assert_eq!(mu0, d.mu);
        assert_eq!(sigma0, d.sigma);
        let sectors = d.heights.ncols();
        let (mu_s, _) = align_query(&d, sectors);
        assert_eq!(mu_s, d.mu);
    }

    #[test]
    fn shrink_endpoints() {
        assert_abs_diff_eq!(shrink(0.9, 0.0, 1e-6), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(shrink(0.9, 0.5, 1e-6), 0.9 * 0.5 + 0.25, epsilon = 1e-15);
        assert_eq!(shrink(0.5, 0.5, 1e-6), 0.5);
        assert_eq!(shrink(0.0, 0.0, 1e-6), 1e-6);
        assert_eq!(shrink(1.0, 0.0, 1e-6), 1.0 - 1e-6);
    }

    #[test]
    fn symmetric_kl_closed_form() {
        assert_eq!(symmetric_kl(0.3, 0.3), 0.0);
        // 0.5 * 2 * (0.9 ln 9 + 0.1 ln(1/9)) = 0.8 ln 9
        assert_abs_diff_eq!(symmetric_kl(0.9, 0.1), 0.8 * 9.0f64.ln(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_kl_is_symmetric_and_non_negative(
            a in 1e-6f64..=0.999999, b in 1e-6f64..=0.999999
        ) {
            let d_ab = symmetric_kl(a, b);
            let d_ba = symmetric_kl(b, a);
            prop_assert_eq!(d_ab, d_ba);
            prop_assert!(d_ab >= 0.0);
        }

        #[test]
        fn similarity_never_exceeds_either_cue(seed in 0u64..50) {
            let a = random_descriptor(seed);
            let b = random_descriptor(seed + 1000);
            let score = score_pair(&a, &b, ScoreMode::Fused).unwrap();
            if score.kl_jaccard > 0.0 && score.cosine > 0.0 {
                prop_assert!(score.similarity <= score.kl_jaccard.min(score.cosine) + 1e-15);
            }
        }
    }

    #[test]
    fn identical_maps_have_unit_jaccard() {
        let d = random_descriptor(8);
        let (j, n) = kl_jaccard(&d.mu, &d.sigma, &d.mu, &d.sigma, &d.config).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-9);
        assert!(n > 0);
    }

    #[test]
    fn maximal_disagreement_hits_the_clamp_floor() {
        let cfg = PolarConfig::default();
        let shape = (4, 6);
        let ones = Array2::from_elem(shape, 1.0);
        let zeros = Array2::zeros(shape);
        let (j, n) = kl_jaccard(&ones, &zeros, &zeros, &zeros, &cfg).unwrap();
        assert_eq!(n, 24);
        let eps = cfg.bernoulli_clamp;
        let d_max = symmetric_kl(1.0 - eps, eps);
        assert_abs_diff_eq!(j, (-d_max).exp(), epsilon = 1e-12);
        assert!(j < 1e-3);
    }

    #[test]
    fn empty_union_is_reported() {
        let cfg = PolarConfig::default();
        let zeros = Array2::zeros((4, 6));
        assert!(matches!(
            kl_jaccard(&zeros, &zeros, &zeros, &zeros, &cfg),
            Err(Error::EmptyUnion)
        ));
    }

    #[test]
    fn toy_grid_matches_scalar_reference() {
        // 3x3 grids; disagreeing center cell is maximally uncertain on the
        // map side (mu = sigma = 0.5), the query side is confident.
        let cfg = PolarConfig::default();
        let mu_m = ndarray::arr2(&[[1.0, 1.0, 0.0], [1.0, 0.5, 0.0], [0.0, 0.0, 0.0]]);
        let mu_q = ndarray::arr2(&[[1.0, 0.8, 0.0], [1.0, 0.9, 0.0], [0.0, 0.2, 0.0]]);
        let sigma_of = |g: &Array2<f64>| g.mapv(|m: f64| (m * (1.0 - m)).sqrt());
        let sigma_m = sigma_of(&mu_m);
        let sigma_q = sigma_of(&mu_q);
        let (j, n) = kl_jaccard(&mu_m, &sigma_m, &mu_q, &sigma_q, &cfg).unwrap();

        // scalar re-evaluation, cell by cell
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..3 {
            for s in 0..3 {
                let (mm, mq) = (mu_m[[r, s]], mu_q[[r, s]]);
                if mm + mq > cfg.union_eps {
                    let pm = (mm * (1.0 - sigma_m[[r, s]]) + 0.5 * sigma_m[[r, s]])
                        .clamp(cfg.bernoulli_clamp, 1.0 - cfg.bernoulli_clamp);
                    let pq = (mq * (1.0 - sigma_q[[r, s]]) + 0.5 * sigma_q[[r, s]])
                        .clamp(cfg.bernoulli_clamp, 1.0 - cfg.bernoulli_clamp);
                    let kl = |p: f64, q: f64| {
                        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
                    };
                    total += 0.5 * (kl(pm, pq) + kl(pq, pm));
                    count += 1;
                }
            }
        }
        assert_eq!(n, count);
        assert_abs_diff_eq!(j, (-total / count as f64).exp(), epsilon = 1e-12);
        // the fully uncertain map cell shrinks to exactly 0.5
        assert_eq!(shrink(0.5, 0.5, cfg.bernoulli_clamp), 0.5);
    }

    #[test]
    fn self_match_is_near_perfect() {
        let d = random_descriptor(9);
        let score = score_pair(&d, &d, ScoreMode::Fused).unwrap();
        assert_eq!(score.delta_star, 0);
        assert_abs_diff_eq!(score.cosine, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(score.kl_jaccard, 1.0, epsilon = 1e-9);
        assert!(score.distance <= 1e-6);
    }

    #[test]
    fn rotated_copy_scores_like_self_match() {
        let d = random_descriptor(10);
        for shift in [1usize, 13, 42] {
            let rotated = Descriptor {
                mu: shift_columns(&d.mu, shift),
                sigma: shift_columns(&d.sigma, shift),
                key: crate::descriptor::ring_key(
                    &shift_columns(&d.heights, shift).view(),
                    &shift_columns(&d.mu, shift).view(),
                ),
                ..with_heights(&d, shift_columns(&d.heights, shift))
            };
            let score = score_pair(&d, &rotated, ScoreMode::Fused).unwrap();
            assert!(score.distance <= 1e-6, "shift {shift}: {}", score.distance);
        }
    }

    #[test]
    fn log_similarity_is_additive() {
        let a = random_descriptor(11);
        let b = random_descriptor(12);
        let score = score_pair(&a, &b, ScoreMode::Fused).unwrap();
        assert!(score.cosine > 0.0);
        assert_abs_diff_eq!(
            score.similarity.ln(),
            score.kl_jaccard.ln() + score.cosine.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn score_modes_pick_their_cue() {
        let a = random_descriptor(13);
        let b = random_descriptor(14);
        let fused = score_pair(&a, &b, ScoreMode::Fused).unwrap();
        let cos = score_pair(&a, &b, ScoreMode::CosineOnly).unwrap();
        let kl = score_pair(&a, &b, ScoreMode::KlOnly).unwrap();
        assert_eq!(cos.similarity, cos.cosine);
        assert_eq!(kl.similarity, kl.kl_jaccard);
        assert_abs_diff_eq!(
            fused.similarity,
            fused.kl_jaccard * fused.cosine,
            epsilon = 1e-15
        );
        // the unused cue is still reported
        assert!(cos.kl_jaccard > 0.0);
        assert!(kl.cosine > 0.0);
    }

    #[test]
    fn fully_uncertain_maps_are_neutralized() {
        // mu = 0.5 everywhere implies sigma = 0.5 and shrink(p) = 0.5, so
        // any such pair is indistinguishable from constant-0.5 grids.
        let cfg = PolarConfig::default();
        let shape = (6, 10);
        let half = Array2::from_elem(shape, 0.5);
        let sigma = Array2::from_elem(shape, 0.5);
        let (j, _) = kl_jaccard(&half, &sigma, &half, &sigma, &cfg).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sigma_override_attenuates_divergence() {
        // forcing full uncertainty compresses shrunk probabilities toward
        // 0.5 and can only lower the divergence relative to sigma = 0
        let a = random_descriptor(15);
        let b = random_descriptor(16);
        let cfg = &a.config;
        let zeros = Array2::zeros(a.mu.dim());
        let halves = Array2::from_elem(a.mu.dim(), 0.5);
        let (j_sharp, _) = kl_jaccard(&a.mu, &zeros, &b.mu, &zeros, cfg).unwrap();
        let (j_soft, _) = kl_jaccard(&a.mu, &halves, &b.mu, &halves, cfg).unwrap();
        assert!(j_soft >= j_sharp);
    }

    #[test]
    fn binary_collapse_reduces_to_occupancy_jaccard() {
        let cfg = PolarConfig {
            sigma_t: 0.0,
            voxel_size: 0.0,
            ..PolarConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mk = |rng: &mut ChaCha8Rng| {
            let points: Vec<Point3> = (0..3000)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-70.0..70.0),
                        rng.gen_range(-70.0..70.0),
                        rng.gen_range(-2.0..8.0),
                    )
                })
                .collect();
            make_descriptor(&PointCloud::new(points), &cfg).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        // with sigma_t = 0 the scorer sees the raw binary mask
        assert_eq!(&a.mu, a.occupancy.as_ref().unwrap());
        let score = score_pair(&a, &b, ScoreMode::KlOnly).unwrap();

        // expected: exp(-D_max * disagreement fraction) over the union of
        // the aligned binary masks
        let occ_a = a.occupancy.as_ref().unwrap();
        let occ_b = shift_columns(b.occupancy.as_ref().unwrap(), score.delta_star);
        let mut union = 0usize;
        let mut disagree = 0usize;
        for (x, y) in occ_a.iter().zip(occ_b.iter()) {
            if x + y > cfg.union_eps {
                union += 1;
                if x != y {
                    disagree += 1;
                }
            }
        }
        let eps = cfg.bernoulli_clamp;
        let d_max = symmetric_kl(1.0 - eps, eps);
        let expect = (-d_max * disagree as f64 / union as f64).exp();
        assert_abs_diff_eq!(score.kl_jaccard, expect, epsilon = 1e-9);
        assert_eq!(score.union_size, union);
    }
}
