//! Comparison selectors: greedy forward HSIC-style selection, greedy
//! backward elimination, and a Pearson correlation filter.
//!
//! Both greedy selectors score candidate sets by full-data centered
//! kernel-target alignment under the same bandwidth policy as the randomized
//! selector. Candidate steps reuse the running squared-distance matrix and
//! add or subtract one feature's share, so each candidate costs O(m^2)
//! instead of O(m^2 d).

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{
    alignment, center, gaussian_from_sq_dists, label_kernel, resolve_gamma, BandwidthSpec,
    CenteredKernel,
};

/// One ranked feature with the score that decided its position: the achieved
/// alignment for the greedy selectors, |Pearson r| for the filter.
#[derive(Debug, Clone)]
pub struct RankedFeature {
    pub feature: usize,
    pub score: f64,
    /// Set when the score was undefined (constant feature, degenerate
    /// kernel) and defaulted to 0 or stayed unchosen until forced.
    pub degenerate: bool,
}

/// Features ordered most important first.
#[derive(Debug, Clone)]
pub struct FeatureRanking {
    entries: Vec<RankedFeature>,
}

impl FeatureRanking {
    fn new(entries: Vec<RankedFeature>) -> Self {
        debug_assert!({
            let mut ids: Vec<usize> = entries.iter().map(|e| e.feature).collect();
            ids.sort_unstable();
            ids.windows(2).all(|w| w[0] < w[1])
        });
        FeatureRanking { entries }
    }

    pub fn entries(&self) -> &[RankedFeature] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ranked ids, most important first.
    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.feature).collect()
    }

    /// The first `k` ranked ids (or all of them if k exceeds the length),
    /// in rank order.
    pub fn prefix(&self, k: usize) -> Vec<usize> {
        self.entries
            .iter()
            .take(k)
            .map(|e| e.feature)
            .collect()
    }
}

fn require_two_classes(data: &Dataset) -> Result<()> {
    if !data.has_both_classes() {
        return Err(Error::DegenerateLabels(
            "dataset labels are single-class; alignment to labels is undefined".into(),
        ));
    }
    Ok(())
}

/// Alignment of the kernel built from `d_running` with one feature column
/// added (`sign = +1`) or removed (`sign = -1`). Degenerate candidates are
/// reported as `None` so the caller can rank them last.
fn candidate_alignment(
    d_running: &Array2<f64>,
    col: &[f64],
    sign: f64,
    bandwidth: BandwidthSpec,
    cy: &CenteredKernel,
) -> Result<Option<f64>> {
    let m = col.len();
    let mut d = d_running.clone();
    for i in 0..m {
        for j in (i + 1)..m {
            let t = col[i] - col[j];
            let v = d[[i, j]] + sign * t * t;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    let gamma = match resolve_gamma(bandwidth, &d) {
        Ok(g) => g,
        Err(Error::DegenerateData(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let k = gaussian_from_sq_dists(&d, gamma);
    match alignment(&center(&k), cy) {
        Ok(a) => Ok(Some(a)),
        Err(Error::DegenerateKernel(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn column(data: &Dataset, feature: usize) -> Vec<f64> {
    data.x().column(feature).iter().copied().collect()
}

/// Applies one feature's squared differences to the running distance matrix.
fn apply_column(d: &mut Array2<f64>, col: &[f64], sign: f64) {
    let m = col.len();
    for i in 0..m {
        for j in (i + 1)..m {
            let t = col[i] - col[j];
            let v = d[[i, j]] + sign * t * t;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
}

/// Greedy forward selection: grow from the empty set, at each step adding
/// the feature that maximizes full-data centered alignment of the Gaussian
/// kernel on selected + candidate against the label kernel. Ties go to the
/// smaller feature id. The ranking is the addition order, scored by the
/// alignment achieved at acceptance.
pub fn fohsic(data: &Dataset, bandwidth: BandwidthSpec, k_max: usize) -> Result<FeatureRanking> {
    bandwidth.validate()?;
    require_two_classes(data)?;
    let n = data.n_features();
    if k_max == 0 || k_max > n {
        return Err(Error::InvalidParameter(format!(
            "k_max must satisfy 1 <= k_max <= {n}, got {k_max}"
        )));
    }
    let cy = center(&label_kernel(data.y())?);
    let m = data.m();
    let mut d_sel = Array2::<f64>::zeros((m, m));
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut entries = Vec::with_capacity(k_max);

    while entries.len() < k_max {
        let scored: Result<Vec<(usize, Option<f64>)>> = remaining
            .par_iter()
            .map(|&c| {
                candidate_alignment(&d_sel, &column(data, c), 1.0, bandwidth, &cy)
                    .map(|a| (c, a))
            })
            .collect();
        let scored = scored?;
        let best = scored
            .iter()
            .filter_map(|&(c, a)| a.map(|a| (c, a)))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
        let (feature, score, degenerate) = match best {
            Some((c, a)) => (c, a, false),
            // Every remaining candidate is degenerate; take the smallest id
            // so the ranking stays a permutation.
            None => (remaining[0], 0.0, true),
        };
        apply_column(&mut d_sel, &column(data, feature), 1.0);
        remaining.retain(|&c| c != feature);
        entries.push(RankedFeature {
            feature,
            score,
            degenerate,
        });
    }
    Ok(FeatureRanking::new(entries))
}

/// Greedy backward elimination: start from all features and repeatedly
/// remove the feature whose removal maximizes the remaining set's alignment.
/// Ties remove the smaller id. The ranking is reverse elimination order
/// (last survivor first). Eliminated features are scored by the alignment
/// the remaining set achieved once they were gone; the survivor is scored by
/// its singleton alignment.
pub fn bahsic(data: &Dataset, bandwidth: BandwidthSpec) -> Result<FeatureRanking> {
    bandwidth.validate()?;
    require_two_classes(data)?;
    let n = data.n_features();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "backward elimination needs at least 2 features, got {n}"
        )));
    }
    let cy = center(&label_kernel(data.y())?);
    let m = data.m();

    // Full-data distance matrix over all features.
    let mut d_rem = Array2::<f64>::zeros((m, m));
    for f in 0..n {
        apply_column(&mut d_rem, &column(data, f), 1.0);
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut eliminated: Vec<RankedFeature> = Vec::with_capacity(n - 1);

    while remaining.len() > 1 {
        let scored: Result<Vec<(usize, Option<f64>)>> = remaining
            .par_iter()
            .map(|&r| {
                candidate_alignment(&d_rem, &column(data, r), -1.0, bandwidth, &cy)
                    .map(|a| (r, a))
            })
            .collect();
        let scored = scored?;
        let best = scored
            .iter()
            .filter_map(|&(r, a)| a.map(|a| (r, a)))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
        let (feature, score, degenerate) = match best {
            Some((r, a)) => (r, a, false),
            None => (remaining[0], 0.0, true),
        };
        apply_column(&mut d_rem, &column(data, feature), -1.0);
        remaining.retain(|&r| r != feature);
        eliminated.push(RankedFeature {
            feature,
            score,
            degenerate,
        });
    }

    let survivor = remaining[0];
    let survivor_score = crate::kernel::subset_alignment(
        data.x(),
        data.y(),
        &[survivor],
        bandwidth,
    );
    let (score, degenerate) = match survivor_score {
        Ok(a) => (a, false),
        Err(Error::DegenerateData(_)) | Err(Error::DegenerateKernel(_)) => (0.0, true),
        Err(e) => return Err(e),
    };
    let mut entries = vec![RankedFeature {
        feature: survivor,
        score,
        degenerate,
    }];
    entries.extend(eliminated.into_iter().rev());
    Ok(FeatureRanking::new(entries))
}

/// Ranks features by decreasing |Pearson correlation| with the labels. Ties
/// go to the smaller id. Constant features get score 0 and a degenerate
/// flag instead of an error.
pub fn corr_filter(data: &Dataset) -> Result<FeatureRanking> {
    require_two_classes(data)?;
    let m = data.m() as f64;
    let y = data.y();
    let mean_y = y.iter().sum::<f64>() / m;
    let sd_y = (y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / m).sqrt();

    let x = data.x();
    let mut entries: Vec<RankedFeature> = (0..data.n_features())
        .map(|j| {
            let col = x.column(j);
            let mean_x = col.sum() / m;
            let mut cov = 0.0;
            let mut var_x = 0.0;
            for (v, l) in col.iter().zip(y.iter()) {
                cov += (v - mean_x) * (l - mean_y);
                var_x += (v - mean_x) * (v - mean_x);
            }
            let sd_x = (var_x / m).sqrt();
            if sd_x <= 1e-12 {
                RankedFeature {
                    feature: j,
                    score: 0.0,
                    degenerate: true,
                }
            } else {
                let r = (cov / m) / (sd_x * sd_y);
                RankedFeature {
                    feature: j,
                    score: r.abs(),
                    degenerate: false,
                }
            }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.feature.cmp(&b.feature)));
    Ok(FeatureRanking::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_weston_linear, gen_weston_nonlinear, gen_xor};
    use crate::kernel::subset_alignment;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sign_dataset(seed: u64, m: usize, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f64>::zeros((m, n));
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let y: Vec<f64> = (0..m)
            .map(|i| if x[[i, 0]] >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        Dataset::new(x, y, None).unwrap()
    }

    fn is_permutation(ranking: &FeatureRanking, n: usize) -> bool {
        let mut ids = ranking.ids();
        ids.sort_unstable();
        ids == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn fohsic_finds_dominant_marginal_first() {
        let data = sign_dataset(1, 80, 6);
        let ranking = fohsic(&data, BandwidthSpec::MedianHeuristic, 6).unwrap();
        assert_eq!(ranking.ids()[0], 0);
        assert!(is_permutation(&ranking, 6));
        assert!(!ranking.entries()[0].degenerate);
    }

    #[test]
    fn fohsic_respects_k_max() {
        let data = sign_dataset(2, 40, 5);
        let ranking = fohsic(&data, BandwidthSpec::MedianHeuristic, 1).unwrap();
        assert_eq!(ranking.len(), 1);
        assert!(fohsic(&data, BandwidthSpec::MedianHeuristic, 6).is_err());
        assert!(fohsic(&data, BandwidthSpec::MedianHeuristic, 0).is_err());
    }

    #[test]
    fn fohsic_misses_the_xor_pair() {
        // Forward greediness sees no marginal signal in either XOR feature,
        // so the pair should rarely fill the top two slots.
        let mut hits = 0;
        for seed in 0..10u64 {
            let data = gen_xor(150, 10, 0.3, seed).unwrap();
            let ranking = fohsic(&data, BandwidthSpec::MedianHeuristic, 2).unwrap();
            let top: Vec<usize> = ranking.prefix(2);
            if top.contains(&0) && top.contains(&1) {
                hits += 1;
            }
        }
        assert!(hits <= 2, "fohsic recovered the XOR pair in {hits}/10 seeds");
    }

    #[test]
    fn bahsic_keeps_the_xor_pair() {
        let mut hits = 0;
        for seed in 0..10u64 {
            let data = gen_xor(150, 10, 0.3, seed).unwrap();
            let ranking = bahsic(&data, BandwidthSpec::MedianHeuristic).unwrap();
            assert!(is_permutation(&ranking, 10));
            let mut top = ranking.prefix(2);
            top.sort_unstable();
            if top == [0, 1] {
                hits += 1;
            }
        }
        assert!(hits >= 7, "bahsic kept the XOR pair in only {hits}/10 seeds");
    }

    #[test]
    fn bahsic_survivor_is_the_dominant_marginal() {
        let data = sign_dataset(3, 80, 5);
        let ranking = bahsic(&data, BandwidthSpec::MedianHeuristic).unwrap();
        assert_eq!(ranking.ids()[0], 0);
        assert!(is_permutation(&ranking, 5));
    }

    #[test]
    fn bahsic_two_features_is_one_elimination() {
        let data = sign_dataset(4, 50, 2);
        let ranking = bahsic(&data, BandwidthSpec::MedianHeuristic).unwrap();
        assert_eq!(ranking.len(), 2);
        assert!(is_permutation(&ranking, 2));
        let one = sign_dataset(4, 50, 1);
        assert!(bahsic(&one, BandwidthSpec::MedianHeuristic).is_err());
    }

    /// Every greedy step's accepted score must equal the exhaustive maximum
    /// over candidates recomputed from scratch.
    #[test]
    fn greedy_steps_match_brute_force_oracle() {
        let data = sign_dataset(5, 12, 6);
        let bw = BandwidthSpec::MedianHeuristic;

        let ranking = fohsic(&data, bw, 6).unwrap();
        let mut selected: Vec<usize> = Vec::new();
        for entry in ranking.entries() {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..6 {
                if selected.contains(&c) {
                    continue;
                }
                let mut set = selected.clone();
                set.push(c);
                set.sort_unstable();
                if let Ok(a) = subset_alignment(data.x(), data.y(), &set, bw) {
                    let better = match best {
                        None => true,
                        Some((bc, ba)) => a > ba || (a == ba && c < bc),
                    };
                    if better {
                        best = Some((c, a));
                    }
                }
            }
            let (oracle_id, oracle_score) = best.unwrap();
            assert_eq!(entry.feature, oracle_id);
            assert_abs_diff_eq!(entry.score, oracle_score, epsilon = 1e-10);
            selected.push(entry.feature);
        }

        let ranking = bahsic(&data, bw).unwrap();
        let mut remaining: Vec<usize> = (0..6).collect();
        // Eliminations are the ranking read back to front.
        for entry in ranking.entries().iter().rev().take(5) {
            let mut best: Option<(usize, f64)> = None;
            for &r in &remaining {
                let set: Vec<usize> = remaining.iter().copied().filter(|&f| f != r).collect();
                if let Ok(a) = subset_alignment(data.x(), data.y(), &set, bw) {
                    let better = match best {
                        None => true,
                        Some((br, ba)) => a > ba || (a == ba && r < br),
                    };
                    if better {
                        best = Some((r, a));
                    }
                }
            }
            let (oracle_id, oracle_score) = best.unwrap();
            assert_eq!(entry.feature, oracle_id);
            assert_abs_diff_eq!(entry.score, oracle_score, epsilon = 1e-10);
            remaining.retain(|&f| f != entry.feature);
        }
    }

    #[test]
    fn corr_perfect_and_flipped_features_rank_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 60;
        let y: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut x = Array2::<f64>::zeros((m, 3));
        for i in 0..m {
            x[[i, 0]] = StandardNormal.sample(&mut rng);
            x[[i, 1]] = y[i];
            x[[i, 2]] = -y[i];
        }
        let data = Dataset::new(x, y, None).unwrap();
        let ranking = corr_filter(&data).unwrap();
        // Both +/- copies score |r| = 1; the smaller id wins the tie.
        assert_eq!(ranking.ids()[0], 1);
        assert_eq!(ranking.ids()[1], 2);
        assert_abs_diff_eq!(ranking.entries()[0].score, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ranking.entries()[1].score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn corr_ignores_xor_features() {
        let mut hits = 0;
        for seed in 0..10u64 {
            let data = gen_xor(200, 10, 0.3, seed).unwrap();
            let ranking = corr_filter(&data).unwrap();
            let top = ranking.prefix(2);
            if top.contains(&0) || top.contains(&1) {
                hits += 1;
            }
        }
        assert!(hits <= 3, "corr ranked an XOR feature in its top 2 in {hits}/10 seeds");
    }

    #[test]
    fn corr_flags_constant_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 30;
        let y: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut x = Array2::<f64>::zeros((m, 2));
        for i in 0..m {
            x[[i, 0]] = 5.0;
            let jitter: f64 = StandardNormal.sample(&mut rng);
            x[[i, 1]] = y[i] + 0.1 * jitter;
        }
        let data = Dataset::new(x, y, None).unwrap();
        let ranking = corr_filter(&data).unwrap();
        assert_eq!(ranking.ids(), vec![1, 0]);
        let constant = &ranking.entries()[1];
        assert!(constant.degenerate);
        assert_eq!(constant.score, 0.0);
    }

    #[test]
    fn corr_ranking_is_affine_invariant_through_standardization() {
        let (raw, y) = crate::datagen::gen_weston_linear_raw(120, 8, 11);
        let base = Dataset::new(raw.clone(), y.clone(), None).unwrap();
        let mut scaled = raw;
        for i in 0..120 {
            scaled[[i, 3]] = 3.0 * scaled[[i, 3]] + 7.0;
        }
        let transformed = Dataset::new(scaled, y, None).unwrap();
        let a = corr_filter(&base).unwrap();
        let b = corr_filter(&transformed).unwrap();
        assert_eq!(a.ids(), b.ids());
    }

    #[test]
    fn corr_misses_nonlinear_weston_features() {
        // All 100 features have sample correlation ~ N(0, 1/m) with the
        // label, so the top 5 is close to a uniform draw; on average only
        // 5 * 5/100 = 0.25 relevant features should appear in it.
        let mut total = 0;
        for seed in 0..5u64 {
            let data = gen_weston_nonlinear(300, 100, 13 + seed).unwrap();
            let ranking = corr_filter(&data).unwrap();
            total += ranking.prefix(5).iter().filter(|f| **f < 5).count();
        }
        assert!(
            total <= 5,
            "{total} relevant features in corr top 5 across 5 seeds; expected about 1"
        );
    }

    #[test]
    fn corr_finds_linear_weston_features() {
        let mut total = 0;
        for seed in 0..5u64 {
            let data = gen_weston_linear(300, 30, seed).unwrap();
            let ranking = corr_filter(&data).unwrap();
            total += ranking.prefix(5).iter().filter(|f| **f < 5).count();
        }
        assert!(total >= 15, "corr found only {total}/25 relevant features over 5 seeds");
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Array2::<f64>::zeros((20, 3));
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let data = Dataset::new(x, vec![1.0; 20], None).unwrap();
        assert!(matches!(
            fohsic(&data, BandwidthSpec::MedianHeuristic, 2),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(matches!(
            bahsic(&data, BandwidthSpec::MedianHeuristic),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(matches!(corr_filter(&data), Err(Error::DegenerateLabels(_))));
    }
}
