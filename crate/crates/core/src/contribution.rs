//! Per-feature alignment contribution estimated from N bootstrap draws.
//!
//! A feature's contribution is the expected gain in centered kernel-target
//! alignment from adding it to a random feature subset of size
//! `floor(n_active / 2)`, estimated over random row subsamples.
//!
//! The default estimator couples each draw: one row subsample, one base
//! subset, one held-out plus feature; the draw credits `a_plus - a_base` to
//! that plus feature alone. The base set and the union are each uniform over
//! subsets of their size, so the paired difference is an unbiased estimate of
//! the same quantity the unmatched estimator targets, at lower variance. The
//! unmatched mode (draw the size-k and size-(k+1) subsamples independently
//! and average per membership) is available behind `coupled: false`.

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{
    alignment, center, gaussian_from_sq_dists, label_kernel, resolve_gamma, sq_dist_matrix,
    BandwidthSpec,
};
use crate::resample::{
    derive_stream, draw_feature_pair, draw_feature_subset, draw_rows, FeatureSubset, RowSample,
};

/// How many times a row subsample is redrawn looking for both classes before
/// giving up with a degenerate-labels error.
const MAX_ROW_RETRIES: usize = 100;

/// Counts atomic kernel evaluations (Gram matrix entries, ordered pairs).
/// One s x s Gram matrix costs s^2 regardless of symmetry shortcuts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelEvalCounter {
    evals: u64,
}

impl KernelEvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one Gram matrix over `size` rows.
    pub fn add_gram(&mut self, size: usize) {
        self.evals += (size as u64) * (size as u64);
    }

    pub fn merge(&mut self, other: KernelEvalCounter) {
        self.evals += other.evals;
    }

    pub fn total(&self) -> u64 {
        self.evals
    }
}

/// Estimates for one feature.
#[derive(Debug, Clone)]
pub struct ContributionEntry {
    pub feature: usize,
    /// Mean alignment over draws where the feature was in the plus set.
    pub mean_plus: f64,
    /// Mean alignment over draws where the feature was absent from the base
    /// set (coupled mode pairs this with the same draws as `mean_plus`).
    pub mean_base: f64,
    /// `mean_plus - mean_base`; 0.0 when unsampled.
    pub contribution: f64,
    pub count_plus: u64,
    pub count_base: u64,
    /// Set when the draws never produced an estimate for this feature.
    pub unsampled: bool,
}

/// Per-feature contribution estimates, sorted by feature id.
#[derive(Debug, Clone)]
pub struct ContributionTable {
    entries: Vec<ContributionEntry>,
}

impl ContributionTable {
    /// Entries must already be sorted by feature id.
    #[cfg(test)]
    pub(crate) fn from_entries(entries: Vec<ContributionEntry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].feature < w[1].feature));
        ContributionTable { entries }
    }

    pub fn entries(&self) -> &[ContributionEntry] {
        &self.entries
    }

    pub fn get(&self, feature: usize) -> Option<&ContributionEntry> {
        self.entries
            .binary_search_by_key(&feature, |e| e.feature)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn any_unsampled(&self) -> bool {
        self.entries.iter().any(|e| e.unsampled)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parameters of one estimation pass (one selector iteration).
#[derive(Debug, Clone)]
pub struct EstimateParams {
    /// Number of bootstrap draws N.
    pub n_draws: usize,
    /// Row subsample size s.
    pub subsample: usize,
    pub bandwidth: BandwidthSpec,
    /// Coupled draws (default) or the literal unmatched scheme.
    pub coupled: bool,
    pub master_seed: u64,
    /// Selector iteration, part of every draw's stream identity.
    pub iteration: u64,
}

struct CoupledOutcome {
    plus: usize,
    a_base: f64,
    a_plus: f64,
}

struct UnmatchedOutcome {
    base: FeatureSubset,
    a_base: f64,
    plus_set: FeatureSubset,
    a_plus: f64,
}

fn validate(data: &Dataset, active: &FeatureSubset, params: &EstimateParams) -> Result<()> {
    params.bandwidth.validate()?;
    if params.n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be >= 1".into()));
    }
    if params.subsample < 2 || params.subsample > data.m() {
        return Err(Error::InvalidParameter(format!(
            "subsample size {} must satisfy 2 <= s <= m = {}",
            params.subsample,
            data.m()
        )));
    }
    if active.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "contribution estimation needs at least 2 active features, got {}",
            active.len()
        )));
    }
    if let Some(&bad) = active.ids().iter().find(|f| **f >= data.n_features()) {
        return Err(Error::InvalidParameter(format!(
            "active feature id {bad} out of range for {} features",
            data.n_features()
        )));
    }
    if !data.has_both_classes() {
        return Err(Error::DegenerateLabels(
            "dataset labels are single-class; alignment to labels is undefined".into(),
        ));
    }
    Ok(())
}

/// Draws rows until both classes are present, at most [`MAX_ROW_RETRIES`]
/// times.
fn draw_rows_two_class(
    rng: &mut rand_chacha::ChaCha8Rng,
    data: &Dataset,
    s: usize,
) -> Result<RowSample> {
    for _ in 0..MAX_ROW_RETRIES {
        let rows = draw_rows(rng, data.m(), s)?;
        let mut pos = false;
        let mut neg = false;
        for &r in rows.ids() {
            if data.y()[r] > 0.0 {
                pos = true;
            } else {
                neg = true;
            }
            if pos && neg {
                return Ok(rows);
            }
        }
    }
    Err(Error::DegenerateLabels(format!(
        "no two-class row subsample of size {s} found in {MAX_ROW_RETRIES} attempts; \
         labels are too unbalanced for this subsample size"
    )))
}

/// Centered alignment of a Gaussian kernel (from precomputed squared
/// distances) against the label kernel of `y`.
fn aligned(d: &Array2<f64>, gamma: f64, cy: &crate::kernel::CenteredKernel) -> Result<f64> {
    let k = gaussian_from_sq_dists(d, gamma);
    alignment(&center(&k), cy)
}

fn coupled_draw(
    data: &Dataset,
    active: &FeatureSubset,
    params: &EstimateParams,
    index: u64,
    counter: &mut KernelEvalCounter,
) -> Result<CoupledOutcome> {
    let mut rng = derive_stream(params.master_seed, params.iteration, index);
    let (base, plus) = draw_feature_pair(&mut rng, active)?;
    let rows = draw_rows_two_class(&mut rng, data, params.subsample)?;

    // Union columns sorted; locate the plus column inside them.
    let mut union: Vec<usize> = base.ids().to_vec();
    let insert_at = union.partition_point(|&id| id < plus);
    union.insert(insert_at, plus);

    let xu = data.gather(rows.ids(), &union);
    let d_plus = sq_dist_matrix(xu.view());

    // Base distances = union distances minus the plus column's share.
    let s = rows.len();
    let mut d_base = d_plus.clone();
    for i in 0..s {
        for j in (i + 1)..s {
            let t = xu[[i, insert_at]] - xu[[j, insert_at]];
            let v = d_base[[i, j]] - t * t;
            d_base[[i, j]] = v;
            d_base[[j, i]] = v;
        }
    }

    // One bandwidth per draw, resolved on the union submatrix and shared by
    // both kernels so the pair differs only in the plus feature.
    let gamma = resolve_gamma(params.bandwidth, &d_plus)?;
    let cy = center(&label_kernel(&data.gather_labels(rows.ids()))?);
    let a_base = aligned(&d_base, gamma, &cy)?;
    counter.add_gram(s);
    let a_plus = aligned(&d_plus, gamma, &cy)?;
    counter.add_gram(s);
    Ok(CoupledOutcome { plus, a_base, a_plus })
}

fn unmatched_draw(
    data: &Dataset,
    active: &FeatureSubset,
    params: &EstimateParams,
    index: u64,
    counter: &mut KernelEvalCounter,
) -> Result<UnmatchedOutcome> {
    let mut rng = derive_stream(params.master_seed, params.iteration, index);
    let k = active.len() / 2;

    let base = draw_feature_subset(&mut rng, active, k)?;
    let rows_base = draw_rows_two_class(&mut rng, data, params.subsample)?;
    let xb = data.gather(rows_base.ids(), base.ids());
    let db = sq_dist_matrix(xb.view());
    let gamma_b = resolve_gamma(params.bandwidth, &db)?;
    let cy_b = center(&label_kernel(&data.gather_labels(rows_base.ids()))?);
    let a_base = aligned(&db, gamma_b, &cy_b)?;
    counter.add_gram(rows_base.len());

    let plus_set = draw_feature_subset(&mut rng, active, k + 1)?;
    let rows_plus = draw_rows_two_class(&mut rng, data, params.subsample)?;
    let xp = data.gather(rows_plus.ids(), plus_set.ids());
    let dp = sq_dist_matrix(xp.view());
    let gamma_p = resolve_gamma(params.bandwidth, &dp)?;
    let cy_p = center(&label_kernel(&data.gather_labels(rows_plus.ids()))?);
    let a_plus = aligned(&dp, gamma_p, &cy_p)?;
    counter.add_gram(rows_plus.len());

    Ok(UnmatchedOutcome {
        base,
        a_base,
        plus_set,
        a_plus,
    })
}

/// Estimates every active feature's contribution from `params.n_draws`
/// bootstrap draws. Draws run in parallel; accumulation is sequential in
/// draw order, so the result is bit-identical at any thread count.
///
/// The counter reports exactly `2 * n_draws * s^2` evaluations: two s x s
/// Gram matrices per draw.
pub fn estimate_contributions(
    data: &Dataset,
    active: &FeatureSubset,
    params: &EstimateParams,
) -> Result<(ContributionTable, KernelEvalCounter)> {
    validate(data, active, params)?;
    let n = active.len();
    let id_of: Vec<usize> = active.ids().to_vec();
    let pos_of = |feature: usize| id_of.binary_search(&feature).expect("drawn from active");

    let mut counter = KernelEvalCounter::new();
    let mut sums_plus = vec![0.0f64; n];
    let mut sums_base = vec![0.0f64; n];
    let mut counts_plus = vec![0u64; n];
    let mut counts_base = vec![0u64; n];

    if params.coupled {
        let outcomes: Result<Vec<(CoupledOutcome, KernelEvalCounter)>> = (0..params.n_draws
            as u64)
            .into_par_iter()
            .map(|b| {
                let mut c = KernelEvalCounter::new();
                coupled_draw(data, active, params, b, &mut c).map(|o| (o, c))
            })
            .collect();
        for (o, c) in outcomes? {
            counter.merge(c);
            let p = pos_of(o.plus);
            sums_plus[p] += o.a_plus;
            sums_base[p] += o.a_base;
            counts_plus[p] += 1;
            counts_base[p] += 1;
        }
    } else {
        let outcomes: Result<Vec<(UnmatchedOutcome, KernelEvalCounter)>> = (0..params.n_draws
            as u64)
            .into_par_iter()
            .map(|b| {
                let mut c = KernelEvalCounter::new();
                unmatched_draw(data, active, params, b, &mut c).map(|o| (o, c))
            })
            .collect();
        for (o, c) in outcomes? {
            counter.merge(c);
            for &f in o.plus_set.ids() {
                let p = pos_of(f);
                sums_plus[p] += o.a_plus;
                counts_plus[p] += 1;
            }
            for (p, &f) in id_of.iter().enumerate() {
                if !o.base.contains(f) {
                    sums_base[p] += o.a_base;
                    counts_base[p] += 1;
                }
            }
        }
    }

    let entries = id_of
        .iter()
        .enumerate()
        .map(|(p, &feature)| {
            if counts_plus[p] == 0 || counts_base[p] == 0 {
                ContributionEntry {
                    feature,
                    mean_plus: 0.0,
                    mean_base: 0.0,
                    contribution: 0.0,
                    count_plus: counts_plus[p],
                    count_base: counts_base[p],
                    unsampled: true,
                }
            } else {
                let mean_plus = sums_plus[p] / counts_plus[p] as f64;
                let mean_base = sums_base[p] / counts_base[p] as f64;
                ContributionEntry {
                    feature,
                    mean_plus,
                    mean_base,
                    contribution: mean_plus - mean_base,
                    count_plus: counts_plus[p],
                    count_base: counts_base[p],
                    unsampled: false,
                }
            }
        })
        .collect();

    Ok((ContributionTable { entries }, counter))
}
