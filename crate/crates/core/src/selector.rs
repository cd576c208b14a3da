//! The full selection loop: estimate contributions, optionally fix
//! persistent top contributors, cull the bottom fraction, repeat.
//!
//! Fixing and culling both rank by estimated contribution. Ties are broken
//! by original feature id: the smaller id is culled first at the bottom and
//! admitted first into the top set. Termination: the active set reaches
//! `min_features`, or, with fixing enabled, every active feature is fixed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contribution::{estimate_contributions, ContributionTable, EstimateParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::BandwidthSpec;
use crate::resample::FeatureSubset;

/// Parameters of one selection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorConfig {
    /// Bootstrap draws per iteration (N).
    pub n_bootstraps: usize,
    /// Row subsample size per draw (s).
    pub subsample: usize,
    /// Fraction of non-fixed features culled per iteration (z).
    pub cull_fraction: f64,
    /// Fraction defining the top set for fixing (a).
    pub top_fraction: f64,
    /// Consecutive top-set appearances required to fix a feature (t).
    pub occasions: u32,
    pub fixing_enabled: bool,
    pub bandwidth: BandwidthSpec,
    pub master_seed: u64,
    /// Selection stops when this many features remain. At least 2.
    pub min_features: usize,
    /// Coupled draws (default) or the literal unmatched scheme.
    pub coupled_draws: bool,
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.bandwidth.validate()?;
        if self.n_bootstraps == 0 {
            return Err(Error::InvalidParameter("n_bootstraps must be >= 1".into()));
        }
        if self.subsample < 2 {
            return Err(Error::InvalidParameter(format!(
                "subsample size must be >= 2, got {}",
                self.subsample
            )));
        }
        if !(self.cull_fraction > 0.0 && self.cull_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cull fraction must lie in (0, 1), got {}",
                self.cull_fraction
            )));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "top fraction must lie in (0, 1), got {}",
                self.top_fraction
            )));
        }
        if self.cull_fraction + self.top_fraction > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "cull fraction {} + top fraction {} exceeds 1",
                self.cull_fraction, self.top_fraction
            )));
        }
        if self.occasions == 0 {
            return Err(Error::InvalidParameter("occasions must be >= 1".into()));
        }
        if self.min_features < 2 {
            return Err(Error::InvalidParameter(format!(
                "min_features must be >= 2, got {}",
                self.min_features
            )));
        }
        Ok(())
    }
}

/// One iteration of the trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: u64,
    /// Active feature ids at the start of the iteration.
    pub active_before: Vec<usize>,
    pub table: ContributionTable,
    /// Features culled this iteration, sorted.
    pub culled: Vec<usize>,
    /// Fixed set after this iteration's fixing step, sorted.
    pub fixed: Vec<usize>,
    /// Kernel evaluations spent this iteration.
    pub kernel_evals: u64,
    /// Active feature ids after culling.
    pub active_after: Vec<usize>,
}

/// Complete record of one selection run. Feature ids are always in the
/// original dataset indexing.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub config: SelectorConfig,
    pub n_features: usize,
    pub iterations: Vec<IterationRecord>,
    /// Surviving feature ids, sorted.
    pub selected: Vec<usize>,
    /// Fixed feature ids at termination, sorted.
    pub fixed: Vec<usize>,
    pub total_kernel_evals: u64,
}

impl SelectionTrace {
    /// Line-delimited JSON: a header record, one record per iteration with
    /// fields {iteration, active_ids, contributions, culled_ids, fixed_ids,
    /// kernel_evals}, and a final record. `contributions` is aligned with
    /// `active_ids`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = json!({
            "record": "header",
            "format_version": 1,
            "n_features": self.n_features,
            "config": self.config,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for it in &self.iterations {
            let contributions: Vec<f64> = it
                .active_before
                .iter()
                .map(|&f| it.table.get(f).expect("table covers active").contribution)
                .collect();
            let line = json!({
                "record": "iteration",
                "iteration": it.iteration,
                "active_ids": it.active_before,
                "contributions": contributions,
                "culled_ids": it.culled,
                "fixed_ids": it.fixed,
                "kernel_evals": it.kernel_evals,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let fin = json!({
            "record": "final",
            "selected_ids": self.selected,
            "fixed_ids": self.fixed,
            "total_kernel_evals": self.total_kernel_evals,
        });
        out.push_str(&fin.to_string());
        out.push('\n');
        out
    }
}

/// Active-set sizes a run visits when no fixing interferes: the starting
/// size, then each post-cull size down to `min_features`.
pub fn culling_schedule(n: usize, z: f64, min_features: usize) -> Vec<usize> {
    let mut sizes = vec![n];
    let mut size = n;
    while size > min_features {
        let c = cull_count(size, 0, z, size - min_features.min(size));
        let c = c.min(size - min_features);
        if c == 0 {
            break;
        }
        size -= c;
        sizes.push(size);
    }
    sizes
}

/// Number of features to cull: `ceil(z * non_fixed)`, capped so the total
/// active count never drops below the floor.
fn cull_count(active: usize, fixed: usize, z: f64, floor_room: usize) -> usize {
    let non_fixed = active - fixed;
    let want = (z * non_fixed as f64).ceil() as usize;
    want.min(floor_room).min(non_fixed)
}

/// Ranks `(contribution, id)` ascending: lowest contribution first, ties by
/// smaller id first.
fn bottom_order(table: &ContributionTable, ids: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = ids.to_vec();
    order.sort_by(|&x, &y| {
        let cx = table.get(x).expect("table covers active").contribution;
        let cy = table.get(y).expect("table covers active").contribution;
        cx.total_cmp(&cy).then(x.cmp(&y))
    });
    order
}

/// Culls the `ceil(z * |active non-fixed|)` lowest-contribution non-fixed
/// features, never dropping the total below `min_features`. Returns the new
/// active set and the culled ids (sorted).
pub fn cull(
    table: &ContributionTable,
    active: &FeatureSubset,
    fixed: &FeatureSubset,
    z: f64,
    min_features: usize,
) -> (FeatureSubset, Vec<usize>) {
    let non_fixed: Vec<usize> = active
        .ids()
        .iter()
        .copied()
        .filter(|f| !fixed.contains(*f))
        .collect();
    let floor_room = active.len().saturating_sub(min_features);
    let c = cull_count(active.len(), active.len() - non_fixed.len(), z, floor_room);
    if c == 0 {
        return (active.clone(), Vec::new());
    }
    let order = bottom_order(table, &non_fixed);
    let mut culled: Vec<usize> = order[..c].to_vec();
    culled.sort_unstable();
    let survivors: Vec<usize> = active
        .ids()
        .iter()
        .copied()
        .filter(|f| culled.binary_search(f).is_err())
        .collect();
    (FeatureSubset::from_sorted(survivors), culled)
}

/// Advances the consecutive-top-set counters and returns newly fixed
/// features (sorted). A feature is fixed once it has sat in the top
/// `ceil(a * |active|)` by contribution for `t` consecutive iterations;
/// missing the top set resets its counter.
pub fn update_fixed(
    history: &mut BTreeMap<usize, u32>,
    table: &ContributionTable,
    active: &FeatureSubset,
    already_fixed: &FeatureSubset,
    a: f64,
    t: u32,
) -> Vec<usize> {
    let top_size = ((a * active.len() as f64).ceil() as usize)
        .max(1)
        .min(active.len());
    let mut order: Vec<usize> = active.ids().to_vec();
    order.sort_by(|&x, &y| {
        let cx = table.get(x).expect("table covers active").contribution;
        let cy = table.get(y).expect("table covers active").contribution;
        cy.total_cmp(&cx).then(x.cmp(&y))
    });
    let top: Vec<usize> = order[..top_size].to_vec();
    let mut additions = Vec::new();
    for &f in active.ids() {
        let in_top = top.contains(&f);
        let counter = history.entry(f).or_insert(0);
        if in_top {
            *counter += 1;
            if *counter >= t && !already_fixed.contains(f) {
                additions.push(f);
            }
        } else {
            *counter = 0;
        }
    }
    additions.sort_unstable();
    additions
}

/// Runs the full selection loop on `data`.
///
/// Each iteration estimates contributions over `config.n_bootstraps` coupled
/// draws, updates the fixed set when fixing is enabled, and culls the bottom
/// `cull_fraction` of non-fixed features. The trace records every iteration;
/// its totals satisfy `total_kernel_evals = iterations * 2 * N * s^2`.
///
/// Errors: invalid config before any work; degenerate labels propagated from
/// estimation; an insufficient-sampling error when a culling decision would
/// rest entirely on features never drawn as the plus feature.
pub fn randsel(data: &Dataset, config: &SelectorConfig) -> Result<SelectionTrace> {
    config.validate()?;
    if data.n_features() < config.min_features {
        return Err(Error::InvalidParameter(format!(
            "dataset has {} features, fewer than min_features = {}",
            data.n_features(),
            config.min_features
        )));
    }
    if data.m() < 4 {
        return Err(Error::InvalidData(format!(
            "selection needs at least 4 rows, got {}",
            data.m()
        )));
    }
    if !data.has_both_classes() {
        return Err(Error::DegenerateLabels(
            "dataset labels are single-class; alignment to labels is undefined".into(),
        ));
    }

    let mut active = FeatureSubset::full(data.n_features());
    let mut fixed = FeatureSubset::from_sorted(Vec::new());
    let mut history: BTreeMap<usize, u32> = BTreeMap::new();
    let mut iterations = Vec::new();
    let mut total_evals = 0u64;
    let mut iter = 1u64;

    loop {
        if active.len() <= config.min_features {
            break;
        }
        if config.fixing_enabled && fixed.len() == active.len() {
            break;
        }

        let params = EstimateParams {
            n_draws: config.n_bootstraps,
            subsample: config.subsample,
            bandwidth: config.bandwidth,
            coupled: config.coupled_draws,
            master_seed: config.master_seed,
            iteration: iter,
        };
        let (table, counter) = estimate_contributions(data, &active, &params)?;

        if config.fixing_enabled {
            let additions = update_fixed(
                &mut history,
                &table,
                &active,
                &fixed,
                config.top_fraction,
                config.occasions,
            );
            if !additions.is_empty() {
                let mut ids = fixed.ids().to_vec();
                ids.extend(additions);
                ids.sort_unstable();
                fixed = FeatureSubset::from_sorted(ids);
            }
        }

        let (next_active, culled) = cull(
            &table,
            &active,
            &fixed,
            config.cull_fraction,
            config.min_features,
        );
        if !culled.is_empty()
            && culled
                .iter()
                .all(|&f| table.get(f).map(|e| e.unsampled).unwrap_or(false))
        {
            return Err(Error::InsufficientSampling(format!(
                "all {} features due for culling were never drawn as the plus feature in {} \
                 bootstraps; raise n_bootstraps well above the active feature count ({})",
                culled.len(),
                config.n_bootstraps,
                active.len()
            )));
        }

        total_evals += counter.total();
        iterations.push(IterationRecord {
            iteration: iter,
            active_before: active.ids().to_vec(),
            table,
            culled: culled.clone(),
            fixed: fixed.ids().to_vec(),
            kernel_evals: counter.total(),
            active_after: next_active.ids().to_vec(),
        });

        if culled.is_empty() && !(config.fixing_enabled && fixed.len() == next_active.len()) {
            // No progress possible (floor reached with nothing to cull).
            active = next_active;
            break;
        }
        active = next_active;
        iter += 1;
    }

    Ok(SelectionTrace {
        config: config.clone(),
        n_features: data.n_features(),
        iterations,
        selected: active.ids().to_vec(),
        fixed: fixed.ids().to_vec(),
        total_kernel_evals: total_evals,
    })
}
