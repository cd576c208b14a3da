//! Gaussian kernels, double centering, and centered kernel-target alignment.
//!
//! Alignment between two centered kernels Cx, Cy is
//! `a = <Cx, Cy>_F / (||Cx||_F * ||Cy||_F)`, which lies in [-1, 1]. Centering
//! uses the O(m^2) identity `C_ij = K_ij - rowmean_i - colmean_j + grandmean`
//! rather than materializing the projection matrices.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered kernels with Frobenius norm below this threshold carry no signal
/// and make alignment undefined.
pub const DEGENERATE_NORM_TOL: f64 = 1e-12;

/// Pair budget for the median heuristic; beyond this, pairs are subsampled
/// with a fixed internal seed so the estimate stays reproducible.
const MEDIAN_PAIR_BUDGET: usize = 100_000;
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e_5f67;

/// How the Gaussian bandwidth gamma is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    /// Use the given gamma directly. Must be finite and positive.
    Fixed(f64),
    /// Set gamma to the reciprocal of the median pairwise squared distance
    /// of whatever data the kernel is built on.
    MedianHeuristic,
}

impl BandwidthSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BandwidthSpec::Fixed(g) if !(g.is_finite() && *g > 0.0) => Err(
                Error::InvalidParameter(format!("fixed gamma must be finite and > 0, got {g}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Symmetric Gram matrix with exact unit diagonal.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Doubly centered kernel. Row and column sums are zero up to rounding.
#[derive(Debug, Clone)]
pub struct CenteredKernel {
    values: Array2<f64>,
    frobenius_norm: f64,
}

impl CenteredKernel {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm
    }
}

fn check_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Squared Euclidean distance matrix of the rows of `x`. Zero diagonal.
pub(crate) fn sq_dist_matrix(x: ArrayView2<f64>) -> Array2<f64> {
    let m = x.nrows();
    let mut d = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let xi = x.row(i);
        for j in (i + 1)..m {
            let xj = x.row(j);
            let dist: f64 = xi
                .iter()
                .zip(xj.iter())
                .map(|(a, b)| {
                    let t = a - b;
                    t * t
                })
                .sum();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// Gaussian kernel from a precomputed squared-distance matrix. Negative
/// entries (rounding debris from incremental distance updates) are clamped
/// to zero at the exp input only.
pub(crate) fn gaussian_from_sq_dists(d: &Array2<f64>, gamma: f64) -> KernelMatrix {
    let m = d.nrows();
    let mut k = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        k[[i, i]] = 1.0;
        for j in (i + 1)..m {
            let v = (-gamma * d[[i, j]].max(0.0)).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    KernelMatrix { values: k }
}

/// Gaussian kernel `K_ij = exp(-gamma * ||x_i - x_j||^2)` on the rows of `x`.
///
/// The diagonal is exactly 1. Errors: non-finite entries in `x` or a
/// non-positive / non-finite `gamma`.
pub fn gaussian_kernel(x: ArrayView2<f64>, gamma: f64) -> Result<KernelMatrix> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite and > 0, got {gamma}"
        )));
    }
    check_finite(x, "sample matrix")?;
    if x.nrows() < 2 {
        return Err(Error::InvalidData(format!(
            "kernel needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    Ok(gaussian_from_sq_dists(&sq_dist_matrix(x), gamma))
}

/// Label kernel `L_ij = y_i * y_j` for labels in {-1, +1}.
pub fn label_kernel(y: &[f64]) -> Result<KernelMatrix> {
    if y.is_empty() {
        return Err(Error::InvalidData("label vector is empty".into()));
    }
    for (i, v) in y.iter().enumerate() {
        if *v != 1.0 && *v != -1.0 {
            return Err(Error::InvalidData(format!(
                "label at row {} must be -1 or +1, got {v}",
                i + 1
            )));
        }
    }
    let m = y.len();
    let mut k = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            k[[i, j]] = y[i] * y[j];
        }
    }
    Ok(KernelMatrix { values: k })
}

/// Double centering of an arbitrary symmetric matrix view.
pub fn center_matrix(k: ArrayView2<f64>) -> CenteredKernel {
    let m = k.nrows();
    let mut row_means = vec![0.0f64; m];
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..m {
            s += k[[i, j]];
        }
        row_means[i] = s / m as f64;
    }
    let grand_mean = row_means.iter().sum::<f64>() / m as f64;
    let mut c = Array2::<f64>::zeros((m, m));
    let mut sq_sum = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let v = k[[i, j]] - row_means[i] - row_means[j] + grand_mean;
            c[[i, j]] = v;
            sq_sum += v * v;
        }
    }
    CenteredKernel {
        values: c,
        frobenius_norm: sq_sum.sqrt(),
    }
}

/// Double centering of a kernel matrix.
pub fn center(k: &KernelMatrix) -> CenteredKernel {
    center_matrix(k.values())
}

/// Centered kernel-target alignment `<Cx, Cy>_F / (||Cx||_F * ||Cy||_F)`,
/// clamped into [-1, 1] against rounding.
///
/// Errors: size mismatch, or either Frobenius norm below
/// [`DEGENERATE_NORM_TOL`].
pub fn alignment(cx: &CenteredKernel, cy: &CenteredKernel) -> Result<f64> {
    if cx.size() != cy.size() {
        return Err(Error::InvalidData(format!(
            "alignment needs kernels of equal size, got {} and {}",
            cx.size(),
            cy.size()
        )));
    }
    if cx.frobenius_norm < DEGENERATE_NORM_TOL {
        return Err(Error::DegenerateKernel(format!(
            "first kernel has Frobenius norm {:.3e} below {DEGENERATE_NORM_TOL:.0e}",
            cx.frobenius_norm
        )));
    }
    if cy.frobenius_norm < DEGENERATE_NORM_TOL {
        return Err(Error::DegenerateKernel(format!(
            "second kernel has Frobenius norm {:.3e} below {DEGENERATE_NORM_TOL:.0e}",
            cy.frobenius_norm
        )));
    }
    let dot: f64 = cx
        .values
        .iter()
        .zip(cy.values.iter())
        .map(|(a, b)| a * b)
        .sum();
    Ok((dot / (cx.frobenius_norm * cy.frobenius_norm)).clamp(-1.0, 1.0))
}

/// Median of the off-diagonal (unordered-pair) entries of a squared-distance
/// matrix. Even pair counts use the midpoint of the two central order
/// statistics. Returns `None` for matrices smaller than 2x2.
pub(crate) fn median_sq_dist(d: &Array2<f64>) -> Option<f64> {
    let m = d.nrows();
    if m < 2 {
        return None;
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(d[[i, j]]);
        }
    }
    Some(median_of(&mut pairs))
}

/// Median by order statistics; even lengths take the midpoint of the two
/// middle values, matching a full sort.
fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    if n % 2 == 1 {
        let (_, v, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
        *v
    } else {
        let (below, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + *upper)
    }
}

/// Turn a bandwidth spec into a concrete gamma for a kernel that will be
/// built from the squared-distance matrix `d`.
pub(crate) fn resolve_gamma(spec: BandwidthSpec, d: &Array2<f64>) -> Result<f64> {
    match spec {
        BandwidthSpec::Fixed(g) => {
            spec.validate()?;
            Ok(g)
        }
        BandwidthSpec::MedianHeuristic => {
            let med = median_sq_dist(d).ok_or_else(|| {
                Error::DegenerateData("median heuristic needs at least 2 rows".into())
            })?;
            if med <= 1e-24 {
                return Err(Error::DegenerateData(
                    "median pairwise squared distance is zero; rows are identical".into(),
                ));
            }
            Ok(1.0 / med)
        }
    }
}

/// Median-heuristic bandwidth: `gamma = 1 / median(||x_i - x_j||^2)` over
/// unordered row pairs. When the pair count exceeds 100000, that many pairs
/// are drawn with a fixed internal seed instead.
///
/// Errors: fewer than 2 rows, non-finite entries, or an (effectively) zero
/// median, which means the sampled rows are identical.
pub fn median_heuristic(x: ArrayView2<f64>) -> Result<f64> {
    check_finite(x, "sample matrix")?;
    let m = x.nrows();
    if m < 2 {
        return Err(Error::DegenerateData(
            "median heuristic needs at least 2 rows".into(),
        ));
    }
    let total_pairs = m * (m - 1) / 2;
    let mut pairs: Vec<f64>;
    if total_pairs <= MEDIAN_PAIR_BUDGET {
        pairs = Vec::with_capacity(total_pairs);
        for i in 0..m {
            let xi = x.row(i);
            for j in (i + 1)..m {
                let xj = x.row(j);
                let dist: f64 = xi
                    .iter()
                    .zip(xj.iter())
                    .map(|(a, b)| {
                        let t = a - b;
                        t * t
                    })
                    .sum();
                pairs.push(dist);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        pairs = Vec::with_capacity(MEDIAN_PAIR_BUDGET);
        while pairs.len() < MEDIAN_PAIR_BUDGET {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            if i == j {
                continue;
            }
            let dist: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| {
                    let t = a - b;
                    t * t
                })
                .sum();
            pairs.push(dist);
        }
    }
    let med = median_of(&mut pairs);
    if med <= 1e-24 {
        return Err(Error::DegenerateData(
            "median pairwise squared distance is zero; rows are identical".into(),
        ));
    }
    Ok(1.0 / med)
}

/// Alignment between the Gaussian kernel on the given feature columns of `x`
/// and the label kernel of `y`. Convenience wrapper used by greedy baselines
/// and diagnostics.
pub fn subset_alignment(
    x: ArrayView2<f64>,
    y: &[f64],
    features: &[usize],
    bandwidth: BandwidthSpec,
) -> Result<f64> {
    bandwidth.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::InvalidData(format!(
            "label length {} does not match row count {}",
            y.len(),
            x.nrows()
        )));
    }
    if features.is_empty() {
        return Err(Error::InvalidParameter(
            "feature subset for alignment is empty".into(),
        ));
    }
    let n = x.ncols();
    if let Some(&bad) = features.iter().find(|f| **f >= n) {
        return Err(Error::InvalidParameter(format!(
            "feature id {bad} out of range for {n} features"
        )));
    }
    check_finite(x, "sample matrix")?;
    let m = x.nrows();
    let mut sub = Array2::<f64>::zeros((m, features.len()));
    for (cj, &f) in features.iter().enumerate() {
        for i in 0..m {
            sub[[i, cj]] = x[[i, f]];
        }
    }
    let d = sq_dist_matrix(sub.view());
    let gamma = resolve_gamma(bandwidth, &d)?;
    let kx = gaussian_from_sq_dists(&d, gamma);
    let ky = label_kernel(y)?;
    alignment(&center(&kx), &center(&ky))
}
