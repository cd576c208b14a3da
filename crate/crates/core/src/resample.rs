//! Deterministic random streams and coupled feature/row draws.
//!
//! Every bootstrap draw gets its own ChaCha8 stream derived from
//! `(master_seed, iteration, index)`, so results are bit-identical no matter
//! how draws are scheduled across threads.
//!
//! A coupled draw picks `k = floor(n_active / 2) + 1` feature positions by
//! partial Fisher-Yates; the first `k - 1` form the base subset and the last
//! one is the held-out plus feature. The base is then a uniform size-(k-1)
//! subset, the plus feature is uniform outside it, and their union is a
//! uniform size-k subset, which is exactly the coupling the contribution
//! estimator needs. Both alignments of a coupled draw reuse the same row
//! subsample.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Domain tag in the last 8 seed bytes, separating these streams from any
/// other ChaCha use of the same master seed.
const STREAM_TAG: u64 = 0x9e37_79b9_7f4a_7c15;

/// Sorted, duplicate-free original feature ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSubset {
    ids: Vec<usize>,
}

impl FeatureSubset {
    /// Sorts `ids`; duplicates are an error.
    pub fn new(mut ids: Vec<usize>) -> Result<Self> {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(
                "feature subset contains duplicate ids".into(),
            ));
        }
        Ok(FeatureSubset { ids })
    }

    /// All features `0..n`.
    pub fn full(n: usize) -> Self {
        FeatureSubset {
            ids: (0..n).collect(),
        }
    }

    pub(crate) fn from_sorted(ids: Vec<usize>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        FeatureSubset { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// Sorted row indices of one subsample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSample {
    ids: Vec<usize>,
}

impl RowSample {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// One coupled draw: a row subsample shared by both alignments, a base
/// feature subset, and the single held-out plus feature.
#[derive(Debug, Clone)]
pub struct DrawPair {
    pub rows: RowSample,
    pub base: FeatureSubset,
    pub plus: usize,
}

/// Independent ChaCha8 stream for `(master_seed, iteration, index)`. The
/// 32-byte seed is the three values plus a domain tag, little-endian.
pub fn derive_stream(master_seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&iteration.to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    seed[24..32].copy_from_slice(&STREAM_TAG.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Single u64 mixed from a seed and two context values, for deriving
/// cross-validation cell seeds.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// First `k` elements of a partial Fisher-Yates shuffle of `0..n`, in draw
/// order (not sorted).
fn partial_shuffle(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Uniform size-`k` subset of `0..n`, sorted.
pub fn draw_positions(rng: &mut impl Rng, n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {k} positions from {n}"
        )));
    }
    let mut out = partial_shuffle(rng, n, k);
    out.sort_unstable();
    Ok(out)
}

/// Coupled feature draw over `active`: a uniform base subset of size
/// `floor(|active| / 2)` plus one uniformly chosen extra feature outside it.
/// Returns original feature ids. Requires `|active| >= 2`.
pub fn draw_feature_pair(
    rng: &mut impl Rng,
    active: &FeatureSubset,
) -> Result<(FeatureSubset, usize)> {
    let n = active.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "coupled feature draw needs at least 2 active features, got {n}"
        )));
    }
    let k = n / 2;
    let picks = partial_shuffle(rng, n, k + 1);
    let plus = active.ids[picks[k]];
    let mut base: Vec<usize> = picks[..k].iter().map(|&p| active.ids[p]).collect();
    base.sort_unstable();
    Ok((FeatureSubset::from_sorted(base), plus))
}

/// Uniform subset of `active` of the given size, as original feature ids.
pub fn draw_feature_subset(
    rng: &mut impl Rng,
    active: &FeatureSubset,
    size: usize,
) -> Result<FeatureSubset> {
    let positions = draw_positions(rng, active.len(), size)?;
    Ok(FeatureSubset::from_sorted(
        positions.into_iter().map(|p| active.ids[p]).collect(),
    ))
}

/// Uniform size-`s` row subsample of `0..m` without replacement, sorted.
/// Requires `2 <= s <= m`.
pub fn draw_rows(rng: &mut impl Rng, m: usize, s: usize) -> Result<RowSample> {
    if s < 2 || s > m {
        return Err(Error::InvalidParameter(format!(
            "row subsample size {s} must satisfy 2 <= s <= m = {m}"
        )));
    }
    let mut ids = partial_shuffle(rng, m, s);
    ids.sort_unstable();
    Ok(RowSample { ids })
}

/// One coupled draw: features first, then rows, in that fixed stream order.
pub fn draw_pair(
    rng: &mut impl Rng,
    active: &FeatureSubset,
    m: usize,
    s: usize,
) -> Result<DrawPair> {
    let (base, plus) = draw_feature_pair(rng, active)?;
    let rows = draw_rows(rng, m, s)?;
    Ok(DrawPair { rows, base, plus })
}
