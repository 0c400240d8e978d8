//! RBF-kernel maximum mean discrepancy, averaged one-vs-rest.

use rand_chacha::ChaCha8Rng;

use super::{seeded_stream, MetricConfig};
use crate::error::{Error, Result};
use crate::tensorstore::ActivationSet;

#[inline]
fn rbf(x: &[f32], y: &[f32], inv_two_sigma_sq: f64) -> f64 {
    let mut d2 = 0.0f64;
    for (&a, &b) in x.iter().zip(y) {
        let t = a as f64 - b as f64;
        d2 += t * t;
    }
    (-d2 * inv_two_sigma_sq).exp()
}

/// Sum of `k(x, y)` over all ordered pairs of `a`, including `x == y`.
fn self_sum(a: &[&[f32]], inv: f64) -> f64 {
    let mut off = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            off += rbf(a[i], a[j], inv);
        }
    }
    a.len() as f64 + 2.0 * off
}

fn cross_sum(a: &[&[f32]], b: &[&[f32]], inv: f64) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += rbf(x, y, inv);
        }
    }
    s
}

/// Biased (V-statistic) two-sample MMD^2 between two sets of flattened maps.
pub fn mmd_two(a: &[&[f32]], b: &[&[f32]], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPartition("MMD needs both sides nonempty".into()));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let v = self_sum(a, inv) / (na * na) + self_sum(b, inv) / (nb * nb)
        - 2.0 * cross_sum(a, b, inv) / (na * nb);
    // An RKHS distance; negative values are cancellation noise.
    Ok(v.max(0.0))
}

/// Uniform subsample without replacement, returned in original order.
pub(crate) fn subsample<'a>(items: Vec<&'a [f32]>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<&'a [f32]> {
    if items.len() <= cap {
        return items;
    }
    let mut idx = rand::seq::index::sample(rng, items.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i]).collect()
}

/// `(1/C) sum_c MMD_two(F^c, F^-c)`; sides larger than
/// `cfg.mmd_max_per_class` are subsampled with a generator seeded from
/// `cfg.seed` (stream `2c` for the class side, `2c + 1` for the rest).
pub fn mmd(set: &ActivationSet, cfg: &MetricConfig) -> Result<f64> {
    let classes = set.num_classes();
    let mut total = 0.0;
    for c in 0..classes {
        let (inside, outside): (Vec<_>, Vec<_>) = set
            .maps()
            .zip(set.labels())
            .partition(|(_, &l)| l as usize == c);
        let inside: Vec<&[f32]> = inside.into_iter().map(|(m, _)| m).collect();
        let outside: Vec<&[f32]> = outside.into_iter().map(|(m, _)| m).collect();
        if inside.is_empty() {
            return Err(Error::EmptyPartition(format!("class {c} has no samples")));
        }
        if outside.is_empty() {
            return Err(Error::EmptyPartition(format!("no samples outside class {c}")));
        }
        let inside = subsample(inside, cfg.mmd_max_per_class, &mut seeded_stream(cfg.seed, 2 * c as u64));
        let outside = subsample(
            outside,
            cfg.mmd_max_per_class,
            &mut seeded_stream(cfg.seed, 2 * c as u64 + 1),
        );
        total += mmd_two(&inside, &outside, cfg.kernel_sigma)?;
    }
    Ok(total / classes as f64)
}
