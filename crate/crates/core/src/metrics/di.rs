//! Discriminant Information: `tr((S + rho I)^-1 S_B)`.
//!
//! `S_B = sum_c n_c u_c u_c^T` with `u_c` the class centroid minus the overall
//! centroid, so the trace reduces to `sum_c n_c u_c^T (S + rho I)^-1 u_c`:
//! one Cholesky factorization and C right-hand sides instead of an inverse.

use faer::prelude::*;
use faer::{Accum, Mat, Par, Side};

use super::MetricConfig;
use crate::error::{Error, Result};
use crate::tensorstore::ActivationSet;

type Centroids = (Vec<f64>, Vec<Vec<f64>>, Vec<usize>);

/// Overall centroid, class centroids and class counts of flattened maps.
pub(crate) fn centroids(set: &ActivationSet) -> Result<Centroids> {
    let d = set.map_len();
    let classes = set.num_classes();
    let mut overall = vec![0.0f64; d];
    let mut per_class = vec![vec![0.0f64; d]; classes];
    let counts = set.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyPartition(format!("class {c} has no samples")));
    }
    for (map, &label) in set.maps().zip(set.labels()) {
        let acc = &mut per_class[label as usize];
        for (a, &v) in acc.iter_mut().zip(map) {
            *a += v as f64;
        }
    }
    for (c, acc) in per_class.iter_mut().enumerate() {
        for (j, a) in acc.iter_mut().enumerate() {
            overall[j] += *a;
            *a /= counts[c] as f64;
        }
    }
    let n = set.len() as f64;
    overall.iter_mut().for_each(|v| *v /= n);
    Ok((overall, per_class, counts))
}

pub fn di(set: &ActivationSet, cfg: &MetricConfig) -> Result<f64> {
    let d = set.map_len();
    let n = set.len();
    let (overall, class_means, counts) = centroids(set)?;

    let centered = Mat::<f64>::from_fn(n, d, |i, j| set.map(i)[j] as f64 - overall[j]);
    let mut scatter = Mat::<f64>::zeros(d, d);
    faer::linalg::matmul::matmul(
        scatter.as_mut(),
        Accum::Replace,
        centered.transpose(),
        centered.as_ref(),
        1.0,
        Par::Seq,
    );
    for j in 0..d {
        scatter[(j, j)] += cfg.ridge_rho;
    }
    let llt = scatter
        .as_ref()
        .llt(Side::Lower)
        .map_err(|e| Error::Numeric(format!("Cholesky of S + rho I failed: {e:?}")))?;

    let classes = class_means.len();
    let diffs = Mat::<f64>::from_fn(d, classes, |j, c| class_means[c][j] - overall[j]);
    let solved = llt.solve(diffs.as_ref());

    let mut total = 0.0;
    for c in 0..classes {
        let mut quad = 0.0;
        for j in 0..d {
            quad += diffs[(j, c)] * solved[(j, c)];
        }
        total += counts[c] as f64 * quad;
    }
    if !total.is_finite() {
        return Err(Error::Numeric("DI is not finite".into()));
    }
    Ok(total.max(0.0))
}
