//! Single-variate two-class statistics and their one-vs-rest generalization.

use serde::{Deserialize, Serialize};

use super::stats::{ClassStats, RunningStats};
use super::MetricConfig;
use crate::error::{Error, Result};
use crate::tensorstore::ActivationSet;

/// Symmetric Divergence:
/// `0.5 (vp/vq + vq/vp) + 0.5 (mp - mq)^2 / (vp + vq) - 1`.
pub fn sd(p: &ClassStats, q: &ClassStats) -> f64 {
    let (vp, vq) = (p.variance, q.variance);
    let diff = p.mean - q.mean;
    let score = 0.5 * (vp / vq + vq / vp) + 0.5 * (diff * diff / (vp + vq)) - 1.0;
    // vp/vq + vq/vp >= 2, so anything below zero is rounding. NaN passes
    // through so the caller reports it.
    if score < 0.0 {
        0.0
    } else {
        score
    }
}

/// `|mp - mq| / (sp + sq)`.
pub fn abssnr(p: &ClassStats, q: &ClassStats) -> f64 {
    (p.mean - q.mean).abs() / (p.std_dev() + q.std_dev())
}

/// `(mp - mq)^2 / (vp + vq)`.
pub fn fdr(p: &ClassStats, q: &ClassStats) -> f64 {
    let diff = p.mean - q.mean;
    diff * diff / (p.variance + q.variance)
}

/// Welch-style t statistic; counts are activation counts.
pub fn ttest(p: &ClassStats, q: &ClassStats) -> f64 {
    let se = (p.variance / p.count as f64 + q.variance / q.count as f64).sqrt();
    (p.mean - q.mean).abs() / se
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnivariateMetric {
    Sd,
    AbsSnr,
    Fdr,
    Ttest,
}

impl UnivariateMetric {
    pub const ALL: [UnivariateMetric; 4] = [
        UnivariateMetric::Sd,
        UnivariateMetric::AbsSnr,
        UnivariateMetric::Fdr,
        UnivariateMetric::Ttest,
    ];

    pub fn apply(self, p: &ClassStats, q: &ClassStats) -> f64 {
        match self {
            UnivariateMetric::Sd => sd(p, q),
            UnivariateMetric::AbsSnr => abssnr(p, q),
            UnivariateMetric::Fdr => fdr(p, q),
            UnivariateMetric::Ttest => ttest(p, q),
        }
    }
}

/// One-vs-rest statistics for every class, in class order.
///
/// The "rest" side is merged from the per-class accumulators in ascending
/// class order, so results do not depend on scheduling.
pub fn one_vs_rest_stats(set: &ActivationSet, epsilon: f64) -> Result<Vec<(ClassStats, ClassStats)>> {
    let classes = set.num_classes();
    let mut per_class = vec![RunningStats::new(); classes];
    for (map, &label) in set.maps().zip(set.labels()) {
        per_class[label as usize].extend(map);
    }
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        if per_class[c].count() == 0 {
            return Err(Error::EmptyPartition(format!("class {c} has no samples")));
        }
        let mut rest = RunningStats::new();
        for (other, acc) in per_class.iter().enumerate() {
            if other != c {
                rest.merge(acc);
            }
        }
        if rest.count() == 0 {
            return Err(Error::EmptyPartition(format!("no samples outside class {c}")));
        }
        let p = per_class[c]
            .finish(epsilon)
            .map_err(|e| Error::EmptyPartition(format!("class {c}: {e}")))?;
        let q = rest
            .finish(epsilon)
            .map_err(|e| Error::EmptyPartition(format!("rest of class {c}: {e}")))?;
        out.push((p, q));
    }
    Ok(out)
}

/// Generalized score: mean over classes of `base(class c, rest)`.
pub fn g_score(set: &ActivationSet, base: UnivariateMetric, cfg: &MetricConfig) -> Result<f64> {
    let parts = one_vs_rest_stats(set, cfg.variance_epsilon)?;
    let mut total = 0.0;
    for (c, (p, q)) in parts.iter().enumerate() {
        let s = base.apply(p, q);
        if !s.is_finite() {
            return Err(Error::Numeric(format!(
                "{base:?} is not finite for class {c} (zero variance with the epsilon floor disabled?)"
            )));
        }
        total += s;
    }
    Ok(total / parts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(count: u64, mean: f64, variance: f64) -> ClassStats {
        ClassStats { count, mean, variance }
    }

    #[test]
    fn sd_identical_is_zero() {
        assert_eq!(sd(&st(10, 3.0, 2.0), &st(7, 3.0, 2.0)), 0.0);
    }

    #[test]
    fn sd_hand_value() {
        // 0.5 (1/4 + 4) + 0.5 (1/5) - 1
        let v = sd(&st(2, 0.0, 1.0), &st(2, 1.0, 4.0));
        assert!((v - 1.225).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sd_symmetric() {
        let p = st(5, -1.3, 0.7);
        let q = st(9, 2.2, 3.1);
        assert_eq!(sd(&p, &q), sd(&q, &p));
    }

    #[test]
    fn abssnr_fdr_hand_values() {
        let p = st(10, 2.0, 1.0);
        let q = st(10, 0.0, 1.0);
        assert!((abssnr(&p, &q) - 1.0).abs() < 1e-12);
        assert!((fdr(&p, &q) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ttest_hand_value() {
        let v = ttest(&st(100, 0.0, 1.0), &st(100, 1.0, 1.0));
        assert!((v - 7.0711).abs() < 1e-4, "{v}");
    }

    #[test]
    fn equal_means_zero_for_mean_based() {
        let p = st(4, 1.5, 2.0);
        let q = st(6, 1.5, 9.0);
        assert_eq!(abssnr(&p, &q), 0.0);
        assert_eq!(fdr(&p, &q), 0.0);
        assert_eq!(ttest(&p, &q), 0.0);
    }

    #[test]
    fn gsd_two_class_hand_value() {
        let set = ActivationSet::new(1, 1, vec![0.0, 2.0, 4.0, 6.0], vec![0, 0, 1, 1], 2).unwrap();
        let v = g_score(&set, UnivariateMetric::Sd, &MetricConfig::default()).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn empty_class_is_error() {
        let set = ActivationSet::new(1, 1, vec![0.0, 2.0, 4.0], vec![0, 0, 1], 3).unwrap();
        assert!(matches!(
            g_score(&set, UnivariateMetric::Sd, &MetricConfig::default()),
            Err(Error::EmptyPartition(_))
        ));
    }

    #[test]
    fn zero_variance_without_floor_is_numeric_error() {
        let set = ActivationSet::new(1, 1, vec![1.0, 1.0, 4.0, 6.0], vec![0, 0, 1, 1], 2).unwrap();
        let cfg = MetricConfig { variance_epsilon: 0.0, ..MetricConfig::default() };
        assert!(matches!(g_score(&set, UnivariateMetric::Sd, &cfg), Err(Error::Numeric(_))));
        // With the floor the dead class still scores finitely.
        let v = g_score(&set, UnivariateMetric::Sd, &MetricConfig::default()).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn label_permutation_invariant() {
        let data: Vec<f32> = (0..12).map(|i| ((i * 7) % 5) as f32 + i as f32 * 0.3).collect();
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 2, 1, 0];
        let perm = [2u32, 0, 1];
        let relabeled: Vec<u32> = labels.iter().map(|&l| perm[l as usize]).collect();
        let a = ActivationSet::new(1, 1, data.clone(), labels, 3).unwrap();
        let b = ActivationSet::new(1, 1, data, relabeled, 3).unwrap();
        for m in UnivariateMetric::ALL {
            let cfg = MetricConfig::default();
            let (x, y) = (g_score(&a, m, &cfg).unwrap(), g_score(&b, m, &cfg).unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{m:?}: {x} vs {y}");
        }
    }
}
