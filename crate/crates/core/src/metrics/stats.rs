use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Count, mean and unbiased variance of one side of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

impl ClassStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn extend(&mut self, values: &[f32]) {
        for &v in values {
            self.push(v as f64);
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased variance; `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0))
    }

    /// Freezes into [`ClassStats`], flooring the variance at `epsilon`.
    pub fn finish(&self, epsilon: f64) -> Result<ClassStats> {
        match self.count {
            0 => Err(Error::EmptyPartition("no activations".into())),
            1 => Err(Error::EmptyPartition(
                "a single activation has no sample variance".into(),
            )),
            _ => Ok(ClassStats {
                count: self.count,
                mean: self.mean,
                variance: self.variance().unwrap().max(epsilon),
            }),
        }
    }
}

/// Mean and unbiased variance over every activation of every map in `maps`.
pub fn channel_stats<'a>(maps: impl IntoIterator<Item = &'a [f32]>, epsilon: f64) -> Result<ClassStats> {
    let mut acc = RunningStats::new();
    let mut any = false;
    for m in maps {
        any = true;
        acc.extend(m);
    }
    if !any {
        return Err(Error::EmptyPartition("empty map subset".into()));
    }
    acc.finish(epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_pass(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn two_points() {
        let s = channel_stats([&[0.0f32][..], &[2.0][..]], 1e-12).unwrap();
        assert_eq!(s, ClassStats { count: 2, mean: 1.0, variance: 2.0 });
    }

    #[test]
    fn constant_map_hits_floor() {
        let s = channel_stats([&[5.0f32; 4][..]], 1e-12).unwrap();
        assert_eq!(s.count, 4);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.variance, 1e-12);
    }

    #[test]
    fn empty_and_single_rejected() {
        let none: [&[f32]; 0] = [];
        assert!(matches!(channel_stats(none, 0.0), Err(Error::EmptyPartition(_))));
        assert!(matches!(channel_stats([&[1.0f32][..]], 0.0), Err(Error::EmptyPartition(_))));
    }

    #[test]
    fn streaming_matches_two_pass_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let maps: Vec<Vec<f32>> = (0..1000)
            .map(|_| (0..9).map(|_| rng.random_range(-3.0f32..8.0) * 40.0 + 1000.0).collect())
            .collect();
        let s = channel_stats(maps.iter().map(|m| m.as_slice()), 0.0).unwrap();
        let flat: Vec<f64> = maps.iter().flatten().map(|&v| v as f64).collect();
        let (mean, var) = two_pass(&flat);
        assert_eq!(s.count, 9000);
        assert!(rel(s.mean, mean) < 1e-9);
        assert!(rel(s.variance, var) < 1e-9);
    }

    #[test]
    fn streaming_matches_two_pass_on_a_million() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f32> = (0..1_000_000).map(|_| rng.random_range(-1.0f32..1.0) + 3.0).collect();
        let s = channel_stats([values.as_slice()], 0.0).unwrap();
        let flat: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let (mean, var) = two_pass(&flat);
        assert!(rel(s.mean, mean) < 1e-9);
        assert!(rel(s.variance, var) < 1e-9);
    }

    #[test]
    fn merge_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..137).map(|_| rng.random_range(0.0..10.0)).collect();
        let b: Vec<f32> = (0..59).map(|_| rng.random_range(-4.0..1.0)).collect();
        let mut whole = RunningStats::new();
        whole.extend(&a);
        whole.extend(&b);
        let mut left = RunningStats::new();
        left.extend(&a);
        let mut right = RunningStats::new();
        right.extend(&b);
        left.merge(&right);
        assert_eq!(left.count(), whole.count());
        assert!(rel(left.mean(), whole.mean()) < 1e-12);
        assert!(rel(left.variance().unwrap(), whole.variance().unwrap()) < 1e-12);
    }
}
