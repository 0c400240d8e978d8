//! Class-discriminant channel scoring.
//!
//! Every metric consumes an [`ActivationSet`] (one channel's maps over N
//! labeled samples) and returns a nonnegative scalar; higher means more
//! class-discriminative. Statistics accumulate in f64 regardless of the f32
//! storage.

mod di;
mod mmd;
mod stats;
mod univariate;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use di::di;
pub use mmd::{mmd, mmd_two};
pub use stats::{channel_stats, ClassStats, RunningStats};
pub use univariate::{abssnr, fdr, g_score, one_vs_rest_stats, sd, ttest, UnivariateMetric};

use crate::error::{Error, Result};
use crate::tensorstore::{channel_count, slice_channel, ActivationSet, LabelFile, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Ridge added to the total scatter for DI.
    pub ridge_rho: f64,
    /// RBF bandwidth for MMD.
    pub kernel_sigma: f64,
    /// Floor applied to every variance; 0 disables the floor.
    pub variance_epsilon: f64,
    /// Per-side sample cap for MMD.
    pub mmd_max_per_class: usize,
    /// Seed for MMD subsampling and the random baseline.
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ridge_rho: 1e-4,
            kernel_sigma: 1.0,
            variance_epsilon: 1e-12,
            mmd_max_per_class: 256,
            seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_rho > 0.0 && self.ridge_rho.is_finite()) {
            return Err(Error::Config(format!("ridge_rho must be positive, got {}", self.ridge_rho)));
        }
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "kernel_sigma must be positive, got {}",
                self.kernel_sigma
            )));
        }
        if !(self.variance_epsilon >= 0.0 && self.variance_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "variance_epsilon must be nonnegative, got {}",
                self.variance_epsilon
            )));
        }
        if self.mmd_max_per_class == 0 {
            return Err(Error::Config("mmd_max_per_class must be at least 1".into()));
        }
        Ok(())
    }
}

/// Channel scoring functions selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Metric {
    GSd,
    GTtest,
    GAbsSnr,
    GFdr,
    Di,
    Mmd,
    /// Seeded uniform scores; the baseline every discriminant metric should beat.
    Random,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::GSd,
        Metric::GTtest,
        Metric::GAbsSnr,
        Metric::GFdr,
        Metric::Di,
        Metric::Mmd,
        Metric::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::GSd => "gsd",
            Metric::GTtest => "gttest",
            Metric::GAbsSnr => "gabssnr",
            Metric::GFdr => "gfdr",
            Metric::Di => "di",
            Metric::Mmd => "mmd",
            Metric::Random => "random",
        }
    }

    pub fn univariate(self) -> Option<UnivariateMetric> {
        match self {
            Metric::GSd => Some(UnivariateMetric::Sd),
            Metric::GTtest => Some(UnivariateMetric::Ttest),
            Metric::GAbsSnr => Some(UnivariateMetric::AbsSnr),
            Metric::GFdr => Some(UnivariateMetric::Fdr),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric {s:?}; expected one of gsd, gttest, gabssnr, gfdr, di, mmd, random"
                ))
            })
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.name().to_string()
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub layer_id: String,
    pub channel_index: usize,
    pub metric: Metric,
    pub score: f64,
}

/// Fresh ChaCha8 generator on an explicit stream of `seed`.
pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FNV-1a, used to give each layer its own random-baseline stream.
pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Scores one channel. `layer_id`/`channel` only matter for [`Metric::Random`].
pub fn score_channel(
    set: &ActivationSet,
    metric: Metric,
    cfg: &MetricConfig,
    layer_id: &str,
    channel: usize,
) -> Result<f64> {
    let score = match metric {
        Metric::Di => di(set, cfg)?,
        Metric::Mmd => mmd(set, cfg)?,
        Metric::Random => seeded_stream(cfg.seed ^ fnv1a(layer_id), channel as u64).random::<f64>(),
        m => g_score(set, m.univariate().unwrap(), cfg)?,
    };
    Ok(score)
}

/// Scores every channel of a `[N, C, W, H]` activation dump, in channel order.
///
/// Channels are scored in parallel on the current rayon pool; each channel's
/// reduction order is fixed, so results are identical for any thread count.
pub fn score_layer(
    activations: &Tensor,
    labels: &LabelFile,
    num_classes: usize,
    layer_id: &str,
    metric: Metric,
    cfg: &MetricConfig,
) -> Result<Vec<ChannelScore>> {
    cfg.validate()?;
    let channels = channel_count(activations)?;
    (0..channels)
        .into_par_iter()
        .map(|ch| {
            let set = slice_channel(activations, ch, labels, num_classes)?;
            let score = score_channel(&set, metric, cfg, layer_id, ch)?;
            Ok(ChannelScore {
                layer_id: layer_id.to_string(),
                channel_index: ch,
                metric,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_layer(layer_id))
}

/// Indices of the `n` lowest scores, lowest first; ties go to the lower index.
pub fn rank_channels(scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > scores.len() {
        return Err(Error::Config(format!(
            "cannot select {n} channels out of {}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(n);
    Ok(order)
}

/// [`rank_channels`] over scores in channel order.
pub fn rank_scores(scores: &[ChannelScore], n: usize) -> Result<Vec<usize>> {
    let mut values = vec![0.0; scores.len()];
    for s in scores {
        *values
            .get_mut(s.channel_index)
            .ok_or_else(|| Error::Config(format!("channel index {} out of range", s.channel_index)))? = s.score;
    }
    rank_channels(&values, n)
}
