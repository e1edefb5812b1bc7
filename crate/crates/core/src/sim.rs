//! Step-drift simulation: daily batches whose out-of-distribution share
//! jumps at a shift day, scored and charted end to end.
//!
//! Randomness is keyed by `(seed, day)` (see [`crate::rng`]), so a day's
//! batch does not depend on how many days are simulated.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baseline::{fit_baseline, BaselineProfile, MetricStats};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, MetricKind};
use crate::metrics::score_batch;
use crate::rng::{derived, stream};
use crate::spc::{flags_from_rows, monitor_chart, ChartKind, ChartParams, ChartRow, FlagEvent};

pub const FORMAT_VERSION: u32 = 1;

/// Which standard deviation the daily chart is scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaScope {
    /// The per-item training sigma, used as-is for the daily means.
    #[default]
    Item,
    /// Standard error of a daily mean: per-item sigma / sqrt(per_day).
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub lo: f64,
    pub hi: f64,
}

impl RateRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rate range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_days: u32,
    pub per_day: u32,
    pub shift_day: u32,
    pub pre_rate: RateRange,
    pub post_rate: RateRange,
    pub seed: u64,
    pub metric: MetricKind,
    pub chart: ChartKind,
    pub params: ChartParams,
    #[serde(default)]
    pub sigma_scope: SigmaScope,
}

impl Default for SimulationConfig {
    /// 60 days of 100 items, OOD share U[0, 1%] before day 30 and U[3%, 5%]
    /// from day 30 on, cosine metric, CUSUM with k = sigma/2 and h = 4 sigma.
    fn default() -> Self {
        Self {
            n_days: 60,
            per_day: 100,
            shift_day: 30,
            pre_rate: RateRange { lo: 0.0, hi: 0.01 },
            post_rate: RateRange { lo: 0.03, hi: 0.05 },
            seed: 0,
            metric: MetricKind::CosineSimilarity,
            chart: ChartKind::Cusum,
            params: ChartParams::default(),
            sigma_scope: SigmaScope::Item,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 || self.per_day == 0 {
            return Err(Error::InvalidArgument(
                "n_days and per_day must be positive".into(),
            ));
        }
        if self.shift_day == 0 || self.shift_day >= self.n_days {
            return Err(Error::InvalidArgument(format!(
                "shift_day {} must lie in 1..{}",
                self.shift_day, self.n_days
            )));
        }
        RateRange::new(self.pre_rate.lo, self.pre_rate.hi)?;
        RateRange::new(self.post_rate.lo, self.post_rate.hi)?;
        Ok(())
    }
}

/// Gaussian stand-ins for in-distribution and OOD feature sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSourceConfig {
    pub dim: usize,
    pub in_mean: Vec<f64>,
    pub ood_mean: Vec<f64>,
    /// Both sources have covariance `scale * I`.
    pub scale: f64,
}

impl SyntheticSourceConfig {
    /// Sources whose means are `separation` standard deviations apart.
    ///
    /// The in-distribution mean sits on the first axis and the OOD mean at
    /// the origin. Mahalanobis scores only see the separation; cosine
    /// similarity needs a mean away from the origin to be informative.
    pub fn separated(dim: usize, separation: f64, scale: f64) -> Result<Self> {
        if dim == 0 || scale.is_nan() || scale <= 0.0 || !separation.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad synthetic source (dim {dim}, separation {separation}, scale {scale})"
            )));
        }
        let mut in_mean = vec![0.0; dim];
        in_mean[0] = separation * scale.sqrt();
        Ok(Self {
            dim,
            in_mean,
            ood_mean: vec![0.0; dim],
            scale,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.in_mean.len() != self.dim
            || self.ood_mean.len() != self.dim
            || self.scale.is_nan()
            || self.scale <= 0.0
        {
            return Err(Error::InvalidArgument(
                "inconsistent synthetic source config".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub in_dist: Vec<FeatureVector>,
    pub ood: Vec<FeatureVector>,
}

fn gaussian_set(
    mean: &[f64],
    scale: f64,
    n: usize,
    seed: u64,
    tag: u64,
    prefix: &str,
    ood: bool,
) -> Vec<FeatureVector> {
    let mut rng = derived(seed, tag, 0);
    let sd = scale.sqrt();
    (0..n)
        .map(|i| {
            let values = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sd * z
                })
                .collect();
            FeatureVector::new(format!("{prefix}-{i:06}"), values).with_label(ood)
        })
        .collect()
}

/// Draws `n_in` in-distribution and `n_ood` OOD vectors.
pub fn synth_pools(
    cfg: &SyntheticSourceConfig,
    n_in: usize,
    n_ood: usize,
    seed: u64,
) -> Result<Pools> {
    cfg.validate()?;
    if n_in == 0 || n_ood == 0 {
        return Err(Error::InvalidArgument(
            "pool sizes must be at least 1".into(),
        ));
    }
    Ok(Pools {
        in_dist: gaussian_set(
            &cfg.in_mean,
            cfg.scale,
            n_in,
            seed,
            stream::IN_POOL,
            "in",
            false,
        ),
        ood: gaussian_set(
            &cfg.ood_mean,
            cfg.scale,
            n_ood,
            seed,
            stream::OOD_POOL,
            "ood",
            true,
        ),
    })
}

/// In-distribution training vectors, independent of the streaming pools.
pub fn synth_train(cfg: &SyntheticSourceConfig, n: usize, seed: u64) -> Result<Vec<FeatureVector>> {
    cfg.validate()?;
    Ok(gaussian_set(
        &cfg.in_mean,
        cfg.scale,
        n,
        seed,
        stream::TRAIN,
        "train",
        false,
    ))
}

/// Training set, fitted baseline and streaming pools for a synthetic run.
pub fn synthetic_setup(
    source: &SyntheticSourceConfig,
    n_train: usize,
    pool_size: usize,
    metric: MetricKind,
    lambda_rel: f64,
    seed: u64,
) -> Result<(BaselineProfile, Pools)> {
    let train = synth_train(source, n_train, seed)?;
    let baseline = fit_baseline(&train, metric, lambda_rel)?;
    let pools = synth_pools(source, pool_size, pool_size, seed)?;
    Ok((baseline, pools))
}

/// One day's batch: the OOD share is drawn from the pre- or post-shift
/// range, the OOD count is Binomial(per_day, share), and items are drawn
/// with replacement from the pools and shuffled.
pub fn sample_day(day: u32, cfg: &SimulationConfig, pools: &Pools) -> Result<Vec<FeatureVector>> {
    if pools.in_dist.is_empty() {
        return Err(Error::EmptyPool("in-distribution"));
    }
    if pools.ood.is_empty() {
        return Err(Error::EmptyPool("out-of-distribution"));
    }
    let mut rng = derived(cfg.seed, stream::DAY, day as u64);
    let range = if day < cfg.shift_day {
        cfg.pre_rate
    } else {
        cfg.post_rate
    };
    let p = range.draw(&mut rng);
    let n_ood = Binomial::new(cfg.per_day as u64, p)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(&mut rng) as u32;

    let mut batch = Vec::with_capacity(cfg.per_day as usize);
    for slot in 0..cfg.per_day {
        let ood = slot < n_ood;
        let pool = if ood { &pools.ood } else { &pools.in_dist };
        let src = &pool[rng.random_range(0..pool.len())];
        batch.push(FeatureVector {
            id: format!("d{day:03}-{slot:03}-{}", src.id),
            day: Some(day),
            label: Some(ood),
            values: src.values.clone(),
        });
    }
    batch.shuffle(&mut rng);
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyPoint {
    pub day: u32,
    pub mean: f64,
    pub ood_count: u32,
}

/// Statistics the chart was run with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartStats {
    pub mu: f64,
    pub sigma: f64,
    pub k: Option<f64>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub chart_stats: ChartStats,
    pub daily_series: Vec<DailyPoint>,
    pub flags: Vec<FlagEvent>,
    /// Days from the shift day to the first flag on or after it; a flag on
    /// the shift day itself is 0.
    pub delay_from_shift: Option<u32>,
    /// Same delay counting the first post-shift day as day 1.
    pub delay_after_first_post_day: Option<u32>,
    /// Flags raised before the shift day.
    pub false_positives: u32,
    pub format_version: u32,
    #[serde(skip)]
    pub rows: Vec<ChartRow>,
}

impl SimulationReport {
    pub fn detection_delay(&self) -> Option<u32> {
        self.delay_from_shift
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn daily(&self) -> Vec<(u32, f64)> {
        self.daily_series.iter().map(|p| (p.day, p.mean)).collect()
    }
}

/// Delay and false-positive count for a set of flags around a shift day.
pub fn delay_and_false_positives(flags: &[FlagEvent], shift_day: u32) -> (Option<u32>, u32) {
    let delay = flags
        .iter()
        .filter(|f| f.index >= shift_day)
        .map(|f| f.index - shift_day)
        .min();
    let fp = flags.iter().filter(|f| f.index < shift_day).count() as u32;
    (delay, fp)
}

/// Chart statistics for a simulation: the baseline's metric stats, with
/// sigma scaled to a batch standard error when requested.
pub fn chart_stats_for(cfg: &SimulationConfig, baseline: &BaselineProfile) -> MetricStats {
    let s = baseline.metric_stats;
    match cfg.sigma_scope {
        SigmaScope::Item => s,
        SigmaScope::Batch => MetricStats {
            mu: s.mu,
            sigma: s.sigma / (cfg.per_day as f64).sqrt(),
        },
    }
}

/// Daily series of mean scores and true OOD counts for the configured run.
pub fn simulate_series(
    cfg: &SimulationConfig,
    baseline: &BaselineProfile,
    pools: &Pools,
) -> Result<Vec<DailyPoint>> {
    cfg.validate()?;
    if baseline.metric != cfg.metric {
        return Err(Error::InvalidArgument(format!(
            "baseline was fitted for {} but the simulation uses {}",
            baseline.metric, cfg.metric
        )));
    }
    (0..cfg.n_days)
        .map(|day| {
            let batch = sample_day(day, cfg, pools)?;
            let scores = score_batch(&batch, baseline, cfg.metric)?;
            let mean = scores.iter().map(|m| m.value).sum::<f64>() / scores.len() as f64;
            let ood_count = batch.iter().filter(|v| v.label == Some(true)).count() as u32;
            Ok(DailyPoint {
                day,
                mean,
                ood_count,
            })
        })
        .collect()
}

/// Charts an already simulated daily series.
pub fn chart_series(
    cfg: &SimulationConfig,
    baseline: &BaselineProfile,
    daily_series: Vec<DailyPoint>,
) -> Result<SimulationReport> {
    let stats = chart_stats_for(cfg, baseline);
    let daily: Vec<(u32, f64)> = daily_series.iter().map(|p| (p.day, p.mean)).collect();
    let rows = monitor_chart(&daily, stats, cfg.chart, &cfg.params)?;
    let flags = flags_from_rows(&rows, cfg.chart);
    let (delay, false_positives) = delay_and_false_positives(&flags, cfg.shift_day);
    let (k, h) = match cfg.chart {
        ChartKind::Cusum => {
            let (k, h) = cfg.params.cusum_kh(stats.sigma)?;
            (Some(k), Some(h))
        }
        ChartKind::ThreeSigma => (None, None),
    };
    Ok(SimulationReport {
        config: cfg.clone(),
        chart_stats: ChartStats {
            mu: stats.mu,
            sigma: stats.sigma,
            k,
            h,
        },
        daily_series,
        flags,
        delay_from_shift: delay,
        delay_after_first_post_day: delay.map(|d| d + 1),
        false_positives,
        format_version: FORMAT_VERSION,
        rows,
    })
}

/// Samples, scores and charts every day. Deterministic in `cfg.seed`.
pub fn run_simulation(
    cfg: &SimulationConfig,
    baseline: &BaselineProfile,
    pools: &Pools,
) -> Result<SimulationReport> {
    let series = simulate_series(cfg, baseline, pools)?;
    chart_series(cfg, baseline, series)
}
