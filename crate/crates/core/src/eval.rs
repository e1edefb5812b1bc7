//! Detection quality: confusion counts, rates, percentile bootstrap
//! intervals and CUSUM allowance sweeps. The positive class is OOD.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineProfile;
use crate::error::{Error, Result};
use crate::rng::{derived, stream};
use crate::sim::{chart_series, simulate_series, Pools, SimulationConfig};
use crate::spc::Param;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, flagged: bool, ood: bool) {
        match (flagged, ood) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Counts flagged/unflagged items against ground truth. Items absent from
/// `flags` count as unflagged.
pub fn confusion(
    flags: &HashSet<String>,
    truth: &HashMap<String, bool>,
) -> Result<ConfusionCounts> {
    if let Some(id) = flags.iter().find(|id| !truth.contains_key(*id)) {
        return Err(Error::UnknownId(id.clone()));
    }
    let mut c = ConfusionCounts::default();
    for (id, &ood) in truth {
        c.add(flags.contains(id), ood);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Accuracy,
    Sensitivity,
    Specificity,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [
        Statistic::Accuracy,
        Statistic::Sensitivity,
        Statistic::Specificity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Accuracy => "accuracy",
            Statistic::Sensitivity => "sensitivity",
            Statistic::Specificity => "specificity",
        }
    }

    pub fn evaluate(self, c: &ConfusionCounts) -> Result<f64> {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                Err(Error::UndefinedRate(self.as_str()))
            } else {
                Ok(num as f64 / den as f64)
            }
        };
        match self {
            Statistic::Accuracy => ratio(c.tp + c.tn, c.total()),
            Statistic::Sensitivity => ratio(c.tp, c.tp + c.fn_),
            Statistic::Specificity => ratio(c.tn, c.tn + c.fp),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(Statistic::Accuracy),
            "sensitivity" | "sens" | "recall" => Ok(Statistic::Sensitivity),
            "specificity" | "spec" => Ok(Statistic::Specificity),
            other => Err(Error::InvalidArgument(format!(
                "unknown statistic {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// All three rates; fails if either class is empty.
pub fn rates(c: &ConfusionCounts) -> Result<Rates> {
    Ok(Rates {
        accuracy: Statistic::Accuracy.evaluate(c)?,
        sensitivity: Statistic::Sensitivity.evaluate(c)?,
        specificity: Statistic::Specificity.evaluate(c)?,
    })
}

/// One evaluated item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scored {
    pub flagged: bool,
    pub ood: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_boot: usize,
    pub subset_size: usize,
    /// Resamples where the statistic was undefined and therefore dropped.
    pub skipped_resamples: usize,
}

impl BootstrapCI {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers_point(&self) -> bool {
        self.lower <= self.point && self.point <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile (2.5%, 97.5%) bootstrap interval for `statistic`.
///
/// Each of the `n_boot` resamples draws `subset_size` items uniformly with
/// replacement using its own derived generator, so the result depends only on
/// `seed`.
pub fn bootstrap_ci(
    scored: &[Scored],
    statistic: Statistic,
    n_boot: usize,
    subset_size: usize,
    seed: u64,
) -> Result<BootstrapCI> {
    if scored.is_empty() {
        return Err(Error::InvalidArgument("nothing to bootstrap".into()));
    }
    if n_boot < 2 || subset_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n_boot >= 2 and subset_size >= 1 (got {n_boot}, {subset_size})"
        )));
    }
    let mut full = ConfusionCounts::default();
    for s in scored {
        full.add(s.flagged, s.ood);
    }
    let point = statistic.evaluate(&full)?;

    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = derived(seed, stream::BOOTSTRAP, b as u64);
            let mut c = ConfusionCounts::default();
            for _ in 0..subset_size {
                let s = scored[rng.random_range(0..scored.len())];
                c.add(s.flagged, s.ood);
            }
            statistic.evaluate(&c).ok()
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = n_boot - values.len();
    if values.is_empty() {
        return Err(Error::AllResamplesUndefined(statistic.as_str()));
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCI {
        point,
        lower: quantile(&values, 0.025),
        upper: quantile(&values, 0.975),
        n_boot,
        subset_size,
        skipped_resamples: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: f64,
    pub delay: Option<u32>,
    pub false_positives: u32,
}

/// Reruns the simulation for each allowance in `ks`, holding everything else
/// (including the seed, hence the daily series) fixed. Each `k` is read in
/// the same form, relative or absolute, as `cfg.params.k`.
pub fn k_sweep(
    cfg: &SimulationConfig,
    baseline: &BaselineProfile,
    pools: &Pools,
    ks: &[f64],
) -> Result<Vec<KSweepRow>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values to sweep".into()));
    }
    if let Some(k) = ks.iter().find(|k| k.is_nan() || **k < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "k must be non-negative, got {k}"
        )));
    }
    let series = simulate_series(cfg, baseline, pools)?;
    ks.iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.params.k = match cfg.params.k {
                Param::Relative(_) => Param::Relative(k),
                Param::Absolute(_) => Param::Absolute(k),
            };
            let report = chart_series(&c, baseline, series.clone())?;
            Ok(KSweepRow {
                k,
                delay: report.delay_from_shift,
                false_positives: report.false_positives,
            })
        })
        .collect()
}

fn read_csv_columns<R: BufRead>(input: R, columns: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let idx = columns
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or(Error::MalformedRow {
                    line: 1,
                    reason: format!("missing `{name}` column"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push((
            line,
            idx.iter()
                .map(|&i| record.get(i).unwrap_or("").to_string())
                .collect(),
        ));
    }
    Ok(out)
}

/// Reads the `id` column of a flags CSV.
pub fn read_flag_ids<R: BufRead>(input: R) -> Result<HashSet<String>> {
    Ok(read_csv_columns(input, &["id"])?
        .into_iter()
        .map(|(_, mut cols)| cols.remove(0))
        .collect())
}

/// Reads an `id,label` truth table (label 1 = OOD).
pub fn read_truth<R: BufRead>(input: R) -> Result<HashMap<String, bool>> {
    let mut out = HashMap::new();
    for (line, cols) in read_csv_columns(input, &["id", "label"])? {
        let ood = match cols[1].as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        if out.insert(cols[0].clone(), ood).is_some() {
            return Err(Error::DuplicateId {
                line,
                id: cols[0].clone(),
            });
        }
    }
    Ok(out)
}

/// Pairs truth with flags in id order, ready for [`bootstrap_ci`].
pub fn scored_items(flags: &HashSet<String>, truth: &HashMap<String, bool>) -> Result<Vec<Scored>> {
    if let Some(id) = flags.iter().find(|id| !truth.contains_key(*id)) {
        return Err(Error::UnknownId(id.clone()));
    }
    let mut ids: Vec<&String> = truth.keys().collect();
    ids.sort();
    Ok(ids
        .into_iter()
        .map(|id| Scored {
            flagged: flags.contains(id),
            ood: truth[id],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(pairs: &[(&str, bool)]) -> HashMap<String, bool> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn flags(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn everything_flagged_all_ood() {
        let t = truth(&[("a", true), ("b", true)]);
        let c = confusion(&flags(&["a", "b"]), &t).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                fp: 0,
                tn: 0,
                fn_: 0
            }
        );
        assert_eq!(Statistic::Sensitivity.evaluate(&c).unwrap(), 1.0);
        assert_eq!(
            Statistic::Specificity.evaluate(&c).unwrap_err(),
            Error::UndefinedRate("specificity")
        );
    }

    #[test]
    fn nothing_flagged() {
        let t = truth(&[("a", true), ("b", false)]);
        let c = confusion(&flags(&[]), &t).unwrap();
        let r = rates(&c).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (0.0, 1.0));
    }

    #[test]
    fn half_right() {
        let t = truth(&[("o1", true), ("o2", true), ("i1", false), ("i2", false)]);
        let r = rates(&confusion(&flags(&["o1", "i1"]), &t).unwrap()).unwrap();
        assert_eq!((r.accuracy, r.sensitivity, r.specificity), (0.5, 0.5, 0.5));
    }

    #[test]
    fn unknown_flag_id() {
        let t = truth(&[("a", true)]);
        assert_eq!(
            confusion(&flags(&["zz"]), &t).unwrap_err(),
            Error::UnknownId("zz".into())
        );
    }

    #[test]
    fn rate_arithmetic() {
        let c = ConfusionCounts {
            tp: 98,
            fn_: 2,
            tn: 85,
            fp: 15,
        };
        let r = rates(&c).unwrap();
        assert_eq!(r.sensitivity, 0.98);
        assert_eq!(r.specificity, 0.85);
        assert_eq!(r.accuracy, 0.915);
        let perfect = ConfusionCounts {
            tp: 3,
            fn_: 0,
            tn: 4,
            fp: 0,
        };
        assert_eq!(
            rates(&perfect).unwrap(),
            Rates {
                accuracy: 1.0,
                sensitivity: 1.0,
                specificity: 1.0
            }
        );
        let no_pos = ConfusionCounts {
            tp: 0,
            fn_: 0,
            tn: 4,
            fp: 1,
        };
        assert_eq!(
            rates(&no_pos).unwrap_err(),
            Error::UndefinedRate("sensitivity")
        );
    }

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (0..101).map(|i| i as f64).collect();
        assert_eq!(quantile(&v, 0.025), 2.5);
        assert_eq!(quantile(&v, 0.975), 97.5);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    fn known_accuracy(n: usize, correct: usize) -> Vec<Scored> {
        (0..n)
            .map(|i| {
                let ood = i % 2 == 0;
                let right = i < correct;
                Scored {
                    flagged: if right { ood } else { !ood },
                    ood,
                }
            })
            .collect()
    }

    #[test]
    fn degenerate_bootstrap() {
        let all_right = known_accuracy(200, 200);
        let ci = bootstrap_ci(&all_right, Statistic::Accuracy, 50, 100, 1).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (1.0, 1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_deterministic_and_sane() {
        let items = known_accuracy(5_000, 4_500);
        let a = bootstrap_ci(&items, Statistic::Accuracy, 100, 500, 7).unwrap();
        let b = bootstrap_ci(&items, Statistic::Accuracy, 100, 500, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.point, 0.9);
        assert!(a.covers_point() && a.width() < 0.1);
        for stat in Statistic::ALL {
            let ci = bootstrap_ci(&items, stat, 100, 500, 3).unwrap();
            assert!(0.0 <= ci.lower && ci.lower <= ci.upper && ci.upper <= 1.0);
        }
    }

    #[test]
    fn bootstrap_skips_undefined_resamples() {
        // One OOD item in 1000: most size-10 resamples contain no positives.
        let mut items = vec![
            Scored {
                flagged: false,
                ood: false
            };
            999
        ];
        items.push(Scored {
            flagged: true,
            ood: true,
        });
        let ci = bootstrap_ci(&items, Statistic::Sensitivity, 100, 10, 2).unwrap();
        assert!(ci.skipped_resamples > 90);
        let none = vec![
            Scored {
                flagged: false,
                ood: false
            };
            10
        ];
        assert!(bootstrap_ci(&none, Statistic::Sensitivity, 10, 5, 0).is_err());
        assert!(bootstrap_ci(&items, Statistic::Accuracy, 1, 10, 0).is_err());
    }

    #[test]
    fn coverage_with_full_size_resamples() {
        let items = known_accuracy(400, 340);
        let covered = (0..20)
            .filter(|&seed| {
                bootstrap_ci(&items, Statistic::Accuracy, 200, items.len(), seed)
                    .unwrap()
                    .covers_point()
            })
            .count();
        assert!(covered >= 18, "{covered}/20");
    }

    #[test]
    fn truth_and_flag_files() {
        let t = read_truth("id,label\na,1\nb,0\n".as_bytes()).unwrap();
        assert_eq!(t, truth(&[("a", true), ("b", false)]));
        assert!(read_truth("id,label\na,2\n".as_bytes()).is_err());
        let f = read_flag_ids("id,value,side\na,0.5,Low\n".as_bytes()).unwrap();
        let items = scored_items(&f, &t).unwrap();
        assert_eq!(
            items,
            vec![
                Scored {
                    flagged: true,
                    ood: true
                },
                Scored {
                    flagged: false,
                    ood: false
                }
            ]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn confusion_ignores_order(labels in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60), rot in 0usize..60) {
                let t: HashMap<String, bool> = labels.iter().enumerate().map(|(i, (_, o))| (i.to_string(), *o)).collect();
                let f: HashSet<String> = labels.iter().enumerate().filter(|(_, (fl, _))| *fl).map(|(i, _)| i.to_string()).collect();
                let base = confusion(&f, &t).unwrap();
                let mut items = scored_items(&f, &t).unwrap();
                let r = rot % items.len();
                items.rotate_left(r);
                let mut c = ConfusionCounts::default();
                for s in &items { c.add(s.flagged, s.ood); }
                prop_assert_eq!(base, c);
            }
        }
    }
}
