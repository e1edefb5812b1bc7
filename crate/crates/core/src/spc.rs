//! Control charts: 3-sigma limits and a two-sided tabular CUSUM.
//!
//! Limits and sums use strict inequalities, so a value sitting exactly on a
//! limit (or a sum exactly equal to `h`) is in control.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::MetricStats;
use crate::error::{Error, Result};
use crate::num::fmt_g17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    ThreeSigma,
    Cusum,
}

impl ChartKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChartKind::ThreeSigma => "three-sigma",
            ChartKind::Cusum => "cusum",
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "three-sigma" | "3sigma" | "threesigma" | "shewhart" => Ok(ChartKind::ThreeSigma),
            "cusum" => Ok(ChartKind::Cusum),
            other => Err(Error::InvalidArgument(format!("unknown chart {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    High,
    Low,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::High => "High",
            Side::Low => "Low",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "High" | "high" => Ok(Side::High),
            "Low" | "low" => Ok(Side::Low),
            other => Err(Error::InvalidArgument(format!("unknown side {other:?}"))),
        }
    }
}

/// A detection: the item or day index, the monitored value, and which limit
/// or sum was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagEvent {
    pub index: u32,
    pub value: f64,
    pub chart: ChartKind,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    pub mu: f64,
    pub sigma: f64,
    pub multiplier: f64,
}

impl ControlLimits {
    pub fn new(mu: f64, sigma: f64, multiplier: f64) -> Result<Self> {
        if sigma.is_nan() || sigma < 0.0 || multiplier.is_nan() || multiplier < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma and multiplier must be non-negative (sigma {sigma}, multiplier {multiplier})"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            multiplier,
        })
    }

    pub fn three_sigma(stats: MetricStats) -> Self {
        Self {
            mu: stats.mu,
            sigma: stats.sigma,
            multiplier: 3.0,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mu - self.multiplier * self.sigma
    }

    pub fn upper(&self) -> f64 {
        self.mu + self.multiplier * self.sigma
    }

    pub fn classify(&self, x: f64) -> Option<Side> {
        if x > self.upper() {
            Some(Side::High)
        } else if x < self.lower() {
            Some(Side::Low)
        } else {
            None
        }
    }
}

/// Flags every value strictly outside the control limits; index = position.
pub fn three_sigma_flags(values: &[f64], limits: &ControlLimits) -> Vec<FlagEvent> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, &value)| {
            limits.classify(value).map(|side| FlagEvent {
                index: i as u32,
                value,
                chart: ChartKind::ThreeSigma,
                side,
            })
        })
        .collect()
}

/// Mean value per day, ascending by day. Days without items do not appear.
pub fn daily_average(items: &[(u32, f64)]) -> Vec<(u32, f64)> {
    let mut days: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for &(day, v) in items {
        let e = days.entry(day).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    days.into_iter()
        .map(|(day, (sum, n))| (day, sum / n as f64))
        .collect()
}

/// The two one-sided cumulative sums and their parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub s_plus: f64,
    pub s_minus: f64,
    pub mu0: f64,
    pub k: f64,
    pub h: f64,
}

impl CusumState {
    pub fn new(mu0: f64, k: f64, h: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) || !(h > 0.0 && h.is_finite()) || !mu0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "CUSUM needs finite mu0, k >= 0 and h > 0 (mu0 {mu0}, k {k}, h {h})"
            )));
        }
        Ok(Self {
            s_plus: 0.0,
            s_minus: 0.0,
            mu0,
            k,
            h,
        })
    }

    pub fn reset(&mut self) {
        self.s_plus = 0.0;
        self.s_minus = 0.0;
    }
}

/// Advances the sums by one observation:
///
/// ```text
/// S+ = max(0, S+ + (x - mu0 - k))
/// S- = max(0, S- - (x - mu0 + k))
/// ```
///
/// Signals when either sum exceeds `h`; if both do, the side with the larger
/// excess wins. Sums are never reset here.
pub fn cusum_step(
    state: CusumState,
    index: u32,
    x: f64,
) -> Result<(CusumState, Option<FlagEvent>)> {
    if !x.is_finite() {
        return Err(Error::NonFiniteInput(x));
    }
    let mut next = state;
    next.s_plus = (state.s_plus + (x - state.mu0 - state.k)).max(0.0);
    next.s_minus = (state.s_minus - (x - state.mu0 + state.k)).max(0.0);
    let high = next.s_plus - next.h;
    let low = next.s_minus - next.h;
    let side = match (high > 0.0, low > 0.0) {
        (false, false) => None,
        (true, false) => Some(Side::High),
        (false, true) => Some(Side::Low),
        (true, true) => Some(if high >= low { Side::High } else { Side::Low }),
    };
    let flag = side.map(|side| FlagEvent {
        index,
        value: x,
        chart: ChartKind::Cusum,
        side,
    });
    Ok((next, flag))
}

/// Conventional allowance and decision interval: `k = sigma / 2`, `h = 4 sigma`.
pub fn cusum_defaults(sigma: f64) -> Result<(f64, f64)> {
    if sigma == 0.0 {
        return Err(Error::ZeroSigma);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    Ok((sigma / 2.0, 4.0 * sigma))
}

/// A CUSUM parameter given either in units of sigma or in metric units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Relative(f64),
    Absolute(f64),
}

impl Param {
    pub fn resolve(self, sigma: f64) -> f64 {
        match self {
            Param::Relative(r) => r * sigma,
            Param::Absolute(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartParams {
    pub k: Param,
    pub h: Param,
    pub multiplier: f64,
    /// Restart both sums at zero after a CUSUM signal.
    pub reset_on_flag: bool,
}

impl Default for ChartParams {
    fn default() -> Self {
        Self {
            k: Param::Relative(0.5),
            h: Param::Relative(4.0),
            multiplier: 3.0,
            reset_on_flag: false,
        }
    }
}

impl ChartParams {
    /// Resolves `(k, h)` against `sigma`. Relative thresholds with a zero
    /// sigma are rejected.
    pub fn cusum_kh(&self, sigma: f64) -> Result<(f64, f64)> {
        if sigma == 0.0 && matches!(self.h, Param::Relative(_)) {
            return Err(Error::ZeroSigma);
        }
        Ok((self.k.resolve(sigma), self.h.resolve(sigma)))
    }
}

/// One monitored point with everything the chart CSV needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartRow {
    pub day: u32,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub s_plus: Option<f64>,
    pub s_minus: Option<f64>,
    pub flag: Option<Side>,
}

/// Runs a chart over a daily series and returns the full trace.
pub fn monitor_chart(
    daily: &[(u32, f64)],
    stats: MetricStats,
    chart: ChartKind,
    params: &ChartParams,
) -> Result<Vec<ChartRow>> {
    if let Some(w) = daily.windows(2).find(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidArgument(format!(
            "daily series must be strictly ascending by day ({} then {})",
            w[0].0, w[1].0
        )));
    }
    if let Some(&(_, v)) = daily.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteInput(v));
    }
    match chart {
        ChartKind::ThreeSigma => {
            let limits = ControlLimits::new(stats.mu, stats.sigma, params.multiplier)?;
            Ok(daily
                .iter()
                .map(|&(day, value)| ChartRow {
                    day,
                    value,
                    lower: Some(limits.lower()),
                    upper: Some(limits.upper()),
                    s_plus: None,
                    s_minus: None,
                    flag: limits.classify(value),
                })
                .collect())
        }
        ChartKind::Cusum => {
            let (k, h) = params.cusum_kh(stats.sigma)?;
            let mut state = CusumState::new(stats.mu, k, h)?;
            let mut rows = Vec::with_capacity(daily.len());
            for &(day, value) in daily {
                let (next, flag) = cusum_step(state, day, value)?;
                rows.push(ChartRow {
                    day,
                    value,
                    lower: None,
                    upper: None,
                    s_plus: Some(next.s_plus),
                    s_minus: Some(next.s_minus),
                    flag: flag.map(|f| f.side),
                });
                state = next;
                if flag.is_some() && params.reset_on_flag {
                    state.reset();
                }
            }
            Ok(rows)
        }
    }
}

/// Flags raised by a chart over a daily series (indices are the days).
pub fn monitor_stream(
    daily: &[(u32, f64)],
    stats: MetricStats,
    chart: ChartKind,
    params: &ChartParams,
) -> Result<Vec<FlagEvent>> {
    Ok(flags_from_rows(
        &monitor_chart(daily, stats, chart, params)?,
        chart,
    ))
}

pub fn flags_from_rows(rows: &[ChartRow], chart: ChartKind) -> Vec<FlagEvent> {
    rows.iter()
        .filter_map(|r| {
            r.flag.map(|side| FlagEvent {
                index: r.day,
                value: r.value,
                chart,
                side,
            })
        })
        .collect()
}

pub const CHART_CSV_HEADER: &str = "day,value,lower,upper,s_plus,s_minus,flag,side";

pub fn write_chart_csv<W: Write>(mut out: W, rows: &[ChartRow]) -> Result<()> {
    writeln!(out, "{CHART_CSV_HEADER}")?;
    let cell = |v: Option<f64>| v.map(fmt_g17).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.day,
            fmt_g17(r.value),
            cell(r.lower),
            cell(r.upper),
            cell(r.s_plus),
            cell(r.s_minus),
            u8::from(r.flag.is_some()),
            r.flag.map(Side::as_str).unwrap_or(""),
        )?;
    }
    Ok(())
}

/// Reads a daily series from CSV. Needs `day` and `value` columns; any
/// other columns (e.g. those of a chart CSV) are ignored.
pub fn read_daily_csv<R: BufRead>(input: R) -> Result<Vec<(u32, f64)>> {
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
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or(Error::MalformedRow {
                line: 1,
                reason: format!("missing `{name}` column"),
            })
    };
    let (day_col, value_col) = (col("day")?, col("value")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |reason: String| Error::MalformedRow { line, reason };
        let day = record
            .get(day_col)
            .unwrap_or("")
            .parse::<u32>()
            .map_err(|e| bad(format!("day: {e}")))?;
        let value = record
            .get(value_col)
            .unwrap_or("")
            .parse::<f64>()
            .map_err(|e| bad(format!("value: {e}")))?;
        out.push((day, value));
    }
    Ok(out)
}

/// Experimental supplementary run rules.
pub mod run_rules {
    use super::Side;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Rule {
        /// Two of three consecutive points beyond 2 sigma on the same side.
        TwoOfThreeBeyondTwoSigma,
        /// Seven consecutive points on one side of the mean.
        SevenOnOneSide,
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Violation {
        pub position: usize,
        pub rule: Rule,
        pub side: Side,
    }

    /// Reports the position at which each rule is (still) violated.
    pub fn check(values: &[f64], mu: f64, sigma: f64) -> Vec<Violation> {
        let side_of = |x: f64| {
            if x > mu {
                Some(Side::High)
            } else if x < mu {
                Some(Side::Low)
            } else {
                None
            }
        };
        let beyond = |x: f64, side: Side| match side {
            Side::High => x > mu + 2.0 * sigma,
            Side::Low => x < mu - 2.0 * sigma,
        };
        let mut out = Vec::new();
        for i in 0..values.len() {
            if i >= 2 {
                for side in [Side::High, Side::Low] {
                    let hits = values[i - 2..=i]
                        .iter()
                        .filter(|&&x| beyond(x, side))
                        .count();
                    if hits >= 2 && beyond(values[i], side) {
                        out.push(Violation {
                            position: i,
                            rule: Rule::TwoOfThreeBeyondTwoSigma,
                            side,
                        });
                    }
                }
            }
            if i >= 6 {
                if let Some(side) = side_of(values[i]) {
                    if values[i - 6..=i].iter().all(|&x| side_of(x) == Some(side)) {
                        out.push(Violation {
                            position: i,
                            rule: Rule::SevenOnOneSide,
                            side,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Renders a chart trace as a standalone SVG document.
pub fn render_svg(rows: &[ChartRow], chart: ChartKind, shift_day: Option<u32>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const PAD: f64 = 40.0;
    let series: Vec<(u32, Vec<f64>)> = rows
        .iter()
        .map(|r| {
            let ys = match chart {
                ChartKind::ThreeSigma => vec![r.value],
                ChartKind::Cusum => vec![r.s_plus.unwrap_or(0.0), -r.s_minus.unwrap_or(0.0)],
            };
            (r.day, ys)
        })
        .collect();
    let mut guides: Vec<f64> = Vec::new();
    if let Some(r) = rows.first() {
        match chart {
            ChartKind::ThreeSigma => guides.extend(r.lower.iter().chain(r.upper.iter())),
            ChartKind::Cusum => {}
        }
    }
    let ys = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .chain(guides.iter().copied());
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    if !lo.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (d0, d1) = (
        rows.first().map(|r| r.day).unwrap_or(0) as f64,
        rows.last().map(|r| r.day).unwrap_or(1) as f64,
    );
    let span = (d1 - d0).max(1.0);
    let x = |d: f64| PAD + (d - d0) / span * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{chart}</text>\n"
    );
    for g in &guides {
        svg += &format!(
            "<line x1=\"{}\" x2=\"{}\" y1=\"{2:.2}\" y2=\"{2:.2}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n",
            PAD,
            W - PAD,
            y(*g)
        );
    }
    if let Some(s) = shift_day {
        let sx = x(s as f64);
        svg += &format!(
            "<line x1=\"{sx:.2}\" x2=\"{sx:.2}\" y1=\"{PAD}\" y2=\"{}\" stroke=\"purple\" stroke-dasharray=\"4,4\"/>\n",
            H - PAD
        );
    }
    let colors = ["steelblue", "seagreen"];
    for (k, color) in colors.iter().enumerate() {
        let pts: Vec<String> = series
            .iter()
            .filter_map(|(d, v)| {
                v.get(k)
                    .map(|val| format!("{:.2},{:.2}", x(*d as f64), y(*val)))
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>\n",
            pts.join(" ")
        );
    }
    for r in rows.iter().filter(|r| r.flag.is_some()) {
        let v = match (chart, r.flag) {
            (ChartKind::Cusum, Some(Side::Low)) => -r.s_minus.unwrap_or(0.0),
            (ChartKind::Cusum, _) => r.s_plus.unwrap_or(0.0),
            _ => r.value,
        };
        svg += &format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"black\"/>\n",
            x(r.day as f64),
            y(v)
        );
    }
    svg += "</svg>\n";
    svg
}
