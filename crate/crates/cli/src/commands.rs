use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use driftspc_core::baseline::{fit_baseline, BaselineProfile, MetricStats};
use driftspc_core::eval::{self, bootstrap_ci, k_sweep, Statistic};
use driftspc_core::feature::{
    parse_dataset, write_csv, write_ndjson, DataFormat, FeatureVector, MetricKind,
};
use driftspc_core::features::{glcm, glcm_features, zero_order_stats, GrayImage};
use driftspc_core::metrics::{score_batch, write_scores_csv};
use driftspc_core::num::fmt_g17;
use driftspc_core::sim::{
    self, Pools, RateRange, SigmaScope, SimulationConfig, SyntheticSourceConfig,
};
use driftspc_core::spc::{
    self, daily_average, monitor_chart, read_daily_csv, render_svg, write_chart_csv, ChartKind,
    ChartParams, ControlLimits, Param,
};
use serde_json::json;

use crate::{ChartArgs, EvaluateArgs, FeaturesArgs, FitArgs, MonitorArgs, ScoreArgs, SimulateArgs};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<driftspc_core::Error> for Failure {
    fn from(e: driftspc_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_arg<T: std::str::FromStr<Err = driftspc_core::Error>>(s: &str) -> Result<T, Failure> {
    s.parse()
        .map_err(|e: driftspc_core::Error| usage(e.to_string()))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn data_format(explicit: Option<&str>, path: &Path) -> Result<DataFormat, Failure> {
    match explicit {
        Some(f) => parse_arg(f),
        None => Ok(DataFormat::from_path(path)),
    }
}

fn load_dataset(path: &Path, format: Option<&str>) -> Result<Vec<FeatureVector>, Failure> {
    let fmt = data_format(format, path)?;
    let items =
        parse_dataset(open(path)?, fmt).with_context(|| format!("reading {}", path.display()))?;
    Ok(items)
}

fn load_baseline(path: &Path) -> anyhow::Result<BaselineProfile> {
    BaselineProfile::read_json(open(path)?)
        .with_context(|| format!("reading baseline {}", path.display()))
}

fn chart_params(a: &ChartArgs) -> Result<(ChartKind, ChartParams), Failure> {
    let chart: ChartKind = parse_arg(&a.chart)?;
    let mut p = ChartParams {
        multiplier: a.multiplier,
        reset_on_flag: a.reset_on_flag,
        ..ChartParams::default()
    };
    if let Some(k) = a.k_rel {
        p.k = Param::Relative(k);
    }
    if let Some(k) = a.k_abs {
        p.k = Param::Absolute(k);
    }
    if let Some(h) = a.h_rel {
        p.h = Param::Relative(h);
    }
    if let Some(h) = a.h_abs {
        p.h = Param::Absolute(h);
    }
    let bad = |v: f64| !(v >= 0.0 && v.is_finite());
    let (Param::Relative(k) | Param::Absolute(k)) = p.k;
    let (Param::Relative(h) | Param::Absolute(h)) = p.h;
    if bad(k) || bad(h) || h == 0.0 || bad(p.multiplier) {
        return Err(usage("k and multiplier must be >= 0 and h > 0"));
    }
    Ok((chart, p))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let mut out = output(Some(path))?;
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn fit(a: FitArgs) -> CmdResult {
    let metric: MetricKind = parse_arg(&a.metric)?;
    if a.lambda_rel.is_nan() || a.lambda_rel < 0.0 {
        return Err(usage("--lambda-rel must be non-negative"));
    }
    let train = load_dataset(&a.input, a.format.as_deref())?;
    let baseline = fit_baseline(&train, metric, a.lambda_rel)?;
    let mut out = output(a.out.as_deref())?;
    baseline.write_json(&mut out)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn score(a: ScoreArgs) -> CmdResult {
    let baseline = load_baseline(&a.baseline)?;
    let items = load_dataset(&a.input, a.format.as_deref())?;
    let scores = score_batch(&items, &baseline, baseline.metric)?;
    let limits = ControlLimits::new(
        baseline.metric_stats.mu,
        baseline.metric_stats.sigma,
        a.multiplier,
    )
    .map_err(|e| usage(e.to_string()))?;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let flags = spc::three_sigma_flags(&values, &limits);

    let mut out = output(a.out.as_deref())?;
    write_scores_csv(&mut out, &items, &scores)?;
    out.flush()?;

    if let Some(path) = &a.flags {
        write_file(path, |w| {
            writeln!(w, "id,value,side")?;
            for f in &flags {
                writeln!(
                    w,
                    "{},{},{}",
                    csv_cell(&items[f.index as usize].id),
                    fmt_g17(f.value),
                    f.side.as_str()
                )?;
            }
            Ok(())
        })?;
    }
    if let Some(path) = &a.truth_out {
        if let Some(v) = items.iter().find(|v| v.label.is_none()) {
            return Err(Failure::Data(anyhow!(
                "item {:?} has no label; cannot write truth table",
                v.id
            )));
        }
        write_file(path, |w| {
            writeln!(w, "id,label")?;
            for v in &items {
                writeln!(w, "{},{}", csv_cell(&v.id), u8::from(v.label == Some(true)))?;
            }
            Ok(())
        })?;
    }
    eprintln!("scored {} items, flagged {}", items.len(), flags.len());
    Ok(())
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn monitor(a: MonitorArgs) -> CmdResult {
    let (chart, params) = chart_params(&a.chart)?;
    let baseline = a.baseline.as_deref().map(load_baseline).transpose()?;

    let daily = if let Some(input) = &a.input {
        let baseline = baseline
            .as_ref()
            .ok_or_else(|| usage("--input needs --baseline to score items"))?;
        let items = load_dataset(input, a.format.as_deref())?;
        let scores = score_batch(&items, baseline, baseline.metric)?;
        let pairs = items
            .iter()
            .zip(&scores)
            .map(|(v, s)| {
                v.day
                    .map(|d| (d, s.value))
                    .ok_or_else(|| anyhow!("item {:?} has no day", v.id))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        daily_average(&pairs)
    } else {
        let path = a
            .series
            .as_ref()
            .expect("clap requires --input or --series");
        read_daily_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?
    };

    let from_baseline = baseline.as_ref().map(|b| b.metric_stats);
    let stats = MetricStats {
        mu: a
            .mu
            .or(from_baseline.map(|s| s.mu))
            .ok_or_else(|| usage("need --baseline or --mu"))?,
        sigma: a
            .sigma
            .or(from_baseline.map(|s| s.sigma))
            .ok_or_else(|| usage("need --baseline or --sigma"))?,
    };

    let rows = monitor_chart(&daily, stats, chart, &params)?;
    let mut out = output(a.out.as_deref())?;
    write_chart_csv(&mut out, &rows)?;
    out.flush()?;
    if let Some(svg) = &a.svg {
        std::fs::write(svg, render_svg(&rows, chart, a.shift_day))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    let n_flags = rows.iter().filter(|r| r.flag.is_some()).count();
    eprintln!("{} days, {} flagged", rows.len(), n_flags);
    if a.run_rules {
        let values: Vec<f64> = daily.iter().map(|d| d.1).collect();
        for v in spc::run_rules::check(&values, stats.mu, stats.sigma) {
            eprintln!(
                "run rule {:?} ({}) at day {}",
                v.rule,
                v.side.as_str(),
                daily[v.position].0
            );
        }
    }
    Ok(())
}

fn parse_range(s: &str) -> Result<RateRange, Failure> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("rate range {s:?} must look like a:b")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("bad number {x:?} in rate range")))
    };
    RateRange::new(parse(a)?, parse(b)?).map_err(|e| usage(e.to_string()))
}

fn sigma_scope(s: &str) -> Result<SigmaScope, Failure> {
    match s {
        "item" => Ok(SigmaScope::Item),
        "batch" => Ok(SigmaScope::Batch),
        other => Err(usage(format!("unknown sigma scope {other:?}"))),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| usage(format!("--pools files needs {flag}")))
}

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let (chart, params) = chart_params(&a.chart)?;
    let metric: MetricKind = parse_arg(&a.metric)?;
    let cfg = SimulationConfig {
        n_days: a.days,
        per_day: a.per_day,
        shift_day: a.shift_day.unwrap_or(a.days / 2),
        pre_rate: parse_range(&a.pre)?,
        post_rate: parse_range(&a.post)?,
        seed: a.seed,
        metric,
        chart,
        params,
        sigma_scope: sigma_scope(&a.sigma_scope)?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let (baseline, pools) = match a.pools.as_str() {
        "synthetic" => {
            let source = SyntheticSourceConfig::separated(a.dim, a.separation, a.scale)
                .map_err(|e| usage(e.to_string()))?;
            sim::synthetic_setup(
                &source,
                a.n_train,
                a.pool_size,
                metric,
                a.lambda_rel,
                a.seed,
            )?
        }
        "files" => {
            let train = load_dataset(required(&a.train, "--train")?, None)?;
            let pools = Pools {
                in_dist: load_dataset(required(&a.in_pool, "--in-pool")?, None)?,
                ood: load_dataset(required(&a.ood_pool, "--ood-pool")?, None)?,
            };
            (fit_baseline(&train, metric, a.lambda_rel)?, pools)
        }
        other => return Err(usage(format!("unknown pool source {other:?}"))),
    };

    let report = sim::run_simulation(&cfg, &baseline, &pools)?;
    let mut out = output(a.out.as_deref())?;
    report.write_json(&mut out)?;
    writeln!(out)?;
    out.flush()?;

    if let Some(path) = &a.chart_csv {
        write_file(path, |w| Ok(write_chart_csv(w, &report.rows)?))?;
    }
    if let Some(path) = &a.svg {
        std::fs::write(path, render_svg(&report.rows, chart, Some(cfg.shift_day)))?;
    }
    if let Some(path) = &a.baseline_out {
        write_file(path, |w| Ok(baseline.write_json(w)?))?;
    }
    if !a.k_sweep.is_empty() {
        let rows = k_sweep(&cfg, &baseline, &pools, &a.k_sweep)?;
        let mut w = output(a.sweep_out.as_deref())?;
        writeln!(w, "k,delay,false_positives")?;
        for r in &rows {
            let delay = r.delay.map(|d| d.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", fmt_g17(r.k), delay, r.false_positives)?;
        }
        w.flush()?;
    }
    match report.delay_from_shift {
        Some(d) => eprintln!(
            "detected {d} day(s) after the shift; {} false positive(s)",
            report.false_positives
        ),
        None => eprintln!("no detection; {} false positive(s)", report.false_positives),
    }
    Ok(())
}

fn load_image(path: &Path, a: &FeaturesArgs) -> anyhow::Result<GrayImage> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let img = match (a.raw_width, a.raw_height) {
        (Some(w), Some(h)) => GrayImage::from_raw(&bytes, w, h, a.raw_depth)?,
        _ => GrayImage::from_pgm(&bytes)?,
    };
    Ok(img)
}

pub fn features(a: FeaturesArgs) -> CmdResult {
    let (moments, texture) = match a.kind.as_str() {
        "zero-order" => (true, false),
        "glcm" => (false, true),
        "all" => (true, true),
        other => return Err(usage(format!("unknown feature kind {other:?}"))),
    };
    if a.levels < 2 {
        return Err(usage("--levels must be at least 2"));
    }
    let label = match a.label {
        None => None,
        Some(0) => Some(false),
        Some(1) => Some(true),
        Some(_) => return Err(usage("--label must be 0 or 1")),
    };
    let mut rows = Vec::with_capacity(a.images.len());
    let mut seen = HashSet::new();
    for path in &a.images {
        let img = load_image(path, &a).with_context(|| format!("decoding {}", path.display()))?;
        let mut values = Vec::new();
        if moments {
            values.extend(zero_order_stats(&img)?);
        }
        if texture {
            values.extend(glcm_features(&glcm(&img, a.levels)?)?);
        }
        let id = path.display().to_string();
        if !seen.insert(id.clone()) {
            return Err(usage(format!("image {id} given twice")));
        }
        rows.push(FeatureVector {
            id,
            day: a.day,
            label,
            values,
        });
    }
    let fmt = match (&a.format, &a.out) {
        (Some(f), _) => parse_arg(f)?,
        (None, Some(p)) => DataFormat::from_path(p),
        (None, None) => DataFormat::Csv,
    };
    let mut out = output(a.out.as_deref())?;
    match fmt {
        DataFormat::Csv => write_csv(&mut out, &rows)?,
        DataFormat::Ndjson => write_ndjson(&mut out, &rows)?,
    }
    out.flush()?;
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let stats: Vec<Statistic> = if a.stat == "all" {
        Statistic::ALL.to_vec()
    } else {
        vec![parse_arg(&a.stat)?]
    };
    if a.n_boot < 2 || a.subset == 0 {
        return Err(usage("--n-boot must be >= 2 and --subset >= 1"));
    }
    let flags = eval::read_flag_ids(open(&a.flags)?).context("reading flags")?;
    let truth = eval::read_truth(open(&a.truth)?).context("reading truth")?;
    let scored = eval::scored_items(&flags, &truth)?;
    let counts = eval::confusion(&flags, &truth)?;

    let mut per_stat = serde_json::Map::new();
    for stat in stats {
        let ci = bootstrap_ci(&scored, stat, a.n_boot, a.subset, a.seed)?;
        if !ci.covers_point() {
            eprintln!("note: {stat} point estimate lies outside its percentile interval");
        }
        per_stat.insert(
            stat.as_str().into(),
            json!({
                "point": ci.point,
                "lower": ci.lower,
                "upper": ci.upper,
                "skipped_resamples": ci.skipped_resamples,
            }),
        );
    }
    let doc = json!({
        "counts": { "tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn_ },
        "metrics": per_stat,
        "n_boot": a.n_boot,
        "subset_size": a.subset,
        "seed": a.seed,
        "format_version": 1,
    });
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(anyhow::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
