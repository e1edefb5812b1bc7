use driftspc_core::eval::{bootstrap_ci, confusion, rates, Scored, Statistic};
use driftspc_core::feature::{parse_dataset, write_ndjson, DataFormat};
use driftspc_core::sim::{synth_pools, synth_train, SyntheticSourceConfig};
use driftspc_core::spc::{three_sigma_flags, ControlLimits};
use driftspc_core::{fit_baseline, score_batch, MetricKind, DEFAULT_LAMBDA_REL};
use std::collections::{HashMap, HashSet};

#[test]
fn fit_score_flag_evaluate() {
    let mut src = SyntheticSourceConfig::separated(8, 0.0, 1.0).unwrap();
    src.ood_mean[0] = 6.0;
    let train = synth_train(&src, 3_000, 4).unwrap();

    // Through the on-disk format and back.
    let mut buf = Vec::new();
    write_ndjson(&mut buf, &train).unwrap();
    let train = parse_dataset(buf.as_slice(), DataFormat::Ndjson).unwrap();

    let base = fit_baseline(&train, MetricKind::Mahalanobis, DEFAULT_LAMBDA_REL).unwrap();
    let pools = synth_pools(&src, 500, 500, 4).unwrap();
    let items: Vec<_> = pools.in_dist.iter().chain(&pools.ood).cloned().collect();
    let scores = score_batch(&items, &base, MetricKind::Mahalanobis).unwrap();
    let values: Vec<f64> = scores.iter().map(|m| m.value).collect();
    let flags = three_sigma_flags(&values, &ControlLimits::three_sigma(base.metric_stats));

    let flagged: HashSet<String> = flags
        .iter()
        .map(|f| items[f.index as usize].id.clone())
        .collect();
    let truth: HashMap<String, bool> = items
        .iter()
        .map(|v| (v.id.clone(), v.label == Some(true)))
        .collect();
    let r = rates(&confusion(&flagged, &truth).unwrap()).unwrap();
    assert!(r.specificity > 0.98, "{r:?}");
    assert!(r.sensitivity > 0.9, "{r:?}");

    let scored: Vec<Scored> = items
        .iter()
        .map(|v| Scored {
            flagged: flagged.contains(&v.id),
            ood: v.label == Some(true),
        })
        .collect();
    let ci = bootstrap_ci(&scored, Statistic::Accuracy, 200, 500, 1).unwrap();
    assert!(ci.covers_point());
    assert_eq!(ci.point, r.accuracy);
}
