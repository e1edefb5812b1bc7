//! Distance of a feature vector from the in-distribution baseline.

use std::io::Write;

use rayon::prelude::*;

use crate::baseline::BaselineProfile;
use crate::error::{Error, Result};
use crate::feature::{csv_escape, FeatureVector, MetricKind};
use crate::num::fmt_g17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

fn check_dim(x: &FeatureVector, baseline: &BaselineProfile) -> Result<()> {
    if x.dim() != baseline.dim {
        return Err(Error::VectorDimension {
            id: x.id.clone(),
            expected: baseline.dim,
            found: x.dim(),
        });
    }
    Ok(())
}

/// `sqrt((x - mean)^T S^-1 (x - mean))`, evaluated by a triangular solve
/// against the Cholesky factor of `S`.
pub fn mahalanobis(x: &FeatureVector, baseline: &BaselineProfile) -> Result<MetricValue> {
    check_dim(x, baseline)?;
    let l = baseline.chol_lower().ok_or(Error::MissingCovariance)?;
    let d = baseline.dim;
    // Forward substitution: L y = x - mean; the quadratic form is |y|^2.
    let mut y = vec![0.0; d];
    for i in 0..d {
        let row = &l[i * d..i * d + i];
        let acc: f64 = row.iter().zip(&y).map(|(a, b)| a * b).sum();
        y[i] = (x.values[i] - baseline.mean[i] - acc) / l[i * d + i];
    }
    let q: f64 = y.iter().map(|v| v * v).sum();
    Ok(MetricValue {
        kind: MetricKind::Mahalanobis,
        value: q.sqrt(),
    })
}

/// Cosine of the angle between `x` and the baseline mean, clamped to [-1, 1].
pub fn cosine_similarity(x: &FeatureVector, baseline: &BaselineProfile) -> Result<MetricValue> {
    check_dim(x, baseline)?;
    let norm_x = norm(&x.values);
    if norm_x == 0.0 {
        return Err(Error::ZeroVector(format!("item {:?}", x.id)));
    }
    let norm_m = norm(&baseline.mean);
    if norm_m == 0.0 {
        return Err(Error::ZeroVector("baseline mean".into()));
    }
    let dot: f64 = x
        .values
        .iter()
        .zip(&baseline.mean)
        .map(|(a, b)| a * b)
        .sum();
    Ok(MetricValue {
        kind: MetricKind::CosineSimilarity,
        value: (dot / (norm_x * norm_m)).clamp(-1.0, 1.0),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn score(
    x: &FeatureVector,
    baseline: &BaselineProfile,
    metric: MetricKind,
) -> Result<MetricValue> {
    match metric {
        MetricKind::Mahalanobis => mahalanobis(x, baseline),
        MetricKind::CosineSimilarity => cosine_similarity(x, baseline),
    }
}

/// Scores every item; output order matches input order.
pub fn score_batch(
    items: &[FeatureVector],
    baseline: &BaselineProfile,
    metric: MetricKind,
) -> Result<Vec<MetricValue>> {
    items
        .par_iter()
        .map(|x| score(x, baseline, metric))
        .collect()
}

/// Writes `id,metric,value` rows.
pub fn write_scores_csv<W: Write>(
    mut out: W,
    items: &[FeatureVector],
    scores: &[MetricValue],
) -> Result<()> {
    writeln!(out, "id,metric,value")?;
    for (item, s) in items.iter().zip(scores) {
        writeln!(
            out,
            "{},{},{}",
            csv_escape(&item.id),
            s.kind,
            fmt_g17(s.value)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{fit_baseline, MetricStats};
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    const NO_STATS: MetricStats = MetricStats {
        mu: 0.0,
        sigma: 0.0,
    };

    fn profile(mean: &[f64], cov: &[f64]) -> BaselineProfile {
        BaselineProfile::from_parts(
            MetricKind::Mahalanobis,
            mean.to_vec(),
            Some(cov.to_vec()),
            0.0,
            NO_STATS,
            2,
        )
        .unwrap()
    }

    fn cosine_profile(mean: &[f64]) -> BaselineProfile {
        BaselineProfile::from_parts(
            MetricKind::CosineSimilarity,
            mean.to_vec(),
            None,
            0.0,
            NO_STATS,
            1,
        )
        .unwrap()
    }

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new("x", values.to_vec())
    }

    #[test]
    fn mahalanobis_anchor_cases() {
        let b = profile(&[1.0, -1.0], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(mahalanobis(&fv(&[1.0, -1.0]), &b).unwrap().value, 0.0);
        assert_eq!(mahalanobis(&fv(&[4.0, 3.0]), &b).unwrap().value, 5.0);
        let b = profile(&[0.0, 0.0], &[2.0, 0.0, 0.0, 0.5]);
        assert!((mahalanobis(&fv(&[2.0, 1.0]), &b).unwrap().value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_errors() {
        let b = profile(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            mahalanobis(&fv(&[1.0]), &b).unwrap_err(),
            Error::VectorDimension {
                expected: 2,
                found: 1,
                ..
            }
        ));
        let c = cosine_profile(&[1.0, 0.0]);
        assert_eq!(
            mahalanobis(&fv(&[1.0, 0.0]), &c).unwrap_err(),
            Error::MissingCovariance
        );
    }

    #[test]
    fn cosine_anchor_cases() {
        let b = cosine_profile(&[1.0, 2.0, -0.5]);
        assert_eq!(
            cosine_similarity(&fv(&[1.0, 2.0, -0.5]), &b).unwrap().value,
            1.0
        );
        assert_eq!(
            cosine_similarity(&fv(&[2.0, -1.0, 0.0]), &b).unwrap().value,
            0.0
        );
        assert_eq!(
            cosine_similarity(&fv(&[-1.0, -2.0, 0.5]), &b)
                .unwrap()
                .value,
            -1.0
        );
    }

    #[test]
    fn cosine_zero_vectors() {
        let b = cosine_profile(&[1.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&fv(&[0.0, 0.0]), &b).unwrap_err(),
            Error::ZeroVector(_)
        ));
        let z = cosine_profile(&[0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&fv(&[1.0, 0.0]), &z).unwrap_err(),
            Error::ZeroVector(_)
        ));
    }

    #[test]
    fn batch_matches_single_calls() {
        let b = profile(&[0.5, 0.5], &[1.0, 0.2, 0.2, 2.0]);
        assert!(score_batch(&[], &b, MetricKind::Mahalanobis)
            .unwrap()
            .is_empty());
        let at_mean = vec![fv(&[0.5, 0.5]), fv(&[0.5, 0.5])];
        let s = score_batch(&at_mean, &b, MetricKind::Mahalanobis).unwrap();
        assert_eq!(
            s.iter().map(|m| m.value).collect::<Vec<_>>(),
            vec![0.0, 0.0]
        );

        let mut rng = seeded(9);
        let items: Vec<_> = (0..3)
            .map(|i| FeatureVector::new(i.to_string(), vec![rng.random(), rng.random()]))
            .collect();
        for metric in [MetricKind::Mahalanobis, MetricKind::CosineSimilarity] {
            let batch = score_batch(&items, &b, metric).unwrap();
            for (item, got) in items.iter().zip(&batch) {
                assert_eq!(*got, score(item, &b, metric).unwrap());
            }
        }
    }

    #[test]
    fn batch_error_names_item() {
        let b = cosine_profile(&[1.0, 0.0]);
        let items = vec![fv(&[1.0, 1.0]), FeatureVector::new("bad", vec![0.0, 0.0])];
        assert_eq!(
            score_batch(&items, &b, MetricKind::CosineSimilarity).unwrap_err(),
            Error::ZeroVector("item \"bad\"".into())
        );
    }

    fn gaussian_set(rng: &mut impl Rng, n: usize, d: usize, tag: &str) -> Vec<FeatureVector> {
        (0..n)
            .map(|i| {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                FeatureVector::new(format!("{tag}{i}"), z)
            })
            .collect()
    }

    #[test]
    fn mahalanobis_affine_invariance() {
        let d = 3;
        let mut rng = seeded(77);
        let train = gaussian_set(&mut rng, 400, d, "t");
        let test = gaussian_set(&mut rng, 20, d, "x");
        // Well-conditioned: identity plus a modest random perturbation.
        let a: Vec<f64> = (0..d * d)
            .map(|k| if k % (d + 1) == 0 { 2.0 } else { 0.0 } + 0.3 * rng.random_range(-1.0..1.0))
            .collect();
        let shift = [5.0, -3.0, 0.25];
        let transform = |v: &FeatureVector| {
            let values = (0..d)
                .map(|i| (0..d).map(|j| a[i * d + j] * v.values[j]).sum::<f64>() + shift[i])
                .collect();
            FeatureVector::new(v.id.clone(), values)
        };
        let b0 = fit_baseline(&train, MetricKind::Mahalanobis, 0.0).unwrap();
        let moved: Vec<_> = train.iter().map(transform).collect();
        let b1 = fit_baseline(&moved, MetricKind::Mahalanobis, 0.0).unwrap();
        for x in &test {
            let s0 = mahalanobis(x, &b0).unwrap().value;
            let s1 = mahalanobis(&transform(x), &b1).unwrap().value;
            assert!((s0 - s1).abs() <= 1e-6 * s0.abs(), "{s0} vs {s1}");
        }
    }

    #[test]
    fn squared_mahalanobis_is_roughly_chi_square() {
        let (n, d) = (20_000, 16);
        let mut rng = seeded(404);
        let train = gaussian_set(&mut rng, n, d, "t");
        let test = gaussian_set(&mut rng, n, d, "x");
        let b = fit_baseline(&train, MetricKind::Mahalanobis, 1e-6).unwrap();
        let scores = score_batch(&test, &b, MetricKind::Mahalanobis).unwrap();
        let mean_sq = scores.iter().map(|m| m.value * m.value).sum::<f64>() / n as f64;
        assert!(
            (mean_sq - d as f64).abs() < 0.05 * d as f64,
            "mean D^2 = {mean_sq}"
        );
    }

    #[test]
    fn scores_csv_format() {
        let items = vec![
            FeatureVector::new("a", vec![1.0]),
            FeatureVector::new("b", vec![2.0]),
        ];
        let scores = vec![
            MetricValue {
                kind: MetricKind::CosineSimilarity,
                value: 0.1,
            },
            MetricValue {
                kind: MetricKind::CosineSimilarity,
                value: -1.0,
            },
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &items, &scores).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "id,metric,value\na,cosine,0.10000000000000001\nb,cosine,-1\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cosine_scale_invariant(
                x in prop::collection::vec(-100.0f64..100.0, 4),
                m in prop::collection::vec(-100.0f64..100.0, 4),
                c in 1e-3f64..1e3,
            ) {
                prop_assume!(norm(&x) > 1e-6 && norm(&m) > 1e-6);
                let b = cosine_profile(&m);
                let base = cosine_similarity(&fv(&x), &b).unwrap().value;
                let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
                let got = cosine_similarity(&fv(&scaled), &b).unwrap().value;
                prop_assert!((base - got).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&base));
            }
        }
    }
}
