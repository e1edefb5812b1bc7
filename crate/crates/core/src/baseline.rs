//! In-distribution baseline: reference mean, regularized covariance and the
//! control statistics of the chosen metric over the training set.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureVector, MetricKind};
use crate::metrics;

/// Default relative shrinkage added to the covariance diagonal.
pub const DEFAULT_LAMBDA_REL: f64 = 1e-6;

pub const FORMAT_VERSION: u32 = 1;

/// Mean and standard deviation of a metric over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mu: f64,
    pub sigma: f64,
}

/// A fitted in-distribution profile. Immutable once built.
#[derive(Debug, Clone)]
pub struct BaselineProfile {
    pub dim: usize,
    pub metric: MetricKind,
    pub mean: Vec<f64>,
    /// Regularized covariance, row-major `dim x dim`. Mahalanobis only.
    pub covariance: Option<Vec<f64>>,
    /// Derived from `covariance`; scoring goes through `chol_lower` instead.
    pub covariance_inverse: Option<Vec<f64>>,
    /// Absolute ridge added to the diagonal.
    pub regularization_lambda: f64,
    pub n_samples: usize,
    pub metric_stats: MetricStats,
    chol_lower: Option<Vec<f64>>,
}

impl PartialEq for BaselineProfile {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.metric == other.metric
            && self.mean == other.mean
            && self.covariance == other.covariance
            && self.covariance_inverse == other.covariance_inverse
            && self.regularization_lambda == other.regularization_lambda
            && self.n_samples == other.n_samples
            && self.metric_stats == other.metric_stats
    }
}

impl BaselineProfile {
    /// Lower Cholesky factor of the covariance, row-major.
    pub(crate) fn chol_lower(&self) -> Option<&[f64]> {
        self.chol_lower.as_deref()
    }

    /// Builds a profile from a known mean and covariance, then computes the
    /// metric statistics from `train`. Mostly useful for tests and tools
    /// that already hold the distribution parameters.
    pub fn from_parts(
        metric: MetricKind,
        mean: Vec<f64>,
        covariance: Option<Vec<f64>>,
        regularization_lambda: f64,
        metric_stats: MetricStats,
        n_samples: usize,
    ) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty mean vector".into()));
        }
        let (chol_lower, covariance_inverse) = match &covariance {
            Some(cov) => {
                if cov.len() != dim * dim {
                    return Err(Error::InvalidArgument(format!(
                        "covariance has {} entries, expected {}",
                        cov.len(),
                        dim * dim
                    )));
                }
                let (l, inv) = factorize(dim, cov)?;
                (Some(l), Some(inv))
            }
            None if metric == MetricKind::Mahalanobis => return Err(Error::MissingCovariance),
            None => (None, None),
        };
        Ok(Self {
            dim,
            metric,
            mean,
            covariance,
            covariance_inverse,
            regularization_lambda,
            n_samples,
            metric_stats,
            chol_lower,
        })
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = BaselineFile {
            dim: self.dim,
            metric: self.metric,
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
            lambda: self.regularization_lambda,
            n_samples: self.n_samples,
            metric_stats: self.metric_stats,
            format_version: FORMAT_VERSION,
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: BaselineFile = serde_json::from_reader(input)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(file.format_version));
        }
        if file.mean.len() != file.dim {
            return Err(Error::InvalidArgument(format!(
                "mean has {} entries but dim is {}",
                file.mean.len(),
                file.dim
            )));
        }
        Self::from_parts(
            file.metric,
            file.mean,
            file.covariance,
            file.lambda,
            file.metric_stats,
            file.n_samples,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    dim: usize,
    metric: MetricKind,
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<f64>>,
    lambda: f64,
    n_samples: usize,
    metric_stats: MetricStats,
    format_version: u32,
}

/// Fits a baseline on in-distribution training vectors.
///
/// Vectors are summed in ascending id order so the result does not depend on
/// input order. The covariance is the unbiased sample covariance plus
/// `lambda_rel * trace(S) / d` on the diagonal.
pub fn fit_baseline(
    train: &[FeatureVector],
    metric: MetricKind,
    lambda_rel: f64,
) -> Result<BaselineProfile> {
    let first = train.first().ok_or(Error::EmptyTrainingSet)?;
    if !(lambda_rel >= 0.0 && lambda_rel.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda_rel must be finite and non-negative, got {lambda_rel}"
        )));
    }
    let dim = first.dim();
    for v in train {
        if v.dim() != dim {
            return Err(Error::VectorDimension {
                id: v.id.clone(),
                expected: dim,
                found: v.dim(),
            });
        }
    }
    let n = train.len();
    if metric == MetricKind::Mahalanobis && n < 2 {
        return Err(Error::TooFewSamples(n));
    }

    let mut order: Vec<&FeatureVector> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mean = mean_vector(&order, dim);

    let (covariance, lambda) = if metric == MetricKind::Mahalanobis {
        let mut cov = sample_covariance(&order, &mean);
        let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
        let lambda = lambda_rel * trace / dim as f64;
        for i in 0..dim {
            cov[i * dim + i] += lambda;
        }
        (Some(cov), lambda)
    } else {
        (None, 0.0)
    };

    let mut profile = BaselineProfile::from_parts(
        metric,
        mean,
        covariance,
        lambda,
        MetricStats {
            mu: 0.0,
            sigma: 0.0,
        },
        n,
    )?;

    let scores = order
        .iter()
        .map(|v| metrics::score(v, &profile, metric).map(|m| m.value))
        .collect::<Result<Vec<_>>>()?;
    profile.metric_stats = mean_and_sd(&scores);
    Ok(profile)
}

fn mean_vector(order: &[&FeatureVector], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for v in order {
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let n = order.len() as f64;
    sum.iter().map(|s| s / n).collect()
}

fn sample_covariance(order: &[&FeatureVector], mean: &[f64]) -> Vec<f64> {
    let dim = mean.len();
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for v in order {
        for ((c, x), m) in centered.iter_mut().zip(&v.values).zip(mean) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            let row = &mut cov[i * dim..i * dim + dim];
            for j in i..dim {
                row[j] += ci * centered[j];
            }
        }
    }
    let denom = (order.len() - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let c = cov[i * dim + j] / denom;
            cov[i * dim + j] = c;
            cov[j * dim + i] = c;
        }
    }
    cov
}

/// Sample mean and standard deviation (n - 1); sigma is 0 for a single value.
pub(crate) fn mean_and_sd(xs: &[f64]) -> MetricStats {
    let n = xs.len();
    if n == 0 {
        return MetricStats {
            mu: 0.0,
            sigma: 0.0,
        };
    }
    let mu = xs.iter().sum::<f64>() / n as f64;
    if xs.iter().all(|&x| x == xs[0]) {
        return MetricStats {
            mu: xs[0],
            sigma: 0.0,
        };
    }
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    MetricStats {
        mu,
        sigma: (ss / (n - 1) as f64).sqrt(),
    }
}

/// Cholesky factor and inverse of a symmetric positive-definite matrix.
fn factorize(dim: usize, cov: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    let m = DMatrix::from_row_slice(dim, dim, cov);
    let max_diag = (0..dim).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    let chol = m.cholesky().ok_or(Error::SingularCovariance)?;
    let l = chol.l();
    // Pivots at rounding level mean the matrix is numerically rank deficient.
    let floor = max_diag * dim as f64 * f64::EPSILON;
    if (0..dim).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
        return Err(Error::SingularCovariance);
    }
    let inv = chol.inverse();
    let to_rows = |a: &DMatrix<f64>| {
        (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect::<Vec<_>>()
    };
    Ok((to_rows(&l), to_rows(&inv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    fn fv(id: &str, values: &[f64]) -> FeatureVector {
        FeatureVector::new(id, values.to_vec())
    }

    fn square() -> Vec<FeatureVector> {
        vec![
            fv("a", &[0.0, 0.0]),
            fv("b", &[2.0, 0.0]),
            fv("c", &[0.0, 2.0]),
            fv("d", &[2.0, 2.0]),
        ]
    }

    /// Brute force: (1 / (n - 1)) * sum of outer products of centered rows.
    fn oracle_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len();
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let mut c = vec![vec![0.0; d]; d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        c.iter()
            .map(|row| row.iter().map(|x| x / (n - 1) as f64).collect())
            .collect()
    }

    #[test]
    fn square_mean_and_covariance() {
        let b = fit_baseline(&square(), MetricKind::Mahalanobis, 0.0).unwrap();
        assert_eq!(b.mean, vec![1.0, 1.0]);
        let cov = b.covariance.as_ref().unwrap();
        let oracle = oracle_covariance(
            &square()
                .iter()
                .map(|v| v.values.clone())
                .collect::<Vec<_>>(),
        );
        assert_eq!(oracle, vec![vec![4.0 / 3.0, 0.0], vec![0.0, 4.0 / 3.0]]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[i * 2 + j] - oracle[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn regularization_scales_with_trace() {
        let b = fit_baseline(&square(), MetricKind::Mahalanobis, 1e-3).unwrap();
        let expected = 1e-3 * (8.0 / 3.0) / 2.0;
        assert!((b.regularization_lambda - expected).abs() < 1e-18);
        let cov = b.covariance.unwrap();
        assert!((cov[0] - (4.0 / 3.0 + expected)).abs() < 1e-15);
        assert_eq!(cov[1], 0.0);
    }

    #[test]
    fn identical_vectors_have_zero_sigma() {
        let v = [0.3, 0.4, 0.5];
        let train = vec![fv("1", &v), fv("2", &v), fv("3", &v)];
        let b = fit_baseline(&train, MetricKind::CosineSimilarity, DEFAULT_LAMBDA_REL).unwrap();
        assert_eq!(b.metric_stats.sigma, 0.0);
        assert!((b.metric_stats.mu - 1.0).abs() < 1e-15);
    }

    #[test]
    fn precondition_errors() {
        assert_eq!(
            fit_baseline(&[], MetricKind::CosineSimilarity, 0.0).unwrap_err(),
            Error::EmptyTrainingSet
        );
        assert_eq!(
            fit_baseline(&[fv("a", &[1.0, 2.0])], MetricKind::Mahalanobis, 0.0).unwrap_err(),
            Error::TooFewSamples(1)
        );
        let one = fit_baseline(&[fv("a", &[1.0, 2.0])], MetricKind::CosineSimilarity, 0.0).unwrap();
        assert_eq!(one.metric_stats.sigma, 0.0);
        assert_eq!(one.n_samples, 1);
    }

    #[test]
    fn collinear_features_need_regularization() {
        let train: Vec<_> = (0..10)
            .map(|i| fv(&i.to_string(), &[i as f64, 2.0 * i as f64]))
            .collect();
        assert_eq!(
            fit_baseline(&train, MetricKind::Mahalanobis, 0.0).unwrap_err(),
            Error::SingularCovariance
        );
        assert!(fit_baseline(&train, MetricKind::Mahalanobis, 1e-6).is_ok());
        let constant: Vec<_> = (0..5).map(|i| fv(&i.to_string(), &[1.0, 1.0])).collect();
        assert_eq!(
            fit_baseline(&constant, MetricKind::Mahalanobis, 1e-6).unwrap_err(),
            Error::SingularCovariance
        );
    }

    #[test]
    fn covariance_times_inverse_is_identity() {
        let mut rng = seeded(3);
        let train: Vec<_> = (0..200)
            .map(|i| {
                let z: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
                fv(
                    &format!("{i:04}"),
                    &[z[0], z[0] + 0.1 * z[1], z[2] * 3.0, z[3] - z[4], z[4]],
                )
            })
            .collect();
        let b = fit_baseline(&train, MetricKind::Mahalanobis, 0.0).unwrap();
        let (cov, inv) = (b.covariance.unwrap(), b.covariance_inverse.unwrap());
        for i in 0..5 {
            for j in 0..5 {
                assert!((cov[i * 5 + j] - cov[j * 5 + i]).abs() <= 1e-9 * cov[i * 5 + j].abs());
                let p: f64 = (0..5).map(|k| cov[i * 5 + k] * inv[k * 5 + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p - want).abs() < 1e-6, "({i},{j}) = {p}");
            }
        }
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let mut rng = seeded(11);
        let mut train: Vec<_> = (0..300)
            .map(|i| {
                let z: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
                fv(&format!("id{i}"), &z)
            })
            .collect();
        let a = fit_baseline(&train, MetricKind::Mahalanobis, DEFAULT_LAMBDA_REL).unwrap();
        train.shuffle(&mut rng);
        let b = fit_baseline(&train, MetricKind::Mahalanobis, DEFAULT_LAMBDA_REL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_mean_converges() {
        let (n, d) = (10_000, 8);
        let mut rng = seeded(2024);
        let train: Vec<_> = (0..n)
            .map(|i| {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                fv(&i.to_string(), &z)
            })
            .collect();
        let b = fit_baseline(&train, MetricKind::Mahalanobis, DEFAULT_LAMBDA_REL).unwrap();
        let bound = 5.0 / (n as f64).sqrt();
        assert!(b.mean.iter().all(|m| m.abs() < bound));
        let cov = b.covariance.unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i * d + j] - want).abs() < bound);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = seeded(5);
        let train: Vec<_> = (0..50)
            .map(|i| {
                let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                fv(&i.to_string(), &z)
            })
            .collect();
        for metric in [MetricKind::Mahalanobis, MetricKind::CosineSimilarity] {
            let b = fit_baseline(&train, metric, DEFAULT_LAMBDA_REL).unwrap();
            let mut buf = Vec::new();
            b.write_json(&mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.contains("\"format_version\": 1"));
            assert_eq!(
                text.contains("covariance"),
                metric == MetricKind::Mahalanobis
            );
            let back = BaselineProfile::read_json(buf.as_slice()).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn json_round_trip_many_dims() {
        let mut rng = seeded(8);
        let train: Vec<_> = (0..200)
            .map(|i| {
                let z: Vec<f64> = (0..12)
                    .map(|_| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        3.0 * s + 1.5
                    })
                    .collect();
                fv(&format!("{i:03}"), &z)
            })
            .collect();
        let b = fit_baseline(&train, MetricKind::Mahalanobis, DEFAULT_LAMBDA_REL).unwrap();
        let mut buf = Vec::new();
        b.write_json(&mut buf).unwrap();
        assert_eq!(BaselineProfile::read_json(buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn rejects_unknown_version() {
        let json = r#"{"dim":1,"metric":"cosine","mean":[1.0],"lambda":0.0,"n_samples":1,
            "metric_stats":{"mu":1.0,"sigma":0.0},"format_version":2}"#;
        assert_eq!(
            BaselineProfile::read_json(json.as_bytes()).unwrap_err(),
            Error::UnsupportedVersion(2)
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn regularized_covariance_is_positive_definite(
                rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..12)
            ) {
                let train: Vec<_> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| fv(&i.to_string(), r))
                    .collect();
                let spread = rows.iter().any(|r| r != &rows[0]);
                match fit_baseline(&train, MetricKind::Mahalanobis, 1e-3) {
                    Ok(b) => prop_assert!(b.chol_lower().is_some()),
                    // Only a zero-trace covariance leaves nothing to regularize.
                    Err(e) => prop_assert!(!spread && e == Error::SingularCovariance),
                }
            }
        }
    }
}
