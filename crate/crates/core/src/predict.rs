//! Prediction of held-out stretches of a track by Gaussian conditioning.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::{prepare, Anchor};
use crate::gaussian::{cholesky_with_jitter, condition, sample};
use crate::grid::TimeGrid;
use crate::kernels::KernelModel;
use crate::telemetry::Trajectory;

/// How prediction error is summarized over held-out points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// mean |pred − obs| / sd(obs) over the held-out points
    SdScaled,
    /// mean |pred − obs| / |obs|
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredictMethod {
    Exact,
    /// Average of conditional simulations; bands are empirical quantiles.
    MonteCarlo { paths: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub anchor: Anchor,
    pub method: PredictMethod,
    pub level: f64,
    pub metric: ErrorMetric,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            anchor: Anchor::FirstObservation,
            method: PredictMethod::Exact,
            level: 0.95,
            metric: ErrorMetric::Pointwise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub observed: Option<Vec<f64>>,
    pub metric: ErrorMetric,
    pub error: Option<f64>,
    pub jitter: f64,
}

impl Prediction {
    /// Columns `time,mean,lower,upper[,observed]`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time", "mean", "sd", "lower", "upper"];
        if self.observed.is_some() {
            header.push("observed");
        }
        w.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![
                self.times[i].to_string(),
                self.mean[i].to_string(),
                self.sd[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ];
            if let Some(o) = &self.observed {
                row.push(o[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn prediction_error(predicted: &[f64], observed: &[f64], metric: ErrorMetric) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            got: predicted.len(),
        });
    }
    let n = observed.len();
    if n == 0 {
        return Err(Error::Data("no held-out observations".into()));
    }
    let abs_err = predicted.iter().zip(observed).map(|(p, o)| (p - o).abs());
    match metric {
        ErrorMetric::Pointwise => {
            if observed.iter().any(|o| *o == 0.0) {
                return Err(Error::Degenerate("pointwise relative error undefined at an observed zero".into()));
            }
            Ok(abs_err.zip(observed).map(|(e, o)| e / o.abs()).sum::<f64>() / n as f64)
        }
        ErrorMetric::SdScaled => {
            if n < 2 {
                return Err(Error::Data("need two held-out points for a standard deviation".into()));
            }
            let m = observed.iter().sum::<f64>() / n as f64;
            let sd = (observed.iter().map(|o| (o - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            if sd == 0.0 {
                return Err(Error::Degenerate("held-out values are constant".into()));
            }
            Ok(abs_err.sum::<f64>() / n as f64 / sd)
        }
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (i, frac) = (h.floor() as usize, h.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Predict `model` at `targets` (raw times, same clock as `train`).
pub fn predict(model: &KernelModel, train: &Trajectory, targets: &[f64], opts: &PredictOptions) -> Result<Prediction> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {}", opts.level)));
    }
    let prep = prepare(train, opts.anchor)?;
    let shifted: Vec<f64> = targets.iter().map(|t| t - prep.t0).collect();
    let target_grid = TimeGrid::new(shifted)?;
    let cond = condition(model, &prep.grid, &prep.values, &target_grid)?;
    let sd = cond.sd();
    let m = targets.len();
    let (mean, lower, upper) = match opts.method {
        PredictMethod::Exact => {
            let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + opts.level / 2.0);
            let mean: Vec<f64> = cond.mean.iter().map(|v| v + prep.x0).collect();
            let lower = mean.iter().zip(&sd).map(|(v, s)| v - z * s).collect();
            let upper = mean.iter().zip(&sd).map(|(v, s)| v + z * s).collect();
            (mean, lower, upper)
        }
        PredictMethod::MonteCarlo { paths, seed } => {
            let factor = cholesky_with_jitter(&cond.cov)?;
            let draws: DMatrix<f64> = sample(&factor, seed, paths)?;
            let mut mean = Vec::with_capacity(m);
            let mut lower = Vec::with_capacity(m);
            let mut upper = Vec::with_capacity(m);
            for i in 0..m {
                let mut row: Vec<f64> = draws.row(i).iter().map(|v| v + cond.mean[i] + prep.x0).collect();
                mean.push(row.iter().sum::<f64>() / paths as f64);
                row.sort_by(f64::total_cmp);
                lower.push(quantile(&row, 0.5 - opts.level / 2.0));
                upper.push(quantile(&row, 0.5 + opts.level / 2.0));
            }
            (mean, lower, upper)
        }
    };
    Ok(Prediction {
        times: targets.to_vec(),
        mean,
        sd,
        lower,
        upper,
        level: opts.level,
        observed: None,
        metric: opts.metric,
        error: None,
        jitter: cond.jitter,
    })
}

/// Predict the `test` stretch from `train` and score it.
pub fn predict_held_out(
    model: &KernelModel,
    train: &Trajectory,
    test: &Trajectory,
    opts: &PredictOptions,
) -> Result<Prediction> {
    let mut p = predict(model, train, test.times(), opts)?;
    p.error = Some(prediction_error(&p.mean, &test.values, opts.metric)?);
    p.observed = Some(test.values.clone());
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_by_hand() {
        let obs = [2.0, 4.0];
        let pred = [2.2, 3.6];
        assert!((prediction_error(&pred, &obs, ErrorMetric::Pointwise).unwrap() - 0.1).abs() < 1e-12);
        // sd of (2, 4) is √2
        let v = prediction_error(&pred, &obs, ErrorMetric::SdScaled).unwrap();
        assert!((v - 0.3 / 2f64.sqrt()).abs() < 1e-12);
        assert!(prediction_error(&pred, &[0.0, 1.0], ErrorMetric::Pointwise).is_err());
        assert!(prediction_error(&pred, &[1.0], ErrorMetric::Pointwise).is_err());
    }

    #[test]
    fn exact_prediction_interpolates_and_anchors() {
        let model = KernelModel::IntegratedOu { sigma: 1.0, beta: 0.5 };
        let train = Trajectory::new(TimeGrid::new(vec![10.0, 11.0, 12.0]).unwrap(), vec![5.0, 6.0, 6.5], "x").unwrap();
        let p = predict(&model, &train, &[12.0 + 1e-6], &PredictOptions::default()).unwrap();
        assert!((p.mean[0] - 6.5).abs() < 1e-4, "{}", p.mean[0]);
        assert!(p.lower[0] <= p.mean[0] && p.mean[0] <= p.upper[0]);
        // far past the data the bands widen
        let far = predict(&model, &train, &[40.0], &PredictOptions::default()).unwrap();
        assert!(far.sd[0] > p.sd[0]);
    }

    #[test]
    fn monte_carlo_mean_tracks_exact() {
        let model = KernelModel::WeightedLogExp { sigma: 1.0, beta: 0.1 };
        let grid = TimeGrid::uniform(10.0, 20).unwrap();
        let vals: Vec<f64> = grid.points().iter().map(|t| t.sqrt()).collect();
        let train = Trajectory::new(grid, vals, "x").unwrap();
        let base = PredictOptions {
            anchor: Anchor::Origin,
            ..PredictOptions::default()
        };
        let exact = predict(&model, &train, &[11.0, 12.0], &base).unwrap();
        let mc_opts = PredictOptions {
            method: PredictMethod::MonteCarlo { paths: 4000, seed: 9 },
            ..base
        };
        let mc = predict(&model, &train, &[11.0, 12.0], &mc_opts).unwrap();
        for i in 0..2 {
            assert!((mc.mean[i] - exact.mean[i]).abs() < 5.0 * exact.sd[i] / 4000f64.sqrt());
            assert!((mc.upper[i] - exact.upper[i]).abs() < 0.1 * exact.sd[i] + 1e-9);
        }
        let again = predict(&model, &train, &[11.0, 12.0], &mc_opts).unwrap();
        assert_eq!(mc, again);
    }
}
