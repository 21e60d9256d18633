//! Stationarity diagnostics for a single series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingStats {
    pub window: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Sliding-window mean and unbiased variance; `n - window + 1` values.
pub fn rolling_stats(series: &[f64], window: usize) -> Result<RollingStats> {
    if window == 0 || window > series.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window} must lie in 1..={}",
            series.len()
        )));
    }
    let (means, variances) = series
        .windows(window)
        .map(|w| {
            let m = w.iter().sum::<f64>() / window as f64;
            let v = if window > 1 {
                w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (window - 1) as f64
            } else {
                0.0
            };
            (m, v)
        })
        .unzip();
    Ok(RollingStats {
        window,
        means,
        variances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acf {
    /// `values[k]` is the lag-k autocorrelation, `values[0] = 1`.
    pub values: Vec<f64>,
    pub bound: f64,
}

impl Acf {
    pub fn fraction_within_bound(&self) -> f64 {
        let lags = &self.values[1..];
        if lags.is_empty() {
            return 1.0;
        }
        lags.iter().filter(|r| r.abs() < self.bound).count() as f64 / lags.len() as f64
    }
}

/// Biased sample autocorrelation up to `max_lag`, with the white-noise
/// bound `1.96/√n`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Acf> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::InvalidParameter(format!("max_lag {max_lag} must be below the length {n}")));
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0: f64 = d.iter().map(|x| x * x).sum();
    if c0 == 0.0 {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let values = (0..=max_lag)
        .map(|k| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect();
    Ok(Acf {
        values,
        bound: 1.96 / (n as f64).sqrt(),
    })
}

pub fn difference(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidParameter("differencing needs at least two values".into()));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpssConfig {
    /// 5% critical value of the level-stationarity test.
    pub critical_value: f64,
    /// Overrides the `⌊4 (n/100)^{1/4}⌋` bandwidth rule.
    pub bandwidth: Option<usize>,
}

impl Default for KpssConfig {
    fn default() -> Self {
        KpssConfig {
            critical_value: 0.463,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kpss {
    pub statistic: f64,
    pub critical_value_5pct: f64,
    pub bandwidth: usize,
    pub stationary: bool,
}

pub const KPSS_MIN_LEN: usize = 20;

/// KPSS test of level stationarity with a Bartlett long-run variance.
pub fn kpss_level(series: &[f64], config: &KpssConfig) -> Result<Kpss> {
    let n = series.len();
    if n < KPSS_MIN_LEN {
        return Err(Error::InvalidParameter(format!("KPSS needs at least {KPSS_MIN_LEN} values, got {n}")));
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = series.iter().map(|x| x - m).collect();
    let bandwidth = config
        .bandwidth
        .unwrap_or_else(|| (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize)
        .min(n - 1);
    let mut partial = 0.0;
    let mut eta = 0.0;
    for x in &e {
        partial += x;
        eta += partial * partial;
    }
    // a constant series has zero partial sums: statistic 0 by convention
    if eta == 0.0 {
        return Ok(Kpss {
            statistic: 0.0,
            critical_value_5pct: config.critical_value,
            bandwidth,
            stationary: true,
        });
    }
    let gamma = |k: usize| e[..n - k].iter().zip(&e[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut lrv = gamma(0);
    for k in 1..=bandwidth {
        lrv += 2.0 * (1.0 - k as f64 / (bandwidth + 1) as f64) * gamma(k);
    }
    if !(lrv > 0.0) {
        return Err(Error::Degenerate("long-run variance is not positive".into()));
    }
    let statistic = eta / (n as f64 * n as f64) / lrv;
    Ok(Kpss {
        statistic,
        critical_value_5pct: config.critical_value,
        bandwidth,
        stationary: statistic < config.critical_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub rolling: RollingStats,
    pub acf: Acf,
    pub kpss: Kpss,
    pub differenced: Vec<f64>,
    pub differenced_acf: Option<Acf>,
    pub differenced_kpss: Option<Kpss>,
}

pub fn diagnose(series: &[f64], window: usize, max_lag: usize, config: &KpssConfig) -> Result<DiagnosticsReport> {
    let differenced = difference(series)?;
    let n = series.len();
    // a constant series has no autocorrelation; report lag 0 only
    let acf_or_flat = |x: &[f64]| match acf(x, max_lag.min(x.len() - 1)) {
        Err(Error::Degenerate(_)) => Ok(Acf {
            values: vec![1.0],
            bound: 1.96 / (x.len() as f64).sqrt(),
        }),
        r => r,
    };
    let differenced_acf = acf_or_flat(&differenced).ok();
    let differenced_kpss = kpss_level(&differenced, config).ok();
    Ok(DiagnosticsReport {
        n,
        rolling: rolling_stats(series, window)?,
        acf: acf_or_flat(series)?,
        kpss: kpss_level(series, config)?,
        differenced,
        differenced_acf,
        differenced_kpss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn rolling_examples() {
        let r = rolling_stats(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(r.means, vec![1.5, 2.5, 3.5, 4.5]);
        assert!(r.variances.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let c = rolling_stats(&[3.0; 12], 10).unwrap();
        assert!(c.means.iter().all(|m| *m == 3.0) && c.variances.iter().all(|v| *v == 0.0));
        let full = rolling_stats(&[1.0, 5.0, 6.0], 3).unwrap();
        assert_eq!(full.means, vec![4.0]);
        assert!(rolling_stats(&[1.0], 2).is_err());
    }

    #[test]
    fn acf_examples() {
        let x = noise(1, 10_000);
        let a = acf(&x, 50).unwrap();
        assert_eq!(a.values[0], 1.0);
        assert!(a.fraction_within_bound() >= 0.94);
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&alt, 1).unwrap().values[1];
        assert!((r + 1.0).abs() < 2e-3, "{r}");
        assert!(matches!(acf(&[2.0; 5], 2), Err(Error::Degenerate(_))));
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn differencing() {
        assert_eq!(difference(&[1.0, 3.0, 6.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(difference(&[4.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(difference(&[1.0]).is_err());
        let walk: Vec<f64> = noise(3, 2000)
            .iter()
            .scan(0.0, |s, z| {
                *s += z;
                Some(*s)
            })
            .collect();
        assert!(acf(&walk, 20).unwrap().fraction_within_bound() < 0.1);
        assert!(acf(&difference(&walk).unwrap(), 20).unwrap().fraction_within_bound() >= 0.85);
    }

    #[test]
    fn kpss_examples() {
        let cfg = KpssConfig::default();
        let k = kpss_level(&[1.5; 30], &cfg).unwrap();
        assert_eq!(k.statistic, 0.0);
        assert!(k.stationary);

        let trend: Vec<f64> = (1..=500).map(|t| t as f64 / 500.0).collect();
        let k = kpss_level(&trend, &cfg).unwrap();
        assert!(k.statistic > 10.0 * 0.463 && !k.stationary);
        assert_eq!(k.bandwidth, 5);

        // brute-force statistic with the textbook double loop
        let e: Vec<f64> = trend.iter().map(|x| x - 0.501).collect();
        let n = 500.0;
        let s2: f64 = (1..=500).map(|t| e[..t].iter().sum::<f64>().powi(2)).sum();
        let mut lrv = 0.0;
        for i in 0..500 {
            for j in 0..500 {
                let lag = (i as i64 - j as i64).unsigned_abs() as f64;
                if lag <= 5.0 {
                    lrv += (1.0 - lag / 6.0) * e[i] * e[j];
                }
            }
        }
        let brute = s2 / (n * n) / (lrv / n);
        assert!((k.statistic / brute - 1.0).abs() < 1e-10);

        let passed = (0..50).filter(|s| kpss_level(&noise(100 + s, 500), &cfg).unwrap().stationary).count();
        assert!(passed >= 45, "{passed}");
        assert!(kpss_level(&[1.0; 10], &cfg).is_err());
    }

    #[test]
    fn report_on_constant_series() {
        let r = diagnose(&[2.0; 40], 10, 5, &KpssConfig::default()).unwrap();
        assert!(r.kpss.stationary);
        assert!(r.rolling.variances.iter().all(|v| *v == 0.0));
        assert_eq!(r.acf.values, vec![1.0]);
    }
}
