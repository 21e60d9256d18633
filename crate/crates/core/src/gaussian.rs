//! Multivariate normal building blocks: jittered Cholesky factorization,
//! exact log-likelihood, Gaussian conditioning and reproducible sampling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::KernelModel;

/// Lower Cholesky factor of a (possibly jittered) covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceMatrixFactor {
    pub n: usize,
    pub chol: DMatrix<f64>,
    pub log_det: f64,
    /// Absolute amount added to the diagonal.
    pub jitter_applied: f64,
    pub source_grid: Option<TimeGrid>,
}

/// Relative jitter levels tried in order, as multiples of the mean diagonal.
pub const JITTER_LEVELS: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<CovarianceMatrixFactor> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "covariance matrix has a non-finite entry {v}"
        )));
    }
    if n == 0 {
        return Ok(CovarianceMatrixFactor {
            n,
            chol: DMatrix::zeros(0, 0),
            log_det: 0.0,
            jitter_applied: 0.0,
            source_grid: None,
        });
    }
    let mean_diag = m.diagonal().mean();
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last = 0.0;
    for rel in JITTER_LEVELS {
        let jitter = rel * scale;
        last = jitter;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(a) {
            let l = ch.unpack();
            let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if log_det.is_finite() {
                return Ok(CovarianceMatrixFactor {
                    n,
                    chol: l,
                    log_det,
                    jitter_applied: jitter,
                    source_grid: None,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

impl CovarianceMatrixFactor {
    pub fn with_grid(mut self, grid: TimeGrid) -> Self {
        self.source_grid = Some(grid);
        self
    }

    /// Jitter relative to the mean diagonal of the factored matrix.
    pub fn relative_jitter(&self) -> f64 {
        if self.jitter_applied == 0.0 {
            return 0.0;
        }
        let mean = self.chol.row_iter().map(|r| r.norm_squared()).sum::<f64>() / self.n as f64;
        self.jitter_applied / (mean - self.jitter_applied)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n,
                got,
            })
        }
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        self.chol
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))
    }

    /// `M⁻¹ B`
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let y = self
            .chol
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
        self.chol
            .tr_solve_lower_triangular(&y)
            .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))
    }

    /// `xᵀ M⁻¹ x`
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let z = self.solve_lower(&DVector::from_column_slice(x))?;
        Ok(z.norm_squared())
    }

    /// `L Lᵀ`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }
}

/// `-½[n log 2π + log det M + xᵀ M⁻¹ x]`
pub fn log_likelihood(factor: &CovarianceMatrixFactor, x: &[f64]) -> Result<f64> {
    let q = factor.quad_form(x)?;
    let n = factor.n as f64;
    Ok(-0.5 * (n * (2.0 * PI).ln() + factor.log_det + q))
}

/// Conditional mean and covariance of the target block.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub jitter: f64,
}

impl Conditional {
    pub fn sd(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Condition the target block on `x` given the joint blocks
/// `k11 = Cov(obs)`, `k21 = Cov(target, obs)`, `k22 = Cov(target)`.
pub fn condition_blocks(
    k11: &DMatrix<f64>,
    k21: &DMatrix<f64>,
    k22: &DMatrix<f64>,
    x: &[f64],
) -> Result<Conditional> {
    let (m, n) = (k22.nrows(), k11.nrows());
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if k21.nrows() != m || k21.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            got: k21.nrows() * k21.ncols(),
        });
    }
    if n == 0 {
        return Ok(Conditional {
            mean: vec![0.0; m],
            cov: k22.clone(),
            jitter: 0.0,
        });
    }
    let factor = cholesky_with_jitter(k11)?;
    // W = L⁻¹ K₁₂
    let w = factor
        .chol
        .solve_lower_triangular(&k21.transpose())
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let z = factor.solve_lower(&DVector::from_column_slice(x))?;
    let mean = w.transpose() * z;
    let mut cov = k22 - w.transpose() * &w;
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        if cov[(i, i)] < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    Ok(Conditional {
        mean: mean.iter().copied().collect(),
        cov,
        jitter: factor.jitter_applied,
    })
}

/// Exact Gaussian conditioning of `model` on observations at `observed_grid`.
pub fn condition(
    model: &KernelModel,
    observed_grid: &TimeGrid,
    observed_values: &[f64],
    target_grid: &TimeGrid,
) -> Result<Conditional> {
    if let Some(t) = target_grid
        .points()
        .iter()
        .find(|t| observed_grid.points().iter().any(|o| o == *t))
    {
        return Err(Error::InvalidParameter(format!(
            "target time {t} coincides with an observation"
        )));
    }
    let kernel = model.kernel()?;
    let k11 = kernel.matrix(observed_grid)?;
    let k22 = kernel.matrix(target_grid)?;
    let k21 = kernel.cross(target_grid.points(), observed_grid.points())?;
    condition_blocks(&k11, &k21, &k22, observed_values)
}

/// `n_paths` draws of `L z`, returned column-wise (`n × n_paths`).
///
/// Path `p` uses the ChaCha20 stream `p` of the generator seeded with
/// `seed`, so any path can be regenerated alone and results do not depend
/// on the number of threads.
pub fn sample(factor: &CovarianceMatrixFactor, seed: u64, n_paths: usize) -> Result<DMatrix<f64>> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    let n = factor.n;
    let columns: Vec<DVector<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let z = standard_normals(seed, p as u64, n);
            &factor.chol * z
        })
        .collect();
    Ok(DMatrix::from_columns(&columns))
}

/// `n` standard normal variates from stream `stream` of the seeded generator.
pub fn standard_normals(seed: u64, stream: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn identity_factor() {
        let f = cholesky_with_jitter(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.chol, DMatrix::identity(3, 3));
        assert_eq!(f.log_det, 0.0);
        assert_eq!(f.jitter_applied, 0.0);
    }

    #[test]
    fn hand_factor() {
        let m = dmatrix![4.0, 2.0; 2.0, 4.0];
        let f = cholesky_with_jitter(&m).unwrap();
        let expected = dmatrix![2.0, 0.0; 1.0, 3f64.sqrt()];
        assert!((&f.chol - expected).abs().max() < 1e-15);
        assert!((f.log_det - 12f64.ln()).abs() < 1e-14);
        assert!((f.reconstruct() - m).norm() < 1e-12);
    }

    #[test]
    fn indefinite_fails() {
        let m = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(cholesky_with_jitter(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn semidefinite_gets_jitter() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let f = cholesky_with_jitter(&m).unwrap();
        assert!(f.jitter_applied > 0.0 && f.jitter_applied <= 1e-6);
    }

    #[test]
    fn likelihood_examples() {
        let f = cholesky_with_jitter(&DMatrix::identity(2, 2)).unwrap();
        let two_pi = (2.0 * PI).ln();
        assert!((log_likelihood(&f, &[0.0, 0.0]).unwrap() + two_pi).abs() < 1e-15);
        assert!((log_likelihood(&f, &[1.0, 1.0]).unwrap() + two_pi + 1.0).abs() < 1e-15);
        let f = cholesky_with_jitter(&dmatrix![4.0, 2.0; 2.0, 4.0]).unwrap();
        // M⁻¹ (1,1) = (1/6, 1/6), quadratic form 1/3
        let expected = -0.5 * (2.0 * two_pi + 12f64.ln() + 1.0 / 3.0);
        assert!((log_likelihood(&f, &[1.0, 1.0]).unwrap() - expected).abs() < 1e-14);
        assert!(matches!(
            log_likelihood(&f, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn likelihood_permutation_invariant() {
        let m = KernelModel::WeightedLogConst { alpha: 1.3 };
        let k = m.kernel().unwrap();
        let pts = [0.5, 1.0, 2.5, 4.0];
        let x = [0.3, -0.2, 1.1, 0.7];
        let perm = [2usize, 0, 3, 1];
        let a = crate::kernels::assemble(&pts, &pts, true, |s, t| k.cov(s, t)).unwrap();
        let pp: Vec<f64> = perm.iter().map(|&i| pts[i]).collect();
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let b = crate::kernels::assemble(&pp, &pp, true, |s, t| k.cov(s, t)).unwrap();
        let la = log_likelihood(&cholesky_with_jitter(&a).unwrap(), &x).unwrap();
        let lb = log_likelihood(&cholesky_with_jitter(&b).unwrap(), &xp).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn conditioning_independent_blocks() {
        let k11 = dmatrix![2.0];
        let k21 = dmatrix![0.0];
        let k22 = dmatrix![3.0];
        let c = condition_blocks(&k11, &k21, &k22, &[5.0]).unwrap();
        assert_eq!(c.mean, vec![0.0]);
        assert_eq!(c.cov[(0, 0)], 3.0);
    }

    #[test]
    fn conditioning_on_nothing_is_prior() {
        let k22 = dmatrix![3.0, 1.0; 1.0, 2.0];
        let c = condition_blocks(&DMatrix::zeros(0, 0), &DMatrix::zeros(2, 0), &k22, &[]).unwrap();
        assert_eq!(c.mean, vec![0.0, 0.0]);
        assert_eq!(c.cov, k22);
    }

    #[test]
    fn conditioning_is_continuous_at_observations() {
        let m = KernelModel::WeightedLogExp { sigma: 1.7, beta: 0.044 };
        let obs = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let target = TimeGrid::new(vec![2.0 + 1e-6]).unwrap();
        let c = condition(&m, &obs, &[0.4, -1.0, 0.2], &target).unwrap();
        assert!((c.mean[0] + 1.0).abs() < 1e-3, "{:?}", c.mean);
        assert!(c.cov[(0, 0)] < 1e-3);
        assert!(condition(&m, &obs, &[0.4, -1.0, 0.2], &TimeGrid::new(vec![2.0]).unwrap()).is_err());
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let f = cholesky_with_jitter(&DMatrix::identity(3, 3)).unwrap();
        let paths = sample(&f, 42, 10_000).unwrap();
        let bound = 5.0 / 100.0;
        for i in 0..3 {
            let row: Vec<f64> = paths.row(i).iter().copied().collect();
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64;
            assert!(mean.abs() < bound);
            assert!((var - 1.0).abs() < bound);
        }
        assert_eq!(sample(&f, 7, 2).unwrap(), sample(&f, 7, 2).unwrap());
        assert_ne!(sample(&f, 7, 2).unwrap(), sample(&f, 8, 2).unwrap());
        // a path does not depend on how many others are drawn
        let many = sample(&f, 7, 5).unwrap();
        assert_eq!(many.column(1), sample(&f, 7, 2).unwrap().column(1));
        assert!(sample(&f, 7, 0).is_err());
    }
}
