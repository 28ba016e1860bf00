//! Random-projection Gaussian model of the inputs a module was trained on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `N(P x; mu, sigma)` with a fixed random projection `P` from `v` to `k`
/// dimensions.
#[derive(Clone, Debug)]
pub struct InputModel {
    pub projection: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Regularised sample covariance of the projected samples.
    pub cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for InputModel {
    fn eq(&self, other: &Self) -> bool {
        self.projection == other.projection && self.mean == other.mean && self.cov == other.cov
    }
}

impl InputModel {
    /// Rebuilds a model from stored parameters.
    pub fn from_parts(projection: DMatrix<f64>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = projection.nrows();
        if mean.len() != k || cov.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "projection has {k} rows, mean {} entries, covariance {:?}",
                mean.len(),
                cov.shape()
            )));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Linalg("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            projection,
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn k(&self) -> usize {
        self.projection.nrows()
    }

    pub fn v(&self) -> usize {
        self.projection.ncols()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn project(&self, x: &[f32]) -> DVector<f64> {
        let mut y = DVector::zeros(self.k());
        for r in 0..self.k() {
            let mut acc = 0.0;
            for (c, &xc) in x.iter().enumerate() {
                acc += self.projection[(r, c)] * xc as f64;
            }
            y[r] = acc;
        }
        y
    }

    pub fn log_density(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.v() {
            return Err(Error::Shape(format!(
                "input model expects {} features, got {}",
                self.v(),
                x.len()
            )));
        }
        let diff = self.project(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Linalg("triangular solve failed".into()))?;
        let k = self.k() as f64;
        Ok(-0.5 * (k * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared()))
    }

    /// Log-density of every row of `xs`.
    pub fn log_density_rows(&self, xs: ArrayView2<f32>) -> Result<Vec<f64>> {
        xs.rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.log_density(s),
                None => self.log_density(&row.to_vec()),
            })
            .collect()
    }
}

/// Fits an input model to `samples` (one row per sample). The projection
/// has `min(k, v)` rows of standard normal entries drawn from `rng`.
///
/// The covariance is regularised as `S + eps I` with
/// `eps = max(1e-6 trace(S) / k, 1e-8)`.
pub fn fit_input_model<R: Rng>(samples: ArrayView2<f32>, k: usize, rng: &mut R) -> Result<InputModel> {
    let (n, v) = samples.dim();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if k == 0 || v == 0 {
        return Err(Error::InvalidArgument("projection and input dimensions must be positive".into()));
    }
    let k = k.min(v);
    let projection = DMatrix::from_fn(k, v, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DMatrix::from_fn(n, v, |r, c| samples[[r, c]] as f64);
    // n x k projected samples
    let y = &x * projection.transpose();
    let mean = DVector::from_fn(k, |c, _| y.column(c).mean());
    let mut centered = y;
    for c in 0..k {
        let m = mean[c];
        centered.column_mut(c).add_scalar_mut(-m);
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    let eps = (1e-6 * cov.trace() / k as f64).max(1e-8);
    for d in 0..k {
        cov[(d, d)] += eps;
    }
    InputModel::from_parts(projection, mean, cov)
}
