//! Gaussian-process regression over a finite candidate set with a
//! squared-exponential kernel on precomputed distances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn se_kernel(d: f64, sigma: f64, gamma: f64) -> f64 {
    sigma * sigma * (-(d * d) / (2.0 * gamma * gamma)).exp()
}

pub fn ucb(mean: f64, var: f64, beta: f64) -> f64 {
    mean + beta * var.max(0.0).sqrt()
}

/// Expected improvement of a Gaussian `N(mean, var)` over `f_best`.
pub fn expected_improvement(mean: f64, var: f64, f_best: f64) -> f64 {
    let s = var.max(0.0).sqrt();
    let gap = mean - f_best;
    if s == 0.0 {
        return gap.max(0.0);
    }
    let u = gap / s;
    let n = Normal::standard();
    (gap * n.cdf(u) + s * n.pdf(u)).max(0.0)
}

/// Observations over candidates indexed into a fixed distance matrix.
#[derive(Clone, Debug)]
pub struct GpState {
    pub dist: DMatrix<f64>,
    pub observed: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub jitter: f64,
}

const GRID: usize = 8;

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl GpState {
    pub fn new(dist: DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = dist.nrows();
        if dist.ncols() != n {
            return Err(Error::Shape("distance matrix must be square".into()));
        }
        for i in 0..n {
            if dist[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument("distance matrix needs a zero diagonal".into()));
            }
            for j in 0..i {
                if dist[(i, j)] != dist[(j, i)] || dist[(i, j)] < 0.0 || !dist[(i, j)].is_finite() {
                    return Err(Error::InvalidArgument("distance matrix must be symmetric and non-negative".into()));
                }
            }
        }
        if !(jitter > 0.0) {
            return Err(Error::InvalidArgument("jitter must be positive".into()));
        }
        Ok(Self {
            dist,
            observed: Vec::new(),
            values: Vec::new(),
            sigma: 1.0,
            gamma: 1.0,
            jitter,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.dist.nrows()
    }

    pub fn observe(&mut self, candidate: usize, value: f64) {
        self.observed.push(candidate);
        self.values.push(value);
    }

    /// Median of the off-diagonal distances, or 1 when there is none
    /// that is positive.
    pub fn median_distance(&self) -> f64 {
        let n = self.num_candidates();
        let mut ds: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| self.dist[(i, j)]).collect();
        if ds.is_empty() {
            return 1.0;
        }
        ds.sort_by(f64::total_cmp);
        let m = ds.len();
        let med = if m % 2 == 1 { ds[m / 2] } else { 0.5 * (ds[m / 2 - 1] + ds[m / 2]) };
        if med > 0.0 {
            med
        } else {
            1.0
        }
    }

    fn gram(&self, sigma: f64, gamma: f64) -> DMatrix<f64> {
        let n = self.observed.len();
        DMatrix::from_fn(n, n, |a, b| {
            let k = se_kernel(self.dist[(self.observed[a], self.observed[b])], sigma, gamma);
            if a == b {
                k + self.jitter
            } else {
                k
            }
        })
    }

    fn factor(&self, sigma: f64, gamma: f64) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.gram(sigma, gamma)).ok_or_else(|| Error::Linalg("GP kernel matrix is not positive definite".into()))
    }

    /// Zero-mean GP log marginal likelihood of the observations.
    pub fn log_marginal_likelihood(&self, sigma: f64, gamma: f64) -> Result<f64> {
        let n = self.observed.len();
        if n == 0 {
            return Ok(0.0);
        }
        let chol = self.factor(sigma, gamma)?;
        let f = DVector::from_column_slice(&self.values);
        let alpha = chol.solve(&f);
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * f.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    /// Picks `(sigma, gamma)` maximising the marginal likelihood over an
    /// 8 x 8 log-spaced grid: sigma in [0.05, 1], gamma in [0.1, 10] times
    /// the median candidate distance. Earlier grid points win ties.
    pub fn fit(&mut self) -> Result<()> {
        let dbar = self.median_distance();
        let mut best = (f64::NEG_INFINITY, self.sigma, self.gamma);
        for &sigma in &log_space(0.05, 1.0, GRID) {
            for &gamma in &log_space(0.1 * dbar, 10.0 * dbar, GRID) {
                let lml = self.log_marginal_likelihood(sigma, gamma)?;
                if lml > best.0 {
                    best = (lml, sigma, gamma);
                }
            }
        }
        self.sigma = best.1;
        self.gamma = best.2;
        Ok(())
    }

    /// Posterior mean and variance (clamped at 0) at `candidate`.
    pub fn predict(&self, candidate: usize) -> Result<(f64, f64)> {
        let prior_var = se_kernel(0.0, self.sigma, self.gamma);
        if self.observed.is_empty() {
            return Ok((0.0, prior_var));
        }
        let chol = self.factor(self.sigma, self.gamma)?;
        let k = DVector::from_iterator(
            self.observed.len(),
            self.observed
                .iter()
                .map(|&o| se_kernel(self.dist[(candidate, o)], self.sigma, self.gamma)),
        );
        let f = DVector::from_column_slice(&self.values);
        let mean = k.dot(&chol.solve(&f));
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Linalg("triangular solve failed".into()))?;
        Ok((mean, (prior_var - v.norm_squared()).max(0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(se_kernel(0.0, 0.7, 3.0), 0.7 * 0.7);
        assert!((se_kernel(1.0, 1.0, 1.0) - 0.6065306597126334).abs() < 1e-15);
        assert!(se_kernel(1.0, 1.0, 1.0) > se_kernel(1.1, 1.0, 1.0));
    }

    #[test]
    fn acquisition_values() {
        assert_eq!(ucb(0.3, 0.0, 2.0), 0.3);
        assert!((ucb(0.5, 0.04, 2.0) - 0.9).abs() < 1e-15);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert!((expected_improvement(0.5, 1.0, 0.5) - 0.3989422804014327).abs() < 1e-12);
    }

    #[test]
    fn empty_and_single_observation() {
        let dist = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut gp = GpState::new(dist, 1e-6).unwrap();
        gp.sigma = 0.5;
        assert_eq!(gp.predict(1).unwrap(), (0.0, 0.25));
        gp.observe(0, 0.8);
        let (m, v) = gp.predict(0).unwrap();
        assert!((m - 0.8 * 0.25 / (0.25 + 1e-6)).abs() < 1e-12);
        assert!(v <= 1e-6 * 0.25 / (0.25 + 1e-6) + 1e-12);
    }

    #[test]
    fn rejects_bad_distance_matrix() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(GpState::new(asym, 1e-6).is_err());
        let diag = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert!(GpState::new(diag, 1e-6).is_err());
    }
}
