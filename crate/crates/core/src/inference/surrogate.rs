//! Linear-Gaussian simulator `x = A theta + eps`, `eps ~ N(0, Sigma)`, whose
//! posterior under a flat prior and Fisher information are known in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::inference::simulators::SummarySimulator;

#[derive(Debug, Clone)]
pub struct LinearGaussianSimulator {
    pub a: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl LinearGaussianSimulator {
    pub fn new(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != a.nrows() || !sigma.is_square() {
            return Err(Error::InvalidParameter("noise covariance must be square with one row per output".into()));
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::LinAlg("noise covariance is not positive definite".into()))?;
        Ok(Self { a, sigma, chol })
    }

    /// `A^T Sigma^-1 A`.
    pub fn fisher(&self) -> DMatrix<f64> {
        self.a.transpose() * self.chol.solve(&self.a)
    }

    /// Gaussian posterior mean and covariance under an unbounded flat prior.
    pub fn posterior(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let precision = self.fisher();
        let cov = precision
            .try_inverse()
            .ok_or_else(|| Error::LinAlg("A^T Sigma^-1 A is singular".into()))?;
        let x = DVector::from_column_slice(x);
        let mean = &cov * (self.a.transpose() * self.chol.solve(&x));
        Ok((mean, cov))
    }
}

impl SummarySimulator for LinearGaussianSimulator {
    fn param_dim(&self) -> usize {
        self.a.ncols()
    }

    fn summary_dim(&self) -> usize {
        self.a.nrows()
    }

    fn simulate(&self, theta: &[f64], stream: RngStream) -> Option<Vec<f64>> {
        let mut rng = stream.rng();
        let eps = DVector::from_fn(self.a.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.a * DVector::from_column_slice(theta) + self.chol.l() * eps;
        Some(x.iter().copied().collect())
    }
}
