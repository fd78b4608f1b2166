//! Fisher information of the summary statistics under a Gaussian likelihood
//! approximation with parameter-independent covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::RngStream;
use crate::inference::prior::PriorBox;
use crate::inference::simulators::{simulate_many, SummarySimulator};
use crate::inference::snpe::MAX_INVALID_FRACTION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherSettings {
    pub n_sims: usize,
    /// Finite-difference step as a fraction of each prior width.
    pub fd_fraction: f64,
    /// Added to the covariance diagonal before inversion.
    pub regularization: f64,
    /// Singular when the smallest eigenvalue is below `singular_tol` times the largest.
    pub singular_tol: f64,
}

impl Default for FisherSettings {
    fn default() -> Self {
        Self { n_sims: 1000, fd_fraction: 0.01, regularization: 1e-8, singular_tol: 1e-8 }
    }
}

impl FisherSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims < 100 {
            return Err(Error::Config("fisher.n_sims must be at least 100".into()));
        }
        if !(self.fd_fraction > 0.0 && self.fd_fraction < 0.5) {
            return Err(Error::Config("fisher.fd_fraction must lie in (0, 0.5)".into()));
        }
        if !(self.regularization >= 0.0 && self.singular_tol > 0.0) {
            return Err(Error::Config("fisher.regularization and singular_tol out of range".into()));
        }
        Ok(())
    }

    pub fn fd_steps(&self, prior: &PriorBox) -> Vec<f64> {
        prior.widths().iter().map(|w| w * self.fd_fraction).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SummaryMoments {
    pub mean: DVector<f64>,
    /// Sample covariance plus the diagonal regularizer.
    pub cov: DMatrix<f64>,
    pub valid: usize,
    pub invalid: usize,
}

fn sims_label() -> &'static str {
    "fisher"
}

fn moments_of(rows: &[&Vec<f64>], regularization: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += regularization;
    }
    (mean, cov)
}

fn check_invalid(invalid: usize, n: usize) -> Result<()> {
    if invalid as f64 > MAX_INVALID_FRACTION * n as f64 {
        return Err(Error::Simulation(format!("{invalid} of {n} simulations invalid")));
    }
    Ok(())
}

/// Mean and covariance of the simulator output over `n_sims` runs at `theta`.
pub fn summary_moments<S: SummarySimulator + ?Sized>(
    sim: &S,
    theta: &[f64],
    n_sims: usize,
    regularization: f64,
    stream: RngStream,
) -> Result<SummaryMoments> {
    if n_sims < 100 {
        return Err(Error::InvalidParameter("summary moments need at least 100 simulations".into()));
    }
    let thetas = vec![theta.to_vec(); n_sims];
    let streams: Vec<RngStream> = (0..n_sims as u64).map(|i| stream.derive(sims_label(), i)).collect();
    let out = simulate_many(sim, &thetas, &streams);
    let rows: Vec<&Vec<f64>> = out.iter().flatten().collect();
    let invalid = n_sims - rows.len();
    check_invalid(invalid, n_sims)?;
    let (mean, cov) = moments_of(&rows, regularization);
    Ok(SummaryMoments { mean, cov, valid: rows.len(), invalid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub names: Vec<String>,
    pub theta_star: Vec<f64>,
    pub fisher: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `None` when the smallest eigenvalue is not positive.
    pub condition_number: Option<f64>,
    pub singular: bool,
    pub n_sims: usize,
    pub sims_used: usize,
    pub invalid: usize,
    pub fd_steps: Vec<f64>,
    pub regularization: f64,
    pub singular_tol: f64,
}

impl FisherReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.fisher.len();
        DMatrix::from_fn(d, d, |i, j| self.fisher[i][j])
    }
}

/// Eigenvalues (ascending), condition number and singular flag of a symmetric matrix.
pub fn spectrum(f: &DMatrix<f64>, singular_tol: f64) -> (Vec<f64>, Option<f64>, bool) {
    let mut eig: Vec<f64> = SymmetricEigen::new(f.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    let condition = (lo > 0.0).then(|| hi / lo);
    (eig, condition, !(lo > singular_tol * hi))
}

/// `F = J^T Sigma^-1 J` at `theta_star`, with `J` from central differences
/// of the mean summary under common random numbers and `Sigma` the
/// regularized covariance at `theta_star`.
pub fn fisher_matrix<S: SummarySimulator + ?Sized>(
    sim: &S,
    names: &[String],
    theta_star: &[f64],
    fd_steps: &[f64],
    settings: &FisherSettings,
    prior: Option<&PriorBox>,
    stream: RngStream,
) -> Result<FisherReport> {
    settings.validate()?;
    let d = theta_star.len();
    if fd_steps.len() != d || names.len() != d || sim.param_dim() != d {
        return Err(Error::InvalidParameter("theta, step and name lengths must match the simulator".into()));
    }
    if fd_steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidParameter("finite-difference steps must be positive".into()));
    }
    if let Some(p) = prior {
        for k in 0..d {
            if theta_star[k] - fd_steps[k] < p.lower[k] || theta_star[k] + fd_steps[k] > p.upper[k] {
                return Err(Error::InvalidParameter(format!(
                    "{} = {} is closer than one step to the prior boundary",
                    names[k], theta_star[k]
                )));
            }
        }
    }
    let n = settings.n_sims;
    // Point 0 is theta_star, points 2k+1 / 2k+2 are the +/- steps of coordinate k.
    let mut points = vec![theta_star.to_vec()];
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut p = theta_star.to_vec();
            p[k] += sign * fd_steps[k];
            points.push(p);
        }
    }
    let mut thetas = Vec::with_capacity(n * points.len());
    let mut streams = Vec::with_capacity(n * points.len());
    for i in 0..n as u64 {
        let s = stream.derive(sims_label(), i);
        for p in &points {
            thetas.push(p.clone());
            streams.push(s);
        }
    }
    let out = simulate_many(sim, &thetas, &streams);
    let groups: Vec<&[Option<Vec<f64>>]> = out.chunks(points.len()).collect();
    let complete: Vec<Vec<&Vec<f64>>> =
        groups.iter().filter_map(|g| g.iter().map(|o| o.as_ref()).collect::<Option<Vec<_>>>()).collect();
    let invalid = n - complete.len();
    check_invalid(invalid, n)?;

    let center: Vec<&Vec<f64>> = complete.iter().map(|g| g[0]).collect();
    let (_, cov) = moments_of(&center, settings.regularization);
    let m = cov.nrows();
    let mut jac = DMatrix::zeros(m, d);
    for g in &complete {
        for k in 0..d {
            let (plus, minus) = (g[2 * k + 1], g[2 * k + 2]);
            for r in 0..m {
                jac[(r, k)] += (plus[r] - minus[r]) / (2.0 * fd_steps[k]);
            }
        }
    }
    jac /= complete.len() as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::LinAlg("summary covariance not positive definite after regularization".into()))?;
    let mut f = jac.transpose() * chol.solve(&jac);
    f = (&f + f.transpose()) * 0.5;
    let (eigenvalues, condition_number, singular) = spectrum(&f, settings.singular_tol);
    Ok(FisherReport {
        names: names.to_vec(),
        theta_star: theta_star.to_vec(),
        fisher: (0..d).map(|i| (0..d).map(|j| f[(i, j)]).collect()).collect(),
        eigenvalues,
        condition_number,
        singular,
        n_sims: n,
        sims_used: complete.len() * points.len(),
        invalid,
        fd_steps: fd_steps.to_vec(),
        regularization: settings.regularization,
        singular_tol: settings.singular_tol,
    })
}
