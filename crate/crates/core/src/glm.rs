//! Quasi-Poisson log-link regression fitted by iteratively reweighted least
//! squares.
//!
//! Point estimates are the Poisson maximum-likelihood estimates. The
//! quasi-likelihood enters only through the covariance, which is the inverse
//! Fisher information inflated by the Pearson dispersion estimate.

use log::debug;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, PivotedCholesky};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Convergence threshold on `|D_new - D_old| / (|D_new| + 0.1)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_step_halvings: usize,
    /// Pivot threshold, relative to the largest pivot of the column-scaled
    /// weighted cross-product.
    pub pivot_tolerance: f64,
    /// Newton steps taken after convergence to drive the score
    /// `X^T (y - mu)` towards zero.
    pub polish_steps: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            max_step_halvings: 10,
            pivot_tolerance: 1e-10,
            polish_steps: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedGlm {
    columns: Vec<String>,
    beta: Vec<f64>,
    covariance: DMatrix<f64>,
    dispersion: f64,
    deviance: f64,
    iterations: usize,
    converged: bool,
    n_obs: usize,
    deviance_trace: Vec<f64>,
}

impl FittedGlm {
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn deviance(&self) -> f64 {
        self.deviance
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn df_residual(&self) -> usize {
        self.n_obs - self.beta.len()
    }

    /// Deviance after the starting step and after every IRLS iteration.
    pub fn deviance_trace(&self) -> &[f64] {
        &self.deviance_trace
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    /// Same point estimates with the covariance rescaled to another dispersion.
    pub fn with_dispersion(&self, dispersion: f64) -> Self {
        let mut out = self.clone();
        out.covariance *= dispersion / self.dispersion;
        out.dispersion = dispersion;
        out
    }

    /// Builds a model from known parts, e.g. to sample around a given truth.
    pub fn from_parts(columns: Vec<String>, beta: Vec<f64>, covariance: DMatrix<f64>, dispersion: f64) -> Result<Self> {
        let p = beta.len();
        if columns.len() != p || covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::Parameter(format!(
                "model parts disagree: {} names, {p} coefficients, {}x{} covariance",
                columns.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(Self {
            columns,
            beta,
            covariance,
            dispersion,
            deviance: f64::NAN,
            iterations: 0,
            converged: true,
            n_obs: p,
            deviance_trace: Vec::new(),
        })
    }

    pub fn report(&self) -> ModelReport {
        let se = self.standard_errors();
        ModelReport {
            coefficients: self
                .columns
                .iter()
                .zip(&self.beta)
                .zip(se)
                .map(|((name, &estimate), std_error)| CoefficientReport {
                    name: name.clone(),
                    estimate,
                    std_error,
                })
                .collect(),
            covariance: self
                .covariance
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            dispersion: self.dispersion,
            deviance: self.deviance,
            iterations: self.iterations,
            converged: self.converged,
            n_obs: self.n_obs,
            df_residual: self.df_residual(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

/// Serialisable audit record of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub coefficients: Vec<CoefficientReport>,
    pub covariance: Vec<Vec<f64>>,
    pub dispersion: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_obs: usize,
    pub df_residual: usize,
}

pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let log_term = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            log_term - (y - m)
        })
        .sum::<f64>()
}

/// Pearson chi-square over residual degrees of freedom.
pub fn pearson_dispersion(y: &[f64], mu: &[f64], p: usize) -> Result<f64> {
    let n = y.len();
    if mu.len() != n {
        return Err(Error::Parameter(format!(
            "{n} responses but {} fitted means",
            mu.len()
        )));
    }
    if n <= p {
        return Err(Error::DegreesOfFreedom { n, p });
    }
    if let Some(bad) = mu.iter().find(|&&m| !(m > 0.0)) {
        return Err(Error::Domain(format!("fitted mean {bad} must be positive")));
    }
    let chi2: f64 = y.iter().zip(mu).map(|(&y, &m)| (y - m).powi(2) / m).sum();
    Ok(chi2 / (n - p) as f64)
}

/// `X^T W X` (dense, symmetric) and `X^T W z` from the sparse rows.
fn weighted_cross_product(x: &DesignMatrix, w: &[f64], z: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let p = x.ncols();
    let mut xtwx = vec![0.0; p * p];
    let mut xtwz = vec![0.0; p];
    for i in 0..x.nrows() {
        let (cols, vals) = x.row_nonzeros(i);
        let wi = w[i];
        for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
            let wa = wi * va;
            xtwz[ca as usize] += wa * z[i];
            let base = ca as usize * p;
            for (&cb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                xtwx[base + cb as usize] += wa * vb;
            }
        }
    }
    let mut m = DMatrix::from_row_slice(p, p, &xtwx);
    for i in 0..p {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    (m, xtwz)
}

/// Factorization of `X^T W X` after symmetric diagonal scaling to unit diagonal.
struct ScaledSystem {
    factor: PivotedCholesky,
    scale: Vec<f64>,
}

impl ScaledSystem {
    fn new(a: &DMatrix<f64>, columns: &[String], pivot_tolerance: f64) -> Result<Self> {
        let p = a.nrows();
        let scale: Vec<f64> = (0..p)
            .map(|j| {
                let d = a[(j, j)];
                if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }
            })
            .collect();
        let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
        let factor = PivotedCholesky::new(&scaled, pivot_tolerance);
        if !factor.is_full_rank() {
            return Err(Error::SingularDesign {
                columns: factor
                    .dependent_columns()
                    .into_iter()
                    .map(|c| columns[c].clone())
                    .collect(),
            });
        }
        Ok(Self { factor, scale })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = b.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        self.factor
            .solve(&scaled)
            .into_iter()
            .zip(&self.scale)
            .map(|(v, s)| v * s)
            .collect()
    }

    fn inverse(&self) -> DMatrix<f64> {
        let inv = self.factor.inverse();
        let p = inv.nrows();
        let mut out = DMatrix::from_fn(p, p, |i, j| inv[(i, j)] * self.scale[i] * self.scale[j]);
        symmetrize(&mut out);
        out
    }
}

fn max_score(x: &DesignMatrix, mu: &[f64]) -> f64 {
    let r: Vec<f64> = x.response().iter().zip(mu).map(|(y, m)| y - m).collect();
    x.transpose_mul(&r).into_iter().fold(0.0, |a, g| a.max(g.abs()))
}

/// Newton steps in increment form, kept only while the score shrinks.
fn polish(x: &DesignMatrix, beta: &mut Vec<f64>, mu: &mut Vec<f64>, options: &IrlsOptions) -> Result<()> {
    let mut score = max_score(x, mu);
    for _ in 0..options.polish_steps {
        let r: Vec<f64> = x.response().iter().zip(mu.iter()).map(|(y, m)| y - m).collect();
        let (a, _) = weighted_cross_product(x, mu, &vec![0.0; x.nrows()]);
        let delta = ScaledSystem::new(&a, x.columns(), options.pivot_tolerance)?.solve(&x.transpose_mul(&r));
        let candidate: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let cand_mu = means(x, &candidate);
        let cand_score = max_score(x, &cand_mu);
        if !(cand_score < score) {
            break;
        }
        debug!("polish: max score {score:e} -> {cand_score:e}");
        *beta = candidate;
        *mu = cand_mu;
        score = cand_score;
    }
    Ok(())
}

fn means(x: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    x.linear_predictor(beta).into_iter().map(f64::exp).collect()
}

fn deviance_at(x: &DesignMatrix, beta: &[f64]) -> (Vec<f64>, f64) {
    let mu = means(x, beta);
    if mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return (mu, f64::INFINITY);
    }
    let dev = poisson_deviance(x.response(), &mu);
    (mu, dev)
}

/// One weighted least-squares step at the current means.
fn irls_step(x: &DesignMatrix, mu: &[f64], options: &IrlsOptions) -> Result<Vec<f64>> {
    let y = x.response();
    let offset = x.offset();
    let z: Vec<f64> = (0..x.nrows())
        .map(|i| mu[i].ln() - offset[i] + (y[i] - mu[i]) / mu[i])
        .collect();
    let (a, b) = weighted_cross_product(x, mu, &z);
    let system = ScaledSystem::new(&a, x.columns(), options.pivot_tolerance)?;
    Ok(system.solve(&b))
}

pub fn fit_quasi_poisson(x: &DesignMatrix) -> Result<FittedGlm> {
    fit_quasi_poisson_with(x, &IrlsOptions::default())
}

pub fn fit_quasi_poisson_with(x: &DesignMatrix, options: &IrlsOptions) -> Result<FittedGlm> {
    let n = x.nrows();
    let p = x.ncols();
    let y = x.response();
    if let Some(bad) = y.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("response {bad} must be a non-negative count")));
    }
    if !y.iter().any(|&v| v > 0.0) {
        return Err(Error::DegenerateResponse(
            "all responses are zero; the log-link estimate diverges".into(),
        ));
    }
    if n <= p {
        return Err(Error::DegreesOfFreedom { n, p });
    }

    let start: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
    let mut beta = irls_step(x, &start, options)?;
    let (mut mu, mut dev) = deviance_at(x, &beta);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if !dev.is_finite() {
            return Err(Error::Overflow("starting values give non-finite means".into()));
        }
        let mut candidate = irls_step(x, &mu, options)?;
        let (mut cand_mu, mut cand_dev) = deviance_at(x, &candidate);
        let mut halvings = 0;
        while !(cand_dev <= dev) && halvings < options.max_step_halvings {
            halvings += 1;
            for (c, b) in candidate.iter_mut().zip(&beta) {
                *c = 0.5 * (*c + b);
            }
            (cand_mu, cand_dev) = deviance_at(x, &candidate);
        }
        if !(cand_dev <= dev) {
            // the step cannot be repaired; keep the last good point
            debug!("step halving exhausted at iteration {iterations}");
            break;
        }
        let change = (cand_dev - dev).abs() / (cand_dev.abs() + 0.1);
        beta = candidate;
        mu = cand_mu;
        dev = cand_dev;
        trace.push(dev);
        debug!("irls iteration {iterations}: deviance {dev}, relative change {change:e}");
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    if converged {
        polish(x, &mut beta, &mut mu, options)?;
        dev = poisson_deviance(y, &mu);
    }

    let (a, _) = weighted_cross_product(x, &mu, &vec![0.0; n]);
    let system = ScaledSystem::new(&a, x.columns(), options.pivot_tolerance)?;
    let dispersion = pearson_dispersion(y, &mu, p)?;
    let covariance = system.inverse() * dispersion;

    Ok(FittedGlm {
        columns: x.columns().to_vec(),
        beta,
        covariance,
        dispersion,
        deviance: dev,
        iterations,
        converged,
        n_obs: n,
        deviance_trace: trace,
    })
}

/// Expected counts `exp(x . beta + offset)` for every row of `rows`.
pub fn predict_mu(model: &FittedGlm, rows: &DesignMatrix) -> Result<Vec<f64>> {
    predict_mu_with(model.beta(), rows)
}

pub fn predict_mu_with(beta: &[f64], rows: &DesignMatrix) -> Result<Vec<f64>> {
    if rows.ncols() != beta.len() {
        return Err(Error::Parameter(format!(
            "rows have {} columns, model has {}",
            rows.ncols(),
            beta.len()
        )));
    }
    let mu = means(rows, beta);
    if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
        return Err(Error::Overflow(format!("expected count in row {i} is not finite")));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(y: Vec<f64>, offset: Vec<f64>) -> DesignMatrix {
        let n = y.len();
        DesignMatrix::from_dense(vec!["(intercept)".into()], vec![1.0; n], offset, y).unwrap()
    }

    #[test]
    fn analytic_intercept_mle() {
        let x = intercept_only(vec![2.0, 4.0], vec![10f64.ln(); 2]);
        let fit = fit_quasi_poisson(&x).unwrap();
        assert!(fit.converged());
        assert!((fit.beta()[0] - (6.0f64 / 20.0).ln()).abs() < 1e-10);
        assert!((fit.beta()[0] + 1.203973).abs() < 1e-6);
    }

    #[test]
    fn all_zero_response_is_degenerate() {
        let x = intercept_only(vec![0.0, 0.0, 0.0], vec![0.0; 3]);
        assert!(matches!(fit_quasi_poisson(&x), Err(Error::DegenerateResponse(_))));
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let dense = vec![1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0];
        let mut cols = Vec::new();
        // duplicate the second column
        for r in dense.chunks(2) {
            cols.extend_from_slice(&[r[0], r[1], r[1] * 2.0]);
        }
        let x = DesignMatrix::from_dense(
            vec!["a".into(), "b".into(), "c".into()],
            cols,
            vec![0.0; 4],
            vec![1.0, 2.0, 3.0, 5.0],
        )
        .unwrap();
        match fit_quasi_poisson(&x) {
            Err(Error::SingularDesign { columns }) => {
                assert_eq!(columns.len(), 1);
                assert!(columns[0] == "b" || columns[0] == "c");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let dense: Vec<f64> = (0..6).flat_map(|i| [1.0, i as f64]).collect();
        let x = DesignMatrix::from_dense(
            vec!["a".into(), "b".into()],
            dense,
            vec![0.0; 6],
            vec![1.0, 3.0, 2.0, 8.0, 9.0, 20.0],
        )
        .unwrap();
        let opts = IrlsOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let fit = fit_quasi_poisson_with(&x, &opts).unwrap();
        assert!(!fit.converged());
        assert_eq!(fit.iterations(), 1);
    }

    #[test]
    fn dispersion_examples() {
        assert_eq!(pearson_dispersion(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1).unwrap(), 0.0);
        assert!(matches!(
            pearson_dispersion(&[1.0, 2.0], &[1.0, 2.0], 2),
            Err(Error::DegreesOfFreedom { .. })
        ));
        // (3-2)^2/2 + (1-2)^2/2 = 1 over 1 df
        assert_eq!(pearson_dispersion(&[3.0, 1.0], &[2.0, 2.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn prediction_basics() {
        let x = DesignMatrix::from_dense(vec!["a".into()], vec![0.0], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(predict_mu_with(&[0.0], &x).unwrap(), vec![1.0]);
        let doubled = DesignMatrix::from_dense(vec!["a".into()], vec![1.0, 1.0], vec![0.3, 0.3 + 2f64.ln()], vec![0.0; 2]).unwrap();
        let mu = predict_mu_with(&[0.7], &doubled).unwrap();
        assert!((mu[1] / mu[0] - 2.0).abs() < 1e-14);
        let huge = DesignMatrix::from_dense(vec!["a".into()], vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(predict_mu_with(&[1e4], &huge), Err(Error::Overflow(_))));
    }

    #[test]
    fn covariance_scales_with_dispersion() {
        let dense: Vec<f64> = (0..8).flat_map(|i| [1.0, i as f64 / 4.0]).collect();
        let x = DesignMatrix::from_dense(
            vec!["a".into(), "b".into()],
            dense,
            vec![1.0; 8],
            vec![3.0, 1.0, 4.0, 6.0, 5.0, 9.0, 7.0, 12.0],
        )
        .unwrap();
        let fit = fit_quasi_poisson(&x).unwrap();
        let doubled = fit.with_dispersion(2.0 * fit.dispersion());
        let diff = doubled.covariance() - fit.covariance() * 2.0;
        assert!(diff.abs().max() < 1e-14);
        let cov = fit.covariance();
        assert!((cov - cov.transpose()).abs().max() <= 1e-10 * cov.abs().max());
    }

    #[test]
    fn report_serialises() {
        let x = intercept_only(vec![2.0, 4.0, 3.0], vec![0.0; 3]);
        let fit = fit_quasi_poisson(&x).unwrap();
        let json = serde_json::to_value(fit.report()).unwrap();
        assert_eq!(json["coefficients"][0]["name"], "(intercept)");
        assert_eq!(json["converged"], true);
    }
}
