//! Monte-Carlo propagation of coefficient uncertainty to aggregated expected
//! deaths and excess deaths.
//!
//! Coefficient vectors are drawn from the normal approximation to the
//! sampling distribution of the fitted coefficients. Each draw gives expected
//! counts for every cell; summing those over a selection of cells and taking
//! empirical percentiles across draws gives the interval for that selection.
//! All selections share one sample set, so point estimates decompose exactly.

use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{MonthIndex, MonthRange, Sex, StratumKey};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::FittedGlm;
use crate::linalg::PivotedCholesky;

pub const DEFAULT_SAMPLES: usize = 5000;
pub const CI_LEVEL: f64 = 0.95;

/// Indefiniteness tolerated in the covariance, relative to its largest
/// diagonal entry.
const COVARIANCE_JITTER: f64 = 1e-10;

/// Coefficient draws, one row of length `p` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSamples {
    p: usize,
    draws: Vec<f64>,
}

impl CoefficientSamples {
    pub fn len(&self) -> usize {
        self.draws.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn draw(&self, j: usize) -> &[f64] {
        &self.draws[j * self.p..(j + 1) * self.p]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.p)
    }

    /// `M` copies of the same vector.
    pub fn repeated(beta: &[f64], m: usize) -> Self {
        Self {
            p: beta.len(),
            draws: beta.repeat(m),
        }
    }
}

/// Draws `m` vectors from `N(beta_hat, Sigma)`.
///
/// Draw `j` uses stream `j` of a ChaCha20 generator keyed by `seed`, so the
/// result does not depend on how the work is scheduled across threads.
pub fn sample_coefficients(model: &FittedGlm, m: usize, seed: u64) -> Result<CoefficientSamples> {
    if m == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let beta = model.beta();
    let p = beta.len();
    let factor = PivotedCholesky::new(model.covariance(), COVARIANCE_JITTER);
    if factor.relative_residual_min() < -COVARIANCE_JITTER {
        return Err(Error::Covariance(format!(
            "residual diagonal {:e} after rank {} exceeds tolerance",
            factor.relative_residual_min(),
            factor.rank()
        )));
    }
    let root = factor.factor();
    let rank = root.ncols();
    let mut draws = vec![0.0; m * p];
    draws.par_chunks_mut(p).enumerate().for_each(|(j, out)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let z: Vec<f64> = (0..rank).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = beta[i];
            for (k, zk) in z.iter().enumerate() {
                v += root[(i, k)] * zk;
            }
            *o = v;
        }
    });
    Ok(CoefficientSamples { p, draws })
}

/// Predicate over (stratum, month) cells. Unset fields match everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub label: String,
    pub months: Option<MonthRange>,
    pub ages: Option<RangeInclusive<u32>>,
    pub sex: Option<Sex>,
}

impl Selection {
    pub fn all(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            months: None,
            ages: None,
            sex: None,
        }
    }

    pub fn months(label: impl Into<String>, months: MonthRange) -> Self {
        Self {
            months: Some(months),
            ..Self::all(label)
        }
    }

    pub fn year(year: i32) -> Self {
        Self::months(year.to_string(), MonthRange::years(year, year).expect("valid year"))
    }

    pub fn month(month: MonthIndex) -> Self {
        Self::months(month.to_string(), MonthRange::new(month, month).expect("single month"))
    }

    pub fn with_ages(mut self, ages: RangeInclusive<u32>) -> Self {
        self.ages = Some(ages);
        self
    }

    pub fn with_sex(mut self, sex: Sex) -> Self {
        self.sex = Some(sex);
        self
    }

    pub fn contains(&self, stratum: StratumKey, month: MonthIndex) -> bool {
        self.months.is_none_or(|r| r.contains(month))
            && self.ages.as_ref().is_none_or(|a| a.contains(&stratum.age_group()))
            && self.sex.is_none_or(|s| s == stratum.sex())
    }

    /// Unit-weight rows of `design` inside the selection.
    pub fn rows(&self, design: &DesignMatrix) -> Vec<usize> {
        design.rows_where(|s, m| self.contains(s, m))
    }
}

/// `mu_S^(j)` for every draw `j`.
pub fn aggregate_expected(samples: &CoefficientSamples, design: &DesignMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    let weighted: Vec<(usize, f64)> = rows.iter().map(|&r| (r, 1.0)).collect();
    Ok(aggregate_weighted(samples, design, &[weighted])?.pop().expect("one selection"))
}

/// Weighted sums `sum_r w_r mu_r^(j)` for several selections at once.
///
/// Returns one vector of length `M` per selection. Expected counts are
/// evaluated once per draw and shared by all selections.
pub fn aggregate_weighted(
    samples: &CoefficientSamples,
    design: &DesignMatrix,
    selections: &[Vec<(usize, f64)>],
) -> Result<Vec<Vec<f64>>> {
    if samples.dim() != design.ncols() {
        return Err(Error::Parameter(format!(
            "samples have dimension {}, design has {} columns",
            samples.dim(),
            design.ncols()
        )));
    }
    let mut used = vec![false; design.nrows()];
    for sel in selections {
        for &(r, _) in sel {
            used[r] = true;
        }
    }
    let offset = design.offset();
    let per_draw: Vec<Vec<f64>> = (0..samples.len())
        .into_par_iter()
        .map(|j| {
            let beta = samples.draw(j);
            let mut mu = vec![0.0; design.nrows()];
            for (r, m) in mu.iter_mut().enumerate() {
                if used[r] {
                    *m = (design.row_dot(r, beta) + offset[r]).exp();
                }
            }
            selections
                .iter()
                .map(|sel| sel.iter().map(|&(r, w)| w * mu[r]).sum::<f64>())
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(samples.len()); selections.len()];
    for draw in per_draw {
        for (s, v) in draw.into_iter().enumerate() {
            out[s].push(v);
        }
    }
    if let Some(bad) = out.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Overflow(format!("expected deaths for selection {bad} not finite")));
    }
    Ok(out)
}

/// Empirical quantile with linear interpolation between order statistics,
/// placing the k-th smallest of n values at probability (k - 0.5) / n.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 * q + 0.5).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= n {
        return sorted[n - 1];
    }
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// Central interval holding `level` of the values.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Parameter(format!(
            "percentile interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level {level} not in (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&sorted, tail), quantile(&sorted, 1.0 - tail)))
}

/// Actual deaths against the sampled expected deaths of one selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcessEstimate {
    pub actual: u64,
    pub expected_mean: f64,
    pub expected_ci: (f64, f64),
    pub excess_mean: f64,
    pub excess_ci: (f64, f64),
    pub sample_count: usize,
}

impl ExcessEstimate {
    /// Excess as a percentage of mean expected deaths, with its interval.
    pub fn percent_of_expected(&self) -> (f64, f64, f64) {
        let scale = 100.0 / self.expected_mean;
        (
            self.excess_mean * scale,
            self.excess_ci.0 * scale,
            self.excess_ci.1 * scale,
        )
    }

    /// Excess per million people of a reference population.
    pub fn per_million(&self, population: f64) -> (f64, f64, f64) {
        let scale = 1e6 / population;
        (
            self.excess_mean * scale,
            self.excess_ci.0 * scale,
            self.excess_ci.1 * scale,
        )
    }
}

pub fn excess_estimate(actual: u64, expected_samples: &[f64]) -> Result<ExcessEstimate> {
    let (lo, hi) = percentile_interval(expected_samples, CI_LEVEL)?;
    let m = expected_samples.len();
    let expected_mean = expected_samples.iter().sum::<f64>() / m as f64;
    let d = actual as f64;
    Ok(ExcessEstimate {
        actual,
        expected_mean,
        expected_ci: (lo, hi),
        excess_mean: d - expected_mean,
        excess_ci: (d - hi, d - lo),
        sample_count: m,
    })
}

/// Flat export record of one estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcessRecord {
    pub selection: String,
    pub actual: u64,
    pub expected_mean: f64,
    pub expected_lo: f64,
    pub expected_hi: f64,
    pub excess_mean: f64,
    pub excess_lo: f64,
    pub excess_hi: f64,
}

impl ExcessRecord {
    pub fn new(selection: impl Into<String>, e: &ExcessEstimate) -> Self {
        Self {
            selection: selection.into(),
            actual: e.actual,
            expected_mean: e.expected_mean,
            expected_lo: e.expected_ci.0,
            expected_hi: e.expected_ci.1,
            excess_mean: e.excess_mean,
            excess_lo: e.excess_ci.0,
            excess_hi: e.excess_ci.1,
        }
    }
}
