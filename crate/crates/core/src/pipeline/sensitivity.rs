use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{smr_setup, smr_excess_by_year, AnalysisSettings, Baseline, Inputs, SelectionBatch};
use crate::datamodel::{MonthIndex, MonthRange};
use crate::error::{Error, Result};
use crate::uncertainty::Selection;

pub const MIN_BASELINE_YEARS: u32 = 4;
pub const MAX_BASELINE_YEARS: u32 = 10;

/// Cumulative excess under one baseline length. A failed fit keeps its
/// error message and leaves the estimates empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub baseline_years: u32,
    pub fit_window: String,
    pub excess_mean: Option<f64>,
    pub excess_lo: Option<f64>,
    pub excess_hi: Option<f64>,
    pub expected_mean: Option<f64>,
    pub dispersion: Option<f64>,
    pub smr_lr_excess: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub projection_window: String,
    pub rows: Vec<SensitivityRow>,
}

/// Fit window of `years` whole years ending just before `projection`.
pub fn baseline_window(projection: &MonthRange, years: u32) -> Result<MonthRange> {
    let end = projection.start().offset(-1);
    let start = MonthIndex::from_ordinal(end.ordinal() - 12 * years as i64 + 1);
    MonthRange::new(start, end)
}

struct RowEstimate {
    excess: (f64, f64, f64),
    expected: f64,
    dispersion: f64,
    smr: f64,
}

fn evaluate(inputs: &Inputs, settings: &AnalysisSettings, window: MonthRange) -> Result<RowEstimate> {
    let projection = settings.projection_window;
    let baseline = Baseline::fit(inputs, window, settings.samples, settings.seed)?;
    let design = baseline.design(inputs, projection)?;
    let mut batch = SelectionBatch::new(&design);
    let id = batch.push(&Selection::months(projection.to_string(), projection));
    let e = batch.evaluate(&baseline.samples)?.estimate(id)?;
    let (std, series, trend) = smr_setup(inputs, settings, &window)?;
    let smr = smr_excess_by_year(&series, &trend, &std, &projection.whole_years())
        .iter()
        .map(|(_, v)| v)
        .sum();
    Ok(RowEstimate {
        excess: (e.excess_mean, e.excess_ci.0, e.excess_ci.1),
        expected: e.expected_mean,
        dispersion: baseline.model.dispersion(),
        smr,
    })
}

/// Refits the baseline for each length in `years` and reports the
/// cumulative excess over the projection window, shortest baseline first.
pub fn run_sensitivity(inputs: &Inputs, settings: &AnalysisSettings, years: &[u32]) -> Result<SensitivityReport> {
    if years.is_empty() {
        return Err(Error::Usage("no baseline lengths given".into()));
    }
    if let Some(bad) = years
        .iter()
        .find(|y| !(MIN_BASELINE_YEARS..=MAX_BASELINE_YEARS).contains(*y))
    {
        return Err(Error::Usage(format!(
            "baseline length {bad} outside {MIN_BASELINE_YEARS}..={MAX_BASELINE_YEARS}"
        )));
    }
    let mut lengths = years.to_vec();
    lengths.sort_unstable();
    lengths.dedup();
    let windows = lengths
        .iter()
        .map(|&y| baseline_window(&settings.projection_window, y))
        .collect::<Result<Vec<_>>>()?;
    let rows = lengths
        .par_iter()
        .zip(windows.par_iter())
        .map(|(&y, &window)| {
            let mut s = settings.clone();
            s.fit_window = window;
            let base = SensitivityRow {
                baseline_years: y,
                fit_window: window.to_string(),
                excess_mean: None,
                excess_lo: None,
                excess_hi: None,
                expected_mean: None,
                dispersion: None,
                smr_lr_excess: None,
                error: None,
            };
            match s.validate().and_then(|_| evaluate(inputs, &s, window)) {
                Ok(r) => SensitivityRow {
                    excess_mean: Some(r.excess.0),
                    excess_lo: Some(r.excess.1),
                    excess_hi: Some(r.excess.2),
                    expected_mean: Some(r.expected),
                    dispersion: Some(r.dispersion),
                    smr_lr_excess: Some(r.smr),
                    ..base
                },
                Err(e) => {
                    warn!("baseline of {y} years failed: {e}");
                    SensitivityRow {
                        error: Some(e.to_string()),
                        ..base
                    }
                }
            }
        })
        .collect();
    Ok(SensitivityReport {
        projection_window: settings.projection_window.to_string(),
        rows,
    })
}
