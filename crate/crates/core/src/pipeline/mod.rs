//! End-to-end analysis: fit, project, disaggregate, benchmark and export.

mod covid;
mod diagnostics;
mod output;
mod sensitivity;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

pub use covid::{covid_comparison, covid_share, CovidComparison, CovidSubset, PeriodEstimate};
pub use diagnostics::{population_trend_diagnostic, QuarterGap, TrendSummary};
pub use output::{write_json, write_records, OutputFormat};
pub use sensitivity::{baseline_window, run_sensitivity, SensitivityReport, SensitivityRow};

use crate::datamodel::{
    aggregate_covid_daily, date_bounds, parse_covid, parse_deaths, parse_population, CountPanel,
    CovidBand, CovidDeathSeries, MonthIndex, MonthRange, PopulationMapping, PopulationPanel,
    QuarterIndex, Sex,
};
use crate::design::{build_design, DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::glm::{fit_quasi_poisson, FittedGlm};
use crate::smr::{fit_rate_trend, stratum_weights, RateTrend, StandardPopulation, StandardizedRateSeries};
use crate::uncertainty::{
    aggregate_weighted, excess_estimate, percentile_interval, sample_coefficients,
    CoefficientSamples, ExcessEstimate, Selection, CI_LEVEL, DEFAULT_SAMPLES,
};

/// Model and sampling settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub fit_window: MonthRange,
    pub projection_window: MonthRange,
    pub samples: usize,
    pub seed: u64,
    pub std_quarter: QuarterIndex,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            fit_window: MonthRange::years(2014, 2019).expect("valid"),
            projection_window: MonthRange::years(2020, 2023).expect("valid"),
            samples: DEFAULT_SAMPLES,
            seed: 1,
            std_quarter: QuarterIndex::new(2021, 1).expect("valid"),
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if self.fit_window.end() >= self.projection_window.start() {
            return Err(Error::Usage(format!(
                "fit window {} must end before projection window {}",
                self.fit_window, self.projection_window
            )));
        }
        if self.samples < 2 {
            return Err(Error::Usage("at least 2 samples are needed for an interval".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub deaths: PathBuf,
    pub population: PathBuf,
    pub covid: Option<PathBuf>,
    pub settings: AnalysisSettings,
    pub population_mapping: PopulationMapping,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub dump_design: bool,
}

/// Parsed inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub deaths: CountPanel,
    pub population: PopulationPanel,
    pub covid: Option<CovidDeathSeries>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

impl Inputs {
    /// Reads the input files. Covid records are aggregated over the
    /// projection window.
    pub fn load(config: &AnalysisConfig) -> Result<Self> {
        let deaths = parse_deaths(open(&config.deaths)?)?;
        let population = parse_population(open(&config.population)?)?.with_mapping(config.population_mapping);
        let covid = match &config.covid {
            Some(path) => {
                let records = parse_covid(open(path)?)?;
                let (first, last) = date_bounds(&config.settings.projection_window);
                Some(aggregate_covid_daily(&records, first, last)?)
            }
            None => None,
        };
        Ok(Self { deaths, population, covid })
    }

    fn check_coverage(&self, window: &MonthRange) -> Result<()> {
        if !self.deaths.coverage().contains_range(window) {
            return Err(Error::Coverage(format!(
                "deaths cover {}, analysis needs {window}",
                self.deaths.coverage()
            )));
        }
        if !self.population.month_coverage().contains_range(window) {
            return Err(Error::Coverage(format!(
                "population covers {}, analysis needs {window}",
                self.population.coverage()
            )));
        }
        Ok(())
    }

    /// Months covered by both deaths and population.
    fn common_months(&self) -> Result<MonthRange> {
        let d = self.deaths.coverage();
        let p = self.population.month_coverage();
        MonthRange::new(d.start().max(p.start()), d.end().min(p.end()))
            .map_err(|_| Error::Coverage("deaths and population do not overlap".into()))
    }
}

/// Sampling seed of a baseline: the master seed mixed with the first fitted month.
pub fn baseline_seed(master: u64, fit_window: &MonthRange) -> u64 {
    let mut z = master ^ (fit_window.start().ordinal() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fitted baseline model with its coefficient samples.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub spec: DesignSpec,
    pub model: FittedGlm,
    pub samples: CoefficientSamples,
}

impl Baseline {
    pub fn fit(inputs: &Inputs, fit_window: MonthRange, samples: usize, master_seed: u64) -> Result<Self> {
        inputs.check_coverage(&fit_window)?;
        let spec = DesignSpec::new(fit_window);
        let design = build_design(&inputs.deaths, &inputs.population, &spec)?;
        let model = fit_quasi_poisson(&design)?;
        if !model.converged() {
            return Err(Error::NonConvergence {
                iterations: model.iterations(),
            });
        }
        info!(
            "fitted {fit_window}: deviance {:.1}, dispersion {:.3}, {} iterations",
            model.deviance(),
            model.dispersion(),
            model.iterations()
        );
        let samples = sample_coefficients(&model, samples, baseline_seed(master_seed, &fit_window))?;
        Ok(Self { spec, model, samples })
    }

    /// Design rows for `window` under this baseline's encoding.
    pub fn design(&self, inputs: &Inputs, window: MonthRange) -> Result<DesignMatrix> {
        build_design(&inputs.deaths, &inputs.population, &self.spec.with_window(window))
    }
}

/// Unit-weight selections evaluated together on one design.
struct SelectionBatch<'a> {
    design: &'a DesignMatrix,
    rows: Vec<Vec<(usize, f64)>>,
    actual: Vec<u64>,
}

impl<'a> SelectionBatch<'a> {
    fn new(design: &'a DesignMatrix) -> Self {
        Self {
            design,
            rows: Vec::new(),
            actual: Vec::new(),
        }
    }

    fn push(&mut self, selection: &Selection) -> usize {
        let rows = selection.rows(self.design);
        let y = self.design.response();
        self.actual.push(rows.iter().map(|&r| y[r] as u64).sum());
        self.rows.push(rows.into_iter().map(|r| (r, 1.0)).collect());
        self.rows.len() - 1
    }

    fn push_weighted(&mut self, rows: Vec<(usize, f64)>) -> usize {
        self.actual.push(0);
        self.rows.push(rows);
        self.rows.len() - 1
    }

    fn evaluate(self, samples: &CoefficientSamples) -> Result<BatchResult> {
        let draws = aggregate_weighted(samples, self.design, &self.rows)?;
        Ok(BatchResult {
            draws,
            actual: self.actual,
        })
    }
}

struct BatchResult {
    draws: Vec<Vec<f64>>,
    actual: Vec<u64>,
}

impl BatchResult {
    fn estimate(&self, id: usize) -> Result<ExcessEstimate> {
        excess_estimate(self.actual[id], &self.draws[id])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthlyFitRecord {
    pub month: String,
    pub actual: u64,
    pub expected_mean: f64,
    pub expected_lo: f64,
    pub expected_hi: f64,
    pub in_fit_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRecord {
    pub year: i32,
    pub observed_per_1000: f64,
    pub smr_lr_per_1000: f64,
    pub qpr_mean_per_1000: f64,
    pub qpr_lo_per_1000: f64,
    pub qpr_hi_per_1000: f64,
}

/// One period (month, year or the whole projection) or subgroup thereof.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRecord {
    pub period: String,
    pub group: String,
    pub actual: u64,
    pub expected_mean: f64,
    pub expected_lo: f64,
    pub expected_hi: f64,
    pub excess_mean: f64,
    pub excess_lo: f64,
    pub excess_hi: f64,
    pub percent_mean: f64,
    pub percent_lo: f64,
    pub percent_hi: f64,
    pub smr_lr_excess: Option<f64>,
    pub covid_deaths: Option<u64>,
    pub covid_share: Option<f64>,
    pub covid_inside_ci: Option<bool>,
}

impl PeriodRecord {
    fn new(period: impl Into<String>, group: impl Into<String>, e: &ExcessEstimate) -> Self {
        let (pm, pl, ph) = e.percent_of_expected();
        Self {
            period: period.into(),
            group: group.into(),
            actual: e.actual,
            expected_mean: e.expected_mean,
            expected_lo: e.expected_ci.0,
            expected_hi: e.expected_ci.1,
            excess_mean: e.excess_mean,
            excess_lo: e.excess_ci.0,
            excess_hi: e.excess_ci.1,
            percent_mean: pm,
            percent_lo: pl,
            percent_hi: ph,
            smr_lr_excess: None,
            covid_deaths: None,
            covid_share: None,
            covid_inside_ci: None,
        }
    }

    fn attach_covid(&mut self, c: &CovidComparison) {
        self.covid_deaths = Some(c.covid_deaths);
        self.covid_share = c.covid_share;
        self.covid_inside_ci = Some(c.covid_inside_ci);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub fit_window: String,
    pub projection_window: String,
    pub samples: usize,
    pub seed: u64,
    pub standard_quarter: String,
    pub standard_population_total: f64,
    pub dispersion: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub excess_mean: f64,
    pub excess_lo: f64,
    pub excess_hi: f64,
    pub expected_mean: f64,
    pub per_million_mean: f64,
    pub per_million_lo: f64,
    pub per_million_hi: f64,
    pub percent_mean: f64,
    pub percent_lo: f64,
    pub percent_hi: f64,
    pub smr_lr_excess: f64,
}

/// Everything `analyse` writes.
#[derive(Debug, Clone)]
pub struct AnalysisResults {
    pub baseline: Baseline,
    pub trend: RateTrend,
    pub monthly_fit: Vec<MonthlyFitRecord>,
    pub rates: Vec<RateRecord>,
    pub monthly_excess: Vec<PeriodRecord>,
    pub yearly_excess: Vec<PeriodRecord>,
    pub cumulative: PeriodRecord,
    pub groups: Vec<PeriodRecord>,
    pub ten_year_bands: Vec<PeriodRecord>,
    pub summary: Summary,
}

/// Calendar years intersecting `window`, each clipped to it.
fn year_slices(window: &MonthRange) -> Vec<(i32, MonthRange)> {
    (window.start().year()..=window.end().year())
        .map(|y| {
            let start = window.start().max(MonthIndex::new(y, 1).expect("valid"));
            let end = window.end().min(MonthIndex::new(y, 12).expect("valid"));
            (y, MonthRange::new(start, end).expect("non-empty"))
        })
        .collect()
}

fn ten_year_bands() -> Vec<(String, std::ops::RangeInclusive<u32>)> {
    let mut bands: Vec<_> = (0..9).map(|d| (format!("{}-{}", d * 10, d * 10 + 9), d * 10..=d * 10 + 9)).collect();
    bands.push(("90+".into(), 90..=95));
    bands
}

fn smr_setup(inputs: &Inputs, settings: &AnalysisSettings, fit_window: &MonthRange) -> Result<(StandardPopulation, StandardizedRateSeries, RateTrend)> {
    let std = StandardPopulation::from_quarter(&inputs.population, settings.std_quarter)?;
    let common = inputs.common_months()?;
    let years = common.whole_years();
    let (Some(&first), Some(&last)) = (years.first(), years.last()) else {
        return Err(Error::Coverage("no complete calendar year of data".into()));
    };
    let mut series = StandardizedRateSeries::compute(&inputs.deaths, &inputs.population, &std, first..=last)?;
    let fit_years = fit_window.whole_years();
    let (Some(&fy0), Some(&fy1)) = (fit_years.first(), fit_years.last()) else {
        return Err(Error::Coverage(format!("fit window {fit_window} holds no whole year")));
    };
    let trend = fit_rate_trend(&series, fy0..=fy1)?;
    series.fitted = Some(trend);
    Ok((std, series, trend))
}

/// SMR-LR excess summed over the whole projection years.
pub(crate) fn smr_excess_by_year(
    series: &StandardizedRateSeries,
    trend: &RateTrend,
    std: &StandardPopulation,
    years: &[i32],
) -> Vec<(i32, f64)> {
    years
        .iter()
        .filter_map(|y| series.rates.get(y).map(|r| (*y, (r - trend.predict(*y)) * std.total())))
        .collect()
}

/// Runs the full analysis on parsed inputs.
pub fn analyse(inputs: &Inputs, settings: &AnalysisSettings) -> Result<AnalysisResults> {
    settings.validate()?;
    let projection = settings.projection_window;
    inputs.check_coverage(&projection)?;
    let baseline = Baseline::fit(inputs, settings.fit_window, settings.samples, settings.seed)?;
    let (std, series, trend) = smr_setup(inputs, settings, &settings.fit_window)?;

    // Figures 1 and 2: every month with both deaths and population.
    let common = inputs.common_months()?;
    let display = baseline.design(inputs, common)?;
    let mut batch = SelectionBatch::new(&display);
    let month_ids: Vec<(MonthIndex, usize)> = common.iter().map(|m| (m, batch.push(&Selection::month(m)))).collect();
    let mut rate_ids = Vec::new();
    for &year in series.rates.keys() {
        let weights = stratum_weights(&inputs.population, &std, year)?;
        let rows = display
            .rows_where(|_, m| m.year() == year)
            .into_iter()
            .map(|r| (r, weights[display.keys()[r].0.index()]))
            .collect();
        rate_ids.push((year, batch.push_weighted(rows)));
    }
    let shown = batch.evaluate(&baseline.samples)?;
    let monthly_fit = month_ids
        .iter()
        .map(|&(m, id)| {
            let e = shown.estimate(id)?;
            Ok(MonthlyFitRecord {
                month: m.to_string(),
                actual: e.actual,
                expected_mean: e.expected_mean,
                expected_lo: e.expected_ci.0,
                expected_hi: e.expected_ci.1,
                in_fit_window: settings.fit_window.contains(m),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rates = rate_ids
        .iter()
        .map(|&(year, id)| {
            let draws = &shown.draws[id];
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let (lo, hi) = percentile_interval(draws, CI_LEVEL)?;
            Ok(RateRecord {
                year,
                observed_per_1000: series.rates[&year] * 1000.0,
                smr_lr_per_1000: trend.predict(year) * 1000.0,
                qpr_mean_per_1000: mean * 1000.0,
                qpr_lo_per_1000: lo * 1000.0,
                qpr_hi_per_1000: hi * 1000.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Figures 3, 4 and S1: projection-window estimates from one sample set.
    let proj_design = baseline.design(inputs, projection)?;
    let mut batch = SelectionBatch::new(&proj_design);
    let cumulative_id = batch.push(&Selection::months(projection.to_string(), projection));
    let years = year_slices(&projection);
    let year_ids: Vec<usize> = years
        .iter()
        .map(|(y, r)| batch.push(&Selection::months(y.to_string(), *r)))
        .collect();
    let proj_month_ids: Vec<usize> = projection.iter().map(|m| batch.push(&Selection::month(m))).collect();
    let mut group_ids = Vec::new();
    let mut band_ids = Vec::new();
    for (y, r) in &years {
        for band in CovidBand::ALL {
            let id = batch.push(&Selection::months(y.to_string(), *r).with_ages(band.ages()));
            group_ids.push((*y, *r, CovidSubset::Band(band), band.label().to_string(), id));
        }
        for sex in Sex::ALL {
            let id = batch.push(&Selection::months(y.to_string(), *r).with_sex(sex));
            group_ids.push((*y, *r, CovidSubset::Sex(sex), sex.to_string(), id));
        }
        for (label, ages) in ten_year_bands() {
            let id = batch.push(&Selection::months(y.to_string(), *r).with_ages(ages));
            band_ids.push((*y, label, id));
        }
    }
    let projected = batch.evaluate(&baseline.samples)?;

    let whole_years: Vec<i32> = projection.whole_years();
    let smr_years = smr_excess_by_year(&series, &trend, &std, &whole_years);
    let smr_cumulative: f64 = smr_years.iter().map(|(_, e)| e).sum();

    let cumulative_est = projected.estimate(cumulative_id)?;
    let mut cumulative = PeriodRecord::new(projection.to_string(), "all", &cumulative_est);
    cumulative.smr_lr_excess = Some(smr_cumulative);

    let mut yearly_excess = Vec::new();
    let mut yearly_periods = Vec::new();
    for ((y, r), &id) in years.iter().zip(&year_ids) {
        let e = projected.estimate(id)?;
        let mut rec = PeriodRecord::new(y.to_string(), "all", &e);
        rec.smr_lr_excess = smr_years.iter().find(|(yy, _)| yy == y).map(|(_, v)| *v);
        yearly_excess.push(rec);
        yearly_periods.push(PeriodEstimate { label: y.to_string(), months: *r, subset: CovidSubset::All, estimate: e });
    }
    let mut monthly_excess = Vec::new();
    let mut monthly_periods = Vec::new();
    for (m, &id) in projection.iter().zip(&proj_month_ids) {
        let e = projected.estimate(id)?;
        monthly_excess.push(PeriodRecord::new(m.to_string(), "all", &e));
        monthly_periods.push(PeriodEstimate {
            label: m.to_string(),
            months: MonthRange::new(m, m)?,
            subset: CovidSubset::All,
            estimate: e,
        });
    }
    let mut groups = Vec::new();
    let mut group_periods = Vec::new();
    for (y, r, subset, label, id) in group_ids {
        let e = projected.estimate(id)?;
        let kind = match subset {
            CovidSubset::Sex(_) => "sex",
            _ => "age_band",
        };
        groups.push(PeriodRecord::new(y.to_string(), format!("{kind}:{label}"), &e));
        group_periods.push(PeriodEstimate { label: format!("{y} {label}"), months: r, subset, estimate: e });
    }
    let ten_year = band_ids
        .into_iter()
        .map(|(y, label, id)| Ok(PeriodRecord::new(y.to_string(), label, &projected.estimate(id)?)))
        .collect::<Result<Vec<_>>>()?;

    if let Some(covid) = &inputs.covid {
        for (recs, periods) in [
            (&mut yearly_excess, &yearly_periods),
            (&mut monthly_excess, &monthly_periods),
            (&mut groups, &group_periods),
        ] {
            for (rec, cmp) in recs.iter_mut().zip(covid_comparison(periods, covid)?) {
                rec.attach_covid(&cmp);
            }
        }
        let total = PeriodEstimate {
            label: projection.to_string(),
            months: projection,
            subset: CovidSubset::All,
            estimate: cumulative_est,
        };
        cumulative.attach_covid(&covid_comparison(&[total], covid)?[0]);
    }

    let (pmm, pml, pmh) = cumulative_est.per_million(std.total());
    let model = &baseline.model;
    let summary = Summary {
        fit_window: settings.fit_window.to_string(),
        projection_window: projection.to_string(),
        samples: settings.samples,
        seed: settings.seed,
        standard_quarter: std.reference_label().to_string(),
        standard_population_total: std.total(),
        dispersion: model.dispersion(),
        deviance: model.deviance(),
        iterations: model.iterations(),
        excess_mean: cumulative.excess_mean,
        excess_lo: cumulative.excess_lo,
        excess_hi: cumulative.excess_hi,
        expected_mean: cumulative.expected_mean,
        per_million_mean: pmm,
        per_million_lo: pml,
        per_million_hi: pmh,
        percent_mean: cumulative.percent_mean,
        percent_lo: cumulative.percent_lo,
        percent_hi: cumulative.percent_hi,
        smr_lr_excess: smr_cumulative,
    };

    Ok(AnalysisResults {
        baseline,
        trend,
        monthly_fit,
        rates,
        monthly_excess,
        yearly_excess,
        cumulative,
        groups,
        ten_year_bands: ten_year,
        summary,
    })
}

/// Writes one file per figure plus the summary and the fitted model.
pub fn write_results(results: &AnalysisResults, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_records(dir, "fig1_monthly_fit", format, &results.monthly_fit)?,
        write_records(dir, "fig2_standardised_rates", format, &results.rates)?,
        write_records(dir, "fig3_yearly_excess", format, &results.yearly_excess)?,
        write_records(dir, "fig3_monthly_excess", format, &results.monthly_excess)?,
        write_records(dir, "fig4_group_excess", format, &results.groups)?,
        write_records(dir, "figS1_ten_year_bands", format, &results.ten_year_bands)?,
        write_records(dir, "cumulative_excess", format, std::slice::from_ref(&results.cumulative))?,
        write_json(dir, "summary", &results.summary)?,
        write_json(dir, "model", &results.baseline.model.report())?,
    ])
}

pub fn run_analysis(config: &AnalysisConfig) -> Result<AnalysisResults> {
    let inputs = Inputs::load(config)?;
    let results = analyse(&inputs, &config.settings)?;
    write_results(&results, &config.out_dir, config.format)?;
    if config.dump_design {
        let design = results.baseline.design(&inputs, config.settings.fit_window)?;
        std::fs::create_dir_all(&config.out_dir)?;
        design.write_csv(File::create(config.out_dir.join("design_matrix.csv"))?)?;
    }
    Ok(results)
}
