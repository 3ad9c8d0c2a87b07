//! Synthetic panels drawn from a known coefficient vector, plus a direct
//! summation oracle for expected deaths.

use std::f64::consts::PI;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::datamodel::{
    date_bounds, enumerate_strata, CountPanel, CovidBand, CovidRecord, MonthRange, PopulationPanel,
    QuarterIndex, QuarterRange, Sex, StratumKey, STRATUM_COUNT,
};
use crate::design::{encode_row, Block, DesignSpec, COLUMN_COUNT};
use crate::error::{Error, Result};
use crate::uncertainty::Selection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DispersionMode {
    Poisson,
    /// Gamma-Poisson mixture with variance `phi * mu`; `phi > 1`.
    Inflated(f64),
}

/// Growth of every stratum's population from a base quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTrajectory {
    pub base: Vec<f64>,
    pub base_quarter: QuarterIndex,
    pub growth_per_quarter: f64,
    /// From `from` on, strata younger than `under_age` grow at `growth_per_quarter`.
    pub slowdown: Option<PopulationBreak>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationBreak {
    pub from: QuarterIndex,
    pub under_age: u32,
    pub growth_per_quarter: f64,
}

impl PopulationTrajectory {
    pub fn size(&self, stratum: StratumKey, quarter: QuarterIndex) -> f64 {
        let base = self.base[stratum.index()];
        let elapsed = (quarter.ordinal() - self.base_quarter.ordinal()) as f64;
        match self.slowdown {
            Some(b) if stratum.age_group() < b.under_age && quarter > b.from => {
                let before = (b.from.ordinal() - self.base_quarter.ordinal()) as f64;
                let after = (quarter.ordinal() - b.from.ordinal()) as f64;
                base * (1.0 + self.growth_per_quarter).powf(before) * (1.0 + b.growth_per_quarter).powf(after)
            }
            _ => base * (1.0 + self.growth_per_quarter).powf(elapsed),
        }
    }

    pub fn panel(&self, quarters: QuarterRange) -> Result<PopulationPanel> {
        PopulationPanel::from_fn(quarters, |s, q| self.size(s, q))
            .map_err(|e| Error::Parameter(format!("population trajectory: {e}")))
    }
}

/// Known model from which synthetic deaths are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTruth {
    pub beta: Vec<f64>,
    /// Encoding the coefficients refer to (time origin and reference levels).
    pub spec: DesignSpec,
    pub dispersion: DispersionMode,
    pub population: PopulationTrajectory,
    /// Multiplicative effect on expected deaths within a month range.
    pub shock: Option<(MonthRange, f64)>,
    pub seed: u64,
}

/// Annual log death rate by single-year age, a rough Gompertz shape.
fn log_annual_rate(age: u32) -> f64 {
    match age {
        0 => 4.5e-3f64.ln(),
        1..=14 => 1.5e-4f64.ln(),
        15..=94 => 1e-3f64.ln() + 0.085 * (age as f64 - 40.0),
        _ => 1e-3f64.ln() + 0.085 * 55.0 + 0.5,
    }
    .max(2e-4f64.ln())
}

fn base_population(stratum: StratumKey) -> f64 {
    let age = stratum.age_group() as f64;
    let female = stratum.sex() == Sex::Female;
    match stratum.age_group() {
        0..=59 => 32_000.0,
        60..=94 => 32_000.0 * (-0.045 * (age - 60.0)).exp() * if female { 1.0 + 0.01 * (age - 60.0) } else { 1.0 },
        _ => if female { 3_600.0 } else { 1_500.0 },
    }
}

impl GeneratorTruth {
    /// A plausible national-scale mortality structure (about 35 000 deaths a
    /// year) with fit origin January 2014 and default reference levels.
    pub fn reference(seed: u64) -> Self {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).expect("valid years"));
        let mut beta = vec![0.0; COLUMN_COUNT];
        let per_day = (365.25f64).ln();
        beta[Block::Intercept.columns().start] = log_annual_rate(0) - per_day;
        beta[Block::Time.columns().start] = -0.001;
        for (k, c) in Block::Age.columns().enumerate() {
            beta[c] = log_annual_rate(k as u32 + 1) - log_annual_rate(0);
        }
        beta[Block::Sex.columns().start] = -0.35;
        // winter peak in July, January as reference
        let season = |month: u32| (2.0 * PI * (month as f64 - 7.0) / 12.0).cos() + 1.0;
        for (k, c) in Block::Month.columns().enumerate() {
            beta[c] = 0.04 * season(k as u32 + 2);
        }
        for (k, c) in Block::BandTime.columns().enumerate() {
            beta[c] = 0.0004 * ((k as f64) - 3.0) / 3.0;
        }
        for (k, c) in Block::BandSex.columns().enumerate() {
            beta[c] = 0.03 * (k as f64 + 1.0);
        }
        for (c, col) in Block::BandMonth.columns().enumerate() {
            let band = c / 11 + 1;
            let month = (c % 11) as u32 + 2;
            beta[col] = 0.006 * band as f64 * season(month);
        }
        Self {
            beta,
            spec,
            dispersion: DispersionMode::Poisson,
            population: PopulationTrajectory {
                base: enumerate_strata().into_iter().map(base_population).collect(),
                base_quarter: QuarterIndex::new(2014, 1).expect("valid quarter"),
                growth_per_quarter: 0.004,
                slowdown: None,
            },
            shock: None,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dispersion(mut self, mode: DispersionMode) -> Self {
        self.dispersion = mode;
        self
    }

    /// Expected deaths of one cell under the truth.
    pub fn cell_mean(&self, pop: &PopulationPanel, stratum: StratumKey, month: crate::datamodel::MonthIndex) -> Result<f64> {
        let row = encode_row(stratum, month, &self.spec);
        let eta: f64 = row.iter().zip(&self.beta).map(|(x, b)| x * b).sum();
        let exposure = pop.monthly_population(stratum, month)? * month.days_in_month() as f64;
        let shock = match self.shock {
            Some((range, factor)) if range.contains(month) => factor,
            _ => 1.0,
        };
        Ok(eta.exp() * exposure * shock)
    }
}

fn draw_count(mean: f64, mode: DispersionMode, rng: &mut ChaCha8Rng) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) || mean > 1e12 {
        return Err(Error::Parameter(format!("cell mean {mean} out of range")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let lambda = match mode {
        DispersionMode::Poisson => mean,
        DispersionMode::Inflated(phi) => {
            if !(phi > 1.0) {
                return Err(Error::Parameter(format!("inflated dispersion {phi} must exceed 1")));
            }
            let gamma = Gamma::new(mean / (phi - 1.0), phi - 1.0)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            gamma.sample(rng)
        }
    };
    if lambda <= 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(poisson.sample(rng) as u64)
}

/// Draws deaths for every cell of `months` and the population they refer to.
///
/// Each cell uses its own stream of a generator keyed by `truth.seed`.
pub fn generate_panel(truth: &GeneratorTruth, months: MonthRange) -> Result<(CountPanel, PopulationPanel)> {
    if truth.beta.len() != COLUMN_COUNT || truth.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Parameter("truth coefficients must be 200 finite values".into()));
    }
    if truth.population.base.len() != STRATUM_COUNT {
        return Err(Error::Parameter("population trajectory needs 192 base sizes".into()));
    }
    let pop = truth.population.panel(months.quarters())?;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let mut counts = CountPanel::zeros(months);
    for s in 0..STRATUM_COUNT {
        let stratum = StratumKey::from_index(s);
        for (m, month) in months.iter().enumerate() {
            rng.set_stream((s * months.len() + m) as u64);
            rng.set_word_pos(0);
            let mean = truth.cell_mean(&pop, stratum, month)?;
            counts.set(stratum, month, draw_count(mean, truth.dispersion, &mut rng)?);
        }
    }
    Ok((counts, pop))
}

/// Direct sum of `exp(x . beta + offset)` over the cells of `months` inside
/// `selection`. Uses dense row encodings only.
pub fn brute_force_expected(
    beta: &[f64],
    spec: &DesignSpec,
    pop: &PopulationPanel,
    months: MonthRange,
    selection: &Selection,
) -> Result<f64> {
    let mut total = 0.0;
    for stratum in enumerate_strata() {
        for month in months.iter() {
            if !selection.contains(stratum, month) {
                continue;
            }
            let row = encode_row(stratum, month, spec);
            let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            let offset = pop.monthly_population(stratum, month)?.ln() + (month.days_in_month() as f64).ln();
            total += (eta + offset).exp();
        }
    }
    Ok(total)
}

/// Synthetic attributed-Covid deaths: a Poisson count per (band, sex) on the
/// 15th of each month, published as band-only and sex-only records so the
/// two marginals agree.
pub fn generate_covid(months: MonthRange, monthly_mean: f64, seed: u64) -> Result<Vec<CovidRecord>> {
    let (first, last) = date_bounds(&months);
    let weights = [0.05, 0.1, 0.25, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, month) in months.iter().enumerate() {
        let date = NaiveDate::from_ymd_opt(month.year(), month.month(), 15).expect("valid day");
        if date < first || date > last {
            continue;
        }
        rng.set_stream(i as u64);
        let mut band_totals = [0u64; 4];
        let mut sex_totals = [0u64; 2];
        for (b, w) in weights.iter().enumerate() {
            for (s, sw) in [0.55, 0.45].iter().enumerate() {
                let c = draw_count(monthly_mean * w * sw, DispersionMode::Poisson, &mut rng)?;
                band_totals[b] += c;
                sex_totals[s] += c;
            }
        }
        for (b, &c) in band_totals.iter().enumerate() {
            out.push(CovidRecord { date, band: Some(CovidBand::ALL[b]), sex: None, count: c });
        }
        for (s, &c) in sex_totals.iter().enumerate() {
            out.push(CovidRecord { date, band: None, sex: Some(Sex::ALL[s]), count: c });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::MonthIndex;

    fn flat_truth(intercept: f64, population: f64) -> GeneratorTruth {
        let mut truth = GeneratorTruth::reference(1);
        truth.beta = vec![0.0; COLUMN_COUNT];
        truth.beta[0] = intercept;
        truth.population.base = vec![population; STRATUM_COUNT];
        truth.population.growth_per_quarter = 0.0;
        truth
    }

    #[test]
    fn intercept_only_cell_mean() {
        let truth = flat_truth(-6.0, 1e3);
        let months = MonthRange::years(2014, 2014).unwrap();
        let pop = truth.population.panel(months.quarters()).unwrap();
        let s = StratumKey::new(Sex::Male, 30).unwrap();
        let mean = truth.cell_mean(&pop, s, MonthIndex::new(2014, 4).unwrap()).unwrap();
        assert!((mean - 1e3 * 30.0 * (-6.0f64).exp()).abs() < 1e-9);
        assert!((mean - 74.36).abs() < 0.01);
    }

    #[test]
    fn zero_population_is_parameter_error() {
        let truth = flat_truth(-6.0, 0.0);
        let months = MonthRange::years(2014, 2014).unwrap();
        assert!(matches!(generate_panel(&truth, months), Err(Error::Parameter(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let truth = GeneratorTruth::reference(11);
        let months = MonthRange::years(2018, 2018).unwrap();
        let a = generate_panel(&truth, months).unwrap();
        let b = generate_panel(&truth, months).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_panel(&truth.clone().with_seed(12), months).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn reference_truth_has_national_scale() {
        let truth = GeneratorTruth::reference(3);
        let months = MonthRange::years(2019, 2019).unwrap();
        let pop = truth.population.panel(months.quarters()).unwrap();
        let total = brute_force_expected(&truth.beta, &truth.spec, &pop, months, &Selection::all("all")).unwrap();
        assert!((25_000.0..50_000.0).contains(&total), "{total}");
    }

    #[test]
    fn oracle_edge_cases() {
        let truth = GeneratorTruth::reference(3);
        let months = MonthRange::years(2019, 2019).unwrap();
        let pop = truth.population.panel(months.quarters()).unwrap();
        let empty = Selection::year(2030);
        assert_eq!(brute_force_expected(&truth.beta, &truth.spec, &pop, months, &empty).unwrap(), 0.0);
        let s = StratumKey::new(Sex::Female, 88).unwrap();
        let m = MonthIndex::new(2019, 6).unwrap();
        let single = Selection::month(m).with_ages(88..=88).with_sex(Sex::Female);
        let got = brute_force_expected(&truth.beta, &truth.spec, &pop, months, &single).unwrap();
        let want = truth.cell_mean(&pop, s, m).unwrap();
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn population_break_slows_young_groups() {
        let mut truth = GeneratorTruth::reference(1);
        truth.population.slowdown = Some(PopulationBreak {
            from: QuarterIndex::new(2020, 1).unwrap(),
            under_age: 65,
            growth_per_quarter: 0.0,
        });
        let young = StratumKey::new(Sex::Male, 30).unwrap();
        let old = StratumKey::new(Sex::Male, 70).unwrap();
        let q20 = QuarterIndex::new(2020, 1).unwrap();
        let q22 = QuarterIndex::new(2022, 1).unwrap();
        let p = &truth.population;
        assert_eq!(p.size(young, q20), p.size(young, q22));
        assert!(p.size(old, q22) > p.size(old, q20));
    }

    #[test]
    fn covid_marginals_agree() {
        let months = MonthRange::years(2022, 2022).unwrap();
        let recs = generate_covid(months, 100.0, 5).unwrap();
        let (first, last) = date_bounds(&months);
        let series = crate::datamodel::aggregate_covid_daily(&recs, first, last).unwrap();
        assert!(series.inconsistent_months().is_empty());
        assert!(series.total_over(&months).unwrap() > 0);
    }
}
