//! Benchmark: directly standardised yearly mortality rate with a linear trend.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use log::warn;
use serde::Serialize;

use crate::datamodel::{
    enumerate_strata, CountPanel, MonthIndex, PopulationPanel, QuarterIndex, StratumKey,
    STRATUM_COUNT,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StandardPopulation {
    sizes: Vec<f64>,
    reference_label: String,
}

impl StandardPopulation {
    /// Takes the standard from one quarter of the population panel.
    pub fn from_quarter(pop: &PopulationPanel, quarter: QuarterIndex) -> Result<Self> {
        let sizes = enumerate_strata()
            .into_iter()
            .map(|s| {
                pop.get(s, quarter).ok_or_else(|| {
                    Error::Coverage(format!("population does not cover standard quarter {quarter}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sizes,
            reference_label: quarter.to_string(),
        })
    }

    pub fn from_sizes(sizes: Vec<f64>, reference_label: impl Into<String>) -> Result<Self> {
        if sizes.len() != STRATUM_COUNT {
            return Err(Error::Parameter(format!(
                "standard population needs {STRATUM_COUNT} strata, got {}",
                sizes.len()
            )));
        }
        if let Some(bad) = sizes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!("standard population size {bad} must be positive")));
        }
        Ok(Self {
            sizes,
            reference_label: reference_label.into(),
        })
    }

    pub fn size(&self, stratum: StratumKey) -> f64 {
        self.sizes[stratum.index()]
    }

    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }

    pub fn reference_label(&self) -> &str {
        &self.reference_label
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_sizes(
            self.sizes.iter().map(|v| v * factor).collect(),
            self.reference_label.clone(),
        )
    }
}

fn check_year(deaths: &CountPanel, pop: &PopulationPanel, year: i32) -> Result<()> {
    let jan = MonthIndex::new(year, 1)?;
    let dec = MonthIndex::new(year, 12)?;
    if !(deaths.coverage().contains(jan) && deaths.coverage().contains(dec)) {
        return Err(Error::Coverage(format!(
            "deaths cover {}, not all of {year}",
            deaths.coverage()
        )));
    }
    let pop_months = pop.month_coverage();
    if !(pop_months.contains(jan) && pop_months.contains(dec)) {
        return Err(Error::Coverage(format!(
            "population covers {}, not all four quarters of {year}",
            pop.coverage()
        )));
    }
    Ok(())
}

/// Weight of each stratum's deaths in the standardised rate of `year`:
/// `N_std,i / (mean population_i,Y * total standard)`.
pub fn stratum_weights(pop: &PopulationPanel, std: &StandardPopulation, year: i32) -> Result<Vec<f64>> {
    let total = std.total();
    enumerate_strata()
        .into_iter()
        .map(|s| Ok(std.size(s) / (pop.year_mean(s, year)? * total)))
        .collect()
}

/// Age- and sex-standardised death rate of `year`, deaths per person-year.
pub fn standardized_rate(
    deaths: &CountPanel,
    pop: &PopulationPanel,
    std: &StandardPopulation,
    year: i32,
) -> Result<f64> {
    check_year(deaths, pop, year)?;
    let weights = stratum_weights(pop, std, year)?;
    let mut yearly = vec![0u64; STRATUM_COUNT];
    for (s, m, c) in deaths.iter() {
        if m.year() == year {
            yearly[s.index()] += c;
        }
    }
    Ok(yearly.iter().zip(&weights).map(|(&d, w)| d as f64 * w).sum())
}

/// Ordinary least-squares line through (year, rate), stored around the mean year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTrend {
    pub slope: f64,
    pub center_year: f64,
    pub center_rate: f64,
    pub first_year: i32,
    pub last_year: i32,
}

impl RateTrend {
    pub fn predict(&self, year: i32) -> f64 {
        self.center_rate + self.slope * (year as f64 - self.center_year)
    }

    /// Rate at year 0, the conventional intercept.
    pub fn intercept(&self) -> f64 {
        self.center_rate - self.slope * self.center_year
    }

    pub fn covers(&self, year: i32) -> bool {
        (self.first_year..=self.last_year).contains(&year)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StandardizedRateSeries {
    pub rates: BTreeMap<i32, f64>,
    pub fitted: Option<RateTrend>,
}

impl StandardizedRateSeries {
    pub fn compute(
        deaths: &CountPanel,
        pop: &PopulationPanel,
        std: &StandardPopulation,
        years: RangeInclusive<i32>,
    ) -> Result<Self> {
        let rates = years
            .map(|y| Ok((y, standardized_rate(deaths, pop, std, y)?)))
            .collect::<Result<_>>()?;
        Ok(Self { rates, fitted: None })
    }
}

pub fn fit_rate_trend(series: &StandardizedRateSeries, fit_years: RangeInclusive<i32>) -> Result<RateTrend> {
    let points: Vec<(f64, f64)> = fit_years
        .clone()
        .map(|y| {
            series
                .rates
                .get(&y)
                .map(|&r| (y as f64, r))
                .ok_or_else(|| Error::Coverage(format!("no standardised rate for {y}")))
        })
        .collect::<Result<_>>()?;
    if points.len() < 2 {
        return Err(Error::Domain(format!(
            "trend needs at least 2 years, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - cx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - cx) * (p.1 - cy)).sum();
    Ok(RateTrend {
        slope: sxy / sxx,
        center_year: cx,
        center_rate: cy,
        first_year: *fit_years.start(),
        last_year: *fit_years.end(),
    })
}

/// Excess deaths implied by the gap between the observed and extrapolated
/// standardised rate, scaled to the standard population.
pub fn smr_excess(
    deaths: &CountPanel,
    pop: &PopulationPanel,
    std: &StandardPopulation,
    trend: &RateTrend,
    year: i32,
) -> Result<f64> {
    if trend.covers(year) {
        warn!("SMR excess requested for {year}, inside the trend fit years");
    }
    let rate = standardized_rate(deaths, pop, std, year)?;
    Ok((rate - trend.predict(year)) * std.total())
}

/// Yearly export record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmrRecord {
    pub year: i32,
    pub rate: f64,
    pub expected_rate: f64,
    pub excess: f64,
}
