use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::calendar::{MonthIndex, MonthRange, QuarterIndex, QuarterRange};
use super::stratum::{Sex, StratumKey, STRATUM_COUNT};
use crate::error::{Error, Result};

/// Dense monthly death counts for every stratum over a contiguous month range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountPanel {
    coverage: MonthRange,
    // stratum-major: counts[stratum * months + month_offset]
    counts: Vec<u64>,
}

impl CountPanel {
    pub fn zeros(coverage: MonthRange) -> Self {
        Self {
            coverage,
            counts: vec![0; STRATUM_COUNT * coverage.len()],
        }
    }

    pub fn from_fn(coverage: MonthRange, mut f: impl FnMut(StratumKey, MonthIndex) -> u64) -> Self {
        let mut panel = Self::zeros(coverage);
        for s in 0..STRATUM_COUNT {
            let key = StratumKey::from_index(s);
            for (m, month) in coverage.iter().enumerate() {
                panel.counts[s * coverage.len() + m] = f(key, month);
            }
        }
        panel
    }

    pub fn coverage(&self) -> MonthRange {
        self.coverage
    }

    fn slot(&self, stratum: StratumKey, month: MonthIndex) -> Option<usize> {
        self.coverage
            .position(month)
            .map(|m| stratum.index() * self.coverage.len() + m)
    }

    pub fn get(&self, stratum: StratumKey, month: MonthIndex) -> Option<u64> {
        self.slot(stratum, month).map(|i| self.counts[i])
    }

    /// Panics if `month` is outside the coverage.
    pub fn set(&mut self, stratum: StratumKey, month: MonthIndex, count: u64) {
        let i = self
            .slot(stratum, month)
            .unwrap_or_else(|| panic!("{month} outside panel coverage {}", self.coverage));
        self.counts[i] = count;
    }

    pub fn map_counts(&self, mut f: impl FnMut(usize, u64) -> u64) -> Self {
        Self {
            coverage: self.coverage,
            counts: self
                .counts
                .iter()
                .enumerate()
                .map(|(i, &c)| f(i, c))
                .collect(),
        }
    }

    /// Iterates `(stratum, month, count)` in stratum-major order.
    pub fn iter(&self) -> impl Iterator<Item = (StratumKey, MonthIndex, u64)> + '_ {
        let months = self.coverage.len();
        self.counts.iter().enumerate().map(move |(i, &c)| {
            (
                StratumKey::from_index(i / months),
                self.coverage.start().offset((i % months) as i64),
                c,
            )
        })
    }

    /// Sum of counts over the cells accepted by `filter`.
    pub fn total_where(&self, mut filter: impl FnMut(StratumKey, MonthIndex) -> bool) -> u64 {
        self.iter()
            .filter(|&(s, m, _)| filter(s, m))
            .map(|(_, _, c)| c)
            .sum()
    }

    pub fn month_total(&self, month: MonthIndex) -> u64 {
        self.total_where(|_, m| m == month)
    }

    pub fn year_total(&self, year: i32) -> u64 {
        self.total_where(|_, m| m.year() == year)
    }

    pub fn restrict(&self, range: MonthRange) -> Result<Self> {
        if !self.coverage.contains_range(&range) {
            return Err(Error::Coverage(format!(
                "deaths cover {}, requested {range}",
                self.coverage
            )));
        }
        Ok(Self::from_fn(range, |s, m| self.get(s, m).unwrap()))
    }
}

/// How a quarterly population estimate is spread over the months of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationMapping {
    /// Each month takes the value of its quarter.
    #[default]
    PiecewiseConstant,
    /// Quarter values sit at the middle month of each quarter and are
    /// interpolated linearly in between, held constant past the ends.
    Linear,
}

impl FromStr for PopulationMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise-constant" | "constant" => Ok(Self::PiecewiseConstant),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Usage(format!("unknown population mapping {other:?}"))),
        }
    }
}

/// Quarterly resident population for every stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPanel {
    coverage: QuarterRange,
    sizes: Vec<f64>,
    mapping: PopulationMapping,
}

impl PopulationPanel {
    /// Builds a panel from a generator; every value must be finite and positive.
    pub fn from_fn(
        coverage: QuarterRange,
        mut f: impl FnMut(StratumKey, QuarterIndex) -> f64,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(STRATUM_COUNT * coverage.len());
        for s in 0..STRATUM_COUNT {
            let key = StratumKey::from_index(s);
            for q in coverage.iter() {
                let v = f(key, q);
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Domain(format!(
                        "population {v} for {key} at {q} must be positive"
                    )));
                }
                sizes.push(v);
            }
        }
        Ok(Self {
            coverage,
            sizes,
            mapping: PopulationMapping::default(),
        })
    }

    pub fn with_mapping(mut self, mapping: PopulationMapping) -> Self {
        self.mapping = mapping;
        self
    }

    pub fn mapping(&self) -> PopulationMapping {
        self.mapping
    }

    pub fn coverage(&self) -> QuarterRange {
        self.coverage
    }

    /// Months whose quarter is covered.
    pub fn month_coverage(&self) -> MonthRange {
        MonthRange::new(self.coverage.start().first_month(), self.coverage.end().last_month())
            .expect("quarter range is non-empty")
    }

    pub fn get(&self, stratum: StratumKey, quarter: QuarterIndex) -> Option<f64> {
        self.coverage
            .position(quarter)
            .map(|q| self.sizes[stratum.index() * self.coverage.len() + q])
    }

    pub fn quarter_total(&self, quarter: QuarterIndex, mut filter: impl FnMut(StratumKey) -> bool) -> Option<f64> {
        self.coverage.position(quarter)?;
        Some(
            (0..STRATUM_COUNT)
                .map(StratumKey::from_index)
                .filter(|&s| filter(s))
                .map(|s| self.get(s, quarter).unwrap())
                .sum(),
        )
    }

    /// Population assigned to one month of the monthly model.
    pub fn monthly_population(&self, stratum: StratumKey, month: MonthIndex) -> Result<f64> {
        let quarter = month.quarter();
        let value = self.get(stratum, quarter).ok_or_else(|| {
            Error::Range(format!("{month} outside population coverage {}", self.coverage))
        })?;
        match self.mapping {
            PopulationMapping::PiecewiseConstant => Ok(value),
            PopulationMapping::Linear => {
                // position relative to the quarter's middle month, in quarters
                let mid = quarter.first_month().offset(1);
                let frac = month.months_since(mid) as f64 / 3.0;
                let neighbour = if frac < 0.0 {
                    self.get(stratum, quarter.offset(-1))
                } else {
                    self.get(stratum, quarter.offset(1))
                };
                Ok(match neighbour {
                    Some(n) => value + (n - value) * frac.abs(),
                    None => value,
                })
            }
        }
    }

    /// Mean of the four quarterly values of `year`.
    pub fn year_mean(&self, stratum: StratumKey, year: i32) -> Result<f64> {
        let mut total = 0.0;
        for q in 1..=4 {
            let quarter = QuarterIndex::new(year, q)?;
            total += self.get(stratum, quarter).ok_or_else(|| {
                Error::Coverage(format!("population does not cover {quarter}"))
            })?;
        }
        Ok(total / 4.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (StratumKey, QuarterIndex, f64)> + '_ {
        let quarters = self.coverage.len();
        self.sizes.iter().enumerate().map(move |(i, &v)| {
            (
                StratumKey::from_index(i / quarters),
                self.coverage.start().offset((i % quarters) as i64),
                v,
            )
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_fn(self.coverage, |s, q| self.get(s, q).unwrap() * factor)
            .map(|p| p.with_mapping(self.mapping))
    }
}

/// Age bands in which attributed Covid-19 deaths are published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CovidBand {
    #[serde(rename = "0-59")]
    Under60,
    #[serde(rename = "60-69")]
    Sixties,
    #[serde(rename = "70-79")]
    Seventies,
    #[serde(rename = "80+")]
    EightyPlus,
}

impl CovidBand {
    pub const ALL: [CovidBand; 4] = [
        CovidBand::Under60,
        CovidBand::Sixties,
        CovidBand::Seventies,
        CovidBand::EightyPlus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CovidBand::Under60 => "0-59",
            CovidBand::Sixties => "60-69",
            CovidBand::Seventies => "70-79",
            CovidBand::EightyPlus => "80+",
        }
    }

    pub fn of_age(age_group: u32) -> Self {
        match age_group {
            0..=59 => CovidBand::Under60,
            60..=69 => CovidBand::Sixties,
            70..=79 => CovidBand::Seventies,
            _ => CovidBand::EightyPlus,
        }
    }

    pub fn ages(self) -> std::ops::RangeInclusive<u32> {
        match self {
            CovidBand::Under60 => 0..=59,
            CovidBand::Sixties => 60..=69,
            CovidBand::Seventies => 70..=79,
            CovidBand::EightyPlus => 80..=95,
        }
    }
}

impl fmt::Display for CovidBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CovidBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0-59" | "<60" | "under 60" => Ok(CovidBand::Under60),
            "60-69" => Ok(CovidBand::Sixties),
            "70-79" => Ok(CovidBand::Seventies),
            "80+" => Ok(CovidBand::EightyPlus),
            other => Err(Error::Domain(format!("unknown covid age band {other:?}"))),
        }
    }
}

/// Monthly attributed Covid-19 deaths, by coarse age band and separately by sex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovidDeathSeries {
    coverage: MonthRange,
    by_ageband: BTreeMap<(CovidBand, MonthIndex), u64>,
    by_sex: BTreeMap<(Sex, MonthIndex), u64>,
}

impl CovidDeathSeries {
    pub fn empty(coverage: MonthRange) -> Self {
        let by_ageband = coverage
            .iter()
            .flat_map(|m| CovidBand::ALL.map(|b| ((b, m), 0)))
            .collect();
        let by_sex = coverage
            .iter()
            .flat_map(|m| Sex::ALL.map(|s| ((s, m), 0)))
            .collect();
        Self {
            coverage,
            by_ageband,
            by_sex,
        }
    }

    pub fn coverage(&self) -> MonthRange {
        self.coverage
    }

    pub(crate) fn add_band(&mut self, band: CovidBand, month: MonthIndex, count: u64) {
        *self.by_ageband.entry((band, month)).or_default() += count;
    }

    pub(crate) fn add_sex(&mut self, sex: Sex, month: MonthIndex, count: u64) {
        *self.by_sex.entry((sex, month)).or_default() += count;
    }

    pub fn band(&self, band: CovidBand, month: MonthIndex) -> u64 {
        self.by_ageband.get(&(band, month)).copied().unwrap_or(0)
    }

    pub fn sex(&self, sex: Sex, month: MonthIndex) -> u64 {
        self.by_sex.get(&(sex, month)).copied().unwrap_or(0)
    }

    /// Monthly total taken from the age-band marginal.
    pub fn month_total(&self, month: MonthIndex) -> u64 {
        CovidBand::ALL.iter().map(|&b| self.band(b, month)).sum()
    }

    pub fn total_over(&self, months: &MonthRange) -> Result<u64> {
        self.check_aligned(months)?;
        Ok(months.iter().map(|m| self.month_total(m)).sum())
    }

    pub fn band_total_over(&self, band: CovidBand, months: &MonthRange) -> Result<u64> {
        self.check_aligned(months)?;
        Ok(months.iter().map(|m| self.band(band, m)).sum())
    }

    pub fn sex_total_over(&self, sex: Sex, months: &MonthRange) -> Result<u64> {
        self.check_aligned(months)?;
        Ok(months.iter().map(|m| self.sex(sex, m)).sum())
    }

    fn check_aligned(&self, months: &MonthRange) -> Result<()> {
        if self.coverage.contains_range(months) {
            Ok(())
        } else {
            Err(Error::Alignment(format!(
                "period {months} not covered by covid series {}",
                self.coverage
            )))
        }
    }

    /// Months where the age-band and sex marginals disagree.
    pub fn inconsistent_months(&self) -> Vec<MonthIndex> {
        self.coverage
            .iter()
            .filter(|&m| {
                let by_sex: u64 = Sex::ALL.iter().map(|&s| self.sex(s, m)).sum();
                by_sex != self.month_total(m)
            })
            .collect()
    }
}
