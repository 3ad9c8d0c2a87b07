use serde::Serialize;

use crate::datamodel::{CovidBand, CovidDeathSeries, MonthRange, Sex};
use crate::error::Result;
use crate::uncertainty::ExcessEstimate;

/// Which marginal of the covid series a period is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovidSubset {
    All,
    Band(CovidBand),
    Sex(Sex),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodEstimate {
    pub label: String,
    pub months: MonthRange,
    pub subset: CovidSubset,
    pub estimate: ExcessEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovidComparison {
    pub period: String,
    pub covid_deaths: u64,
    pub excess_mean: f64,
    pub excess_lo: f64,
    pub excess_hi: f64,
    /// Covid deaths as a percentage of mean excess; `None` when the mean
    /// excess is zero.
    pub covid_share: Option<f64>,
    pub covid_inside_ci: bool,
}

pub fn covid_share(covid: u64, excess_mean: f64) -> Option<f64> {
    (excess_mean != 0.0).then(|| 100.0 * covid as f64 / excess_mean)
}

/// Compares each period's excess with the attributed Covid-19 deaths of the
/// same months and subgroup.
pub fn covid_comparison(periods: &[PeriodEstimate], covid: &CovidDeathSeries) -> Result<Vec<CovidComparison>> {
    periods
        .iter()
        .map(|p| {
            let deaths = match p.subset {
                CovidSubset::All => covid.total_over(&p.months)?,
                CovidSubset::Band(b) => covid.band_total_over(b, &p.months)?,
                CovidSubset::Sex(s) => covid.sex_total_over(s, &p.months)?,
            };
            let e = &p.estimate;
            let c = deaths as f64;
            Ok(CovidComparison {
                period: p.label.clone(),
                covid_deaths: deaths,
                excess_mean: e.excess_mean,
                excess_lo: e.excess_ci.0,
                excess_hi: e.excess_ci.1,
                covid_share: covid_share(deaths, e.excess_mean),
                covid_inside_ci: e.excess_ci.0 <= c && c <= e.excess_ci.1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{aggregate_covid_daily, CovidRecord, MonthIndex};
    use crate::error::Error;
    use chrono::NaiveDate;

    fn estimate(excess: f64, lo: f64, hi: f64) -> ExcessEstimate {
        ExcessEstimate {
            actual: 1000,
            expected_mean: 1000.0 - excess,
            expected_ci: (1000.0 - hi, 1000.0 - lo),
            excess_mean: excess,
            excess_ci: (lo, hi),
            sample_count: 100,
        }
    }

    fn series(records: &[CovidRecord]) -> CovidDeathSeries {
        aggregate_covid_daily(
            records,
            NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2022, 12, 31).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn share_and_inside_flag() {
        let date = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap();
        let s = series(&[
            CovidRecord { date, band: Some(CovidBand::EightyPlus), sex: Some(Sex::Female), count: 51 },
        ]);
        let year = MonthRange::years(2022, 2022).unwrap();
        let periods = [
            PeriodEstimate { label: "2022".into(), months: year, subset: CovidSubset::All, estimate: estimate(50.0, 20.0, 80.0) },
            PeriodEstimate { label: "80+".into(), months: year, subset: CovidSubset::Band(CovidBand::Sixties), estimate: estimate(10.0, 5.0, 15.0) },
            PeriodEstimate { label: "f".into(), months: year, subset: CovidSubset::Sex(Sex::Female), estimate: estimate(0.0, -5.0, 5.0) },
        ];
        let rows = covid_comparison(&periods, &s).unwrap();
        assert_eq!(rows[0].covid_deaths, 51);
        assert!((rows[0].covid_share.unwrap() - 102.0).abs() < 1e-12);
        assert!(rows[0].covid_inside_ci);
        assert_eq!(rows[1].covid_deaths, 0);
        assert!(!rows[1].covid_inside_ci);
        assert_eq!(rows[2].covid_share, None);
        assert!(!rows[2].covid_inside_ci);
    }

    #[test]
    fn zero_over_zero_is_null() {
        let s = series(&[]);
        let m = MonthIndex::new(2022, 5).unwrap();
        let p = PeriodEstimate {
            label: "may".into(),
            months: MonthRange::new(m, m).unwrap(),
            subset: CovidSubset::All,
            estimate: estimate(0.0, -3.0, 3.0),
        };
        let rows = covid_comparison(&[p], &s).unwrap();
        assert_eq!(rows[0].covid_share, None);
        let json = serde_json::to_value(&rows[0]).unwrap();
        assert!(json["covid_share"].is_null());
    }

    #[test]
    fn misaligned_period_rejected() {
        let s = series(&[]);
        let p = PeriodEstimate {
            label: "2023".into(),
            months: MonthRange::years(2023, 2023).unwrap(),
            subset: CovidSubset::All,
            estimate: estimate(1.0, 0.0, 2.0),
        };
        assert!(matches!(covid_comparison(&[p], &s), Err(Error::Alignment(_))));
    }
}
