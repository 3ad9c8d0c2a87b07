//! Domain types, calendar arithmetic, CSV ingestion and random rounding.

mod calendar;
mod io;
mod panel;
mod rounding;
mod stratum;

pub use calendar::{is_leap_year, MonthIndex, MonthRange, QuarterIndex, QuarterRange};
pub use io::{
    aggregate_covid_daily, date_bounds, parse_covid, parse_deaths, parse_population, write_covid,
    write_deaths, write_population, CovidRecord,
};
pub use panel::{CountPanel, CovidBand, CovidDeathSeries, PopulationMapping, PopulationPanel};
pub use rounding::{random_round, round_count, round_count_with};
pub use stratum::{
    age_label, enumerate_strata, parse_age_group, Sex, StratumKey, AGE_GROUPS, MAX_AGE_GROUP,
    STRATUM_COUNT,
};
