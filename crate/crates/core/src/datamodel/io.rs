//! CSV ingestion and serialisation for the three input tables.
//!
//! Deaths: `year,month,sex,age_group,count`
//! Population: `year,quarter,sex,age_group,population`
//! Covid: `date,age_band,sex,count` where either `age_band` or `sex` may be
//! blank for records that are only stratified one way.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use log::warn;

use super::calendar::{MonthIndex, MonthRange, QuarterIndex, QuarterRange};
use super::panel::{CountPanel, CovidBand, CovidDeathSeries, PopulationPanel};
use super::stratum::{age_label, parse_age_group, Sex, StratumKey, STRATUM_COUNT};
use crate::error::{Error, Result};

const DEATHS_HEADER: [&str; 5] = ["year", "month", "sex", "age_group", "count"];
const POPULATION_HEADER: [&str; 5] = ["year", "quarter", "sex", "age_group", "population"];
const COVID_HEADER: [&str; 4] = ["date", "age_band", "sex", "count"];

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got.len() != expected.len() || got.iter().zip(expected).any(|(g, e)| g != e) {
        return Err(Error::parse(
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::parse(line, format!("invalid {name} {raw:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn stratum(rec: &csv::StringRecord, line: u64) -> Result<StratumKey> {
    let sex: Sex = rec
        .get(2)
        .unwrap_or("")
        .parse()
        .map_err(|e: Error| Error::parse(line, e.to_string()))?;
    let age = parse_age_group(rec.get(3).unwrap_or(""))
        .map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(StratumKey::new(sex, age).expect("age validated"))
}

/// Reads monthly death counts into a dense panel spanning the file's month
/// range. Absent (stratum, month) cells are zero.
pub fn parse_deaths<R: Read>(source: R) -> Result<CountPanel> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &DEATHS_HEADER)?;
    let mut cells: HashMap<(StratumKey, MonthIndex), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let year: i32 = field(&rec, 0, "year", line)?;
        let month_no: u32 = field(&rec, 1, "month", line)?;
        let month = MonthIndex::new(year, month_no).map_err(|e| Error::parse(line, e.to_string()))?;
        let key = stratum(&rec, line)?;
        let count: i64 = field(&rec, 4, "count", line)?;
        if count < 0 {
            return Err(Error::Domain(format!("line {line}: negative count {count}")));
        }
        if cells.insert((key, month), count as u64).is_some() {
            return Err(Error::Conflict(format!("{key} at {month} (line {line})")));
        }
    }
    let start = cells.keys().map(|&(_, m)| m).min();
    let end = cells.keys().map(|&(_, m)| m).max();
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::parse(1, "no data rows"));
    };
    let range = MonthRange::new(start, end)?;
    Ok(CountPanel::from_fn(range, |s, m| {
        cells.get(&(s, m)).copied().unwrap_or(0)
    }))
}

/// Reads quarterly population estimates. Every (stratum, quarter) cell in the
/// file's quarter range must be present.
pub fn parse_population<R: Read>(source: R) -> Result<PopulationPanel> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &POPULATION_HEADER)?;
    let mut cells: HashMap<(StratumKey, QuarterIndex), f64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let year: i32 = field(&rec, 0, "year", line)?;
        let q: u32 = field(&rec, 1, "quarter", line)?;
        let quarter = QuarterIndex::new(year, q).map_err(|e| Error::parse(line, e.to_string()))?;
        let key = stratum(&rec, line)?;
        let size: f64 = field(&rec, 4, "population", line)?;
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::Domain(format!(
                "line {line}: population {size} must be positive"
            )));
        }
        if cells.insert((key, quarter), size).is_some() {
            return Err(Error::Conflict(format!("{key} at {quarter} (line {line})")));
        }
    }
    let start = cells.keys().map(|&(_, q)| q).min();
    let end = cells.keys().map(|&(_, q)| q).max();
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::parse(1, "no data rows"));
    };
    let range = QuarterRange::new(start, end)?;
    if cells.len() != STRATUM_COUNT * range.len() {
        let missing = range
            .iter()
            .flat_map(|q| (0..STRATUM_COUNT).map(move |s| (StratumKey::from_index(s), q)))
            .find(|k| !cells.contains_key(k))
            .expect("count mismatch implies a gap");
        return Err(Error::Completeness(format!(
            "no population for {} at {} (range {range})",
            missing.0, missing.1
        )));
    }
    PopulationPanel::from_fn(range, |s, q| cells[&(s, q)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovidRecord {
    pub date: NaiveDate,
    pub band: Option<CovidBand>,
    pub sex: Option<Sex>,
    pub count: u64,
}

fn optional<T: std::str::FromStr<Err = Error>>(raw: &str, line: u64) -> Result<Option<T>> {
    match raw.trim() {
        "" | "all" | "total" => Ok(None),
        s => s.parse::<T>().map(Some).map_err(|e: Error| Error::parse(line, e.to_string())),
    }
}

pub fn parse_covid<R: Read>(source: R) -> Result<Vec<CovidRecord>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &COVID_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let raw_date = rec.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| Error::parse(line, format!("invalid date {raw_date:?}")))?;
        let count: i64 = field(&rec, 3, "count", line)?;
        if count < 0 {
            return Err(Error::Domain(format!("line {line}: negative count {count}")));
        }
        out.push(CovidRecord {
            date,
            band: optional(rec.get(1).unwrap_or(""), line)?,
            sex: optional(rec.get(2).unwrap_or(""), line)?,
            count: count as u64,
        });
    }
    Ok(out)
}

fn month_of(date: NaiveDate) -> MonthIndex {
    MonthIndex::new(date.year(), date.month()).expect("chrono months are valid")
}

/// Sums daily attributed deaths into monthly totals per age band and per sex.
///
/// The series covers every month touched by `first..=last`. A mismatch between
/// the two marginals is logged, not rejected.
pub fn aggregate_covid_daily(
    records: &[CovidRecord],
    first: NaiveDate,
    last: NaiveDate,
) -> Result<CovidDeathSeries> {
    let coverage = MonthRange::new(month_of(first), month_of(last))?;
    let mut series = CovidDeathSeries::empty(coverage);
    for r in records {
        if r.date < first || r.date > last {
            return Err(Error::Range(format!(
                "covid record dated {} outside {first}..={last}",
                r.date
            )));
        }
        let month = month_of(r.date);
        if let Some(band) = r.band {
            series.add_band(band, month, r.count);
        }
        if let Some(sex) = r.sex {
            series.add_sex(sex, month, r.count);
        }
    }
    let bad = series.inconsistent_months();
    if !bad.is_empty() {
        warn!(
            "covid age-band and sex totals disagree in {} month(s), first {}",
            bad.len(),
            bad[0]
        );
    }
    Ok(series)
}

/// First and last calendar day of a month range.
pub fn date_bounds(range: &MonthRange) -> (NaiveDate, NaiveDate) {
    let s = range.start();
    let e = range.end();
    (
        NaiveDate::from_ymd_opt(s.year(), s.month(), 1).expect("valid date"),
        NaiveDate::from_ymd_opt(e.year(), e.month(), e.days_in_month()).expect("valid date"),
    )
}

pub fn write_deaths<W: Write>(panel: &CountPanel, sink: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(DEATHS_HEADER)?;
    for (s, m, c) in panel.iter() {
        wtr.write_record([
            m.year().to_string(),
            m.month().to_string(),
            s.sex().to_string(),
            age_label(s.age_group()),
            c.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_population<W: Write>(panel: &PopulationPanel, sink: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(POPULATION_HEADER)?;
    for (s, q, v) in panel.iter() {
        wtr.write_record([
            q.year().to_string(),
            q.quarter().to_string(),
            s.sex().to_string(),
            age_label(s.age_group()),
            v.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_covid<W: Write>(records: &[CovidRecord], sink: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(COVID_HEADER)?;
    for r in records {
        wtr.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.band.map(|b| b.label().to_string()).unwrap_or_default(),
            r.sex.map(|s| s.to_string()).unwrap_or_default(),
            r.count.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
