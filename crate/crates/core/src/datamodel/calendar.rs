use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// A calendar month. Ordering follows the calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthIndex {
    year: i32,
    month: u8,
}

impl MonthIndex {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Range(format!("month {month} not in 1..=12")));
        }
        Ok(Self {
            year,
            month: month as u8,
        })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month as u32
    }

    /// Months since January of year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12);
        let month = ordinal.rem_euclid(12) + 1;
        Self {
            year: year as i32,
            month: month as u8,
        }
    }

    /// Signed number of months from `origin` to `self`.
    pub fn months_since(self, origin: MonthIndex) -> i64 {
        self.ordinal() - origin.ordinal()
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    pub fn days_in_month(self) -> u32 {
        match self.month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            _ if is_leap_year(self.year) => 29,
            _ => 28,
        }
    }

    pub fn quarter(self) -> QuarterIndex {
        QuarterIndex {
            year: self.year,
            quarter: (self.month - 1) / 3 + 1,
        }
    }
}

impl fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Usage(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Usage(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Usage(format!("bad month in {s:?}")))?;
        MonthIndex::new(year, month)
    }
}

/// A calendar quarter (Q1 = January..March).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuarterIndex {
    year: i32,
    quarter: u8,
}

impl QuarterIndex {
    pub fn new(year: i32, quarter: u32) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::Range(format!("quarter {quarter} not in 1..=4")));
        }
        Ok(Self {
            year,
            quarter: quarter as u8,
        })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u32 {
        self.quarter as u32
    }

    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(4) as i32,
            quarter: (ordinal.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    pub fn first_month(self) -> MonthIndex {
        MonthIndex {
            year: self.year,
            month: (self.quarter - 1) * 3 + 1,
        }
    }

    pub fn last_month(self) -> MonthIndex {
        self.first_month().offset(2)
    }
}

impl fmt::Display for QuarterIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-Q{}", self.year, self.quarter)
    }
}

impl FromStr for QuarterIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, q) = s
            .trim()
            .split_once("-Q")
            .ok_or_else(|| Error::Usage(format!("expected YYYY-Qn, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Usage(format!("bad year in {s:?}")))?;
        let quarter = q
            .parse()
            .map_err(|_| Error::Usage(format!("bad quarter in {s:?}")))?;
        QuarterIndex::new(year, quarter)
    }
}

/// Inclusive, non-empty range of months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MonthRange {
    start: MonthIndex,
    end: MonthIndex,
}

impl MonthRange {
    pub fn new(start: MonthIndex, end: MonthIndex) -> Result<Self> {
        if end < start {
            return Err(Error::Range(format!("empty month range {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    /// January of `first` through December of `last`.
    pub fn years(first: i32, last: i32) -> Result<Self> {
        Self::new(MonthIndex::new(first, 1)?, MonthIndex::new(last, 12)?)
    }

    pub fn start(&self) -> MonthIndex {
        self.start
    }

    pub fn end(&self) -> MonthIndex {
        self.end
    }

    pub fn len(&self) -> usize {
        (self.end.ordinal() - self.start.ordinal() + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, month: MonthIndex) -> bool {
        self.start <= month && month <= self.end
    }

    pub fn contains_range(&self, other: &MonthRange) -> bool {
        self.contains(other.start) && self.contains(other.end)
    }

    /// Zero-based position of `month` inside the range.
    pub fn position(&self, month: MonthIndex) -> Option<usize> {
        self.contains(month)
            .then(|| (month.ordinal() - self.start.ordinal()) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = MonthIndex> + Clone {
        let start = self.start.ordinal();
        (start..=self.end.ordinal()).map(MonthIndex::from_ordinal)
    }

    /// Calendar years that are fully contained in the range.
    pub fn whole_years(&self) -> Vec<i32> {
        (self.start.year..=self.end.year)
            .filter(|&y| {
                self.contains(MonthIndex { year: y, month: 1 })
                    && self.contains(MonthIndex { year: y, month: 12 })
            })
            .collect()
    }

    pub fn quarters(&self) -> QuarterRange {
        QuarterRange {
            start: self.start.quarter(),
            end: self.end.quarter(),
        }
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Inclusive, non-empty range of quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuarterRange {
    start: QuarterIndex,
    end: QuarterIndex,
}

impl QuarterRange {
    pub fn new(start: QuarterIndex, end: QuarterIndex) -> Result<Self> {
        if end < start {
            return Err(Error::Range(format!("empty quarter range {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> QuarterIndex {
        self.start
    }

    pub fn end(&self) -> QuarterIndex {
        self.end
    }

    pub fn len(&self) -> usize {
        (self.end.ordinal() - self.start.ordinal() + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, q: QuarterIndex) -> bool {
        self.start <= q && q <= self.end
    }

    pub fn position(&self, q: QuarterIndex) -> Option<usize> {
        self.contains(q)
            .then(|| (q.ordinal() - self.start.ordinal()) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = QuarterIndex> + Clone {
        (self.start.ordinal()..=self.end.ordinal()).map(QuarterIndex::from_ordinal)
    }
}

impl fmt::Display for QuarterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}
