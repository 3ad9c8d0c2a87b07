//! Regression design for the monthly death-count model.
//!
//! Column blocks, in order:
//!
//! | block            | width | content                                       |
//! |------------------|-------|-----------------------------------------------|
//! | intercept        | 1     | 1                                             |
//! | time             | 1     | months since the time origin                  |
//! | age              | 95    | one-hot single-year age, age 0 is reference   |
//! | sex              | 1     | indicator of the non-reference sex            |
//! | month            | 11    | one-hot month of year, January is reference   |
//! | band x time      | 7     | coarse band indicator times t                 |
//! | band x sex       | 7     | coarse band indicator times sex indicator     |
//! | band x month     | 77    | coarse band indicator times month indicator   |
//!
//! Coarse bands are under 30, 30-69, then five-year bands from 70 to 95+.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    age_label, CountPanel, MonthIndex, MonthRange, PopulationPanel, Sex, StratumKey,
    MAX_AGE_GROUP, STRATUM_COUNT,
};
use crate::error::{Error, Result};

pub const COARSE_BANDS: usize = 8;
pub const COLUMN_COUNT: usize = 200;

const COL_INTERCEPT: usize = 0;
const COL_TIME: usize = 1;
const COL_AGE: usize = 2;
const COL_SEX: usize = COL_AGE + MAX_AGE_GROUP as usize;
const COL_MONTH: usize = COL_SEX + 1;
const COL_BAND_TIME: usize = COL_MONTH + 11;
const COL_BAND_SEX: usize = COL_BAND_TIME + COARSE_BANDS - 1;
const COL_BAND_MONTH: usize = COL_BAND_SEX + COARSE_BANDS - 1;

const _: () = assert!(COL_BAND_MONTH + (COARSE_BANDS - 1) * 11 == COLUMN_COUNT);

/// Named contiguous column block of the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Intercept,
    Time,
    Age,
    Sex,
    Month,
    BandTime,
    BandSex,
    BandMonth,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Intercept,
        Block::Time,
        Block::Age,
        Block::Sex,
        Block::Month,
        Block::BandTime,
        Block::BandSex,
        Block::BandMonth,
    ];

    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            Block::Intercept => COL_INTERCEPT..COL_TIME,
            Block::Time => COL_TIME..COL_AGE,
            Block::Age => COL_AGE..COL_SEX,
            Block::Sex => COL_SEX..COL_MONTH,
            Block::Month => COL_MONTH..COL_BAND_TIME,
            Block::BandTime => COL_BAND_TIME..COL_BAND_SEX,
            Block::BandSex => COL_BAND_SEX..COL_BAND_MONTH,
            Block::BandMonth => COL_BAND_MONTH..COLUMN_COUNT,
        }
    }
}

/// Coarse age band used only inside interaction terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoarseAgeBand(u8);

impl CoarseAgeBand {
    pub fn new(index: u32) -> Result<Self> {
        if index as usize >= COARSE_BANDS {
            return Err(Error::Domain(format!("coarse band {index} outside 0..8")));
        }
        Ok(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        const LABELS: [&str; COARSE_BANDS] = [
            "0-29", "30-69", "70-74", "75-79", "80-84", "85-89", "90-94", "95+",
        ];
        LABELS[self.index()]
    }

    pub fn all() -> impl Iterator<Item = CoarseAgeBand> {
        (0..COARSE_BANDS as u8).map(CoarseAgeBand)
    }
}

impl fmt::Display for CoarseAgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn coarse_band(age_group: u32) -> Result<CoarseAgeBand> {
    let band = match age_group {
        0..=29 => 0,
        30..=69 => 1,
        70..=94 => 2 + (age_group - 70) / 5,
        95 => 7,
        _ => {
            return Err(Error::Domain(format!(
                "age group {age_group} outside 0..={MAX_AGE_GROUP}"
            )))
        }
    };
    Ok(CoarseAgeBand(band as u8))
}

/// Reference levels of the sex and coarse-band factors. Predictions do not
/// depend on them; only the meaning of individual coefficients does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLevels {
    pub sex: Sex,
    pub coarse_band: CoarseAgeBand,
}

impl Default for ReferenceLevels {
    fn default() -> Self {
        Self {
            sex: Sex::Male,
            coarse_band: CoarseAgeBand(0),
        }
    }
}

impl ReferenceLevels {
    /// Non-reference bands in column order.
    fn band_slot(&self, band: CoarseAgeBand) -> Option<usize> {
        use std::cmp::Ordering::*;
        match band.cmp(&self.coarse_band) {
            Less => Some(band.index()),
            Equal => None,
            Greater => Some(band.index() - 1),
        }
    }

    fn slot_band(&self, slot: usize) -> CoarseAgeBand {
        if slot < self.coarse_band.index() {
            CoarseAgeBand(slot as u8)
        } else {
            CoarseAgeBand(slot as u8 + 1)
        }
    }

    fn other_sex(&self) -> Sex {
        match self.sex {
            Sex::Male => Sex::Female,
            Sex::Female => Sex::Male,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub fit_window: MonthRange,
    pub time_origin: MonthIndex,
    pub reference: ReferenceLevels,
}

impl DesignSpec {
    /// Time origin at the first fitted month, default reference levels.
    pub fn new(fit_window: MonthRange) -> Self {
        Self {
            fit_window,
            time_origin: fit_window.start(),
            reference: ReferenceLevels::default(),
        }
    }

    pub fn with_time_origin(mut self, origin: MonthIndex) -> Self {
        self.time_origin = origin;
        self
    }

    pub fn with_reference(mut self, reference: ReferenceLevels) -> Self {
        self.reference = reference;
        self
    }

    /// Same encoding over a different window, e.g. for projection.
    pub fn with_window(mut self, window: MonthRange) -> Self {
        self.fit_window = window;
        self
    }

    pub fn column_names(&self) -> Vec<String> {
        let r = &self.reference;
        let mut names = Vec::with_capacity(COLUMN_COUNT);
        names.push("(intercept)".to_string());
        names.push("t".to_string());
        names.extend((1..=MAX_AGE_GROUP as u32).map(|a| format!("age[{}]", age_label(a))));
        names.push(format!("sex[{}]", r.other_sex()));
        names.extend((2..=12).map(|m| format!("month[{m}]")));
        let bands: Vec<CoarseAgeBand> = (0..COARSE_BANDS - 1).map(|s| r.slot_band(s)).collect();
        names.extend(bands.iter().map(|b| format!("band[{b}]:t")));
        names.extend(bands.iter().map(|b| format!("band[{b}]:sex[{}]", r.other_sex())));
        for b in &bands {
            names.extend((2..=12).map(|m| format!("band[{b}]:month[{m}]")));
        }
        debug_assert_eq!(names.len(), COLUMN_COUNT);
        names
    }

    /// Appends the non-zero entries of one row, in ascending column order.
    fn encode_sparse(&self, stratum: StratumKey, month: MonthIndex, cols: &mut Vec<u32>, vals: &mut Vec<f64>) {
        let t = month.months_since(self.time_origin) as f64;
        let age = stratum.age_group() as usize;
        let is_other_sex = stratum.sex() != self.reference.sex;
        let month_slot = (month.month() as usize).checked_sub(2);
        let band = coarse_band(age as u32).expect("stratum ages are valid");
        let band_slot = self.reference.band_slot(band);

        let mut push = |c: usize, v: f64| {
            if v != 0.0 {
                cols.push(c as u32);
                vals.push(v);
            }
        };
        push(COL_INTERCEPT, 1.0);
        push(COL_TIME, t);
        if age > 0 {
            push(COL_AGE + age - 1, 1.0);
        }
        if is_other_sex {
            push(COL_SEX, 1.0);
        }
        if let Some(m) = month_slot {
            push(COL_MONTH + m, 1.0);
        }
        if let Some(b) = band_slot {
            push(COL_BAND_TIME + b, t);
            if is_other_sex {
                push(COL_BAND_SEX + b, 1.0);
            }
            if let Some(m) = month_slot {
                push(COL_BAND_MONTH + b * 11 + m, 1.0);
            }
        }
    }
}

/// Dense feature vector of one (stratum, month) cell.
pub fn encode_row(stratum: StratumKey, month: MonthIndex, spec: &DesignSpec) -> Vec<f64> {
    let mut cols = Vec::with_capacity(8);
    let mut vals = Vec::with_capacity(8);
    spec.encode_sparse(stratum, month, &mut cols, &mut vals);
    let mut row = vec![0.0; COLUMN_COUNT];
    for (c, v) in cols.into_iter().zip(vals) {
        row[c as usize] = v;
    }
    row
}

/// Design matrix with offsets and response.
///
/// Rows are held densely; a compressed row index of the non-zero entries is
/// kept alongside for the products used during fitting and sampling.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    columns: Vec<String>,
    keys: Vec<(StratumKey, MonthIndex)>,
    dense: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    offset: Vec<f64>,
    response: Vec<f64>,
}

impl DesignMatrix {
    /// General constructor from a row-major dense matrix.
    pub fn from_dense(
        columns: Vec<String>,
        dense: Vec<f64>,
        offset: Vec<f64>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let p = columns.len();
        let n = offset.len();
        if p == 0 || dense.len() != n * p || response.len() != n {
            return Err(Error::Parameter(format!(
                "inconsistent design shapes: {} values, {n} offsets, {} responses, {p} columns",
                dense.len(),
                response.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in dense.chunks_exact(p) {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            columns,
            keys: Vec::new(),
            dense,
            row_ptr,
            col_idx,
            values,
            offset,
            response,
        })
    }

    pub fn nrows(&self) -> usize {
        self.offset.len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// (stratum, month) of each row; empty for matrices built by `from_dense`.
    pub fn keys(&self) -> &[(StratumKey, MonthIndex)] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.dense[i * p..(i + 1) * p]
    }

    pub fn row_nonzeros(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// `x_i . beta` without the offset.
    #[inline]
    pub fn row_dot(&self, i: usize, beta: &[f64]) -> f64 {
        let (cols, vals) = self.row_nonzeros(i);
        cols.iter()
            .zip(vals)
            .map(|(&c, &v)| v * beta[c as usize])
            .sum()
    }

    /// `X beta + offset`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.row_dot(i, beta) + self.offset[i])
            .collect()
    }

    /// `X^T v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        for (i, &vi) in v.iter().enumerate() {
            let (cols, vals) = self.row_nonzeros(i);
            for (&c, &x) in cols.iter().zip(vals) {
                out[c as usize] += x * vi;
            }
        }
        out
    }

    /// Rows whose (stratum, month) key satisfies `pred`.
    pub fn rows_where(&self, mut pred: impl FnMut(StratumKey, MonthIndex) -> bool) -> Vec<usize> {
        self.keys
            .iter()
            .enumerate()
            .filter(|(_, &(s, m))| pred(s, m))
            .map(|(i, _)| i)
            .collect()
    }

    /// Dumps column names, offset, response and features as CSV.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(sink);
        let mut header = vec!["sex".to_string(), "age_group".into(), "month".into()];
        header.extend(["offset".to_string(), "response".into()]);
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.nrows() {
            let mut rec = match self.keys.get(i) {
                Some((s, m)) => vec![s.sex().to_string(), age_label(s.age_group()), m.to_string()],
                None => vec![String::new(); 3],
            };
            rec.push(self.offset[i].to_string());
            rec.push(self.response[i].to_string());
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Builds rows for every (stratum, month) of `spec.fit_window`, stratum-major.
pub fn build_design(deaths: &CountPanel, pop: &PopulationPanel, spec: &DesignSpec) -> Result<DesignMatrix> {
    let window = spec.fit_window;
    if !deaths.coverage().contains_range(&window) {
        return Err(Error::Coverage(format!(
            "deaths cover {}, design needs {window}",
            deaths.coverage()
        )));
    }
    if !pop.month_coverage().contains_range(&window) {
        return Err(Error::Coverage(format!(
            "population covers {}, design needs {window}",
            pop.coverage()
        )));
    }
    let n = STRATUM_COUNT * window.len();
    let mut keys = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    let mut response = Vec::with_capacity(n);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n * 8);
    let mut values = Vec::with_capacity(n * 8);
    row_ptr.push(0);
    for s in 0..STRATUM_COUNT {
        let stratum = StratumKey::from_index(s);
        for month in window.iter() {
            let population = pop.monthly_population(stratum, month)?;
            if !(population > 0.0) {
                return Err(Error::Domain(format!(
                    "population {population} for {stratum} at {month}; log undefined"
                )));
            }
            spec.encode_sparse(stratum, month, &mut col_idx, &mut values);
            row_ptr.push(col_idx.len());
            keys.push((stratum, month));
            offset.push(population.ln() + (month.days_in_month() as f64).ln());
            response.push(deaths.get(stratum, month).expect("coverage checked") as f64);
        }
    }
    let mut dense = vec![0.0; n * COLUMN_COUNT];
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            dense[i * COLUMN_COUNT + col_idx[k] as usize] = values[k];
        }
    }
    Ok(DesignMatrix {
        columns: spec.column_names(),
        keys,
        dense,
        row_ptr,
        col_idx,
        values,
        offset,
        response,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::QuarterRange;

    fn month(y: i32, m: u32) -> MonthIndex {
        MonthIndex::new(y, m).unwrap()
    }

    #[test]
    fn coarse_band_edges() {
        let b = |a| coarse_band(a).unwrap().index();
        assert_eq!(b(0), 0);
        assert_eq!(b(29), 0);
        assert_eq!(b(30), 1);
        assert_eq!(b(69), 1);
        assert_eq!(b(70), 2);
        assert_eq!(b(74), 2);
        assert_eq!(b(75), 3);
        assert_eq!(b(94), 6);
        assert_eq!(b(95), 7);
        assert!(coarse_band(96).is_err());
    }

    #[test]
    fn every_age_in_exactly_one_band() {
        let mut counts = [0; COARSE_BANDS];
        for a in 0..=95 {
            counts[coarse_band(a).unwrap().index()] += 1;
        }
        assert_eq!(counts, [30, 40, 5, 5, 5, 5, 5, 1]);
    }

    #[test]
    fn block_widths() {
        let widths: Vec<usize> = Block::ALL.iter().map(|b| b.columns().len()).collect();
        assert_eq!(widths, vec![1, 1, 95, 1, 11, 7, 7, 77]);
        assert_eq!(widths.iter().sum::<usize>(), COLUMN_COUNT);
    }

    #[test]
    fn baseline_row() {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).unwrap());
        let row = encode_row(StratumKey::new(Sex::Male, 0).unwrap(), month(2014, 1), &spec);
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_traced_female_80_march() {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).unwrap());
        // March 2015 is 14 months after January 2014
        let row = encode_row(StratumKey::new(Sex::Female, 80).unwrap(), month(2015, 3), &spec);
        let names = spec.column_names();
        let mut expected = vec![0.0; COLUMN_COUNT];
        let at = |n: &str| names.iter().position(|c| c == n).unwrap_or_else(|| panic!("{n}"));
        expected[at("(intercept)")] = 1.0;
        expected[at("t")] = 14.0;
        expected[at("age[80]")] = 1.0;
        expected[at("sex[female]")] = 1.0;
        expected[at("month[3]")] = 1.0;
        expected[at("band[80-84]:t")] = 14.0;
        expected[at("band[80-84]:sex[female]")] = 1.0;
        expected[at("band[80-84]:month[3]")] = 1.0;
        assert_eq!(row, expected);
        // band 4 is slot 3 with band 0 as reference
        assert_eq!(at("band[80-84]:t"), COL_BAND_TIME + 3);
    }

    #[test]
    fn same_band_same_interactions() {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).unwrap());
        let a = encode_row(StratumKey::new(Sex::Female, 81).unwrap(), month(2016, 7), &spec);
        let b = encode_row(StratumKey::new(Sex::Female, 84).unwrap(), month(2016, 7), &spec);
        assert_eq!(a[COL_BAND_TIME..], b[COL_BAND_TIME..]);
    }

    #[test]
    fn categorical_blocks_at_most_one_hot() {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).unwrap());
        for s in crate::datamodel::enumerate_strata() {
            for m in 1..=12 {
                let row = encode_row(s, month(2017, m), &spec);
                for block in [Block::Age, Block::Month, Block::BandMonth, Block::BandSex] {
                    let sum: f64 = row[block.columns()].iter().sum();
                    assert!(sum <= 1.0);
                }
            }
        }
    }

    #[test]
    fn time_origin_shift_changes_only_time_columns() {
        let window = MonthRange::years(2014, 2019).unwrap();
        let a = DesignSpec::new(window);
        let b = a.with_time_origin(month(2013, 10));
        let s = StratumKey::new(Sex::Male, 50).unwrap();
        let ra = encode_row(s, month(2016, 5), &a);
        let rb = encode_row(s, month(2016, 5), &b);
        assert_eq!(rb[COL_TIME] - ra[COL_TIME], 3.0);
        for c in 0..COLUMN_COUNT {
            if c != COL_TIME && !Block::BandTime.columns().contains(&c) {
                assert_eq!(ra[c], rb[c]);
            }
        }
    }

    #[test]
    fn reference_levels_keep_column_count() {
        let spec = DesignSpec::new(MonthRange::years(2014, 2019).unwrap()).with_reference(ReferenceLevels {
            sex: Sex::Female,
            coarse_band: CoarseAgeBand::new(3).unwrap(),
        });
        let names = spec.column_names();
        assert_eq!(names.len(), COLUMN_COUNT);
        assert!(names.contains(&"sex[male]".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("band[75-79]")));
        let row = encode_row(StratumKey::new(Sex::Female, 77).unwrap(), month(2015, 1), &spec);
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 3);
    }

    fn panels(window: MonthRange, pop_value: f64) -> (CountPanel, PopulationPanel) {
        let deaths = CountPanel::from_fn(window, |s, m| (s.index() + m.month() as usize) as u64 % 5);
        let pop = PopulationPanel::from_fn(window.quarters(), |_, _| pop_value).unwrap();
        (deaths, pop)
    }

    #[test]
    fn six_year_design_shape_and_offsets() {
        let window = MonthRange::years(2014, 2019).unwrap();
        let (deaths, pop) = panels(window, 1000.0);
        let x = build_design(&deaths, &pop, &DesignSpec::new(window)).unwrap();
        assert_eq!(x.nrows(), 13_824);
        assert_eq!(x.ncols(), 200);
        // row 0 is (male, 0) January 2014
        assert_eq!(x.offset()[0], 1000f64.ln() + 31f64.ln());
        let feb_2016 = x
            .rows_where(|_, m| m == month(2016, 2))
            .into_iter()
            .next()
            .unwrap();
        assert!((x.offset()[feb_2016] - (1000f64.ln() + 29f64.ln())).abs() < 1e-15);
        let i = 500;
        let (s, m) = x.keys()[i];
        assert_eq!(x.row(i), encode_row(s, m, &DesignSpec::new(window)).as_slice());
        assert_eq!(x.response()[i], deaths.get(s, m).unwrap() as f64);
    }

    #[test]
    fn design_requires_coverage() {
        let window = MonthRange::years(2014, 2019).unwrap();
        let (deaths, _) = panels(window, 1.0);
        let pop = PopulationPanel::from_fn(
            QuarterRange::new("2015-Q1".parse().unwrap(), "2019-Q4".parse().unwrap()).unwrap(),
            |_, _| 1.0,
        )
        .unwrap();
        assert!(matches!(
            build_design(&deaths, &pop, &DesignSpec::new(window)),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn sparse_and_dense_agree() {
        let window = MonthRange::years(2018, 2018).unwrap();
        let (deaths, pop) = panels(window, 10.0);
        let x = build_design(&deaths, &pop, &DesignSpec::new(window)).unwrap();
        let beta: Vec<f64> = (0..COLUMN_COUNT).map(|c| (c as f64 * 0.37).sin()).collect();
        for i in (0..x.nrows()).step_by(97) {
            let dense: f64 = x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            assert!((dense - x.row_dot(i, &beta)).abs() < 1e-12);
        }
    }
}
