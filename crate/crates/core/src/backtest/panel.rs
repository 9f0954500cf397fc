use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, Weekday, Datelike};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Dated T×p panel with a missing-value mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != (dates.len(), assets.len()) {
            return Err(Error::DimensionMismatch { expected: dates.len() * assets.len(), actual: values.len() });
        }
        if mask.shape() != values.shape() {
            return Err(Error::DimensionMismatch { expected: values.len(), actual: mask.len() });
        }
        if assets.is_empty() {
            return Err(Error::InvalidParameter("panel has no assets".into()));
        }
        let mut seen = HashSet::new();
        for a in &assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate asset label '{a}'")));
            }
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(Error::DuplicateDate(w[1].to_string()));
            }
            if w[1] < w[0] {
                return Err(Error::NonMonotoneDate { line: i + 3, date: w[1].to_string() });
            }
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite observed value in panel".into()));
            }
        }
        Ok(Self { dates, assets, values, mask })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Rows `[start, end)` as a dataset; rows with no observed cell are dropped.
    pub fn window(&self, start: usize, end: usize) -> Result<Dataset> {
        let rows: Vec<usize> = (start..end)
            .filter(|&t| (0..self.n_assets()).any(|j| self.mask[(t, j)]))
            .collect();
        let p = self.n_assets();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        let mask = DMatrix::from_fn(rows.len(), p, |i, j| self.mask[(rows[i], j)]);
        Dataset::new(values, mask)
    }

    /// Writes the panel in the format read by [`read_panel`]; missing cells as `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header).map_err(to_io)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            for j in 0..self.n_assets() {
                rec.push(if self.mask[(t, j)] { self.values[(t, j)].to_string() } else { "NA".into() });
            }
            w.write_record(&rec).map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Csv { line, column, message: message.into() }
}

/// Parses a panel CSV: header `date,<asset>,...`; ISO-8601 dates strictly
/// increasing; decimal cells with `.` separator; empty or `NA` = missing.
/// Line and column numbers in errors are 1-based.
pub fn read_panel<R: Read>(reader: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(1, 1, e.to_string()))?,
        None => return Err(csv_error(1, 1, "empty file")),
    };
    if header.get(0).map(str::trim) != Some("date") {
        return Err(csv_error(1, 1, "first header cell must be 'date'"));
    }
    if header.len() < 2 {
        return Err(csv_error(1, 2, "no asset columns"));
    }
    let assets: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for (k, a) in assets.iter().enumerate() {
        if a.is_empty() {
            return Err(csv_error(1, k + 2, "empty asset label"));
        }
        if !seen.insert(a.as_str()) {
            return Err(csv_error(1, k + 2, format!("duplicate asset label '{a}'")));
        }
    }
    let p = assets.len();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    let mut observed: Vec<bool> = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(line, 1, e.to_string()))?;
        if rec.len() != p + 1 {
            return Err(csv_error(line, rec.len().min(p + 1), format!("expected {} fields, found {}", p + 1, rec.len())));
        }
        let raw = rec[0].trim();
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|_| csv_error(line, 1, format!("invalid date '{raw}'")))?;
        if let Some(&last) = dates.last() {
            if date == last {
                return Err(Error::DuplicateDate(raw.to_string()));
            }
            if date < last {
                return Err(Error::NonMonotoneDate { line, date: raw.to_string() });
            }
        }
        dates.push(date);
        for (k, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell == "NA" {
                cells.push(0.0);
                observed.push(false);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    cells.push(v);
                    observed.push(true);
                }
                _ => return Err(csv_error(line, k + 2, format!("not a number: '{cell}'"))),
            }
        }
    }
    if dates.is_empty() {
        return Err(csv_error(2, 1, "no data rows"));
    }
    let t_len = dates.len();
    let values = DMatrix::from_row_slice(t_len, p, &cells);
    let mask = DMatrix::from_row_slice(t_len, p, &observed);
    ReturnPanel::new(dates, assets, values, mask)
}

/// [`read_panel`] from a file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    read_panel(File::open(path)?)
}

/// Simple returns pₜ/pₜ₋₁ − 1; a return is missing when either price is.
pub fn prices_to_returns(prices: &ReturnPanel) -> Result<ReturnPanel> {
    let (t_len, p) = (prices.n_rows(), prices.n_assets());
    if t_len < 2 {
        return Err(Error::InsufficientData { required: 2, actual: t_len });
    }
    let v = prices.values();
    let m = prices.mask();
    for t in 0..t_len {
        for j in 0..p {
            if m[(t, j)] && !(v[(t, j)] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "non-positive price {} for {} on {}",
                    v[(t, j)],
                    prices.assets[j],
                    prices.dates[t]
                )));
            }
        }
    }
    let mask = DMatrix::from_fn(t_len - 1, p, |t, j| m[(t, j)] && m[(t + 1, j)]);
    let values = DMatrix::from_fn(t_len - 1, p, |t, j| {
        if mask[(t, j)] {
            v[(t + 1, j)] / v[(t, j)] - 1.0
        } else {
            0.0
        }
    });
    ReturnPanel::new(prices.dates[1..].to_vec(), prices.assets.clone(), values, mask)
}

/// `n` consecutive weekdays starting at `start` (moved forward to a weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}
