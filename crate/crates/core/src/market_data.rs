//! Price ingestion and conversion to simple returns.
//!
//! Price files are delimited text with a header row. The first column is a
//! date label that is never read as a price; every other column is one asset.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delimited-text layout of a price file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvFormat {
    pub delimiter: u8,
    /// Require `YYYY-MM-DD` date labels in strictly increasing order.
    pub iso_dates: bool,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            iso_dates: false,
        }
    }
}

/// Prices as read from disk, gaps encoded as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrices {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Validated price history: one row per period, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    dates: Vec<String>,
    assets: Vec<String>,
    values: DMatrix<f64>,
}

impl PriceTable {
    pub fn new(dates: Vec<String>, assets: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != assets.len() {
            return Err(Error::Dimension(format!(
                "{} asset names for {} price columns",
                assets.len(),
                values.ncols()
            )));
        }
        if values.nrows() != dates.len() {
            return Err(Error::Dimension(format!(
                "{} date labels for {} price rows",
                dates.len(),
                values.nrows()
            )));
        }
        check_unique(&assets)?;
        if values.nrows() < 2 {
            return Err(Error::InsufficientHistory {
                needed: 2,
                got: values.nrows(),
            });
        }
        for (col, asset) in assets.iter().enumerate() {
            for row in 0..values.nrows() {
                let v = values[(row, col)];
                if !v.is_finite() {
                    return Err(Error::MissingPrice {
                        row: row + 1,
                        asset: asset.clone(),
                    });
                }
                if v <= 0.0 {
                    return Err(Error::NonPositivePrice {
                        row: row + 1,
                        asset: asset.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            values,
        })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn periods(&self) -> usize {
        self.values.nrows()
    }

    /// Price row `t` (0-based), e.g. the current prices at the start of an
    /// evaluation window.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    pub fn into_raw(self) -> RawPrices {
        RawPrices {
            dates: self.dates,
            assets: self.assets,
            values: self.values,
        }
    }
}

/// Per-period simple returns, `T x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    assets: Vec<String>,
    values: DMatrix<f64>,
}

impl ReturnsMatrix {
    pub fn new(assets: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != assets.len() {
            return Err(Error::Dimension(format!(
                "{} asset names for {} return columns",
                assets.len(),
                values.ncols()
            )));
        }
        check_unique(&assets)?;
        for (col, asset) in assets.iter().enumerate() {
            for row in 0..values.nrows() {
                let v = values[(row, col)];
                if !v.is_finite() || v <= -1.0 {
                    return Err(Error::InvalidReturn {
                        row: row + 1,
                        asset: asset.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self { assets, values })
    }

    /// Builds returns from anonymous columns named `A1..AN`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::Dimension("return columns differ in length".into()));
        }
        let values = DMatrix::from_fn(t, columns.len(), |r, c| columns[c][r]);
        let assets = (1..=columns.len()).map(|i| format!("A{i}")).collect();
        Self::new(assets, values)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }
}

fn check_unique(assets: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for a in assets {
        if !seen.insert(a.as_str()) {
            return Err(Error::DuplicateAsset(a.clone()));
        }
    }
    Ok(())
}

fn is_gap(field: &str) -> bool {
    matches!(
        field.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "-"
    )
}

fn valid_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| -> Option<u32> {
        std::str::from_utf8(&b[r]).ok()?.parse().ok()
    };
    let (Some(_), Some(m), Some(d)) = (digits(0..4), digits(5..7), digits(8..10)) else {
        return false;
    };
    (1..=12).contains(&m) && (1..=31).contains(&d)
}

/// Reads a price file, keeping gaps (empty, `NA`, non-finite) as NaN.
pub fn read_raw_prices(path: impl AsRef<Path>, format: &CsvFormat) -> Result<RawPrices> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, message: String| Error::Parse {
        location: format!("{}:{line}", path.display()),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(parse_err(
            1,
            "header needs a date column and at least one asset".into(),
        ));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    check_unique(&assets)?;

    let mut dates = Vec::new();
    let mut flat = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let date = record.get(0).unwrap_or_default().to_owned();
        if format.iso_dates && !valid_iso_date(&date) {
            return Err(parse_err(line, format!("invalid ISO-8601 date {date:?}")));
        }
        if format.iso_dates {
            if let Some(prev) = dates.last() {
                if date.as_str() <= String::as_str(prev) {
                    return Err(Error::UnorderedDates {
                        row: dates.len() + 1,
                        label: date,
                    });
                }
            }
        }
        for field in record.iter().skip(1) {
            let v = if is_gap(field) {
                f64::NAN
            } else {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("malformed number {field:?}")))?
            };
            flat.push(if v.is_finite() { v } else { f64::NAN });
        }
        dates.push(date);
    }
    let values = DMatrix::from_row_slice(dates.len(), assets.len(), &flat);
    Ok(RawPrices {
        dates,
        assets,
        values,
    })
}

/// Reads and validates a gap-free price file.
pub fn load_prices(path: impl AsRef<Path>, format: &CsvFormat) -> Result<PriceTable> {
    let raw = read_raw_prices(path, format)?;
    PriceTable::new(raw.dates, raw.assets, raw.values)
}

/// Replaces each gap with the most recent earlier value in the same column.
pub fn fill_missing(raw: &RawPrices) -> Result<PriceTable> {
    let mut values = raw.values.clone();
    for (col, asset) in raw.assets.iter().enumerate() {
        if values.nrows() > 0 && values[(0, col)].is_nan() {
            return Err(Error::LeadingGap(asset.clone()));
        }
        for row in 1..values.nrows() {
            if values[(row, col)].is_nan() {
                values[(row, col)] = values[(row - 1, col)];
            }
        }
    }
    PriceTable::new(raw.dates.clone(), raw.assets.clone(), values)
}

/// `R[t, i] = P[t+1, i] / P[t, i] - 1`.
pub fn assets_return(prices: &PriceTable) -> ReturnsMatrix {
    let p = &prices.values;
    let t = p.nrows() - 1;
    let values = DMatrix::from_fn(t, p.ncols(), |r, c| p[(r + 1, c)] / p[(r, c)] - 1.0);
    ReturnsMatrix {
        assets: prices.assets.clone(),
        values,
    }
}
