use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesWindow;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const TIMESTAMP_HEADERS: [&str; 5] = ["date", "time", "timestamp", "datetime", "ds"];

/// A multivariate series stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    /// `columns[v][t]`
    pub columns: Vec<Vec<f64>>,
    pub frequency: Option<String>,
}

impl RawSeries {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("columns of unequal length".into()));
        }
        Ok(Self {
            names,
            columns,
            frequency: None,
        })
    }

    /// Number of variables d.
    pub fn variables(&self) -> usize {
        self.columns.len()
    }

    /// Number of observations N.
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `start..end` of every column.
    pub fn slice(&self, start: usize, end: usize) -> RawSeries {
        RawSeries {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
            frequency: self.frequency.clone(),
        }
    }

    /// `d × (end - start)` tensor of rows `start..end`.
    pub fn block(&self, start: usize, end: usize) -> Tensor {
        let data: Vec<f64> = self
            .columns
            .iter()
            .flat_map(|c| c[start..end].iter().copied())
            .collect();
        Tensor::new(&[self.variables(), end - start], data).expect("block dimensions")
    }

    /// The last `len` rows as a `d × len` tensor.
    pub fn tail(&self, len: usize) -> Result<Tensor> {
        if len > self.len() {
            return Err(Error::SplitTooShort {
                name: "input",
                len: self.len(),
                needed: len,
            });
        }
        Ok(self.block(self.len() - len, self.len()))
    }

    pub fn concat(parts: &[RawSeries]) -> Result<RawSeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyData("nothing to concatenate".into()))?;
        let mut columns = vec![Vec::new(); first.variables()];
        for p in parts {
            if p.variables() != first.variables() {
                return Err(Error::InvalidArgument("variable counts differ".into()));
            }
            for (dst, src) in columns.iter_mut().zip(&p.columns) {
                dst.extend_from_slice(src);
            }
        }
        let mut out = RawSeries::new(first.names.clone(), columns)?;
        out.frequency = first.frequency.clone();
        Ok(out)
    }
}

/// Reads a headered CSV. A leading column named like a timestamp
/// (`date`, `time`, `timestamp`, `datetime`, `ds`) is skipped; all other
/// cells must parse as numbers. Reported row numbers are file line numbers.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::EmptyData(format!("{} has no header", path.display())));
    }
    let skip = usize::from(TIMESTAMP_HEADERS.contains(&headers[0].to_ascii_lowercase().as_str()));
    let names: Vec<String> = headers[skip..].to_vec();
    if names.is_empty() {
        return Err(Error::EmptyData(format!("{} has no value columns", path.display())));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = i + 2;
        if record.len() != headers.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: line {line} has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        for (j, cell) in record.iter().skip(skip).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                row: line,
                column: names[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseCell {
                    row: line,
                    column: names[j].clone(),
                    value: cell.to_string(),
                });
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::EmptyData(format!("{} has no data rows", path.display())));
    }
    RawSeries::new(names, columns)
}

/// Writes the series with a header row; values use shortest round-trip
/// formatting so a reload is bit-exact.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&series.names).map_err(csv_err)?;
    for t in 0..series.len() {
        w.write_record(series.columns.iter().map(|c| c[t].to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: RawSeries,
    pub valid: RawSeries,
    pub test: RawSeries,
}

/// Contiguous train/valid/test partition in time order. The first two sizes
/// are `floor(N * r_i / Σr)`; the remainder goes to the test split. Every
/// split must hold at least `min_len` rows.
pub fn chronological_split(series: &RawSeries, ratios: [u32; 3], min_len: usize) -> Result<Splits> {
    if ratios.contains(&0) {
        return Err(Error::InvalidArgument(format!("split ratios must be positive: {ratios:?}")));
    }
    let n = series.len();
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let train = (n as u64 * ratios[0] as u64 / total) as usize;
    let valid = (n as u64 * ratios[1] as u64 / total) as usize;
    let test = n - train - valid;
    for (name, len) in [("train", train), ("valid", valid), ("test", test)] {
        if len < min_len {
            return Err(Error::SplitTooShort {
                name,
                len,
                needed: min_len,
            });
        }
    }
    Ok(Splits {
        train: series.slice(0, train),
        valid: series.slice(train, train + valid),
        test: series.slice(train + valid, n),
    })
}

/// `(N - L - H) / stride + 1` contiguous windows.
pub fn sliding_windows(
    series: &RawSeries,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SeriesWindow>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "lookback, horizon and stride must be positive".into(),
        ));
    }
    let need = lookback + horizon;
    if series.len() < need {
        return Err(Error::SplitTooShort {
            name: "windowing",
            len: series.len(),
            needed: need,
        });
    }
    let count = (series.len() - need) / stride + 1;
    (0..count)
        .map(|i| {
            let o = i * stride;
            SeriesWindow::new(
                series.block(o, o + lookback),
                series.block(o + lookback, o + need),
                o,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnivariateMode {
    LastVariable,
    PerVariable,
}

pub fn univariate_extract(series: &RawSeries, mode: UnivariateMode) -> Vec<RawSeries> {
    let single = |v: usize| RawSeries {
        names: vec![series.names[v].clone()],
        columns: vec![series.columns[v].clone()],
        frequency: series.frequency.clone(),
    };
    match mode {
        UnivariateMode::LastVariable => series.variables().checked_sub(1).map(single).into_iter().collect(),
        UnivariateMode::PerVariable => (0..series.variables()).map(single).collect(),
    }
}
