//! Columnar dataset with typed columns and per-cell missing markers.
//!
//! A [`Frame`] is immutable once built and shared read-only by every
//! estimator. All numerics are f64; CSV interchange is RFC-4180 with "."
//! decimals, so written files re-read bit-exactly for finite floats.

mod design;

pub use design::{build_design, DesignMatrix, FormulaSpec, Term};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("column {0:?} declared in the schema is missing from the file header")]
    MissingColumn(String),
    #[error("numeric overflow in column {column:?} row {row}: {value:?} is out of f64 range")]
    TypeOverflow { column: String, row: usize, value: String },
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("column {0:?} not found in frame")]
    UnknownColumn(String),
    #[error("column {0:?} has the wrong type for this operation")]
    BadColumnType(String),
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("column {0:?} has length {1}, frame has {2} rows")]
    LengthMismatch(String, usize, usize),
    #[error("CPI value {0} is not strictly positive")]
    NonPositiveCpi(f64),
    #[error("no rows remain after listwise deletion")]
    EmptyAfterDeletion,
}

impl From<csv::Error> for FrameError {
    fn from(e: csv::Error) -> Self {
        FrameError::IoFailure(e.to_string())
    }
}

impl From<std::io::Error> for FrameError {
    fn from(e: std::io::Error) -> Self {
        FrameError::IoFailure(e.to_string())
    }
}

/// Declared type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Boolean,
}

/// Typed column storage. Categorical levels are kept in first-appearance
/// order and codes index into them.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical { levels: Vec<String>, codes: Vec<Option<u32>> },
    Boolean(Vec<Option<bool>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
            ColumnData::Boolean(_) => ColumnKind::Boolean,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Categorical { codes, .. } => codes[row].is_none(),
            ColumnData::Boolean(v) => v[row].is_none(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Column {
        Column { name: name.into(), data: ColumnData::Numeric(values) }
    }

    pub fn boolean(name: impl Into<String>, values: Vec<Option<bool>>) -> Column {
        Column { name: name.into(), data: ColumnData::Boolean(values) }
    }

    /// Encode string labels into a categorical column; levels are assigned
    /// codes in order of first appearance.
    pub fn categorical_from_labels(
        name: impl Into<String>,
        labels: &[Option<&str>],
    ) -> Column {
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let codes = labels
            .iter()
            .map(|lab| {
                lab.map(|s| {
                    *lookup.entry(s.to_string()).or_insert_with(|| {
                        levels.push(s.to_string());
                        (levels.len() - 1) as u32
                    })
                })
            })
            .collect();
        Column { name: name.into(), data: ColumnData::Categorical { levels, codes } }
    }

    /// Numeric view: Numeric as-is, Boolean as 0/1. Categorical is an error.
    pub fn as_numeric(&self) -> Result<Vec<Option<f64>>, FrameError> {
        match &self.data {
            ColumnData::Numeric(v) => Ok(v.clone()),
            ColumnData::Boolean(v) => {
                Ok(v.iter().map(|b| b.map(|x| if x { 1.0 } else { 0.0 })).collect())
            }
            ColumnData::Categorical { .. } => Err(FrameError::BadColumnType(self.name.clone())),
        }
    }

    pub fn label(&self, row: usize) -> Option<&str> {
        match &self.data {
            ColumnData::Categorical { levels, codes } => {
                codes[row].map(|c| levels[c as usize].as_str())
            }
            _ => None,
        }
    }
}

/// Ordered (name, kind) declarations used when reading a CSV file.
#[derive(Debug, Clone, Default)]
pub struct Schema(pub Vec<(String, ColumnKind)>);

impl Schema {
    pub fn new() -> Schema {
        Schema(Vec::new())
    }

    pub fn with(mut self, name: &str, kind: ColumnKind) -> Schema {
        self.0.push((name.to_string(), kind));
        self
    }
}

/// An immutable columnar dataset. All columns share the same row count and
/// have unique names.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    n_rows: usize,
}

impl Frame {
    pub fn new() -> Frame {
        Frame::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn push_column(&mut self, column: Column) -> Result<(), FrameError> {
        if self.index.contains_key(&column.name) {
            return Err(FrameError::DuplicateColumn(column.name.clone()));
        }
        if !self.columns.is_empty() && column.data.len() != self.n_rows {
            return Err(FrameError::LengthMismatch(
                column.name.clone(),
                column.data.len(),
                self.n_rows,
            ));
        }
        if let ColumnData::Categorical { levels, codes } = &column.data {
            let mut seen = std::collections::HashSet::new();
            for l in levels {
                assert!(seen.insert(l), "categorical levels must be unique");
            }
            for c in codes.iter().flatten() {
                assert!((*c as usize) < levels.len(), "categorical code out of range");
            }
        }
        if self.columns.is_empty() {
            self.n_rows = column.data.len();
        }
        self.index.insert(column.name.clone(), self.columns.len());
        self.columns.push(column);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&Column, FrameError> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| FrameError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Row subset. Categorical columns keep their full level vocabulary so
    /// designs built from subsets stay column-compatible.
    pub fn filter(&self, keep: &[bool]) -> Frame {
        assert_eq!(keep.len(), self.n_rows);
        let mut out = Frame::new();
        for col in &self.columns {
            let data = match &col.data {
                ColumnData::Numeric(v) => ColumnData::Numeric(
                    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect(),
                ),
                ColumnData::Boolean(v) => ColumnData::Boolean(
                    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect(),
                ),
                ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                    levels: levels.clone(),
                    codes: codes.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect(),
                },
            };
            out.push_column(Column { name: col.name.clone(), data }).unwrap();
        }
        out.n_rows = keep.iter().filter(|&&k| k).count();
        out
    }

    /// Read a CSV file against a declared schema. Cells that fail to parse
    /// become missing; numeric literals outside finite f64 range are an
    /// error. Row order is preserved and columns not named in the schema are
    /// ignored.
    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Frame, FrameError> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let mut positions = Vec::with_capacity(schema.0.len());
        for (name, _) in &schema.0 {
            let pos = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| FrameError::MissingColumn(name.clone()))?;
            positions.push(pos);
        }

        let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.0.len()];
        for record in reader.records() {
            let record = record?;
            for (slot, &pos) in positions.iter().enumerate() {
                raw[slot].push(record.get(pos).unwrap_or("").to_string());
            }
        }

        let mut frame = Frame::new();
        for ((name, kind), cells) in schema.0.iter().zip(raw) {
            let column = match kind {
                ColumnKind::Numeric => {
                    let mut values = Vec::with_capacity(cells.len());
                    for (row, cell) in cells.iter().enumerate() {
                        match cell.parse::<f64>() {
                            Ok(v) if v.is_finite() => values.push(Some(v)),
                            Ok(v) if v.is_infinite() => {
                                return Err(FrameError::TypeOverflow {
                                    column: name.clone(),
                                    row,
                                    value: cell.clone(),
                                })
                            }
                            _ => values.push(None),
                        }
                    }
                    Column::numeric(name.clone(), values)
                }
                ColumnKind::Boolean => {
                    let values = cells
                        .iter()
                        .map(|cell| match cell.trim() {
                            "1" | "true" | "TRUE" | "True" => Some(true),
                            "0" | "false" | "FALSE" | "False" => Some(false),
                            _ => None,
                        })
                        .collect();
                    Column::boolean(name.clone(), values)
                }
                ColumnKind::Categorical => {
                    let labels: Vec<Option<&str>> = cells
                        .iter()
                        .map(|c| if c.is_empty() { None } else { Some(c.as_str()) })
                        .collect();
                    Column::categorical_from_labels(name.clone(), &labels)
                }
            };
            frame.push_column(column)?;
        }
        Ok(frame)
    }

    /// Write all columns as RFC-4180 CSV. Missing cells are empty; floats
    /// use the shortest representation that round-trips; booleans are 1/0.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), FrameError> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in 0..self.n_rows {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|col| match &col.data {
                    ColumnData::Numeric(v) => {
                        v[row].map(|x| format!("{x}")).unwrap_or_default()
                    }
                    ColumnData::Boolean(v) => v[row]
                        .map(|x| if x { "1".to_string() } else { "0".to_string() })
                        .unwrap_or_default(),
                    ColumnData::Categorical { levels, codes } => codes[row]
                        .map(|c| levels[c as usize].clone())
                        .unwrap_or_default(),
                })
                .collect();
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame[{} rows x {} cols]", self.n_rows, self.columns.len())
    }
}

/// Deflate a nominal series to base-2015 prices: `nominal / (cpi / 100)`.
/// Missing cells propagate; a non-positive CPI value is an error.
pub fn real_wage(nominal: &Column, cpi_2015_base: &Column) -> Result<Column, FrameError> {
    let nom = nominal.as_numeric()?;
    let cpi = cpi_2015_base.as_numeric()?;
    assert_eq!(nom.len(), cpi.len(), "column lengths differ");
    for v in cpi.iter().flatten() {
        if *v <= 0.0 {
            return Err(FrameError::NonPositiveCpi(*v));
        }
    }
    let values = nom
        .iter()
        .zip(&cpi)
        .map(|(n, c)| match (n, c) {
            (Some(n), Some(c)) => Some(n / (c / 100.0)),
            _ => None,
        })
        .collect();
    Ok(Column::numeric(format!("real_{}", nominal.name), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn write_temp(contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("segkit_frame_{}.csv", crate::rng::mix64(contents.len() as u64 ^ contents.as_bytes().iter().map(|&b| b as u64).sum::<u64>())));
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn read_csv_blank_numeric_becomes_missing() {
        let path = write_temp("id,wage\n1,10.5\n2,\n3,12.25\n");
        let schema = Schema::new().with("id", ColumnKind::Numeric).with("wage", ColumnKind::Numeric);
        let frame = Frame::read_csv(&path, &schema).unwrap();
        assert_eq!(frame.n_rows(), 3);
        let wage = frame.column("wage").unwrap().as_numeric().unwrap();
        assert_eq!(wage[0], Some(10.5));
        assert_eq!(wage[1], None);
        assert_eq!(wage[2], Some(12.25));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn read_csv_missing_declared_column_errors() {
        let path = write_temp("id,hours\n1,40\n");
        let schema = Schema::new().with("wage", ColumnKind::Numeric);
        match Frame::read_csv(&path, &schema) {
            Err(FrameError::MissingColumn(name)) => assert_eq!(name, "wage"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn read_csv_numeric_overflow_errors() {
        let path = write_temp("x\n1e999\n");
        let schema = Schema::new().with("x", ColumnKind::Numeric);
        assert!(matches!(
            Frame::read_csv(&path, &schema),
            Err(FrameError::TypeOverflow { .. })
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn categorical_first_appearance_coding() {
        // oracle: walk the labels once, assign a fresh code at first sight
        let labels = ["a", "b", "a"];
        let mut oracle_levels: Vec<&str> = Vec::new();
        let mut oracle_codes = Vec::new();
        for l in labels {
            let code = oracle_levels.iter().position(|&x| x == l).unwrap_or_else(|| {
                oracle_levels.push(l);
                oracle_levels.len() - 1
            });
            oracle_codes.push(code as u32);
        }
        assert_eq!(oracle_levels, vec!["a", "b"]);
        assert_eq!(oracle_codes, vec![0, 1, 0]);

        let path = write_temp("g\na\nb\na\n");
        let schema = Schema::new().with("g", ColumnKind::Categorical);
        let frame = Frame::read_csv(&path, &schema).unwrap();
        match &frame.column("g").unwrap().data {
            ColumnData::Categorical { levels, codes } => {
                assert_eq!(levels, &["a".to_string(), "b".to_string()]);
                assert_eq!(codes, &vec![Some(0), Some(1), Some(0)]);
            }
            _ => panic!("expected categorical"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn real_wage_examples() {
        let nom = Column::numeric("wage", vec![Some(10.0), Some(10.0), Some(12.5), None]);
        let cpi = Column::numeric("cpi", vec![Some(100.0), Some(200.0), Some(96.3), Some(100.0)]);
        let out = real_wage(&nom, &cpi).unwrap();
        let v = out.as_numeric().unwrap();
        assert_abs_diff_eq!(v[0].unwrap(), 10.0, epsilon = 0.0);
        assert_abs_diff_eq!(v[1].unwrap(), 5.0, epsilon = 0.0);
        assert_abs_diff_eq!(v[2].unwrap(), 12.5 / 0.963, epsilon = 1e-12);
        assert!(v[3].is_none());
        assert_eq!(out.name, "real_wage");
    }

    #[test]
    fn real_wage_rejects_non_positive_cpi() {
        let nom = Column::numeric("wage", vec![Some(10.0)]);
        let cpi = Column::numeric("cpi", vec![Some(0.0)]);
        assert!(matches!(real_wage(&nom, &cpi), Err(FrameError::NonPositiveCpi(_))));
    }

    #[test]
    fn filter_preserves_levels() {
        let mut frame = Frame::new();
        frame
            .push_column(Column::categorical_from_labels(
                "g",
                &[Some("x"), Some("y"), Some("z")],
            ))
            .unwrap();
        let sub = frame.filter(&[true, false, false]);
        match &sub.column("g").unwrap().data {
            ColumnData::Categorical { levels, .. } => assert_eq!(levels.len(), 3),
            _ => panic!(),
        }
    }
}

#[cfg(test)]
mod roundtrip_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Written CSV re-reads bit-exactly for finite floats; missing
        /// cells survive as missing.
        #[test]
        fn csv_round_trip_is_bit_exact(
            values in proptest::collection::vec(
                proptest::option::of(
                    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
                ),
                1..40,
            )
        ) {
            let mut frame = Frame::new();
            frame.push_column(Column::numeric("x", values.clone())).unwrap();
            let path = std::env::temp_dir().join(format!(
                "segkit_roundtrip_{}_{}.csv",
                std::process::id(),
                crate::rng::mix64(values.len() as u64)
            ));
            frame.write_csv(&path).unwrap();
            let schema = Schema::new().with("x", ColumnKind::Numeric);
            let back = Frame::read_csv(&path, &schema).unwrap();
            std::fs::remove_file(&path).ok();
            let col = back.column("x").unwrap().as_numeric().unwrap();
            prop_assert_eq!(col.len(), values.len());
            for (a, b) in col.iter().zip(&values) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!(a.to_bits() == b.to_bits(),
                        "{a} != {b}"),
                    (None, None) => {}
                    other => prop_assert!(false, "missingness changed: {:?}", other),
                }
            }
        }
    }
}
