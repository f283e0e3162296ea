//! Contract records: CSV I/O, graph construction, feature encoding and the
//! calibrated synthetic generator.

mod build;
mod features;
pub mod marginals;
mod synth;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use build::record_entities;
pub use build::{build_graph, contract_relation, pair_relation, relation_registry, BuiltGraph};
pub use features::{
    attach_features, encode_temporal, one_hot_multi, standardize, CategoricalColumn, ColumnScaler, EncoderOptions,
    FeatureEncoder, FeatureMatrix, Temporal, Vocabulary, NUMERIC_COLUMNS, TOPO_COLUMNS,
};
pub use synth::{synth_dataset, PlantedCoefficients, SynthConfig, SynthManifest, SynthOutput};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("duplicate contract id {0:?}")]
    DuplicateContract(String),
    #[error("issue month {0} outside 1..=12")]
    InvalidMonth(u32),
    #[error("feature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no contract record for node {0:?}")]
    MissingRecord(String),
    #[error("cannot fit on an empty row set")]
    EmptyFit,
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Label used for missing categorical values.
pub const UNKNOWN: &str = "UNKNOWN";

/// One bond's raw fields. Fractions are plain decimals (0.0758 = 7.58%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub contract_id: String,
    pub issue_year: i32,
    pub issue_month: u32,
    pub issue_amount_musd: f64,
    pub spread_premium: f64,
    pub expected_loss: f64,
    pub prob_first_loss: f64,
    pub prob_exhaust: f64,
    pub conditional_expected_loss: f64,
    pub sp_rating: String,
    pub trigger_types: Vec<String>,
    pub risk_modeler: String,
    pub perils: Vec<String>,
    pub countries: Vec<String>,
    pub states_provinces: Vec<String>,
    pub cedent: String,
    pub underwriters: Vec<String>,
    pub exposure_term_months: f64,
}

/// Canonical CSV header, in column order.
pub const CSV_COLUMNS: [&str; 18] = [
    "contract_id",
    "issue_year",
    "issue_month",
    "issue_amount_musd",
    "spread_premium",
    "expected_loss",
    "prob_first_loss",
    "prob_exhaust",
    "conditional_expected_loss",
    "sp_rating",
    "trigger_types",
    "risk_modeler",
    "perils",
    "countries",
    "states_provinces",
    "cedent",
    "underwriters",
    "exposure_term_months",
];

/// A rejected CSV row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub column: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub records: Vec<ContractRecord>,
    pub errors: Vec<RowError>,
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<ParseReport> {
    parse_csv_reader(File::open(path)?)
}

/// Parses contract rows. Schema problems abort; bad rows are collected in
/// [`ParseReport::errors`] and parsing continues.
pub fn parse_csv_reader<R: Read>(reader: R) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = [0usize; CSV_COLUMNS.len()];
    for (slot, name) in positions.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut report = ParseReport::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| row.get(positions[i]).unwrap_or("");
        match parse_row(&cell) {
            Ok(rec) => report.records.push(rec),
            Err((column, message)) => report.errors.push(RowError { line, column: column.to_string(), message }),
        }
    }
    Ok(report)
}

type CellError = (&'static str, String);

fn parse_row<'a>(cell: &impl Fn(usize) -> &'a str) -> std::result::Result<ContractRecord, CellError> {
    let num = |i: usize| -> std::result::Result<f64, CellError> {
        let raw = cell(i);
        let v: f64 = raw.parse().map_err(|_| (CSV_COLUMNS[i], format!("not a number: {raw:?}")))?;
        if !v.is_finite() {
            return Err((CSV_COLUMNS[i], format!("not finite: {raw:?}")));
        }
        Ok(v)
    };
    let nonneg = |i: usize| -> std::result::Result<f64, CellError> {
        let v = num(i)?;
        if v < 0.0 {
            return Err((CSV_COLUMNS[i], format!("negative value {v}")));
        }
        Ok(v)
    };
    let required_list = |i: usize| -> std::result::Result<Vec<String>, CellError> {
        let items = split_list(cell(i));
        if items.is_empty() {
            return Err((CSV_COLUMNS[i], "empty list".to_string()));
        }
        Ok(items)
    };
    let category = |i: usize| -> String {
        let s = cell(i);
        if s.is_empty() {
            UNKNOWN.to_string()
        } else {
            s.to_string()
        }
    };

    let contract_id = cell(0).to_string();
    if contract_id.is_empty() {
        return Err((CSV_COLUMNS[0], "empty contract id".to_string()));
    }
    let issue_year: i32 = cell(1).parse().map_err(|_| (CSV_COLUMNS[1], format!("not an integer: {:?}", cell(1))))?;
    let issue_month: u32 = cell(2).parse().map_err(|_| (CSV_COLUMNS[2], format!("not an integer: {:?}", cell(2))))?;
    if !(1..=12).contains(&issue_month) {
        return Err((CSV_COLUMNS[2], format!("month {issue_month} outside 1..=12")));
    }
    let cedent = cell(15).to_string();
    if cedent.is_empty() {
        return Err((CSV_COLUMNS[15], "empty cedent".to_string()));
    }

    Ok(ContractRecord {
        contract_id,
        issue_year,
        issue_month,
        issue_amount_musd: nonneg(3)?,
        spread_premium: nonneg(4)?,
        expected_loss: nonneg(5)?,
        prob_first_loss: nonneg(6)?,
        prob_exhaust: nonneg(7)?,
        conditional_expected_loss: nonneg(8)?,
        sp_rating: category(9),
        trigger_types: required_list(10)?,
        risk_modeler: category(11),
        perils: required_list(12)?,
        countries: required_list(13)?,
        states_provinces: split_list(cell(14)),
        cedent,
        underwriters: required_list(16)?,
        exposure_term_months: nonneg(17)?,
    })
}

fn split_list(cell: &str) -> Vec<String> {
    cell.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Writes records in the canonical CSV layout.
pub fn write_csv<W: Write>(records: &[ContractRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.contract_id.clone(),
            r.issue_year.to_string(),
            r.issue_month.to_string(),
            r.issue_amount_musd.to_string(),
            r.spread_premium.to_string(),
            r.expected_loss.to_string(),
            r.prob_first_loss.to_string(),
            r.prob_exhaust.to_string(),
            r.conditional_expected_loss.to_string(),
            r.sp_rating.clone(),
            r.trigger_types.join(";"),
            r.risk_modeler.clone(),
            r.perils.join(";"),
            r.countries.join(";"),
            r.states_provinces.join(";"),
            r.cedent.clone(),
            r.underwriters.join(";"),
            r.exposure_term_months.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(records: &[ContractRecord], path: impl AsRef<Path>) -> Result<()> {
    write_csv(records, File::create(path)?)
}
