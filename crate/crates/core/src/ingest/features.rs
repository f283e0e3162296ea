//! Node feature encoding.
//!
//! Contract rows carry standardized numeric metrics, cyclical month
//! encoding and one-hot categorical blocks. Entity rows carry the six
//! topological features when supplied. Fitting (epoch year, scaler
//! statistics, vocabularies) and transforming are separate steps so test
//! rows can never leak into fitted state.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ContractRecord, IngestError, Result};
use crate::graph::{HeteroGraph, NodeKind};

/// Numeric columns that are standardized, in feature order.
pub const NUMERIC_COLUMNS: [&str; 7] = [
    "issue_amount_musd",
    "expected_loss",
    "prob_first_loss",
    "prob_exhaust",
    "conditional_expected_loss",
    "exposure_term_months",
    "years_since_epoch",
];

/// Topological feature columns carried by entity rows.
pub const TOPO_COLUMNS: [&str; 6] =
    ["topo_degree", "topo_closeness", "topo_betweenness", "topo_eigenvector", "topo_katz", "topo_clustering"];

/// Dense row-major feature table with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, names: Vec<String>) -> Self {
        let data = vec![0.0; rows * names.len()];
        FeatureMatrix { names, rows, data }
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let c = self.cols();
        self.data[row * c + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[row * c..(row + 1) * c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }
}

/// Cyclical month encoding plus years elapsed since the epoch year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temporal {
    pub years_since_epoch: f64,
    pub month_sin: f64,
    pub month_cos: f64,
}

pub fn encode_temporal(record: &ContractRecord, epoch_year: i32) -> Result<Temporal> {
    let m = record.issue_month;
    if !(1..=12).contains(&m) {
        return Err(IngestError::InvalidMonth(m));
    }
    let angle = 2.0 * PI * f64::from(m) / 12.0;
    Ok(Temporal {
        years_since_epoch: f64::from(record.issue_year - epoch_year),
        month_sin: angle.sin(),
        month_cos: angle.cos(),
    })
}

/// Categorical or list-valued record fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalColumn {
    SpRating,
    TriggerTypes,
    RiskModeler,
    Perils,
    Countries,
    StatesProvinces,
    Cedent,
    Underwriters,
}

impl CategoricalColumn {
    pub fn name(self) -> &'static str {
        match self {
            CategoricalColumn::SpRating => "sp_rating",
            CategoricalColumn::TriggerTypes => "trigger_types",
            CategoricalColumn::RiskModeler => "risk_modeler",
            CategoricalColumn::Perils => "perils",
            CategoricalColumn::Countries => "countries",
            CategoricalColumn::StatesProvinces => "states_provinces",
            CategoricalColumn::Cedent => "cedent",
            CategoricalColumn::Underwriters => "underwriters",
        }
    }

    pub fn values(self, r: &ContractRecord) -> Vec<&str> {
        fn one(s: &str) -> Vec<&str> {
            vec![s]
        }
        fn many(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        match self {
            CategoricalColumn::SpRating => one(&r.sp_rating),
            CategoricalColumn::TriggerTypes => many(&r.trigger_types),
            CategoricalColumn::RiskModeler => one(&r.risk_modeler),
            CategoricalColumn::Perils => many(&r.perils),
            CategoricalColumn::Countries => many(&r.countries),
            CategoricalColumn::StatesProvinces => many(&r.states_provinces),
            CategoricalColumn::Cedent => one(&r.cedent),
            CategoricalColumn::Underwriters => many(&r.underwriters),
        }
    }
}

/// Closed vocabulary of one categorical column, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub column: CategoricalColumn,
    pub levels: Vec<String>,
}

impl Vocabulary {
    pub fn fit<'a, I>(records: I, column: CategoricalColumn) -> Self
    where
        I: IntoIterator<Item = &'a ContractRecord>,
    {
        let levels: BTreeSet<String> =
            records.into_iter().flat_map(|r| column.values(r).into_iter().map(str::to_string)).collect();
        Vocabulary { column, levels: levels.into_iter().collect() }
    }

    pub fn feature_names(&self) -> impl Iterator<Item = String> + '_ {
        self.levels.iter().map(move |l| format!("{}={}", self.column.name(), l))
    }

    /// Writes the 0/1 block for `record` into `out`. Unseen levels leave
    /// the block at zero.
    pub fn encode_into(&self, record: &ContractRecord, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.levels.len());
        out.fill(0.0);
        for v in self.column.values(record) {
            if let Ok(i) = self.levels.binary_search_by(|l| l.as_str().cmp(v)) {
                out[i] = 1.0;
            }
        }
    }
}

/// Fits a vocabulary on `records` and encodes them.
pub fn one_hot_multi(records: &[ContractRecord], column: CategoricalColumn) -> (Vocabulary, FeatureMatrix) {
    let vocab = Vocabulary::fit(records, column);
    let mut m = FeatureMatrix::zeros(records.len(), vocab.feature_names().collect());
    for (i, r) in records.iter().enumerate() {
        vocab.encode_into(r, m.row_mut(i));
    }
    (vocab, m)
}

/// Mean and population standard deviation of one column. A column with zero
/// spread is only centered and flagged `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

impl ColumnScaler {
    pub fn fit(name: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(IngestError::EmptyFit);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
        Ok(ColumnScaler { name: name.to_string(), mean, std, degenerate })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if self.degenerate {
            x - self.mean
        } else {
            (x - self.mean) / self.std
        }
    }
}

/// Standardizes `columns` in place using statistics of `fit_rows` only, and
/// returns the fitted scalers.
pub fn standardize(matrix: &mut FeatureMatrix, columns: &[usize], fit_rows: &[usize]) -> Result<Vec<ColumnScaler>> {
    if fit_rows.is_empty() {
        return Err(IngestError::EmptyFit);
    }
    let mut scalers = Vec::with_capacity(columns.len());
    for &c in columns {
        if c >= matrix.cols() {
            return Err(IngestError::DimensionMismatch(format!(
                "column {c} out of range for {} columns",
                matrix.cols()
            )));
        }
        let values: Vec<f64> = fit_rows.iter().map(|&r| matrix.get(r, c)).collect();
        let s = ColumnScaler::fit(&matrix.names[c], &values)?;
        for r in 0..matrix.rows {
            let v = s.apply(matrix.get(r, c));
            matrix.set(r, c, v);
        }
        scalers.push(s);
    }
    Ok(scalers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncoderOptions {
    /// Also one-hot encode the entity columns (perils, countries, ...), for
    /// models that see no graph.
    pub tabular: bool,
}

/// Fitted contract-feature encoding: epoch year, numeric scalers and
/// categorical vocabularies, all learned from training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub epoch_year: i32,
    pub scalers: Vec<ColumnScaler>,
    pub vocabularies: Vec<Vocabulary>,
    pub options: EncoderOptions,
}

fn raw_numeric(r: &ContractRecord, epoch_year: i32) -> [f64; 7] {
    [
        r.issue_amount_musd,
        r.expected_loss,
        r.prob_first_loss,
        r.prob_exhaust,
        r.conditional_expected_loss,
        r.exposure_term_months,
        f64::from(r.issue_year - epoch_year),
    ]
}

impl FeatureEncoder {
    pub fn fit(train: &[&ContractRecord], options: EncoderOptions) -> Result<Self> {
        let epoch_year = train.iter().map(|r| r.issue_year).min().ok_or(IngestError::EmptyFit)?;
        let raw: Vec<[f64; 7]> = train.iter().map(|r| raw_numeric(r, epoch_year)).collect();
        let scalers = NUMERIC_COLUMNS
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = raw.iter().map(|row| row[j]).collect();
                ColumnScaler::fit(name, &col)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut columns = vec![CategoricalColumn::SpRating, CategoricalColumn::TriggerTypes];
        if options.tabular {
            columns.extend([
                CategoricalColumn::RiskModeler,
                CategoricalColumn::Perils,
                CategoricalColumn::Countries,
                CategoricalColumn::StatesProvinces,
                CategoricalColumn::Cedent,
                CategoricalColumn::Underwriters,
            ]);
        }
        let vocabularies = columns.into_iter().map(|c| Vocabulary::fit(train.iter().copied(), c)).collect();

        Ok(FeatureEncoder { epoch_year, scalers, vocabularies, options })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = NUMERIC_COLUMNS.iter().map(|s| s.to_string()).collect();
        names.push("month_sin".into());
        names.push("month_cos".into());
        for v in &self.vocabularies {
            names.extend(v.feature_names());
        }
        names
    }

    pub fn dim(&self) -> usize {
        NUMERIC_COLUMNS.len() + 2 + self.vocabularies.iter().map(|v| v.levels.len()).sum::<usize>()
    }

    pub fn encode_into(&self, r: &ContractRecord, out: &mut [f64]) -> Result<()> {
        if out.len() < self.dim() {
            return Err(IngestError::DimensionMismatch(format!(
                "row has {} slots, encoder needs {}",
                out.len(),
                self.dim()
            )));
        }
        let t = encode_temporal(r, self.epoch_year)?;
        for (j, (x, s)) in raw_numeric(r, self.epoch_year).iter().zip(&self.scalers).enumerate() {
            out[j] = s.apply(*x);
        }
        let mut at = NUMERIC_COLUMNS.len();
        out[at] = t.month_sin;
        out[at + 1] = t.month_cos;
        at += 2;
        for v in &self.vocabularies {
            let w = v.levels.len();
            v.encode_into(r, &mut out[at..at + w]);
            at += w;
        }
        Ok(())
    }

    pub fn encode_records(&self, records: &[ContractRecord]) -> Result<FeatureMatrix> {
        let mut m = FeatureMatrix::zeros(records.len(), self.feature_names());
        for (i, r) in records.iter().enumerate() {
            self.encode_into(r, m.row_mut(i))?;
        }
        Ok(m)
    }
}

/// Node feature matrix for `graph`: contract columns from `encoder`, then
/// the six topological columns. Contract rows get encoded record features
/// and zero topology; entity rows get `topo` (rows aligned with graph
/// nodes) or zeros.
pub fn attach_features(
    graph: &HeteroGraph,
    records: &[ContractRecord],
    encoder: &FeatureEncoder,
    topo: Option<&FeatureMatrix>,
) -> Result<FeatureMatrix> {
    if let Some(t) = topo {
        if t.rows != graph.num_nodes() || t.cols() != TOPO_COLUMNS.len() {
            return Err(IngestError::DimensionMismatch(format!(
                "topology block is {}x{}, expected {}x{}",
                t.rows,
                t.cols(),
                graph.num_nodes(),
                TOPO_COLUMNS.len()
            )));
        }
    }
    let by_id: HashMap<String, &ContractRecord> =
        records.iter().map(|r| (crate::graph::dedup_key(NodeKind::Contract, &r.contract_id).1, r)).collect();
    let contract_dim = encoder.dim();
    let mut names = encoder.feature_names();
    names.extend(TOPO_COLUMNS.iter().map(|s| s.to_string()));
    let mut m = FeatureMatrix::zeros(graph.num_nodes(), names);
    for u in graph.node_ids() {
        let row = m.row_mut(u.index());
        if graph.kind(u) == NodeKind::Contract {
            let key = crate::graph::dedup_key(NodeKind::Contract, graph.label(u)).1;
            let rec = by_id.get(&key).ok_or_else(|| IngestError::MissingRecord(graph.label(u).to_string()))?;
            encoder.encode_into(rec, &mut row[..contract_dim])?;
        } else if let Some(t) = topo {
            row[contract_dim..].copy_from_slice(t.row(u.index()));
        }
    }
    Ok(m)
}
