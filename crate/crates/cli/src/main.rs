//! `catnet` command-line driver.
//!
//! Every subcommand writes its outputs plus a `manifest.json` under `--out`.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use catnet_core::experiments::{
    self, fit_full, model_inputs, oos_splits, oot_splits, random_search, run_ablation, Arm, ExperimentConfig,
    ExperimentError, DEFAULT_FOLDS, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC,
};
use catnet_core::explain::{
    explain_nodes, rank_edge_importance_by_type, rank_entities, rank_node_features, ExplainConfig, ExplainError,
};
use catnet_core::graph::{GraphError, HeteroGraph, IssueYears, NodeKind};
use catnet_core::ingest::{self, build_graph, synth_dataset, ContractRecord, FeatureEncoder, IngestError, SynthConfig};
use catnet_core::rgcn::{self, load_checkpoint, save_checkpoint, Activation, OptimizerKind, RgcnError, TrainConfig};
use catnet_core::topology::{self, centralities, centrality_csv, topology_report, ReportOptions, TopologyError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser, Serialize)]
#[command(name = "catnet", version, about = "Graph learning pipeline for catastrophe-bond spreads")]
struct Cli {
    /// Worker threads for fold, trial, bootstrap and explanation parallelism.
    #[arg(long, global = true, env = "CATNET_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Generate a synthetic contract corpus.
    Synth(SynthArgs),
    /// Parse a contracts CSV and build the graph.
    Ingest(IngestArgs),
    /// Network statistics, power-law fit and centralities.
    Topology(TopologyArgs),
    /// Fit an R-GCN on a whole corpus.
    Train(TrainArgs),
    /// Ablation experiment under the out-of-sample or out-of-time protocol.
    Evaluate(EvaluateArgs),
    /// Explain predictions of a trained checkpoint.
    Explain(ExplainArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_entity_effects: bool,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TopologyArgs {
    /// Contracts CSV, or a graph JSON export.
    #[arg(long = "in")]
    input: PathBuf,
    /// Issue years (`contract id -> year` JSON) for a graph JSON input.
    #[arg(long)]
    years: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    katz_beta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value = "elu", value_parser = parse_activation)]
    activation: Activation,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
    #[arg(long)]
    katz_beta: Option<f64>,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig {
                learning_rate: self.lr,
                optimizer: self.optimizer,
                max_epochs: self.epochs,
                patience: self.patience,
                dropout: self.dropout,
                hidden: self.hidden,
                layers: self.layers,
                activation: self.activation,
                seed,
            },
            n_bases: self.bases,
            ridge_lambda: self.ridge_lambda,
            katz_beta: self.katz_beta,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Leave the topological feature block out.
    #[arg(long)]
    no_topo: bool,
    #[arg(long, default_value_t = DEFAULT_VAL_FRAC)]
    val_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Oos,
    Oot,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Oos)]
    mode: Mode,
    #[arg(long, value_delimiter = ',', default_value = "with_topo,without_topo,baseline_linear")]
    arms: Vec<String>,
    /// Random-search trials before the final run; 0 keeps the given flags.
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_FRAC)]
    test_frac: f64,
    #[arg(long, default_value_t = DEFAULT_VAL_FRAC)]
    val_frac: f64,
    #[arg(long, default_value_t = 2016)]
    first_test_year: i32,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ExplainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    contract: Vec<String>,
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    Activation::SEARCH
        .into_iter()
        .chain([Activation::Identity])
        .find(|a| {
            serde_json::to_value(a).ok().and_then(|v| v.as_str().map(|n| n.eq_ignore_ascii_case(s))).unwrap_or(false)
        })
        .ok_or_else(|| format!("unknown activation {s:?} (relu, leakyrelu, elu, gelu, identity)"))
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (adam, sgd)")),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::TooFewObservations(_) | TopologyError::DegenerateDegrees | TopologyError::Graph(_) => {
                Failure::Data(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<RgcnError> for Failure {
    fn from(e: RgcnError) -> Self {
        match e {
            RgcnError::Config(_) => Failure::Usage(e.to_string()),
            RgcnError::NonFinite(_) | RgcnError::DegenerateTarget => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => Failure::Usage(e.to_string()),
            ExperimentError::Baseline(_) => Failure::Numerical(e.to_string()),
            ExperimentError::Ingest(e) => e.into(),
            ExperimentError::Model(e) => e.into(),
            ExperimentError::Topology(e) => e.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(e) => e.into(),
            ExplainError::NonFinite(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

/// Collects outputs and input hashes for one run.
struct Run {
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<&'static str, u64>,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> Outcome<Self> {
        fs::create_dir_all(out)?;
        Ok(Run { out: out.to_path_buf(), inputs: BTreeMap::new(), seeds: BTreeMap::new(), outputs: Vec::new() })
    }

    fn read(&mut self, path: &Path) -> Outcome<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(bytes)
    }

    fn read_string(&mut self, path: &Path) -> Outcome<String> {
        String::from_utf8(self.read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Outcome<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    fn finish(mut self, cli: &Cli, started: Instant) -> Outcome<()> {
        let (subcommand, flags) = match serde_json::to_value(&cli.command)? {
            serde_json::Value::Object(m) if m.len() == 1 => m.into_iter().next().unwrap(),
            v => (String::new(), v),
        };
        let manifest = json!({
            "subcommand": subcommand.to_lowercase(),
            "flags": flags,
            "workers": cli.workers,
            "seeds": self.seeds,
            "input_sha256": self.inputs,
            "outputs": self.outputs,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "wall_clock_seconds": started.elapsed().as_secs_f64(),
        });
        self.outputs.clear();
        self.write_json("manifest.json", &manifest)
    }
}

fn read_records(run: &mut Run, path: &Path) -> Outcome<Vec<ContractRecord>> {
    let bytes = run.read(path)?;
    let report = ingest::parse_csv_reader(bytes.as_slice())?;
    if !report.errors.is_empty() {
        let first = &report.errors[0];
        return Err(Failure::Data(format!(
            "{}: {} invalid rows (line {}, column {}: {})",
            path.display(),
            report.errors.len(),
            first.line,
            first.column,
            first.message
        )));
    }
    if report.records.is_empty() {
        return Err(Failure::Data(format!("{}: no contract records", path.display())));
    }
    Ok(report.records)
}

fn issue_years_json(graph: &HeteroGraph, years: &IssueYears) -> BTreeMap<String, i32> {
    years.iter().map(|(&u, &y)| (graph.label(u).to_string(), y)).collect()
}

fn synth(a: &SynthArgs, run: &mut Run) -> Outcome<()> {
    if a.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let mut config = SynthConfig::new(a.n, a.seed);
    if a.no_entity_effects {
        config = config.without_entity_effects();
    }
    if let Some(s) = a.noise_std {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Usage("--noise-std must be a nonnegative number".into()));
        }
        config.noise_std = s;
    }
    run.seeds.insert("synth", a.seed);
    let out = synth_dataset(&config);
    let mut csv = Vec::new();
    ingest::write_csv(&out.records, &mut csv)?;
    run.write("contracts.csv", csv)?;
    run.write_json("synth_manifest.json", &out.manifest)
}

fn ingest_cmd(a: &IngestArgs, run: &mut Run) -> Outcome<()> {
    let bytes = run.read(&a.input)?;
    let report = ingest::parse_csv_reader(bytes.as_slice())?;
    run.write_json("row_errors.json", &report.errors)?;
    if report.records.is_empty() {
        return Err(Failure::Data(format!("{}: no valid contract records", a.input.display())));
    }
    let built = build_graph(&report.records)?;
    run.write("graph.json", built.graph.to_json() + "\n")?;
    run.write_json("issue_years.json", &issue_years_json(&built.graph, &built.issue_years))?;
    let summary = json!({
        "records": report.records.len(),
        "rejected_rows": report.errors.len(),
        "nodes": built.graph.num_nodes(),
        "edges": built.graph.num_edges(),
        "nodes_by_kind": NodeKind::ALL
            .iter()
            .map(|&k| (k.as_str(), built.graph.nodes_of_kind(k).len()))
            .collect::<BTreeMap<_, _>>(),
    });
    run.write_json("ingest_summary.json", &summary)
}

fn topology_cmd(a: &TopologyArgs, run: &mut Run) -> Outcome<()> {
    let is_json = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (graph, years) = if is_json {
        let graph = HeteroGraph::from_json(&run.read_string(&a.input)?)?;
        let years = match &a.years {
            Some(p) => {
                let by_label: BTreeMap<String, i32> = serde_json::from_str(&run.read_string(p)?)?;
                let mut years = IssueYears::new();
                for (label, y) in by_label {
                    let u = graph
                        .find(NodeKind::Contract, &label)
                        .ok_or_else(|| Failure::Data(format!("issue year for unknown contract {label:?}")))?;
                    years.insert(u, y);
                }
                Some(years)
            }
            None => None,
        };
        (graph, years)
    } else {
        if a.years.is_some() {
            return Err(Failure::Usage("--years only applies to a graph JSON input".into()));
        }
        let built = build_graph(&read_records(run, &a.input)?)?;
        (built.graph, Some(built.issue_years))
    };
    run.seeds.insert("bootstrap", a.seed);
    let options = ReportOptions { n_bootstrap: a.bootstrap, seed: a.seed, katz_beta: a.katz_beta };
    let report = topology_report(&graph, years.as_ref(), &options)?;
    run.write_json("topology.json", &report)?;
    let table = centralities(graph.homo_view(), a.katz_beta)?;
    run.write("centrality.csv", centrality_csv(&graph, &table))?;
    if let Some(years) = &years {
        if let Ok(series) = topology::fitness_series(&graph, years) {
            run.write_json("fitness_series.json", &series)?;
        }
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, run: &mut Run) -> Outcome<()> {
    let records = read_records(run, &a.input)?;
    run.seeds.insert("train", a.seed);
    let config = a.model.config(a.seed);
    config.train.validate()?;
    let fitted = fit_full(&records, &config, !a.no_topo, a.val_frac)?;
    let extra = json!({
        "encoder": fitted.encoder,
        "with_topo": !a.no_topo,
        "katz_beta": a.model.katz_beta,
        "train_config": config.train,
    });
    run.write("checkpoint.json", save_checkpoint(&fitted.model, extra)? + "\n")?;
    run.write("history.csv", fitted.history.to_csv())?;

    let pred = fitted.model.predict(&fitted.built.graph, &fitted.features)?;
    let r2_of = |nodes: &[catnet_core::graph::NodeId]| -> Outcome<Option<f64>> {
        if nodes.len() < 2 {
            return Ok(None);
        }
        let yh: Vec<f64> = nodes.iter().map(|u| pred[u]).collect();
        let y: Vec<f64> = nodes.iter().map(|u| fitted.built.targets[u]).collect();
        Ok(Some(rgcn::r2_score(&yh, &y)?))
    };
    let summary = json!({
        "n_train": fitted.split.train.len(),
        "n_val": fitted.split.val.len(),
        "parameters": fitted.model.num_parameters(),
        "best_epoch": fitted.history.best_epoch,
        "best_loss": fitted.history.best_loss,
        "stopped_early": fitted.history.stopped_early,
        "train_r2": r2_of(&fitted.split.train)?,
        "val_r2": r2_of(&fitted.split.val)?,
    });
    run.write_json("train_summary.json", &summary)
}

fn evaluate_cmd(a: &EvaluateArgs, run: &mut Run) -> Outcome<()> {
    let records = read_records(run, &a.input)?;
    let arms: Vec<Arm> = a.arms.iter().map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    run.seeds.insert("evaluate", a.seed);
    let plan = match a.mode {
        Mode::Oos => {
            let ids: Vec<String> = records.iter().map(|r| r.contract_id.clone()).collect();
            oos_splits(&ids, a.folds, a.test_frac, a.val_frac, a.seed)?
        }
        Mode::Oot => {
            let years: Vec<(String, i32)> = records.iter().map(|r| (r.contract_id.clone(), r.issue_year)).collect();
            oot_splits(&years, a.first_test_year, a.val_frac, a.seed)?
        }
    };
    let mut config = a.model.config(experiments::derive_seed(a.seed, &[1]));
    if a.trials > 0 {
        let search = random_search(&records, &plan, a.trials, experiments::derive_seed(a.seed, &[2]), &config)?;
        run.write_json("search.json", &search)?;
        let best = search.best_config().ok_or_else(|| Failure::Numerical("every search trial failed".into()))?;
        config.train = TrainConfig { seed: config.train.seed, ..best.clone() };
    }
    let report = run_ablation(&records, &plan, &arms, &config)?;
    run.write_json("report.json", &report)?;
    for fold in &report.folds {
        for res in &fold.arms {
            if let Some(csv) = report.predictions_csv(fold.index, res.arm) {
                run.write(&format!("predictions/fold{:02}_{}.csv", fold.index, res.arm.as_str()), csv)?;
            }
        }
    }
    if !report.leakage_passed() {
        return Err(Failure::Data("leakage audit failed; see report.json".into()));
    }
    Ok(())
}

fn explain_cmd(a: &ExplainArgs, run: &mut Run) -> Outcome<()> {
    let records = read_records(run, &a.input)?;
    let (model, extra) = load_checkpoint(&run.read_string(&a.checkpoint)?)?;
    let field = |k: &str| extra.get(k).cloned().ok_or_else(|| Failure::Data(format!("checkpoint lacks {k:?}")));
    let encoder: FeatureEncoder = serde_json::from_value(field("encoder")?)?;
    let with_topo: bool = serde_json::from_value(field("with_topo")?)?;
    let katz_beta: Option<f64> = serde_json::from_value(field("katz_beta")?)?;
    let (built, features) = model_inputs(&records, &encoder, with_topo, katz_beta)?;

    let nodes = if a.all {
        built.contract_nodes.clone()
    } else {
        a.contract
            .iter()
            .map(|id| built.contract_node(id).ok_or_else(|| Failure::Data(format!("unknown contract {id:?}"))))
            .collect::<Outcome<_>>()?
    };
    let config = ExplainConfig::default();
    let explanations = explain_nodes(&model, &built.graph, &features, &nodes, &config)?;
    let features_ranked = rank_node_features(&explanations)?;
    let kinds = rank_edge_importance_by_type(&explanations, &built.graph)?;
    let entities = rank_entities(&explanations, &built.graph, a.top_k)?;

    run.write_json(
        "explanations.json",
        &json!({
            "selection": if a.all { "all" } else { "listed" },
            "config": config,
            "explanations": explanations,
        }),
    )?;
    let mut csv = String::from("feature,mean_score\n");
    for (f, s) in &features_ranked {
        csv.push_str(&format!("{},{s}\n", csv_field(f)));
    }
    run.write("feature_ranking.csv", csv)?;
    let mut csv = String::from("kind,mean_score\n");
    for (k, s) in &kinds {
        csv.push_str(&format!("{k},{s}\n"));
    }
    run.write("kind_ranking.csv", csv)?;
    let mut csv = String::from("kind,rank,label,mean_score\n");
    for (k, list) in &entities {
        for (i, (label, s)) in list.iter().enumerate() {
            csv.push_str(&format!("{k},{},{},{s}\n", i + 1, csv_field(label)));
        }
    }
    run.write("top_entities.csv", csv)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn out_dir(c: &Command) -> &Path {
    match c {
        Command::Synth(a) => &a.out,
        Command::Ingest(a) => &a.out,
        Command::Topology(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Evaluate(a) => &a.out,
        Command::Explain(a) => &a.out,
    }
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    let started = Instant::now();
    let mut run = Run::new(out_dir(&cli.command))?;
    match &cli.command {
        Command::Synth(a) => synth(a, &mut run)?,
        Command::Ingest(a) => ingest_cmd(a, &mut run)?,
        Command::Topology(a) => topology_cmd(a, &mut run)?,
        Command::Train(a) => train_cmd(a, &mut run)?,
        Command::Evaluate(a) => evaluate_cmd(a, &mut run)?,
        Command::Explain(a) => explain_cmd(a, &mut run)?,
    }
    run.finish(cli, started)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
