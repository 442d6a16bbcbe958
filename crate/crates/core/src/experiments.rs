//! Seeded experiment orchestration and plot-ready output tables.
//!
//! Every listed seed drives one independent run. A run's signal stream is
//! `ChaCha8Rng::seed_from_u64(seed)`; auxiliary randomness within the same run
//! (the link-removal order) uses that seed on stream 1. Adding seeds never
//! changes the results of the others.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detection::{
    fmt_sig, run_constants, run_with_constants, EtaMode, RunConfig, RunConstants, Trajectory,
    DEFAULT_DELTA,
};
use crate::error::{Error, Result};
use crate::markov::{spectral_summary, stationary_distribution, RowStochasticMatrix};
use crate::scenario::{single_informant, Builtin, DEFAULT_EPSILON, DEFAULT_P_HIGH};
use crate::signal::{information_profile, ModelFile, SignalModel, StateSpace};
use crate::topology::{
    generate, is_positive_semidefinite, lazify, optimal_mix, remove_link, undirected_edges,
    NetworkKind, NetworkSpec,
};

pub const THREADS_ENV: &str = "BELIEFNET_THREADS";
const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    OptimizeGap,
    LinkFailure,
    ChannelDemo,
    #[serde(alias = "centrality")]
    CentralityAllocation,
    Custom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::OptimizeGap => "optimize-gap",
            ExperimentKind::LinkFailure => "link-failure",
            ExperimentKind::ChannelDemo => "channel-demo",
            ExperimentKind::CentralityAllocation => "centrality-allocation",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Where the signal model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Builtin(Builtin),
    Path { path: PathBuf },
    Inline(ModelFile),
}

impl ModelSource {
    pub fn build(&self, n: usize) -> Result<(SignalModel, StateSpace)> {
        let (model, states) = match self {
            ModelSource::Builtin(b) => b.build(n)?,
            ModelSource::Path { path } => ModelFile::load(path)?.build()?,
            ModelSource::Inline(file) => file.clone().build()?,
        };
        if model.n() != n {
            return Err(Error::Config(format!(
                "model has {} agents, network has {n}",
                model.n()
            )));
        }
        Ok((model, states))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("format must be csv or json, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub network: NetworkSpec,
    pub model: ModelSource,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub delta: f64,
    pub eta: EtaMode,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    /// Belief level every agent must reach (convergence, channel demo).
    pub threshold: f64,
    /// Agents whose costs are reported (optimize-gap, link-failure).
    pub tracked_agents: Vec<usize>,
    /// Edges removed per seed (link-failure).
    pub removals: usize,
    /// Use the base network's learning rate on the mutated networks too.
    pub shared_eta: bool,
    /// Leaf receiving the informative marginal in the leaf allocation.
    pub leaf: usize,
    /// Emit every k-th round in trajectory tables (first and last always).
    pub record_every: usize,
}

impl ExperimentConfig {
    /// Default configuration for an experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let pe = ModelSource::Builtin(Builtin::PrivateEquivalence { p_high: DEFAULT_P_HIGH });
        let base = Self {
            experiment: kind,
            network: NetworkSpec::random_symmetric(50, 0.5, 1.0, 1),
            model: pe.clone(),
            horizon: 2000,
            seeds: (1..=20).collect(),
            delta: DEFAULT_DELTA,
            eta: EtaMode::Theorem1,
            output: None,
            format: OutputFormat::Csv,
            threshold: 0.99,
            tracked_agents: vec![0, 13, 27, 41],
            removals: 50,
            shared_eta: true,
            leaf: 1,
            record_every: 10,
        };
        match kind {
            ExperimentKind::Convergence | ExperimentKind::Custom => base,
            ExperimentKind::OptimizeGap => Self {
                network: NetworkSpec::star(50, 0.02),
                horizon: 1000,
                seeds: (1..=10).collect(),
                ..base
            },
            ExperimentKind::LinkFailure => Self {
                network: NetworkSpec::random_symmetric(50, 0.5, crate::topology::DEFAULT_DENSITY, 1),
                horizon: 300,
                seeds: vec![1],
                ..base
            },
            ExperimentKind::ChannelDemo => Self {
                network: NetworkSpec::explicit(
                    &RowStochasticMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]])
                        .expect("valid matrix"),
                ),
                model: ModelSource::Builtin(Builtin::BinaryChannel { epsilon: DEFAULT_EPSILON }),
                ..base
            },
            ExperimentKind::CentralityAllocation => Self {
                network: NetworkSpec::star(9, 0.5),
                model: ModelSource::Builtin(Builtin::SingleInformant {
                    informant: 0,
                    p_high: DEFAULT_P_HIGH,
                }),
                horizon: 500,
                ..base
            },
        }
    }

    /// Parses a JSON config; absent keys fall back to the experiment's
    /// defaults and `network` is merged key by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let patch: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let kind_value = patch
            .get("experiment")
            .cloned()
            .ok_or_else(|| Error::Config("missing `experiment` key".into()))?;
        let kind: ExperimentKind =
            serde_json::from_value(kind_value).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = serde_json::to_value(Self::defaults(kind)).expect("serializable");
        if let Some(Value::Object(net)) = patch.get("network") {
            if net.get("kind").is_some_and(|k| Some(k) != base["network"].get("kind")) {
                base["network"] = serde_json::json!({});
            }
        }
        let mut patch = patch;
        if let Some(Value::Object(net)) = patch.get_mut("network") {
            if let Some(v) = net.remove("omega") {
                net.insert("self_reliance".into(), v);
            }
        }
        merge(&mut base, patch);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.run_config(0).validate()?;
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        Ok(())
    }

    fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            horizon: self.horizon,
            eta: self.eta,
            delta: self.delta,
            seed,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                if k == "network" {
                    merge(b.entry(k).or_insert(Value::Null), v);
                } else {
                    b.insert(k, v);
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Runs `f` on a rayon pool capped by `BELIEFNET_THREADS` (0 or unset = auto).
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be an integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Mean, minimum and maximum of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub seeds: Vec<SeedSummary>,
    /// Per-metric statistics over `seeds`.
    pub aggregates: BTreeMap<String, Stats>,
    /// Fraction of seeds whose costs stayed within the high-probability bound.
    pub bound_satisfaction: Option<f64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Recomputes per-metric statistics from per-seed summaries.
pub fn aggregate(seeds: &[SeedSummary]) -> BTreeMap<String, Stats> {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in seeds {
        for (k, v) in &s.metrics {
            cols.entry(k.clone()).or_default().push(*v);
        }
    }
    cols.into_iter().map(|(k, v)| (k, Stats::of(&v))).collect()
}

/// A table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_sig(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) if v.is_finite() => Value::from(*v),
            Cell::Float(_) => Value::Null,
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// A named output table; written as `<name>.csv` or `<name>.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: Vec<&'static str>) -> Self {
        Self {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.header
                        .iter()
                        .zip(row)
                        .map(|(h, c)| (h.to_string(), c.json()))
                        .collect(),
                )
            })
            .collect();
        serde_json::to_writer(&mut *out, &rows).map_err(io::Error::other)?;
        writeln!(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub tables: Vec<Table>,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes every table plus `report.json` into `dir`; returns the paths.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        let io_err = |path: &Path, e: io::Error| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let ext = match format {
                OutputFormat::Csv => "csv",
                OutputFormat::Json => "json",
            };
            let path = dir.join(format!("{}.{ext}", t.name));
            let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = io::BufWriter::new(file);
            match format {
                OutputFormat::Csv => t.write_csv(&mut w),
                OutputFormat::Json => t.write_json(&mut w),
            }
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&self.report).expect("serializable");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

/// Dispatches on `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let start = Instant::now();
    let mut out = with_thread_cap(|| match config.experiment {
        ExperimentKind::Convergence => run_convergence(config),
        ExperimentKind::OptimizeGap => run_optimize_gap(config),
        ExperimentKind::LinkFailure => run_link_failure(config),
        ExperimentKind::ChannelDemo => run_channel_demo(config),
        ExperimentKind::CentralityAllocation => run_centrality_allocation(config),
        ExperimentKind::Custom => run_custom(config),
    })??;
    out.report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn report(
    kind: ExperimentKind,
    seeds: Vec<SeedSummary>,
    bound_satisfaction: Option<f64>,
    checks: Vec<Check>,
    notes: Vec<String>,
) -> ExperimentReport {
    ExperimentReport {
        experiment: kind,
        aggregates: aggregate(&seeds),
        seeds,
        bound_satisfaction,
        checks,
        notes,
        wall_clock_secs: 0.0,
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut yes, mut total) = (0usize, 0usize);
    for f in flags {
        total += 1;
        yes += f as usize;
    }
    if total == 0 {
        0.0
    } else {
        yes as f64 / total as f64
    }
}

fn bool_metric(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn run_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|s| f(*s)).collect()
}

fn trajectory_table(traj: &Trajectory, every: usize) -> Table {
    let mut t = Table::new(
        format!("trajectory_seed{}", traj.seed),
        crate::detection::TRAJECTORY_HEADER.split(',').collect(),
    );
    for r in recorded(traj, every) {
        for i in 0..traj.constants.n {
            t.push(vec![
                r.round.into(),
                (i + 1).into(),
                r.belief_true[i].into(),
                r.tv_dist[i].into(),
                r.cost_cum[i].into(),
                r.q_inf_norm[i].into(),
                r.lemma3_bound.unwrap_or(f64::NAN).into(),
                r.theorem1_bound.unwrap_or(f64::NAN).into(),
            ]);
        }
    }
    t
}

fn recorded(traj: &Trajectory, every: usize) -> impl Iterator<Item = &crate::detection::RoundRecord> {
    let last = traj.horizon;
    traj.rounds
        .iter()
        .filter(move |r| r.round == 1 || r.round == last || r.round % every == 0)
}

fn trajectory_metrics(traj: &Trajectory) -> BTreeMap<String, f64> {
    let last = traj.last();
    let half = &traj.rounds[(traj.horizon / 2).max(1) - 1];
    let mut m = BTreeMap::new();
    m.insert(
        "min_belief_true".into(),
        last.belief_true.iter().copied().fold(f64::INFINITY, f64::min),
    );
    m.insert("mean_tv_final".into(), mean(&last.tv_dist));
    m.insert("mean_tv_half".into(), mean(&half.tv_dist));
    m.insert(
        "max_cost".into(),
        last.cost_cum.iter().copied().fold(0.0, f64::max),
    );
    m.insert("mean_cost".into(), mean(&last.cost_cum));
    m.insert("max_eta_q".into(), traj.max_eta_q());
    m.insert("eta".into(), traj.constants.eta);
    if let Some(ok) = traj.theorem1_satisfied() {
        m.insert("theorem1_satisfied".into(), bool_metric(ok));
        m.insert("theorem1_bound".into(), traj.ledger.theorem1_bound.unwrap_or(f64::NAN));
    }
    if let Some(ok) = traj.lemma3_satisfied() {
        m.insert("lemma3_satisfied".into(), bool_metric(ok));
    }
    m
}

fn bound_fraction(seeds: &[SeedSummary]) -> Option<f64> {
    let flags: Vec<bool> = seeds
        .iter()
        .filter_map(|s| s.metrics.get("theorem1_satisfied").map(|v| *v == 1.0))
        .collect();
    if flags.is_empty() {
        None
    } else {
        Some(fraction(flags.into_iter()))
    }
}

fn network_and_model(config: &ExperimentConfig) -> Result<(RowStochasticMatrix, SignalModel, StateSpace)> {
    let w = generate(&config.network)?;
    let (model, states) = config.model.build(w.n())?;
    Ok((w, model, states))
}

/// Belief trajectories of every agent on one network and model.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (w, model, states) = network_and_model(config)?;
    let constants = run_constants(&w, &model, &states, config.eta, config.delta)?;
    let trajs = run_seeds(&config.seeds, |seed| {
        run_with_constants(&w, &model, &states, &config.run_config(seed), constants.clone())
    })?;

    let profile = information_profile(&model, &states, &constants.centrality)?;
    let mut notes = vec![format!(
        "n = {}, m = {}, eta = {}, gap = {:?}, I12 = {}",
        constants.n, constants.m, constants.eta, constants.gap, constants.i12
    )];
    notes.extend(trajs.first().map(|t| t.warnings.clone()).unwrap_or_default());

    let seeds: Vec<SeedSummary> = trajs
        .iter()
        .map(|t| SeedSummary {
            seed: t.seed,
            metrics: trajectory_metrics(t),
        })
        .collect();
    let reached = fraction(seeds.iter().map(|s| s.metrics["min_belief_true"] >= config.threshold));
    let tv_drop = seeds
        .iter()
        .all(|s| s.metrics["mean_tv_final"] < s.metrics["mean_tv_half"]);
    let lemma3 = fraction(
        seeds
            .iter()
            .map(|s| s.metrics.get("lemma3_satisfied") == Some(&1.0)),
    );
    let checks = vec![
        check(
            "identifiable",
            profile.global_equivalence == vec![states.true_state()],
            format!("global equivalence set {:?}", profile.global_equivalence),
        ),
        check(
            "belief_threshold",
            reached >= 0.95,
            format!("{reached:.3} of seeds have every agent at >= {}", config.threshold),
        ),
        check(
            "tv_decrease",
            tv_drop,
            "mean TV at T below mean TV at T/2 in every seed".into(),
        ),
        check(
            "lemma3",
            lemma3 >= 0.95,
            format!("{lemma3:.3} of seeds satisfy the log-TV bound at every round"),
        ),
    ];

    let mut tables = Vec::new();
    let mut fig3 = Table::new("fig3_beliefs", vec!["seed", "round", "agent", "belief_true"]);
    for t in &trajs {
        for r in recorded(t, config.record_every) {
            for (i, b) in r.belief_true.iter().enumerate() {
                fig3.push(vec![t.seed.into(), r.round.into(), (i + 1).into(), (*b).into()]);
            }
        }
    }
    tables.push(fig3);
    tables.extend(trajs.iter().map(|t| trajectory_table(t, config.record_every)));

    Ok(ExperimentOutput {
        report: report(
            ExperimentKind::Convergence,
            seeds.clone(),
            bound_fraction(&seeds),
            checks,
            notes,
        ),
        tables,
    })
}

/// Like convergence, with no acceptance checks.
pub fn run_custom(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = run_convergence(config)?;
    out.report.experiment = ExperimentKind::Custom;
    out.report.checks.clear();
    out.tables.retain(|t| t.name != "fig3_beliefs");
    Ok(out)
}

/// Compares costs on `W` and on its optimally lazified chain.
pub fn run_optimize_gap(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (w, model, states) = network_and_model(config)?;
    let opt = optimal_mix(&w)?;
    let base = run_constants(&w, &model, &states, config.eta, config.delta)?;
    let opt_eta = if config.shared_eta {
        EtaMode::Explicit(base.eta)
    } else {
        config.eta
    };
    let mixed = run_constants(&opt.chain.mixed, &model, &states, opt_eta, config.delta)?;
    let tracked = checked_agents(&config.tracked_agents, w.n())?;

    let pairs = run_seeds(&config.seeds, |seed| {
        let rc = config.run_config(seed);
        let a = run_with_constants(&w, &model, &states, &rc, base.clone())?;
        let b = run_with_constants(&opt.chain.mixed, &model, &states, &rc, mixed.clone())?;
        Ok((a, b))
    })?;

    let mut fig4 = Table::new(
        "fig4_costs",
        vec!["seed", "round", "agent", "cost_default", "cost_optimized"],
    );
    let mut seeds = Vec::new();
    let mut wins = Vec::new();
    for (a, b) in &pairs {
        for (ra, rb) in recorded(a, config.record_every).zip(recorded(b, config.record_every)) {
            for &i in &tracked {
                fig4.push(vec![
                    a.seed.into(),
                    ra.round.into(),
                    (i + 1).into(),
                    ra.cost_cum[i].into(),
                    rb.cost_cum[i].into(),
                ]);
            }
        }
        let mut metrics = BTreeMap::new();
        let mut seed_wins = 0usize;
        for &i in &tracked {
            let (ca, cb) = (a.ledger.cumulative[i], b.ledger.cumulative[i]);
            metrics.insert(format!("cost_default_agent{}", i + 1), ca);
            metrics.insert(format!("cost_optimized_agent{}", i + 1), cb);
            wins.push(cb <= ca);
            seed_wins += (cb <= ca) as usize;
        }
        metrics.insert("optimized_wins".into(), seed_wins as f64);
        if let Some(ok) = a.theorem1_satisfied() {
            metrics.insert("theorem1_satisfied".into(), bool_metric(ok));
        }
        seeds.push(SeedSummary {
            seed: a.seed,
            metrics,
        });
    }
    let win_frac = fraction(wins.into_iter());
    let (g0, g1) = (base.gap.unwrap_or(f64::NAN), mixed.gap.unwrap_or(f64::NAN));
    let checks = vec![
        check(
            "gap_not_worse",
            g1 >= g0 - MONOTONE_SLACK,
            format!("gap {g0} -> {g1} at alpha = {}", opt.alpha),
        ),
        check(
            "optimized_dominates",
            win_frac >= 0.9,
            format!("{win_frac:.3} of (agent, seed) pairs have optimized cost <= default"),
        ),
    ];
    let notes = vec![format!(
        "alpha* = {}, gap {} -> {}, eta default {} optimized {}",
        opt.alpha, g0, g1, base.eta, mixed.eta
    )];
    Ok(ExperimentOutput {
        report: report(
            ExperimentKind::OptimizeGap,
            seeds.clone(),
            bound_fraction(&seeds),
            checks,
            notes,
        ),
        tables: vec![fig4],
    })
}

fn checked_agents(agents: &[usize], n: usize) -> Result<Vec<usize>> {
    if let Some(bad) = agents.iter().find(|a| **a >= n) {
        return Err(Error::Config(format!("tracked agent {bad} out of range for n = {n}")));
    }
    Ok(agents.to_vec())
}

/// One step of a link-removal sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalStep {
    pub removals: usize,
    /// Removed edge, `None` for the baseline.
    pub edge: Option<(usize, usize)>,
    pub lambda_max: f64,
    pub gap: f64,
    /// `Cost_{i,T}` for every agent.
    pub costs: Vec<f64>,
}

/// Removes random edges one at a time, skipping those that disconnect the
/// network, and records the spectrum and costs after each removal.
pub fn removal_sweep(
    w: &RowStochasticMatrix,
    model: &SignalModel,
    states: &StateSpace,
    config: &ExperimentConfig,
    seed: u64,
    eta: EtaMode,
) -> Result<(Vec<RemovalStep>, Vec<(usize, usize)>)> {
    let rc = config.run_config(seed);
    let eval = |m: &RowStochasticMatrix, removals, edge| -> Result<RemovalStep> {
        let constants: RunConstants =
            run_constants(m, model, states, eta, config.delta)?;
        let s = spectral_summary(m)?;
        let traj = run_with_constants(m, model, states, &rc, constants)?;
        Ok(RemovalStep {
            removals,
            edge,
            lambda_max: s.lambda_max,
            gap: s.gap,
            costs: traj.ledger.cumulative,
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut candidates = undirected_edges(w);
    candidates.shuffle(&mut rng);

    let mut current = w.clone();
    let mut steps = vec![eval(&current, 0, None)?];
    let mut skipped = Vec::new();
    for (i, j) in candidates {
        if steps.len() > config.removals {
            break;
        }
        let r = remove_link(&current, i, j)?;
        if r.disconnected {
            skipped.push((i, j));
            continue;
        }
        current = r.matrix;
        steps.push(eval(&current, steps.len(), Some((i, j)))?);
    }
    Ok((steps, skipped))
}

pub fn lambda_max_nondecreasing(steps: &[RemovalStep]) -> bool {
    steps
        .windows(2)
        .all(|p| p[1].lambda_max >= p[0].lambda_max - MONOTONE_SLACK)
}

/// Sequential link removal on a positive semi-definite symmetric network.
pub fn run_link_failure(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (mut w, model, states) = network_and_model(config)?;
    let mut notes = Vec::new();
    if !is_positive_semidefinite(&w, 0.0)? {
        w = lazify(&w);
        notes.push("network replaced by its lazy walk (W + I) / 2".into());
    }
    let base = run_constants(&w, &model, &states, config.eta, config.delta)?;
    let tracked = checked_agents(&config.tracked_agents, w.n())?;
    let sweeps = run_seeds(&config.seeds, |seed| {
        let eta = if config.shared_eta {
            EtaMode::Explicit(base.eta)
        } else {
            config.eta
        };
        removal_sweep(&w, &model, &states, config, seed, eta)
    })?;

    let mut fig5 = Table::new(
        "fig5_linkfail",
        vec!["seed", "removals", "edge_i", "edge_j", "lambda_max", "gap", "agent", "cost"],
    );
    let mut seeds = Vec::new();
    let mut monotone = true;
    for (&seed, (steps, skipped)) in config.seeds.iter().zip(&sweeps) {
        for s in steps {
            let (ei, ej) = s.edge.map_or((0, 0), |(i, j)| (i + 1, j + 1));
            for &a in &tracked {
                fig5.push(vec![
                    seed.into(),
                    s.removals.into(),
                    ei.into(),
                    ej.into(),
                    s.lambda_max.into(),
                    s.gap.into(),
                    (a + 1).into(),
                    s.costs[a].into(),
                ]);
            }
        }
        let ok = lambda_max_nondecreasing(steps);
        monotone &= ok;
        let last = steps.last().expect("baseline step");
        let cost_rises = steps
            .windows(2)
            .filter(|p| mean(&p[1].costs) >= mean(&p[0].costs))
            .count();
        for (i, j) in skipped {
            notes.push(format!("seed {seed}: skipped disconnecting edge ({}, {})", i + 1, j + 1));
        }
        if steps.len() <= config.removals {
            notes.push(format!(
                "seed {seed}: only {} removals possible without disconnecting",
                steps.len() - 1
            ));
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("removals".into(), (steps.len() - 1) as f64);
        metrics.insert("lambda_max_initial".into(), steps[0].lambda_max);
        metrics.insert("lambda_max_final".into(), last.lambda_max);
        metrics.insert("mean_cost_initial".into(), mean(&steps[0].costs));
        metrics.insert("mean_cost_final".into(), mean(&last.costs));
        metrics.insert(
            "cost_rise_fraction".into(),
            cost_rises as f64 / (steps.len() - 1).max(1) as f64,
        );
        metrics.insert("lambda_max_monotone".into(), bool_metric(ok));
        seeds.push(SeedSummary { seed, metrics });
    }
    let checks = vec![check(
        "lambda_max_monotone",
        monotone,
        format!("lambda_max nondecreasing over every sweep (slack {MONOTONE_SLACK:e})"),
    )];
    Ok(ExperimentOutput {
        report: report(ExperimentKind::LinkFailure, seeds, None, checks, notes),
        tables: vec![fig5],
    })
}

/// Two receivers of a noisy 2-bit message, networked and isolated.
pub fn run_channel_demo(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (w, model, states) = network_and_model(config)?;
    let networked = run_constants(&w, &model, &states, config.eta, config.delta)?;
    let profile = information_profile(&model, &states, &networked.centrality)?;
    let alone = model.restrict(&[0])?;
    let single = RowStochasticMatrix::identity(1);
    let isolated = run_constants(
        &single,
        &alone,
        &states,
        EtaMode::Explicit(networked.eta),
        config.delta,
    )?;

    let runs = run_seeds(&config.seeds, |seed| {
        let rc = config.run_config(seed);
        let a = run_with_constants(&w, &model, &states, &rc, networked.clone())?;
        let b = run_with_constants(&single, &alone, &states, &rc, isolated.clone())?;
        Ok((a, b))
    })?;

    let labels = |set: &[usize]| -> Vec<String> { set.iter().map(|k| states.label(*k).to_string()).collect() };
    let sets: Vec<Vec<String>> = profile.equivalence_sets.iter().map(|s| labels(s)).collect();
    let global = labels(&profile.global_equivalence);
    let mut notes = vec![
        format!("equivalence sets {sets:?}, global {global:?}"),
        format!("eta = {}", networked.eta),
    ];
    notes.extend(runs.first().map(|r| r.1.warnings.clone()).unwrap_or_default());

    let mut table = Table::new(
        "channel_beliefs",
        vec!["seed", "round", "setting", "agent", "belief_true"],
    );
    let mut seeds = Vec::new();
    for (a, b) in &runs {
        for (ra, rb) in recorded(a, config.record_every).zip(recorded(b, config.record_every)) {
            for (i, v) in ra.belief_true.iter().enumerate() {
                table.push(vec![a.seed.into(), ra.round.into(), "networked".into(), (i + 1).into(), (*v).into()]);
            }
            table.push(vec![a.seed.into(), rb.round.into(), "isolated".into(), 1usize.into(), rb.belief_true[0].into()]);
        }
        let mut metrics = trajectory_metrics(a);
        metrics.insert("isolated_belief_true".into(), b.last().belief_true[0]);
        seeds.push(SeedSummary { seed: a.seed, metrics });
    }
    let reached = fraction(seeds.iter().map(|s| s.metrics["min_belief_true"] >= config.threshold));
    let isolated_max = seeds
        .iter()
        .map(|s| s.metrics["isolated_belief_true"])
        .fold(0.0, f64::max);
    let expected_sets = profile.equivalence_sets.len() == 2
        && labels(&profile.equivalence_sets[0]) == ["00", "01"]
        && labels(&profile.equivalence_sets[1]) == ["00", "10"]
        && global == ["00"];
    let checks = vec![
        check(
            "equivalence_sets",
            expected_sets,
            format!("{sets:?}, global {global:?}"),
        ),
        check(
            "networked_learn",
            reached >= 0.95,
            format!("{reached:.3} of seeds have both receivers at >= {}", config.threshold),
        ),
        check(
            "isolated_ambiguous",
            isolated_max <= 0.6,
            format!("isolated receiver belief on the truth at most {isolated_max:.4}"),
        ),
    ];
    Ok(ExperimentOutput {
        report: report(
            ExperimentKind::ChannelDemo,
            seeds.clone(),
            bound_fraction(&seeds),
            checks,
            notes,
        ),
        tables: vec![table],
    })
}

/// Places the single informative marginal at the center and at a leaf of a
/// star and compares learning speed on identical signal streams.
pub fn run_centrality_allocation(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    if config.network.kind != NetworkKind::Star {
        return Err(Error::Config("centrality allocation needs a star network".into()));
    }
    let w = generate(&config.network)?;
    let n = w.n();
    let p_high = match config.model {
        ModelSource::Builtin(Builtin::SingleInformant { p_high, .. }) => p_high,
        _ => {
            return Err(Error::Config(
                "centrality allocation uses the single-informant builtin model".into(),
            ))
        }
    };
    if config.leaf == 0 || config.leaf >= n {
        return Err(Error::Config(format!("leaf {} is not a leaf of the star", config.leaf)));
    }
    let (center_model, states) = single_informant(n, 0, p_high)?;
    let (leaf_model, _) = single_informant(n, config.leaf, p_high)?;
    let pi = stationary_distribution(&w)?;
    let c_center = run_constants(&w, &center_model, &states, config.eta, config.delta)?;
    let c_leaf = run_constants(&w, &leaf_model, &states, config.eta, config.delta)?;

    let runs = run_seeds(&config.seeds, |seed| {
        let rc = config.run_config(seed);
        let a = run_with_constants(&w, &center_model, &states, &rc, c_center.clone())?;
        let b = run_with_constants(&w, &leaf_model, &states, &rc, c_leaf.clone())?;
        Ok((a, b))
    })?;

    let mut table = Table::new(
        "centrality_allocation",
        vec!["seed", "allocation", "agent", "tv_dist", "cost"],
    );
    let mut seeds = Vec::new();
    let mut wins = Vec::new();
    for (a, b) in &runs {
        for (name, t) in [("center", a), ("leaf", b)] {
            let last = t.last();
            for i in 0..n {
                table.push(vec![
                    t.seed.into(),
                    name.into(),
                    (i + 1).into(),
                    last.tv_dist[i].into(),
                    last.cost_cum[i].into(),
                ]);
            }
        }
        let (tv_a, tv_b) = (mean(&a.last().tv_dist), mean(&b.last().tv_dist));
        wins.push(tv_a < tv_b);
        let mut metrics = BTreeMap::new();
        metrics.insert("tv_center".into(), tv_a);
        metrics.insert("tv_leaf".into(), tv_b);
        metrics.insert("cost_center".into(), mean(&a.ledger.cumulative));
        metrics.insert("cost_leaf".into(), mean(&b.ledger.cumulative));
        metrics.insert("center_wins".into(), bool_metric(tv_a < tv_b));
        seeds.push(SeedSummary { seed: a.seed, metrics });
    }
    let win_frac = fraction(wins.into_iter());
    let leaf_pi = pi[1..].iter().copied().fold(0.0, f64::max);
    let checks = vec![
        check(
            "center_most_central",
            pi[0] > leaf_pi,
            format!("pi center {} vs largest leaf {}", pi[0], leaf_pi),
        ),
        check(
            "information_higher_at_center",
            c_center.i12 > c_leaf.i12,
            format!("I12 center {} vs leaf {}", c_center.i12, c_leaf.i12),
        ),
        check(
            "center_learns_faster",
            win_frac >= 0.9,
            format!("{win_frac:.3} of seeds have lower mean TV at T with the center allocation"),
        ),
    ];
    let notes = vec![format!("eta center {} leaf {}", c_center.eta, c_leaf.eta)];
    Ok(ExperimentOutput {
        report: report(ExperimentKind::CentralityAllocation, seeds, None, checks, notes),
        tables: vec![table],
    })
}
