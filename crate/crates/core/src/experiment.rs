//! Sweeps over experiment knobs and the layer-asymmetry fit.
//!
//! A sweep expands one or two axes into a grid, runs every grid cell for each
//! replication (in parallel across cells) and writes one CSV row per
//! (cell, replication) in cell order. Wall-clock times go to a separate
//! timings table so the result CSV is byte-for-byte reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, make_split, split_labeled, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::{
    assign_degree_groups, build_normalized_adjacency, DegreeGrouping, DegreeMode, Graph, GroupAssignment, SparseMatrix,
};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{default_sigma_v, default_sigma_w, init_params, InitConfig, ModelParams};
use crate::rng::{derive_seed, tag, Stream};
use crate::sparsify::{build_effective_adjacency, BandRetainConfig, BudgetScope, GlobalPruneConfig, SamplerConfig};
use crate::synth::{generate_dataset, DatasetSpec, SyntheticGraphSpec, TargetFunctionSpec};
use crate::train::{eval_matrices, train, EvalAdjacency, TrainConfig, TrainData, TrainLog};

/// Matrix the trainer samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainOn {
    #[default]
    Full,
    Effective,
}

impl TrainOn {
    fn name(self) -> &'static str {
        match self {
            TrainOn::Full => "full",
            TrainOn::Effective => "effective",
        }
    }
}

fn eval_name(e: EvalAdjacency) -> &'static str {
    match e {
        EvalAdjacency::Full => "full",
        EvalAdjacency::Effective => "effective",
        EvalAdjacency::Sampled => "sampled",
    }
}

/// The `[train]` section: model width, label budget and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    /// Number of labeled nodes; the rest are test nodes.
    #[serde(default)]
    pub labeled: Option<usize>,
    /// Three-way split for directory datasets (used when `labeled` is unset).
    #[serde(default)]
    pub split: Option<SplitSpec>,
    pub iterations: usize,
    pub eta_w: f64,
    #[serde(default)]
    pub eta_v: Option<f64>,
    #[serde(default)]
    pub sigma_w: Option<f64>,
    #[serde(default)]
    pub sigma_v: Option<f64>,
    #[serde(default)]
    pub train_on: TrainOn,
    #[serde(default)]
    pub eval_adjacency: EvalAdjacency,
    #[serde(default)]
    pub log_every: Option<usize>,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "yes")]
    pub resample_every_iteration: bool,
    #[serde(default)]
    pub tau_w_cap: Option<f64>,
    #[serde(default)]
    pub tau_v_cap: Option<f64>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparsifySection {
    #[serde(default)]
    pub layer1: SamplerConfig,
    #[serde(default)]
    pub layer2: SamplerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    M,
    Labeled,
    D2,
    SigmaDegree,
    Q1,
    Q2,
    P1Scale,
    P2Scale,
    S1,
    S2,
}

impl AxisName {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::M => "m",
            AxisName::Labeled => "labeled",
            AxisName::D2 => "d2",
            AxisName::SigmaDegree => "sigma_degree",
            AxisName::Q1 => "q1",
            AxisName::Q2 => "q2",
            AxisName::P1Scale => "p1_scale",
            AxisName::P2Scale => "p2_scale",
            AxisName::S1 => "s1",
            AxisName::S2 => "s2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepSection {
    #[serde(default)]
    pub axes: Vec<Axis>,
}

/// A dataset directory with its optional degree thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub dir: PathBuf,
    /// Degree thresholds for grouping when the directory has no `grouping.csv`.
    #[serde(default)]
    pub degree_thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    /// Derive every cell's seed from the replication alone, so cells of one
    /// replication share graph, features, split and initialization whenever
    /// their knobs allow.
    #[serde(default)]
    pub common_random_numbers: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub graph: Option<SyntheticGraphSpec>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub target: TargetFunctionSpec,
    #[serde(default)]
    pub degree_mode: DegreeMode,
    #[serde(default)]
    pub budget_scope: BudgetScope,
    pub train: RunConfig,
    #[serde(default)]
    pub sparsify: SparsifySection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks that apply to any run. A sweep additionally needs one or two axes.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be >= 1"));
        }
        match (&self.graph, &self.dataset) {
            (Some(g), None) => g.validate()?,
            (None, Some(_)) => {}
            _ => return Err(Error::config("give exactly one of [graph] or [dataset]")),
        }
        self.target.validate()?;
        if self.train.m == 0 {
            return Err(Error::config("m must be >= 1"));
        }
        for axis in &self.sweep.axes {
            if axis.values.is_empty() {
                return Err(Error::config(format!("axis {} has no values", axis.name.as_str())));
            }
        }
        let mut names: Vec<AxisName> = self.sweep.axes.iter().map(|a| a.name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.sweep.axes.len() {
            return Err(Error::config("sweep axes must be distinct"));
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        if !(1..=2).contains(&self.sweep.axes.len()) {
            return Err(Error::config(format!(
                "a sweep needs 1 or 2 axes, found {}",
                self.sweep.axes.len()
            )));
        }
        for cell in self.cells() {
            self.apply(&cell)?;
        }
        Ok(())
    }

    /// Every axis-value combination, first axis slowest.
    pub fn cells(&self) -> Vec<Vec<(AxisName, f64)>> {
        let mut cells: Vec<Vec<(AxisName, f64)>> = vec![vec![]];
        for axis in &self.sweep.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |&v| {
                        let mut c = c.clone();
                        c.push((axis.name, v));
                        c
                    })
                })
                .collect();
        }
        cells
    }

    /// Config with one cell's knob values substituted.
    pub fn apply(&self, knobs: &[(AxisName, f64)]) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        for &(name, value) in knobs {
            let count = || -> Result<usize> {
                if value >= 1.0 && value.fract() == 0.0 {
                    Ok(value as usize)
                } else {
                    Err(Error::config(format!(
                        "{} must be a positive integer, got {value}",
                        name.as_str()
                    )))
                }
            };
            match name {
                AxisName::M => cfg.train.m = count()?,
                AxisName::Labeled => cfg.train.labeled = Some(count()?),
                AxisName::D2 => {
                    let g = cfg
                        .graph
                        .as_mut()
                        .ok_or_else(|| Error::config("d2 needs a synthetic graph"))?;
                    let group = g
                        .groups
                        .get_mut(1)
                        .ok_or_else(|| Error::config("d2 needs at least two degree groups"))?;
                    group.mean_degree = value;
                }
                AxisName::SigmaDegree => {
                    let g = cfg
                        .graph
                        .as_mut()
                        .ok_or_else(|| Error::config("sigma_degree needs a synthetic graph"))?;
                    g.groups.iter_mut().for_each(|gr| gr.degree_std = value);
                }
                AxisName::Q1 => set_global(&mut cfg.sparsify.layer1, value),
                AxisName::Q2 => set_global(&mut cfg.sparsify.layer2, value),
                AxisName::S1 => set_band(&mut cfg.sparsify.layer1, value),
                AxisName::S2 => set_band(&mut cfg.sparsify.layer2, value),
                AxisName::P1Scale => scale_block(&mut cfg.sparsify.layer1, value, 1)?,
                AxisName::P2Scale => scale_block(&mut cfg.sparsify.layer2, value, 2)?,
            }
        }
        Ok(cfg)
    }
}

fn set_global(layer: &mut SamplerConfig, q: f64) {
    match layer {
        SamplerConfig::Global(g) => g.top_fraction = q,
        other => *other = SamplerConfig::Global(GlobalPruneConfig::new(q)),
    }
}

fn set_band(layer: &mut SamplerConfig, s: f64) {
    match layer {
        SamplerConfig::Band(b) => b.band_start = s,
        other => {
            *other = SamplerConfig::Band(BandRetainConfig {
                band_start: s,
                band_width: 0.5,
            })
        }
    }
}

fn scale_block(layer: &mut SamplerConfig, s: f64, idx: usize) -> Result<()> {
    match layer {
        SamplerConfig::Blockwise { prune_prob, .. } => {
            *prune_prob = prune_prob.scaled(s);
            Ok(())
        }
        _ => Err(Error::config(format!(
            "p{idx}_scale needs a blockwise sampler on layer {idx}"
        ))),
    }
}

/// Loaded directory dataset shared by all cells.
struct Loaded {
    graph: Graph,
    features: ndarray::Array2<f64>,
    labels: ndarray::Array2<f64>,
    groups: Option<Vec<usize>>,
}

struct CellData {
    adjacency: SparseMatrix,
    effective: SparseMatrix,
    grouping: DegreeGrouping,
    features: ndarray::Array2<f64>,
    labels: ndarray::Array2<f64>,
}

fn grouping_for(graph: &Graph, groups: Option<&Vec<usize>>, thresholds: &[f64]) -> Result<DegreeGrouping> {
    match groups {
        Some(g) => assign_degree_groups(graph, &GroupAssignment::Explicit(g.clone())),
        None => assign_degree_groups(graph, &GroupAssignment::Thresholds(thresholds.to_vec())),
    }
}

fn build_cell_data(cfg: &ExperimentConfig, loaded: Option<&Loaded>, stream: &Stream) -> Result<CellData> {
    match (loaded, &cfg.graph) {
        (Some(l), _) => {
            let thresholds = cfg.dataset.as_ref().map_or(&[][..], |d| &d.degree_thresholds[..]);
            let grouping = grouping_for(&l.graph, l.groups.as_ref(), thresholds)?;
            let adjacency = build_normalized_adjacency(&l.graph, cfg.degree_mode)?;
            let effective = build_effective_adjacency(&adjacency, &grouping, cfg.budget_scope)?;
            Ok(CellData {
                adjacency,
                effective,
                grouping,
                features: l.features.clone(),
                labels: l.labels.clone(),
            })
        }
        (None, Some(graph)) => {
            let spec = DatasetSpec {
                graph: graph.clone(),
                target: cfg.target,
                degree_mode: cfg.degree_mode,
                budget_scope: cfg.budget_scope,
            };
            let ds = generate_dataset(&spec, stream)?;
            Ok(CellData {
                adjacency: ds.adjacency,
                effective: ds.effective,
                grouping: ds.grouping,
                features: ds.features,
                labels: ds.labels,
            })
        }
        (None, None) => Err(Error::config("no data source")),
    }
}

/// Result of one (cell, replication).
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub a_star_l1: f64,
    pub a_l1: f64,
    pub dev1_mean: Option<f64>,
    pub dev2_mean: Option<f64>,
    pub initial: EvalReport,
    pub report: EvalReport,
}

/// Train and evaluate one fully resolved configuration with seed `seed`.
pub fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<CellOutcome> {
    let loaded = load_source(cfg)?;
    run_cell_with(cfg, loaded.as_ref(), seed)
}

fn load_source(cfg: &ExperimentConfig) -> Result<Option<Loaded>> {
    match &cfg.dataset {
        Some(src) => {
            let ds = load_dataset(&src.dir)?;
            Ok(Some(Loaded {
                graph: ds.graph,
                features: ds.features,
                labels: ds.labels,
                groups: ds.groups,
            }))
        }
        None => Ok(None),
    }
}

fn split_for(cfg: &ExperimentConfig, n: usize, stream: &Stream) -> Result<Split> {
    match (cfg.train.labeled, cfg.train.split) {
        (Some(l), _) => split_labeled(n, l, stream),
        (None, Some(spec)) => make_split(n, &spec, stream),
        (None, None) => Err(Error::config("set train.labeled or train.split")),
    }
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        iterations: t.iterations,
        eta_w: t.eta_w,
        eta_v: t.eta_v,
        layer1: cfg.sparsify.layer1.clone(),
        layer2: cfg.sparsify.layer2.clone(),
        resample_every_iteration: t.resample_every_iteration,
        seed,
        tau_w_cap: t.tau_w_cap,
        tau_v_cap: t.tau_v_cap,
        log_every: t.log_every.unwrap_or((t.iterations / 20).max(1)),
        batch_size: t.batch_size,
        eval_adjacency: t.eval_adjacency,
    }
}

pub fn init_config(cfg: &ExperimentConfig) -> InitConfig {
    let m = cfg.train.m;
    InitConfig {
        m,
        sigma_w: cfg.train.sigma_w.unwrap_or_else(|| default_sigma_w(m)),
        sigma_v: cfg.train.sigma_v.unwrap_or_else(|| default_sigma_v(m)),
    }
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub params: ModelParams,
    pub log: TrainLog,
    pub split: Split,
    pub outcome: CellOutcome,
}

/// Like [`run_cell`] but keeps the trained parameters, the log and the split.
pub fn run_detailed(cfg: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    cfg.validate()?;
    let loaded = load_source(cfg)?;
    run_with(cfg, loaded.as_ref(), seed)
}

fn run_cell_with(cfg: &ExperimentConfig, loaded: Option<&Loaded>, seed: u64) -> Result<CellOutcome> {
    run_with(cfg, loaded, seed).map(|r| r.outcome)
}

fn run_with(cfg: &ExperimentConfig, loaded: Option<&Loaded>, seed: u64) -> Result<RunArtifacts> {
    let stream = Stream::new(seed);
    let data = build_cell_data(cfg, loaded, &stream)?;
    let n = data.features.ncols();
    let split = split_for(cfg, n, &stream.child(tag::SPLIT))?;
    let test = if split.test.is_empty() { &split.val } else { &split.test };
    let params = init_params(
        data.features.nrows(),
        data.labels.nrows(),
        &init_config(cfg),
        &stream.child(tag::INIT),
    )?;
    let base = match cfg.train.train_on {
        TrainOn::Full => &data.adjacency,
        TrainOn::Effective => &data.effective,
    };
    let tdata = TrainData {
        x: data.features.view(),
        a: base,
        a_star: Some(&data.effective),
        grouping: Some(&data.grouping),
        y: data.labels.view(),
        omega: &split.train,
    };
    let tcfg = train_config(cfg, stream.child(tag::TRAIN).key());
    let (e1, e2) = eval_matrices(&tdata, &tcfg, tcfg.eval_adjacency, &stream.child(tag::EVAL))?;
    let initial = evaluate(&params, data.features.view(), &e1, &e2, test, data.labels.view())?;
    let (trained, log) = train(&tdata, params, &tcfg)?;
    let report = evaluate(&trained, data.features.view(), &e1, &e2, test, data.labels.view())?;
    let outcome = CellOutcome {
        a_star_l1: data.effective.l1_norm(),
        a_l1: data.adjacency.l1_norm(),
        dev1_mean: log.mean_deviation(1),
        dev2_mean: log.mean_deviation(2),
        initial,
        report,
    };
    Ok(RunArtifacts {
        params: trained,
        log,
        split,
        outcome,
    })
}

pub const RESULT_COLUMNS: &[&str] = &[
    "cell",
    "replication",
    "seed",
    "m",
    "labeled",
    "d2",
    "sigma_degree",
    "layer1",
    "q1",
    "s1",
    "p1_scale",
    "layer2",
    "q2",
    "s2",
    "p2_scale",
    "iterations",
    "eta_w",
    "eta_v",
    "train_on",
    "eval_adjacency",
    "a_star_l1",
    "a_l1",
    "dev1_mean",
    "dev2_mean",
    "initial_half_sq_error",
    "mean_half_sq_error",
    "classification_error",
    "eval_nodes",
    "status",
];

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn of(v: Option<f64>) -> String {
    v.map_or(String::new(), f)
}

fn layer_fields(s: &SamplerConfig) -> (String, String) {
    match s {
        SamplerConfig::Global(g) => (f(g.top_fraction), String::new()),
        SamplerConfig::Band(b) => (String::new(), f(b.band_start)),
        _ => (String::new(), String::new()),
    }
}

fn result_row(
    cell: usize,
    rep: usize,
    seed: u64,
    knobs: &[(AxisName, f64)],
    cfg: &ExperimentConfig,
    outcome: &Result<CellOutcome>,
) -> String {
    let knob = |n: AxisName| knobs.iter().find(|k| k.0 == n).map(|k| f(k.1)).unwrap_or_default();
    let graph_field = |pick: &dyn Fn(&SyntheticGraphSpec) -> Option<f64>| {
        cfg.graph.as_ref().and_then(pick).map(f).unwrap_or_default()
    };
    let (q1, s1) = layer_fields(&cfg.sparsify.layer1);
    let (q2, s2) = layer_fields(&cfg.sparsify.layer2);
    let tcfg = train_config(cfg, 0);
    let mut fields = vec![
        cell.to_string(),
        rep.to_string(),
        seed.to_string(),
        cfg.train.m.to_string(),
        cfg.train.labeled.map_or(String::new(), |l| l.to_string()),
        graph_field(&|g| g.groups.get(1).map(|x| x.mean_degree)),
        graph_field(&|g| g.groups.first().map(|x| x.degree_std)),
        cfg.sparsify.layer1.mode_name().to_string(),
        q1,
        s1,
        knob(AxisName::P1Scale),
        cfg.sparsify.layer2.mode_name().to_string(),
        q2,
        s2,
        knob(AxisName::P2Scale),
        cfg.train.iterations.to_string(),
        f(cfg.train.eta_w),
        f(tcfg.effective_eta_v()),
        cfg.train.train_on.name().to_string(),
        eval_name(cfg.train.eval_adjacency).to_string(),
    ];
    match outcome {
        Ok(o) => {
            fields.extend([
                f(o.a_star_l1),
                f(o.a_l1),
                of(o.dev1_mean),
                of(o.dev2_mean),
                f(o.initial.mean_l2_error),
                f(o.report.mean_l2_error),
                of(o.report.classification_error),
                o.report.node_count.to_string(),
                "ok".to_string(),
            ]);
        }
        Err(e) => {
            fields.extend(std::iter::repeat_n(String::new(), 8));
            fields.push(format!("error: {}", e.to_string().replace([',', '\n'], ";")));
        }
    }
    fields.join(",")
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Run only this cell index (all replications).
    pub only_cell: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub csv: String,
    /// `cell,replication,wall_seconds`; not deterministic.
    pub timings: String,
    pub failures: usize,
}

/// Seed of `(cell, replication)` under the config's seeding policy.
pub fn cell_seed(cfg: &ExperimentConfig, cell: usize, rep: usize) -> u64 {
    if cfg.common_random_numbers {
        derive_seed(cfg.seed, &[rep as u64])
    } else {
        derive_seed(cfg.seed, &[cell as u64, rep as u64])
    }
}

pub fn run_sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutput> {
    cfg.validate_sweep()?;
    let loaded = load_source(cfg)?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .filter(|c| opts.only_cell.is_none_or(|o| o == *c))
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::config(format!(
            "no cell {:?} in a {}-cell sweep",
            opts.only_cell,
            cells.len()
        )));
    }
    let results: Vec<(String, f64, bool)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let started = Instant::now();
            let seed = cell_seed(cfg, c, r);
            let cell_cfg = cfg.apply(&cells[c]).expect("validated");
            let outcome = run_cell_with(&cell_cfg, loaded.as_ref(), seed);
            if let Err(e) = &outcome {
                log::warn!("cell {c} replication {r} failed: {e}");
            } else {
                info!(
                    "cell {c} replication {r} done in {:.1}s",
                    started.elapsed().as_secs_f64()
                );
            }
            (
                result_row(c, r, seed, &cells[c], &cell_cfg, &outcome),
                started.elapsed().as_secs_f64(),
                outcome.is_err(),
            )
        })
        .collect();
    let mut csv = RESULT_COLUMNS.join(",");
    csv.push('\n');
    let mut timings = String::from("cell,replication,wall_seconds\n");
    let mut failures = 0;
    for ((row, secs, failed), &(c, r)) in results.iter().zip(&jobs) {
        csv.push_str(row);
        csv.push('\n');
        let _ = writeln!(timings, "{c},{r},{secs:.3}");
        failures += usize::from(*failed);
    }
    Ok(SweepOutput { csv, timings, failures })
}

/// Parsed result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::config("empty result table"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    /// Concatenate tables with identical headers.
    pub fn concat(tables: Vec<ResultTable>) -> Result<Self> {
        let mut it = tables.into_iter();
        let mut first = it.next().ok_or_else(|| Error::config("no result tables"))?;
        for t in it {
            if t.header != first.header {
                return Err(Error::config("result tables have different columns"));
            }
            first.rows.extend(t.rows);
        }
        Ok(first)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("result table has no column {name:?}")))
    }

    pub fn get<'a>(&'a self, row: &'a [String], name: &str) -> Result<&'a str> {
        Ok(row.get(self.column(name)?).map_or("", |s| s.as_str()))
    }

    pub fn num(&self, row: &[String], name: &str) -> Result<Option<f64>> {
        let s = self.get(row, name)?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| Error::config(format!("column {name}: {s:?} is not a number")))
    }
}

/// Ordinary least-squares slope of `y` on `x`; 0 when `y` is constant.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope_layer1: f64,
    pub slope_layer2: f64,
    /// `slope_layer1 / slope_layer2`; NaN when `slope_layer2` is 0.
    pub ratio: f64,
    pub ratio_defined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryReport {
    /// Fit over all replications pooled.
    pub pooled: SlopeFit,
    /// Fit per replication, keyed by replication index.
    pub per_replication: Vec<(usize, SlopeFit)>,
    /// Median of the per-replication ratios that are defined.
    pub median_ratio: f64,
    /// Overlap of the two layers' deviation ranges relative to the shorter range.
    pub range_overlap: f64,
}

fn distinct(xs: &[(f64, f64)]) -> usize {
    let mut v: Vec<u64> = xs.iter().map(|p| p.0.to_bits()).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn fit(points1: &[(f64, f64)], points2: &[(f64, f64)]) -> Result<SlopeFit> {
    for (layer, pts) in [(1, points1), (2, points2)] {
        let found = distinct(pts);
        if found < 3 {
            return Err(Error::InsufficientPoints { layer, found });
        }
    }
    let s1 = ols_slope(points1);
    let s2 = ols_slope(points2);
    let ratio_defined = s2 != 0.0;
    Ok(SlopeFit {
        slope_layer1: s1,
        slope_layer2: s2,
        ratio: if ratio_defined { s1 / s2 } else { f64::NAN },
        ratio_defined,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

type Points = Vec<(f64, f64)>;

/// Layer-wise slopes of test error against mean deviation. Rows where only
/// layer 1 is sparsified give layer-1 points (x = `dev1_mean`), rows where only
/// layer 2 is give layer-2 points; rows with neither count for both.
pub fn fit_asymmetry_slopes(table: &ResultTable) -> Result<AsymmetryReport> {
    let mut by_rep: BTreeMap<usize, (Points, Points)> = BTreeMap::new();
    for row in &table.rows {
        if table.get(row, "status")? != "ok" {
            continue;
        }
        let rep = table.num(row, "replication")?.unwrap_or(0.0) as usize;
        let err = table
            .num(row, "mean_half_sq_error")?
            .ok_or_else(|| Error::config("missing mean_half_sq_error"))?;
        let l1 = table.get(row, "layer1")? != "none";
        let l2 = table.get(row, "layer2")? != "none";
        let entry = by_rep.entry(rep).or_default();
        if !l2 {
            if let Some(d) = table.num(row, "dev1_mean")? {
                entry.0.push((d, err));
            }
        }
        if !l1 {
            if let Some(d) = table.num(row, "dev2_mean")? {
                entry.1.push((d, err));
            }
        }
    }
    let all1: Vec<(f64, f64)> = by_rep.values().flat_map(|v| v.0.clone()).collect();
    let all2: Vec<(f64, f64)> = by_rep.values().flat_map(|v| v.1.clone()).collect();
    let pooled = fit(&all1, &all2)?;
    let per_replication: Vec<(usize, SlopeFit)> = by_rep
        .iter()
        .filter_map(|(&r, (p1, p2))| fit(p1, p2).ok().map(|f| (r, f)))
        .collect();
    let median_ratio = median(
        per_replication
            .iter()
            .filter(|(_, f)| f.ratio_defined)
            .map(|(_, f)| f.ratio)
            .collect(),
    );
    let range = |pts: &[(f64, f64)]| {
        let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (a0, a1) = range(&all1);
    let (b0, b1) = range(&all2);
    let shorter = (a1 - a0).min(b1 - b0);
    let overlap = (a1.min(b1) - a0.max(b0)).max(0.0);
    let range_overlap = if shorter > 0.0 { overlap / shorter } else { 0.0 };
    Ok(AsymmetryReport {
        pooled,
        per_replication,
        median_ratio,
        range_overlap,
    })
}

/// Median error per (axis1, axis2) value pair as a matrix: rows are values of
/// the first axis, columns values of the second.
pub fn heatmap_table(cfg: &ExperimentConfig, table: &ResultTable) -> Result<String> {
    if cfg.sweep.axes.len() != 2 {
        return Err(Error::config("a heatmap needs exactly two axes"));
    }
    let (a, b) = (&cfg.sweep.axes[0], &cfg.sweep.axes[1]);
    let cells = cfg.cells();
    let mut errs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        let (Some(c), Some(e)) = (table.num(row, "cell")?, table.num(row, "mean_half_sq_error")?) else {
            continue;
        };
        errs.entry(c as usize).or_default().push(e);
    }
    let mut s = format!("{}\\{}", a.name.as_str(), b.name.as_str());
    for v in &b.values {
        let _ = write!(s, ",{v:?}");
    }
    s.push('\n');
    for (i, va) in a.values.iter().enumerate() {
        let _ = write!(s, "{va:?}");
        for j in 0..b.values.len() {
            let idx = i * b.values.len() + j;
            debug_assert_eq!(cells[idx][0].1, *va);
            let med = errs.get(&idx).map(|v| median(v.clone()));
            let _ = write!(s, ",{}", med.map_or(String::new(), |m| format!("{m:?}")));
        }
        s.push('\n');
    }
    Ok(s)
}

/// gnuplot script plotting error against the first axis.
pub fn gnuplot_script(cfg: &ExperimentConfig, csv_name: &str) -> String {
    let axis = cfg.sweep.axes.first().map_or("cell", |a| a.name.as_str());
    let col = RESULT_COLUMNS.iter().position(|c| *c == axis).map_or(1, |i| i + 1);
    let err = RESULT_COLUMNS
        .iter()
        .position(|c| *c == "mean_half_sq_error")
        .expect("column")
        + 1;
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel '{axis}'\nset ylabel 'mean half squared error'\nplot '{csv_name}' using {col}:{err} with points\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "tiny"
seed = 3
replications = 1

[graph]
groups = [{ size = 30, mean_degree = 6.0, degree_std = 1.0 }, { size = 50, mean_degree = 12.0, degree_std = 1.0 }]

[target]
feature_dim = 6
output_dim = 2
hidden_dim = 4

[train]
m = 10
labeled = 40
iterations = 200
eta_w = 5.0

[[sweep.axes]]
name = "m"
values = [4, 8]
"#;

    #[test]
    fn config_parses_and_expands_cells() {
        let mut cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
        cfg.validate_sweep().unwrap();
        assert_eq!(cfg.cells().len(), 2);
        cfg.sweep.axes.push(Axis {
            name: AxisName::Q1,
            values: vec![0.2, 0.5, 0.8],
        });
        let cells = cfg.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[4], vec![(AxisName::M, 8.0), (AxisName::Q1, 0.5)]);
        let applied = cfg.apply(&cells[4]).unwrap();
        assert_eq!(applied.train.m, 8);
        assert_eq!(
            applied.sparsify.layer1,
            SamplerConfig::Global(GlobalPruneConfig::new(0.5))
        );
        cfg.sweep.axes.push(Axis {
            name: AxisName::D2,
            values: vec![1.0],
        });
        assert!(cfg.validate_sweep().is_err());
    }

    #[test]
    fn bad_knobs_are_config_errors() {
        let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
        assert!(cfg.apply(&[(AxisName::M, 2.5)]).is_err());
        assert!(cfg.apply(&[(AxisName::P1Scale, 0.5)]).is_err());
        let mut one_group = cfg.clone();
        one_group.graph.as_mut().unwrap().groups.truncate(1);
        assert!(one_group.apply(&[(AxisName::D2, 300.0)]).is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nm = 1\n").is_err());
    }

    #[test]
    fn sweep_is_deterministic_with_one_row_per_cell() {
        let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
        let a = run_sweep(&cfg, &SweepOptions::default()).unwrap();
        let b = run_sweep(&cfg, &SweepOptions::default()).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.failures, 0);
        let table = ResultTable::parse(&a.csv).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.header.len(), RESULT_COLUMNS.len());
        for row in &table.rows {
            assert_eq!(table.get(row, "status").unwrap(), "ok");
            let err = table.num(row, "mean_half_sq_error").unwrap().unwrap();
            let init = table.num(row, "initial_half_sq_error").unwrap().unwrap();
            assert!(err.is_finite() && init.is_finite());
        }
        // re-running a single cell reproduces its row
        let only = run_sweep(&cfg, &SweepOptions { only_cell: Some(1) }).unwrap();
        assert_eq!(only.csv.lines().nth(1), a.csv.lines().nth(2));
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
        cfg.train.labeled = Some(500);
        let out = run_sweep(&cfg, &SweepOptions::default()).unwrap();
        assert_eq!(out.failures, 2);
        assert!(out.csv.lines().skip(1).all(|l| l.contains(",error: ")));
    }

    fn synthetic_table(err: impl Fn(f64, f64) -> f64) -> ResultTable {
        let mut csv = RESULT_COLUMNS.join(",");
        csv.push('\n');
        for rep in 0..3 {
            for (l1, l2, d1, d2) in [
                ("global", "none", 0.2, 0.0),
                ("global", "none", 0.5, 0.0),
                ("global", "none", 0.9, 0.0),
                ("none", "global", 0.0, 0.3),
                ("none", "global", 0.0, 0.6),
                ("none", "global", 0.0, 0.8),
            ] {
                let row: Vec<String> = RESULT_COLUMNS
                    .iter()
                    .map(|c| match *c {
                        "replication" => rep.to_string(),
                        "layer1" => l1.into(),
                        "layer2" => l2.into(),
                        "dev1_mean" => format!("{d1:?}"),
                        "dev2_mean" => format!("{d2:?}"),
                        "mean_half_sq_error" => format!("{:?}", err(d1, d2)),
                        "status" => "ok".into(),
                        _ => String::new(),
                    })
                    .collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
        }
        ResultTable::parse(&csv).unwrap()
    }

    #[test]
    fn asymmetry_on_exact_linear_table() {
        let report = fit_asymmetry_slopes(&synthetic_table(|d1, d2| 2.0 * d1 + d2 + 0.1)).unwrap();
        assert!((report.pooled.ratio - 2.0).abs() < 1e-12);
        assert!((report.median_ratio - 2.0).abs() < 1e-12);
        assert_eq!(report.per_replication.len(), 3);
        // ranges [0.2, 0.9] and [0.3, 0.8]: overlap 0.5 over the shorter 0.5
        assert!((report.range_overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_error_gives_undefined_ratio() {
        let report = fit_asymmetry_slopes(&synthetic_table(|_, _| 0.3)).unwrap();
        assert_eq!(report.pooled.slope_layer1, 0.0);
        assert_eq!(report.pooled.slope_layer2, 0.0);
        assert!(report.pooled.ratio.is_nan() && !report.pooled.ratio_defined);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let mut table = synthetic_table(|d1, d2| d1 + d2);
        table
            .rows
            .retain(|r| r[RESULT_COLUMNS.iter().position(|c| *c == "dev2_mean").unwrap()] != "0.8");
        assert!(matches!(
            fit_asymmetry_slopes(&table),
            Err(Error::InsufficientPoints { layer: 2, found: 2 })
        ));
    }

    #[test]
    fn ols_matches_hand_values() {
        assert_eq!(ols_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]), 2.0);
        assert_eq!(ols_slope(&[(1.0, 1.0), (1.0, 3.0)]), 0.0);
    }
}
