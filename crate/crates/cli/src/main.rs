use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use lws_gcn::data::{load_dataset, read_split_csv, write_split_csv};
use lws_gcn::error::Error;
use lws_gcn::experiment::{
    fit_asymmetry_slopes, gnuplot_script, heatmap_table, run_detailed, run_sweep, DatasetSource, ExperimentConfig,
    ResultTable, SweepOptions,
};
use lws_gcn::graph::io::{read_matrix_csv, write_matrix_csv};
use lws_gcn::graph::{assign_degree_groups, build_normalized_adjacency, DegreeMode, Graph, GroupAssignment};
use lws_gcn::metrics::{evaluate, EvalReport};
use lws_gcn::model::{load_checkpoint, save_checkpoint};
use lws_gcn::rng::Stream;
use lws_gcn::sparsify::{
    build_effective_adjacency, deviation_l1, monte_carlo_deviation, BudgetScope, LayerSampler, SamplerConfig,
};
use lws_gcn::synth::{generate_dataset, DatasetSpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lws-gcn",
    version,
    about = "Two-layer GCN with jumping connection and edge sampling"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    SynthGen { spec: PathBuf, outdir: PathBuf },
    /// Build the effective matrix of a normalized adjacency CSV and draw from a sampler.
    Sparsify { matrix: PathBuf, config: PathBuf },
    /// Train on a dataset directory.
    Train { dataset: PathBuf, config: PathBuf },
    /// Run a parameter sweep and write the result table.
    Sweep {
        experiment: PathBuf,
        /// Run a single cell (all replications).
        #[arg(long)]
        only_cell: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Evaluate on the test nodes of this split file (default: all nodes).
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalOn::Full)]
        adjacency: EvalOn,
        /// Degree thresholds for the effective matrix when there is no grouping.csv.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
    },
    /// Fit per-layer slopes of test error against deviation.
    Asymmetry {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Exit with code 3 unless the median ratio reaches this value.
        #[arg(long)]
        assert_ratio: Option<f64>,
        /// Minimum deviation-range overlap required with --assert-ratio.
        #[arg(long, default_value_t = 0.5)]
        min_overlap: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalOn {
    Full,
    Effective,
}

/// Synthetic dataset file for `synth-gen`; experiment files work too.
#[derive(Debug, Deserialize)]
struct SynthFile {
    #[serde(default)]
    seed: u64,
    #[serde(flatten)]
    spec: DatasetSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparsifyFile {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    budget_scope: BudgetScope,
    #[serde(default)]
    degree_thresholds: Vec<f64>,
    /// `node,group` CSV; overrides `degree_thresholds`.
    #[serde(default)]
    grouping: Option<PathBuf>,
    /// Monte Carlo draws of the deviation.
    #[serde(default)]
    draws: usize,
    #[serde(default)]
    sampler: SamplerConfig,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let v = toml::from_str(&text).map_err(Error::TomlDe)?;
    Ok(v)
}

fn out_dir(global: &Global) -> Result<PathBuf> {
    let dir = global.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn synth_gen(global: &Global, spec: &Path, outdir: &Path) -> Result<()> {
    let file: SynthFile = read_toml(spec)?;
    let seed = global.seed.unwrap_or(file.seed);
    let ds = generate_dataset(&file.spec, &Stream::new(seed))?;
    let meta = format!(
        "seed = {seed}\n{}",
        toml::to_string(&file.spec).map_err(Error::TomlSer)?
    );
    lws_gcn::data::save_dataset(&ds.to_dataset(), outdir, Some(&meta))?;
    write_matrix_csv(&ds.effective, &outdir.join("effective.csv"))?;
    println!(
        "nodes={} edges={} groups={} a_l1={:?} a_star_l1={:?}",
        ds.graph.num_nodes(),
        ds.graph.num_edges(),
        ds.grouping.num_groups(),
        ds.adjacency.l1_norm(),
        ds.effective.l1_norm()
    );
    Ok(())
}

fn sparsify(global: &Global, matrix: &Path, config: &Path) -> Result<()> {
    let cfg: SparsifyFile = read_toml(config)?;
    let a = read_matrix_csv(matrix)?;
    if a.rows() != a.cols() {
        bail!(Error::InvalidConfig(format!(
            "matrix must be square, got {:?}",
            a.dims()
        )));
    }
    let mut pairs: Vec<(usize, usize)> = a
        .iter()
        .filter(|&(r, c, _)| r != c)
        .map(|(r, c, _)| (r.min(c), r.max(c)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let graph = Graph::new(a.rows(), pairs)?;
    let assignment = match &cfg.grouping {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut groups = vec![0; a.rows()];
            for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                let (n, g) = line
                    .split_once(',')
                    .with_context(|| format!("bad grouping line {line:?}"))?;
                let n: usize = n.trim().parse()?;
                *groups.get_mut(n).with_context(|| format!("node {n} out of range"))? = g.trim().parse()?;
            }
            GroupAssignment::Explicit(groups)
        }
        None => GroupAssignment::Thresholds(cfg.degree_thresholds.clone()),
    };
    let grouping = assign_degree_groups(&graph, &assignment)?;
    let effective = build_effective_adjacency(&a, &grouping, cfg.budget_scope)?;
    let stream = Stream::new(global.seed.unwrap_or(cfg.seed));
    let sampler = cfg.sampler.resolve(&a, Some(&grouping))?;
    let sampled = sampler.draw(&a, &stream.child(0));
    let dir = out_dir(global)?;
    write_matrix_csv(&effective, &dir.join("effective.csv"))?;
    write_matrix_csv(&sampled, &dir.join("sampled.csv"))?;
    println!(
        "nnz={} effective_nnz={} sampled_nnz={} a_star_l1={:?} deviation_l1={:?}",
        a.nnz(),
        effective.nnz(),
        sampled.nnz(),
        effective.l1_norm(),
        deviation_l1(&sampled, &effective)?
    );
    if cfg.draws > 0 {
        let devs = match &sampler {
            LayerSampler::Random(plan) => monte_carlo_deviation(&a, plan, &effective, cfg.draws, &stream.child(1))?,
            LayerSampler::Fixed(m) => vec![deviation_l1(m, &effective)?; cfg.draws],
        };
        let mut csv = String::from("draw,deviation_l1\n");
        for (i, d) in devs.iter().enumerate() {
            csv.push_str(&format!("{i},{d:?}\n"));
        }
        fs::write(dir.join("deviation.csv"), csv)?;
        println!("mean_deviation_l1={:?}", devs.iter().sum::<f64>() / devs.len() as f64);
    }
    Ok(())
}

fn train_cmd(global: &Global, dataset: &Path, config: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    let thresholds = cfg.dataset.take().map(|d| d.degree_thresholds).unwrap_or_default();
    cfg.graph = None;
    cfg.dataset = Some(DatasetSource {
        dir: dataset.to_path_buf(),
        degree_thresholds: thresholds,
    });
    let seed = global.seed.unwrap_or(cfg.seed);
    let run = run_detailed(&cfg, seed)?;
    let dir = out_dir(global)?;
    save_checkpoint(&run.params, &dir.join("checkpoint.bin"))?;
    run.log.write_csv(&dir.join("train_log.csv"))?;
    write_split_csv(&run.split, &dir.join("split.csv"))?;
    println!("stage,{}", EvalReport::CSV_HEADER);
    println!("initial,{}", run.outcome.initial.csv_fields());
    println!("final,{}", run.outcome.report.csv_fields());
    println!(
        "a_star_l1={:?} max_identity_gap={:?}",
        run.outcome.a_star_l1, run.log.max_identity_gap
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, dataset: &Path, split: Option<&Path>, on: EvalOn, thresholds: &[f64]) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let mut a = build_normalized_adjacency(&ds.graph, DegreeMode::default())?;
    if let EvalOn::Effective = on {
        let assignment = match &ds.groups {
            Some(g) => GroupAssignment::Explicit(g.clone()),
            None => GroupAssignment::Thresholds(thresholds.to_vec()),
        };
        let grouping = assign_degree_groups(&ds.graph, &assignment)?;
        a = build_effective_adjacency(&a, &grouping, BudgetScope::default())?;
    }
    let nodes: Vec<usize> = match split {
        Some(p) => read_split_csv(p)?.test,
        None => (0..ds.num_nodes()).collect(),
    };
    let report = evaluate(&params, ds.features.view(), &a, &a, &nodes, ds.labels.view())?;
    println!("{}", EvalReport::CSV_HEADER);
    println!("{}", report.csv_fields());
    Ok(())
}

fn sweep_cmd(global: &Global, experiment: &Path, only_cell: Option<usize>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(experiment)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let out = run_sweep(&cfg, &SweepOptions { only_cell })?;
    let csv_path = global.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| {
        PathBuf::from(if cfg.name.is_empty() { "results.csv" } else { &cfg.name }).with_extension("csv")
    });
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&csv_path, &out.csv)?;
    fs::write(csv_path.with_extension("timings.csv"), &out.timings)?;
    let csv_name = csv_path
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    fs::write(csv_path.with_extension("gp"), gnuplot_script(&cfg, &csv_name))?;
    if cfg.sweep.axes.len() == 2 {
        let table = ResultTable::parse(&out.csv)?;
        fs::write(csv_path.with_extension("heatmap.csv"), heatmap_table(&cfg, &table)?)?;
    }
    info!("wrote {}", csv_path.display());
    if out.failures > 0 {
        warn!("{} of the sweep's runs failed; see the status column", out.failures);
        return Ok(ExitCode::from(EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

fn asymmetry_cmd(results: &[PathBuf], assert_ratio: Option<f64>, min_overlap: f64) -> Result<ExitCode> {
    let tables = results
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|_| Error::MissingFile(p.clone()))?;
            ResultTable::parse(&text)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let report = fit_asymmetry_slopes(&ResultTable::concat(tables)?)?;
    let p = &report.pooled;
    println!("slope_layer1={:?}", p.slope_layer1);
    println!("slope_layer2={:?}", p.slope_layer2);
    println!(
        "ratio={:?}{}",
        p.ratio,
        if p.ratio_defined {
            ""
        } else {
            " (undefined: layer-2 slope is 0)"
        }
    );
    for (rep, f) in &report.per_replication {
        println!(
            "replication {rep}: slope1={:?} slope2={:?} ratio={:?}",
            f.slope_layer1, f.slope_layer2, f.ratio
        );
    }
    println!("median_ratio={:?}", report.median_ratio);
    println!("range_overlap={:?}", report.range_overlap);
    if let Some(target) = assert_ratio {
        let ok = report.median_ratio >= target && report.range_overlap >= min_overlap;
        println!(
            "assert ratio >= {target:?} and overlap >= {min_overlap:?}: {}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            return Ok(ExitCode::from(EXIT_ACCEPTANCE));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::SynthGen { spec, outdir } => synth_gen(g, spec, outdir)?,
        Command::Sparsify { matrix, config } => sparsify(g, matrix, config)?,
        Command::Train { dataset, config } => train_cmd(g, dataset, config)?,
        Command::Sweep { experiment, only_cell } => return sweep_cmd(g, experiment, *only_cell),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            adjacency,
            thresholds,
        } => eval_cmd(checkpoint, dataset, split.as_deref(), *adjacency, thresholds)?,
        Command::Asymmetry {
            results,
            assert_ratio,
            min_overlap,
        } => return asymmetry_cmd(results, *assert_ratio, *min_overlap),
    }
    Ok(ExitCode::SUCCESS)
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(
                Error::InvalidConfig(_)
                    | Error::DegenerateSpec(_)
                    | Error::InvalidGrouping(_)
                    | Error::EmptyGroup(_)
                    | Error::TomlDe(_)
                    | Error::MissingFile(_)
                    | Error::MalformedLine { .. }
                    | Error::IndexOutOfRange { .. }
            )
        )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_config_error(&err) {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            })
        }
    }
}
