//! `crodobo` command line: run, sweep, ablate, gradcheck, gen-data.
//!
//! Exit codes: 0 success, 1 bad config or arguments, 2 a run failed or
//! broke a contract, 3 a gradient check failed.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crodobo::config::{DatasetConfig, RunConfig};
use crodobo::data::{write_csv, write_matrix, Dataset};
use crodobo::experiment::{
    ablate, gradcheck_battery, load_domains, load_model, run_seeds, save_model, sweep, write_ablation, write_seed_runs, write_sweep,
    Domains, ExperimentError, SeedRuns, SweepParam,
};
use crodobo::metrics::VARIANCE_FORMULA;
use crodobo::nn::Fault;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crodobo", version, about = "Online domain adaptation over a read-once target stream")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one config (optionally over several stream seeds).
    Run(RunArgs),
    /// Run one config per value of a hyperparameter.
    Sweep(SweepArgs),
    /// Run the ablation battery.
    Ablate(CommonArgs),
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck(GradcheckArgs),
    /// Write the configured source and target domains to disk.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: `output.dir` from the config, else `runs/<label>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated stream seeds; overrides `seeds.stream`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Initialize learner `k` from `seeds.init + k` instead of one shared draw.
    #[arg(long)]
    pub distinct_init: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = load_config(&self.config)?;
        cfg.model.distinct_init |= self.distinct_init;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write the final learners to this checkpoint file.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Start from the learners in this checkpoint instead of a fresh init.
    #[arg(long)]
    pub load_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// tau, lambda, steps_per_query or query_size.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values; an empty list does nothing.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub values: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    BnSignFlip,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Pass threshold on the relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Random (network, batch) instances per loss.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Write the error table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<InjectedFault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Config whose `[dataset]` block and `seeds.data` are used.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    pub format: DataFormat,
}

/// Failure tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Failure { code, error: e.into() }
    }
}

fn config_failure(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_CONFIG, error }
}

fn runtime_failure(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_RUNTIME, error }
}

/// Parses the arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::GenData(a) => cmd_gen_data(&a),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path)
        .with_context(|| format!("config {}", path.display()))
        .map_err(config_failure)
}

fn out_dir(common: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.label))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn print_runs(runs: &SeedRuns) {
    println!("{:>8} {:>8} {:>9} {:>10}  trace sha256", "seed", "online", "one-pass", "class-avg");
    for o in &runs.outputs {
        let r = &o.report;
        println!(
            "{:>8} {:>8} {:>9} {:>10}  {}",
            r.stream_seed,
            pct(r.online_average),
            pct(r.one_pass_overall),
            pct(r.one_pass_class_average),
            o.trace_sha256
        );
    }
    if let Some(agg) = &runs.aggregate {
        println!("# {VARIANCE_FORMULA}");
        for row in &agg.rows {
            println!("{:<24} mean {:>7.2}  var {:>8.4}", row.metric, row.mean, row.var);
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<i32, Failure> {
    let cfg = args.common.load()?;
    let domains = load_domains(&cfg)?;
    let init = match &args.load_model {
        Some(p) => Some(load_model(p).map_err(|e| config_failure(anyhow::Error::new(e).context(format!("model {}", p.display()))))?),
        None => None,
    };
    let runs = run_seeds(&cfg, &domains, &args.common.seeds, init.as_deref())?;
    let dir = out_dir(&args.common, &cfg);
    write_seed_runs(&dir, &cfg, &domains, &runs)?;
    if let Some(path) = &args.save_model {
        let last = runs.outputs.last().expect("at least one run");
        save_model(path, last)?;
    }
    print_runs(&runs);
    println!("artifacts in {}", dir.display());
    Ok(0)
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("--values: {s:?} is not a number")))
        .collect::<Result<_>>()
        .map_err(config_failure)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32, Failure> {
    let param: SweepParam = args.param.parse().map_err(|e| config_failure(anyhow::Error::new(e)))?;
    let values = parse_values(&args.values)?;
    let cfg = args.common.load()?;
    if values.is_empty() {
        eprintln!("warning: no values given for --param {}; nothing to run", param.name());
        return Ok(0);
    }
    let domains = load_domains(&cfg)?;
    let out = sweep(&cfg, &domains, param, &values, &args.common.seeds)?;
    let dir = out_dir(&args.common, &cfg);
    write_sweep(&dir, &out)?;
    let mut stdout = Vec::new();
    out.table.write_csv(&mut stdout)?;
    println!("# {VARIANCE_FORMULA}");
    print!("{}", String::from_utf8_lossy(&stdout));
    println!("artifacts in {}", dir.display());
    Ok(0)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn cmd_ablate(args: &CommonArgs) -> Result<i32, Failure> {
    let cfg = args.load()?;
    let domains = load_domains(&cfg)?;
    let out = ablate(&cfg, &domains, &args.seeds)?;
    let dir = out_dir(args, &cfg);
    write_ablation(&dir, &out)?;
    println!(
        "{:<14} {:>8} {:>6} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8}",
        "variant", "online", "sd", "one-pass", "class-avg", "l_s", "l_t", "l_ent", "l_div"
    );
    for r in &out.rows {
        println!(
            "{:<14} {:>8.2} {:>6.2} {:>9.2} {:>10.2} {:>8} {:>8} {:>8} {:>8}",
            r.variant,
            r.online_average,
            r.online_sd,
            r.one_pass_overall,
            r.one_pass_class_average,
            opt(r.loss_source),
            opt(r.loss_exchange),
            opt(r.loss_entropy),
            opt(r.loss_diversity)
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(0)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32, Failure> {
    if !(args.eps > 0.0) || args.instances == 0 {
        return Err(config_failure(anyhow::anyhow!("--eps must be > 0 and --instances >= 1")));
    }
    let fault = match args.inject_fault {
        Some(InjectedFault::BnSignFlip) => Fault::FlipBatchNormGradient,
        None => Fault::None,
    };
    let report = gradcheck_battery(args.instances, args.eps, fault)?;
    println!(
        "central differences, step {:e}; pass if relative error < {:e}{}",
        report.step,
        report.tolerance,
        if args.eps > 1e-4 { " (looser than the default 1e-4)" } else { "" }
    );
    println!(
        "{:<9} {:>9} {:>12} {:>12} {:>12} {:>12}  result",
        "loss", "instances", "max", "dense", "batch-norm", "head"
    );
    for r in &report.rows {
        println!(
            "{:<9} {:>9} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}  {}",
            r.loss,
            r.instances,
            r.max_relative_error,
            r.dense,
            r.batch_norm,
            r.head,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime_failure)?;
    }
    Ok(if report.passed() { 0 } else { EXIT_GRADCHECK })
}

fn write_domain(dir: &Path, name: &str, d: &Dataset, format: DataFormat) -> Result<PathBuf, Failure> {
    let path = match format {
        DataFormat::Csv => {
            let p = dir.join(format!("{name}.csv"));
            write_csv(d, &p).map_err(ExperimentError::from)?;
            p
        }
        DataFormat::Binary => {
            // label stored as the last column
            let p = dir.join(format!("{name}.bin"));
            let labels = d.labels().expect("generated data is labeled");
            let mut m = ndarray::Array2::zeros((d.len(), d.dim() + 1));
            m.slice_mut(ndarray::s![.., ..d.dim()]).assign(d.features());
            for (i, &y) in labels.iter().enumerate() {
                m[[i, d.dim()]] = y as f64;
            }
            write_matrix(&m, &p).map_err(ExperimentError::from)?;
            p
        }
    };
    Ok(path)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<i32, Failure> {
    let cfg = load_config(&args.config)?;
    if matches!(cfg.dataset, DatasetConfig::Csv { .. } | DatasetConfig::Binary { .. }) {
        return Err(config_failure(anyhow::anyhow!("gen-data needs a two_moons or blobs dataset block")));
    }
    let Domains { source, target } = load_domains(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime_failure)?;
    for (name, d) in [("source", source.as_ref()), ("target", &target)] {
        let path = write_domain(&args.out, name, d, args.format)?;
        let s = d.summary();
        println!(
            "{}: {} rows x {} features, {} classes, sha256 {}",
            path.display(),
            s.samples,
            s.dim,
            s.num_classes,
            s.sha256
        );
    }
    Ok(0)
}
