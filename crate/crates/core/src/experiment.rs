//! Orchestration: build the domains from a config, run the stream, score it,
//! and write the artifact files. Also the sweep, ablation and gradient-check
//! batteries the CLI exposes.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, DatasetConfig, RunConfig};
use crate::data::{
    gen_class_shift_blobs, gen_two_moons_shift, load_binary, load_csv, AuditEntry, DataError, Dataset, DatasetSummary, LabelColumn,
    SourcePool, TargetStream,
};
use crate::engine::{run_online, EngineError, HyperParams, LearnerEnsemble, RunMode};
use crate::metrics::{
    build_report, mean_and_variance, one_pass, trace_jsonl, write_per_query_csv, write_reports_csv, MetricsError, MetricsReport,
    ReportMeta, RunTrace, SeedAggregate, VARIANCE_FORMULA,
};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::gradcheck::{battery_spec, grad_check_with, GradCheckOptions, GradCheckResult, LossKind};
use crate::nn::{Fault, NetError, Network};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl ExperimentError {
    /// Whether the error comes from the user's input rather than from a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
            || matches!(self, ExperimentError::Engine(EngineError::Config(_)))
            || matches!(self, ExperimentError::Data(DataError::InvalidParameter(_)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create(path: &Path) -> Result<fs::File, ExperimentError> {
    fs::File::create(path).map_err(io_err(path))
}

/// Labeled source pool plus the full target set. The harness keeps the
/// target copy for one-pass scoring; the engine only ever sees the stream.
#[derive(Debug, Clone)]
pub struct Domains {
    pub source: Arc<Dataset>,
    pub target: Dataset,
}

fn label_column(s: &str) -> LabelColumn {
    s.parse()
        .map(LabelColumn::Index)
        .unwrap_or_else(|_| LabelColumn::Name(s.to_string()))
}

pub fn load_domains(cfg: &RunConfig) -> Result<Domains, ExperimentError> {
    let (source, target) = match &cfg.dataset {
        DatasetConfig::TwoMoons(p) => gen_two_moons_shift(p, cfg.seeds.data)?,
        DatasetConfig::Blobs(p) => gen_class_shift_blobs(p, cfg.seeds.data)?,
        DatasetConfig::Csv {
            source,
            target,
            label_column: col,
            num_classes,
        } => {
            let s = load_csv(source, Some(label_column(col)), *num_classes)?;
            let t = load_csv(target, Some(label_column(col)), Some(num_classes.unwrap_or(s.num_classes())))?;
            (s, t)
        }
        DatasetConfig::Binary {
            source,
            target,
            label_column: col,
            num_classes,
        } => {
            let s = load_binary(source, Some(*col), *num_classes)?;
            let t = load_binary(target, Some(*col), Some(num_classes.unwrap_or(s.num_classes())))?;
            (s, t)
        }
    };
    if source.dim() != target.dim() || source.num_classes() != target.num_classes() {
        return Err(ExperimentError::Data(DataError::InvalidParameter(format!(
            "source ({} features, {} classes) and target ({} features, {} classes) do not match",
            source.dim(),
            source.num_classes(),
            target.dim(),
            target.num_classes()
        ))));
    }
    Ok(Domains {
        source: Arc::new(source),
        target,
    })
}

/// Everything produced by one pass over the stream.
#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: RunTrace,
    pub trace_jsonl: String,
    pub trace_sha256: String,
    pub ensemble: LearnerEnsemble,
    pub audit: Vec<AuditEntry>,
}

fn active_losses(hp: &HyperParams) -> [bool; 4] {
    let t = hp.mode.uses_target();
    [
        hp.mode.uses_source(),
        t && hp.use_exchange,
        t && hp.use_entropy,
        t && hp.use_diversity,
    ]
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the configured stream once. `init` replaces the seeded
/// initialisation (e.g. networks loaded from a checkpoint).
pub fn execute(cfg: &RunConfig, domains: &Domains, init: Option<Vec<Network>>) -> Result<RunOutput, ExperimentError> {
    cfg.validate().map_err(|(table, key, message)| ConfigError::Invalid {
        field: format!("{table}.{key}"),
        line: None,
        message,
    })?;
    let hp = &cfg.hyper;
    let spec = cfg.model.spec(domains.source.dim(), domains.source.num_classes());
    let mut ensemble = match init {
        Some(nets) => {
            if nets.len() != hp.learner_count() {
                return Err(EngineError::LearnerCount {
                    mode: hp.mode,
                    expected: hp.learner_count(),
                    got: nets.len(),
                }
                .into());
            }
            if nets.iter().any(|n| n.spec() != &spec) {
                return Err(ExperimentError::Config(ConfigError::Invalid {
                    field: "model".into(),
                    line: None,
                    message: "loaded networks do not match the configured model and data".into(),
                }));
            }
            LearnerEnsemble::from_networks(nets, cfg.seeds.augment, hp.adam)?
        }
        None => LearnerEnsemble::new(
            &spec,
            hp.learner_count(),
            cfg.seeds.init,
            cfg.seeds.augment,
            hp.adam,
            cfg.model.distinct_init,
        )?,
    };
    let mut pool = SourcePool::new(domains.source.clone(), cfg.seeds.bootstrap)?;
    let mut stream = TargetStream::new(&domains.target, cfg.stream.query_size, cfg.seeds.stream)?;
    let trace = run_online(&mut ensemble, Some(&mut pool), &mut stream, hp, &cfg.augment)?;

    if !stream.is_exhausted() || !trace.is_complete() {
        return Err(ExperimentError::Contract("stream was not fully consumed".into()));
    }
    if let Some(j) = (0..stream.num_queries()).find(|&j| !stream.is_erased(j)) {
        return Err(ExperimentError::Contract(format!("query {j} was not erased after use")));
    }
    let mut served = vec![0u8; stream.num_samples()];
    for i in stream.audit_log().iter().flat_map(|e| &e.sample_indices) {
        served[*i] += 1;
    }
    if served.iter().any(|&c| c != 1) {
        return Err(ExperimentError::Contract(
            "a target sample was served more or less than once".into(),
        ));
    }

    let op = one_pass(&ensemble, &domains.target, &trace)?;
    let report = build_report(
        &trace,
        &op,
        ReportMeta {
            label: cfg.label.clone(),
            mode: hp.mode.name().into(),
            config_fingerprint: cfg.fingerprint(),
            stream_seed: cfg.seeds.stream,
            active_losses: active_losses(hp),
        },
    )?;
    let jsonl = trace_jsonl(&trace)?;
    Ok(RunOutput {
        report,
        trace_sha256: sha256_hex(jsonl.as_bytes()),
        trace_jsonl: jsonl,
        trace,
        ensemble,
        audit: stream.audit_log().to_vec(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    config_fingerprint: String,
    datasets: [DatasetSummary; 2],
    trace_sha256: &'a str,
    variance_formula: &'static str,
    artifacts: [&'static str; 6],
}

pub const ARTIFACTS: [&str; 6] = [
    "manifest.json",
    "trace.jsonl",
    "report.json",
    "report.csv",
    "per_query_accuracy.csv",
    "audit.jsonl",
];

/// Writes the run's files into `dir`. Nothing in them depends on wall-clock
/// time except the `wall_clock_secs` field of the reports and the audit
/// timestamps.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, domains: &Domains, out: &RunOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        tool: "crodobo",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        config_fingerprint: cfg.fingerprint(),
        datasets: [domains.source.summary(), domains.target.summary()],
        trace_sha256: &out.trace_sha256,
        variance_formula: VARIANCE_FORMULA,
        artifacts: ARTIFACTS,
    };
    write_file(&dir.join("manifest.json"), to_json(&manifest))?;
    write_file(&dir.join("trace.jsonl"), &out.trace_jsonl)?;
    write_file(&dir.join("report.json"), to_json(&out.report))?;
    write_reports_csv(std::slice::from_ref(&out.report), create(&dir.join("report.csv"))?)?;
    write_per_query_csv(&out.trace, create(&dir.join("per_query_accuracy.csv"))?)?;
    let mut audit = String::new();
    for entry in &out.audit {
        audit.push_str(&serde_json::to_string(entry).expect("audit entries serialize"));
        audit.push('\n');
    }
    write_file(&dir.join("audit.jsonl"), audit)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn save_model(path: &Path, out: &RunOutput) -> Result<(), ExperimentError> {
    Ok(checkpoint::save(path, &out.ensemble.networks())?)
}

pub fn load_model(path: &Path) -> Result<Vec<Network>, ExperimentError> {
    Ok(checkpoint::load(path)?)
}

/// Result of running one config over several stream seeds.
#[derive(Debug)]
pub struct SeedRuns {
    pub outputs: Vec<RunOutput>,
    pub aggregate: Option<SeedAggregate>,
}

impl SeedRuns {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.outputs.iter().map(|o| o.report.clone()).collect()
    }

    pub fn mean_online(&self) -> f64 {
        mean_and_variance(&self.outputs.iter().map(|o| o.report.online_average).collect::<Vec<_>>()).0
    }
}

/// One run per stream seed; an empty list means the configured seed only.
pub fn run_seeds(cfg: &RunConfig, domains: &Domains, stream_seeds: &[u64], init: Option<&[Network]>) -> Result<SeedRuns, ExperimentError> {
    let seeds = if stream_seeds.is_empty() {
        vec![cfg.seeds.stream]
    } else {
        stream_seeds.to_vec()
    };
    let outputs = seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seeds.stream = s;
            execute(&c, domains, init.map(<[Network]>::to_vec))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = if outputs.len() >= 2 {
        Some(crate::metrics::aggregate_seeds(
            &outputs.iter().map(|o| o.report.clone()).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    Ok(SeedRuns { outputs, aggregate })
}

/// Writes each seed's artifacts (into `seed_<s>/` when there are several),
/// a combined `report.csv`, and the seed table `seeds.csv` / `seeds.json`.
pub fn write_seed_runs(dir: &Path, cfg: &RunConfig, domains: &Domains, runs: &SeedRuns) -> Result<(), ExperimentError> {
    if runs.outputs.len() == 1 {
        let out = &runs.outputs[0];
        let mut c = cfg.clone();
        c.seeds.stream = out.report.stream_seed;
        return write_artifacts(dir, &c, domains, out);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for out in &runs.outputs {
        let mut c = cfg.clone();
        c.seeds.stream = out.report.stream_seed;
        write_artifacts(&dir.join(format!("seed_{}", out.report.stream_seed)), &c, domains, out)?;
    }
    write_reports_csv(&runs.reports(), create(&dir.join("report.csv"))?)?;
    if let Some(agg) = &runs.aggregate {
        agg.write_csv(create(&dir.join("seeds.csv"))?)?;
        write_file(&dir.join("seeds.json"), to_json(agg))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Lambda,
    StepsPerQuery,
    QuerySize,
}

impl FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "lambda" => Ok(SweepParam::Lambda),
            "steps_per_query" => Ok(SweepParam::StepsPerQuery),
            "query_size" => Ok(SweepParam::QuerySize),
            other => Err(ConfigError::Invalid {
                field: "param".into(),
                line: None,
                message: format!("unknown sweep parameter {other:?}; expected one of tau, lambda, steps_per_query, query_size"),
            }),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Lambda => "lambda",
            SweepParam::StepsPerQuery => "steps_per_query",
            SweepParam::QuerySize => "query_size",
        }
    }

    /// Copy of `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig, ConfigError> {
        let mut c = cfg.clone();
        let integer = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(ConfigError::Invalid {
                    field: self.name().into(),
                    line: None,
                    message: format!("{} takes whole numbers, got {value}", self.name()),
                })
            }
        };
        match self {
            SweepParam::Tau => c.hyper.tau = value,
            SweepParam::Lambda => c.hyper.lambda = value,
            SweepParam::StepsPerQuery => c.hyper.steps_per_query = integer()?,
            SweepParam::QuerySize => c.stream.query_size = integer()?,
        }
        c.validate().map_err(|(table, key, message)| ConfigError::Invalid {
            field: format!("{table}.{key}"),
            line: None,
            message,
        })?;
        Ok(c)
    }
}

/// One column per swept value (each the mean over stream seeds), then the
/// mean and population variance across the values. Accuracies are in percent.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub variance_formula: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub metric: String,
    pub cells: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

impl SweepTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        header.extend(self.values.iter().map(|v| format!("{}={v}", self.param.name())));
        header.extend(["mean".into(), "var".into()]);
        w.write_record(&header).map_err(MetricsError::from)?;
        for row in &self.rows {
            let mut rec = vec![row.metric.clone()];
            rec.extend(row.cells.iter().map(|c| format!("{c:.2}")));
            rec.push(format!("{:.2}", row.mean));
            rec.push(format!("{:.4}", row.var));
            w.write_record(&rec).map_err(MetricsError::from)?;
        }
        w.flush().map_err(|e| ExperimentError::Io {
            path: PathBuf::from("<sweep table>"),
            source: e,
        })
    }
}

pub struct SweepOutput {
    pub table: SweepTable,
    pub runs: Vec<(f64, SeedRuns)>,
}

pub fn sweep(
    cfg: &RunConfig,
    domains: &Domains,
    param: SweepParam,
    values: &[f64],
    stream_seeds: &[u64],
) -> Result<SweepOutput, ExperimentError> {
    let configs = values.iter().map(|&v| param.apply(cfg, v)).collect::<Result<Vec<_>, _>>()?;
    let mut runs = Vec::with_capacity(values.len());
    for (&v, c) in values.iter().zip(&configs) {
        let mut c = c.clone();
        c.label = format!("{}={v}", param.name());
        runs.push((v, run_seeds(&c, domains, stream_seeds, None)?));
    }
    let row = |metric: &str, f: &dyn Fn(&MetricsReport) -> f64| {
        let cells: Vec<f64> = runs
            .iter()
            .map(|(_, r)| mean_and_variance(&r.outputs.iter().map(|o| 100.0 * f(&o.report)).collect::<Vec<_>>()).0)
            .collect();
        let (mean, var) = mean_and_variance(&cells);
        SweepRow {
            metric: metric.into(),
            cells,
            mean,
            var,
        }
    };
    let rows = if runs.is_empty() {
        Vec::new()
    } else {
        vec![
            row("online_average", &|r| r.online_average),
            row("one_pass_overall", &|r| r.one_pass_overall),
            row("one_pass_class_average", &|r| r.one_pass_class_average),
        ]
    };
    Ok(SweepOutput {
        table: SweepTable {
            param,
            values: values.to_vec(),
            rows,
            variance_formula: VARIANCE_FORMULA,
        },
        runs,
    })
}

pub fn write_sweep(dir: &Path, out: &SweepOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    out.table.write_csv(create(&dir.join("sweep.csv"))?)?;
    write_file(&dir.join("sweep.json"), to_json(&out.table))?;
    let reports: Vec<MetricsReport> = out.runs.iter().flat_map(|(_, r)| r.reports()).collect();
    write_reports_csv(&reports, create(&dir.join("report.csv"))?)?;
    Ok(())
}

/// The ablation variants, in table order.
pub const ABLATION_VARIANTS: [&str; 6] = ["crodobo", "single", "single_no_ent", "single_no_div", "source_only", "continual"];

pub fn ablation_config(cfg: &RunConfig, variant: &str) -> Option<RunConfig> {
    let mut c = cfg.clone();
    c.label = variant.to_string();
    c.hyper.use_exchange = true;
    c.hyper.use_entropy = true;
    c.hyper.use_diversity = true;
    match variant {
        "crodobo" => c.hyper.mode = RunMode::Crodobo,
        "single" => c.hyper.mode = RunMode::Single,
        "single_no_ent" => {
            c.hyper.mode = RunMode::Single;
            c.hyper.use_entropy = false;
        }
        "single_no_div" => {
            c.hyper.mode = RunMode::Single;
            c.hyper.use_diversity = false;
        }
        "source_only" => c.hyper.mode = RunMode::SourceOnly,
        "continual" => {
            c.hyper.mode = RunMode::Continual;
            c.hyper.warmup_steps = c.hyper.warmup_steps.max(cfg.ablate.continual_warmup_steps);
        }
        _ => return None,
    }
    Some(c)
}

/// Seed-averaged row of the ablation table. Loss columns are `None` for
/// terms the variant does not compute.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mode: String,
    pub online_average: f64,
    pub online_sd: f64,
    pub one_pass_overall: f64,
    pub one_pass_class_average: f64,
    pub loss_source: Option<f64>,
    pub loss_exchange: Option<f64>,
    pub loss_entropy: Option<f64>,
    pub loss_diversity: Option<f64>,
}

pub struct AblationOutput {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<SeedRuns>,
}

impl AblationOutput {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_and_variance(&v).0)
}

pub fn ablate(cfg: &RunConfig, domains: &Domains, stream_seeds: &[u64]) -> Result<AblationOutput, ExperimentError> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for variant in ABLATION_VARIANTS {
        let c = ablation_config(cfg, variant).expect("known variant");
        let runs = run_seeds(&c, domains, stream_seeds, None)?;
        let reports = runs.reports();
        let online: Vec<f64> = reports.iter().map(|r| 100.0 * r.online_average).collect();
        let (online_mean, online_var) = mean_and_variance(&online);
        let pct = |f: &dyn Fn(&MetricsReport) -> f64| mean_and_variance(&reports.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>()).0;
        rows.push(AblationRow {
            variant: variant.into(),
            mode: c.hyper.mode.name().into(),
            online_average: online_mean,
            online_sd: online_var.sqrt(),
            one_pass_overall: pct(&|r| r.one_pass_overall),
            one_pass_class_average: pct(&|r| r.one_pass_class_average),
            loss_source: mean_opt(reports.iter().map(|r| r.losses.source)),
            loss_exchange: mean_opt(reports.iter().map(|r| r.losses.exchange)),
            loss_entropy: mean_opt(reports.iter().map(|r| r.losses.entropy)),
            loss_diversity: mean_opt(reports.iter().map(|r| r.losses.diversity)),
        });
        all.push(runs);
    }
    Ok(AblationOutput { rows, runs: all })
}

pub fn write_ablation(dir: &Path, out: &AblationOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("ablation.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    for row in &out.rows {
        w.serialize(row).map_err(MetricsError::from)?;
    }
    w.flush().map_err(io_err(&path))?;
    write_file(&dir.join("ablation.json"), to_json(&out.rows))?;
    let reports: Vec<MetricsReport> = out.runs.iter().flat_map(SeedRuns::reports).collect();
    write_reports_csv(&reports, create(&dir.join("report.csv"))?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    pub dense: f64,
    pub batch_norm: f64,
    pub head: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Every loss over `instances` random (network, batch) pairs.
pub fn gradcheck_battery(instances: usize, tolerance: f64, fault: Fault) -> Result<GradCheckReport, ExperimentError> {
    let opts = GradCheckOptions {
        fault,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for loss in LossKind::ALL {
        let results = (0..instances)
            .map(|i| grad_check_with(&battery_spec(i), 1000 + i as u64, loss, &opts))
            .collect::<Result<Vec<GradCheckResult>, _>>()?;
        let worst = |f: &dyn Fn(&GradCheckResult) -> f64| results.iter().map(f).fold(0.0, f64::max);
        let max = worst(&GradCheckResult::max_error);
        rows.push(GradCheckRow {
            loss: loss.name(),
            instances,
            max_relative_error: max,
            dense: worst(&|r| r.dense_error),
            batch_norm: worst(&|r| r.batch_norm_error),
            head: worst(&|r| r.head_error),
            passed: max < tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance,
        step: opts.step,
        rows,
    })
}
