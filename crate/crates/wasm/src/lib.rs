//! Browser bindings for the two-moons demo.
//!
//! Every export takes a JSON object of [`DemoParams`] (missing keys fall back
//! to defaults) and returns a JSON string.

use crodobo::config::{DatasetConfig, RunConfig};
use crodobo::data::TwoMoonsParams;
use crodobo::engine::{ensemble_predict, RunMode};
use crodobo::experiment::{execute, load_domains, Domains, RunOutput};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    /// Samples per domain.
    pub n: usize,
    pub noise: f64,
    pub rotation_deg: f64,
    pub query_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub mode: RunMode,
    pub hidden: Vec<usize>,
    pub data_seed: u64,
    pub stream_seed: u64,
    /// Cells per side of the decision-surface grid.
    pub grid: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            n: 600,
            noise: 0.2,
            rotation_deg: 45.0,
            query_size: 32,
            tau: 0.95,
            lambda: 0.4,
            mode: RunMode::Crodobo,
            hidden: vec![32, 32],
            data_seed: 0,
            stream_seed: 0,
            grid: 48,
        }
    }
}

impl DemoParams {
    pub fn from_json(json: &str) -> Result<Self, String> {
        if json.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(json).map_err(|e| e.to_string())
    }

    pub fn config(&self) -> Result<RunConfig, String> {
        if self.grid < 2 || self.grid > 256 {
            return Err(format!("grid = {} must be in [2, 256]", self.grid));
        }
        let mut cfg = RunConfig::default();
        cfg.label = "demo".into();
        cfg.dataset = DatasetConfig::TwoMoons(TwoMoonsParams {
            n_source: self.n,
            n_target: self.n,
            noise_sd: self.noise,
            rotation_deg: self.rotation_deg,
            ..Default::default()
        });
        cfg.stream.query_size = self.query_size;
        cfg.model.hidden_dims = self.hidden.clone();
        cfg.hyper.mode = self.mode;
        cfg.hyper.tau = self.tau;
        cfg.hyper.lambda = self.lambda;
        cfg.hyper.parallel = false;
        if self.mode == RunMode::Continual {
            cfg.hyper.warmup_steps = cfg.ablate.continual_warmup_steps;
        }
        cfg.seeds.data = self.data_seed;
        cfg.seeds.stream = self.stream_seed;
        cfg.validate().map_err(|(table, key, msg)| format!("{table}.{key}: {msg}"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
pub struct Points {
    /// `[x, y, label]` rows.
    pub source: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize)]
pub struct Grid {
    pub size: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Ensemble probability of class 1, row-major from the top-left cell.
    pub p1: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Adaptation {
    pub mode: String,
    pub online_average: f64,
    pub one_pass: f64,
    pub per_query: Vec<f64>,
    /// Online average after each query.
    pub running: Vec<f64>,
    pub acceptance: Vec<f64>,
    /// `[x, y, label, online prediction]` per target sample.
    pub target: Vec<[f64; 4]>,
    pub grid: Grid,
}

#[derive(Debug, Serialize)]
pub struct ModeCurve {
    pub mode: String,
    pub online_average: f64,
    pub one_pass: f64,
    pub running: Vec<f64>,
}

fn rows(d: &crodobo::data::Dataset) -> Vec<[f64; 3]> {
    let labels = d.labels().unwrap_or_default();
    d.features()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| [r[0], r[1], labels.get(i).map_or(f64::NAN, |&y| y as f64)])
        .collect()
}

pub fn generate_points(p: &DemoParams) -> Result<Points, String> {
    let d = load_domains(&p.config()?).map_err(|e| e.to_string())?;
    Ok(Points {
        source: rows(&d.source),
        target: rows(&d.target),
    })
}

fn running_average(out: &RunOutput) -> Vec<f64> {
    let (mut seen, mut correct) = (0usize, 0.0);
    out.report
        .per_query_accuracy
        .iter()
        .zip(out.trace.outcomes())
        .map(|(acc, o)| {
            seen += o.size;
            correct += acc * o.size as f64;
            correct / seen as f64
        })
        .collect()
}

fn bounds(d: &Domains) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in d.source.features().rows().into_iter().chain(d.target.features().rows()) {
        for a in 0..2 {
            lo[a] = lo[a].min(r[a]);
            hi[a] = hi[a].max(r[a]);
        }
    }
    ([lo[0] - 0.5, hi[0] + 0.5], [lo[1] - 0.5, hi[1] + 0.5])
}

fn surface(out: &RunOutput, d: &Domains, size: usize) -> Result<Grid, String> {
    let (x_range, y_range) = bounds(d);
    let step = |range: [f64; 2], i: usize| range[0] + (range[1] - range[0]) * (i as f64 + 0.5) / size as f64;
    let cells = Array2::from_shape_fn((size * size, 2), |(i, a)| {
        let (row, col) = (i / size, i % size);
        if a == 0 {
            step(x_range, col)
        } else {
            step([y_range[1], y_range[0]], row)
        }
    });
    let probs = ensemble_predict(&out.ensemble, cells.view()).map_err(|e| e.to_string())?;
    Ok(Grid {
        size,
        x_range,
        y_range,
        p1: probs.column(1).to_vec(),
    })
}

pub fn adapt_stream(p: &DemoParams) -> Result<Adaptation, String> {
    let cfg = p.config()?;
    let d = load_domains(&cfg).map_err(|e| e.to_string())?;
    let out = execute(&cfg, &d, None).map_err(|e| e.to_string())?;
    let labels = d.target.labels().unwrap_or_default();
    let mut target = vec![[0.0; 4]; d.target.len()];
    for (entry, outcome) in out.audit.iter().zip(out.trace.outcomes()) {
        for (&i, &pred) in entry.sample_indices.iter().zip(&outcome.predictions) {
            let r = d.target.features().row(i);
            target[i] = [r[0], r[1], labels.get(i).map_or(f64::NAN, |&y| y as f64), pred as f64];
        }
    }
    Ok(Adaptation {
        mode: p.mode.name().into(),
        online_average: out.report.online_average,
        one_pass: out.report.one_pass_overall,
        per_query: out.report.per_query_accuracy.clone(),
        running: running_average(&out),
        acceptance: out.report.acceptance_rate.clone(),
        target,
        grid: surface(&out, &d, p.grid)?,
    })
}

pub fn compare_modes(p: &DemoParams) -> Result<Vec<ModeCurve>, String> {
    RunMode::ALL
        .iter()
        .map(|&mode| {
            let q = DemoParams { mode, ..p.clone() };
            let cfg = q.config()?;
            let d = load_domains(&cfg).map_err(|e| e.to_string())?;
            let out = execute(&cfg, &d, None).map_err(|e| e.to_string())?;
            Ok(ModeCurve {
                mode: mode.name().into(),
                online_average: out.report.online_average,
                one_pass: out.report.one_pass_overall,
                running: running_average(&out),
            })
        })
        .collect()
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

/// Source and target point clouds.
#[wasm_bindgen]
pub fn generate(params: &str) -> Result<String, JsError> {
    to_js(DemoParams::from_json(params).and_then(|p| generate_points(&p)))
}

/// One online pass over the target stream in the requested mode.
#[wasm_bindgen]
pub fn adapt(params: &str) -> Result<String, JsError> {
    to_js(DemoParams::from_json(params).and_then(|p| adapt_stream(&p)))
}

/// Running online accuracy of every mode on the same stream.
#[wasm_bindgen]
pub fn compare(params: &str) -> Result<String, JsError> {
    to_js(DemoParams::from_json(params).and_then(|p| compare_modes(&p)))
}
