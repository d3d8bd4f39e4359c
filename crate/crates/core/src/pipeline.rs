//! End-to-end operations behind the command-line tool: simulate panels to
//! disk, fit, forecast and evaluate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ForecastMode, RunConfig, SeChoice};
use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::estimate::{
    hessian_standard_errors, opg_standard_errors, rprop_fit, FitResult, RpropConfig, StartSummary,
    DEFAULT_HESSIAN_STEP, DEFAULT_SCORE_STEP,
};
use crate::evaluate::{check_split, forecast_track, regime_metrics, score_function, ForecastTrack, RegimeMetrics, ScoreSeries};
use crate::filter::FilterOptions;
use crate::io::{self, Truth};
use crate::model::{Layout, ModelSpec, ParameterSet, ParameterValues};
use crate::simulate::{simulate_panel, InitialState, SimConfig, SimOutput};

pub const MANIFEST: &str = "manifest.json";
pub const FIT_FILE: &str = "fit.json";
pub const FILTERED_FILE: &str = "filtered.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub replication: usize,
    pub seed: u64,
    /// Directory relative to the manifest.
    pub directory: PathBuf,
}

/// Inventory of a simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_individuals: usize,
    pub n_occasions: usize,
    #[serde(default)]
    pub initial_state: InitialState,
    pub spec: ModelSpec,
    pub truth: ParameterValues,
    pub replications: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RsssError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Simulates `replications` panels under `out`; replication `r` uses seed
/// `seed + r` and lands in `rep_XXX/`.
pub fn simulate_to_dir(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| RsssError::Config("simulate needs a [simulation] section".into()))?;
    let spec = cfg.spec()?;
    let params = cfg.truth_parameters()?;
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(sim.replications);
    for r in 0..sim.replications {
        let seed = cfg.seed.wrapping_add(r as u64);
        let output = simulate_panel(&SimConfig {
            n_individuals: sim.n_individuals,
            n_occasions: sim.n_occasions,
            params: params.clone(),
            spec: spec.clone(),
            seed,
            replications: 1,
            initial_state: sim.initial_state,
        })?;
        let directory = PathBuf::from(format!("rep_{:03}", r + 1));
        let dir = out.join(&directory);
        std::fs::create_dir_all(&dir)?;
        io::write_panel(&output.data, &dir)?;
        io::write_truth(&Truth::from(&output), &dir.join(TRUTH_FILE))?;
        entries.push(ManifestEntry {
            replication: r + 1,
            seed,
            directory,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        n_individuals: sim.n_individuals,
        n_occasions: sim.n_occasions,
        initial_state: sim.initial_state,
        spec,
        truth: ParameterValues::from_parameter_set(&params),
        replications: entries,
    };
    io::write_text(&out.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// A panel to process and where its outputs go.
#[derive(Clone, Debug)]
pub struct Job {
    pub label: String,
    pub y1: PathBuf,
    pub y2: PathBuf,
    pub regime_events: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Job {
    pub fn load_data(&self) -> Result<PanelDataset> {
        for p in [&self.y1, &self.y2] {
            if !p.exists() {
                return Err(RsssError::Config(format!("data file {} does not exist", p.display())));
            }
        }
        let mut data = io::read_panel(&self.y1, &self.y2)?;
        if let Some(ev) = &self.regime_events {
            io::read_regime_events(ev, &mut data)?;
        }
        Ok(data)
    }
}

/// Expands the `[data]` section into jobs; outputs go under `out`.
pub fn jobs(cfg: &RunConfig, out: &Path) -> Result<(Vec<Job>, Option<Manifest>)> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| RsssError::Config("this command needs a [data] section".into()))?;
    if let Some(path) = &data.manifest {
        let manifest = Manifest::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let jobs = manifest
            .replications
            .iter()
            .map(|e| {
                let dir = base.join(&e.directory);
                Job {
                    label: e.directory.display().to_string(),
                    y1: dir.join("y1.csv"),
                    y2: dir.join("y2.csv"),
                    regime_events: None,
                    truth: Some(dir.join(TRUTH_FILE)),
                    out_dir: out.join(&e.directory),
                    seed: cfg.seed.wrapping_add(e.replication as u64 - 1),
                }
            })
            .collect();
        return Ok((jobs, Some(manifest)));
    }
    let (y1, y2) = match (&data.y1, &data.y2) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => return Err(RsssError::Config("[data] needs `y1` and `y2`".into())),
    };
    Ok((
        vec![Job {
            label: "panel".into(),
            y1,
            y2,
            regime_events: data.regime_events.clone(),
            truth: data.truth.clone(),
            out_dir: out.to_path_buf(),
            seed: cfg.seed,
        }],
        None,
    ))
}

/// One row of the reported parameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub se_opg: Option<f64>,
    pub se_hessian: Option<f64>,
    pub fixed: bool,
}

/// The persisted form of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub seed: u64,
    pub training_occasions: usize,
    pub loglik: f64,
    pub parameters: Vec<ParameterRow>,
    pub theta: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    pub start_index: usize,
    pub starts: Vec<StartSummary>,
    pub diagnostics: Vec<String>,
    pub spec: ModelSpec,
    pub values: ParameterValues,
}

impl FitDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RsssError::Config(format!("cannot read fit result {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn params(&self) -> Result<ParameterSet> {
        let p = self.values.to_parameter_set()?;
        p.check_shapes(&self.spec)?;
        Ok(p)
    }
}

/// Fits a panel and attaches the requested standard errors.
pub fn fit_panel(data: &PanelDataset, spec: &ModelSpec, optimizer: &RpropConfig, se: SeChoice, seed: u64) -> Result<FitResult> {
    let layout = Layout::new(spec)?;
    let mut fit = rprop_fit(data, &layout, optimizer, seed)?;
    let occ = fit.training_occasions;
    if matches!(se, SeChoice::Opg | SeChoice::Both) {
        fit.se_opg = Some(opg_standard_errors(&fit.theta_hat, data, &layout, occ, DEFAULT_SCORE_STEP)?);
    }
    if matches!(se, SeChoice::Hessian | SeChoice::Both) {
        fit.se_hessian = Some(hessian_standard_errors(&fit.theta_hat, data, &layout, occ, DEFAULT_HESSIAN_STEP)?);
    }
    Ok(fit)
}

pub fn fit_document(fit: &FitResult, spec: &ModelSpec, seed: u64) -> Result<FitDocument> {
    let layout = Layout::new(spec)?;
    let named = fit.params_hat.named_values(&layout);
    let pick = |se: &Option<crate::estimate::StandardErrors>, k: usize| se.as_ref().and_then(|s| s.constrained.get(k).copied().flatten());
    let parameters = named
        .into_iter()
        .enumerate()
        .map(|(k, nv)| ParameterRow {
            se_opg: if nv.fixed { None } else { pick(&fit.se_opg, k) },
            se_hessian: if nv.fixed { None } else { pick(&fit.se_hessian, k) },
            name: nv.name,
            estimate: nv.value,
            fixed: nv.fixed,
        })
        .collect();
    let mut diagnostics = Vec::new();
    for (label, se) in [("opg", &fit.se_opg), ("hessian", &fit.se_hessian)] {
        if let Some(se) = se {
            diagnostics.extend(se.diagnostics.iter().map(|d| format!("{label}: {d}")));
        }
    }
    Ok(FitDocument {
        seed,
        training_occasions: fit.training_occasions,
        loglik: fit.loglik,
        parameters,
        theta: fit.theta_hat.clone(),
        loglik_trace: fit.loglik_trace.clone(),
        start_index: fit.start_index,
        starts: fit.starts.clone(),
        diagnostics,
        spec: spec.clone(),
        values: ParameterValues::from_parameter_set(&fit.params_hat),
    })
}

/// Fits one job, writing `fit.json` and the training-window filter output.
pub fn fit_job(cfg: &RunConfig, job: &Job) -> Result<FitDocument> {
    let data = job.load_data()?;
    let spec = cfg.spec()?;
    let fit = fit_panel(&data, &spec, &cfg.optimizer, cfg.estimation.standard_errors, job.seed)?;
    let doc = fit_document(&fit, &spec, job.seed)?;
    std::fs::create_dir_all(&job.out_dir)?;
    io::write_text(&job.out_dir.join(FIT_FILE), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    let split = fit.training_occasions;
    let track = run_track(&data, &fit.params_hat, &spec, split, ForecastMode::OneStep)?;
    io::write_track(&track, &data.ids, io::Window::Observed, &job.out_dir.join(FILTERED_FILE))?;
    Ok(doc)
}

/// Filters the whole horizon with frozen parameters.
pub fn run_track(data: &PanelDataset, params: &ParameterSet, spec: &ModelSpec, split: usize, mode: ForecastMode) -> Result<ForecastTrack> {
    let options = match mode {
        ForecastMode::OneStep => FilterOptions::default(),
        ForecastMode::Extrapolate => FilterOptions { last_update: Some(split) },
    };
    forecast_track(data, params, spec, split, &options)
}

pub fn split_for(cfg: &RunConfig, n_occasions: usize) -> usize {
    cfg.evaluation
        .split
        .unwrap_or_else(|| cfg.optimizer.training_window(n_occasions))
}

/// Writes `forecast.csv` for one job from its `fit.json`.
pub fn forecast_job(cfg: &RunConfig, job: &Job) -> Result<ForecastTrack> {
    let fit_path = job.out_dir.join(FIT_FILE);
    if !fit_path.exists() {
        return Err(RsssError::Config(format!("no fit result at {}", fit_path.display())));
    }
    let doc = FitDocument::load(&fit_path)?;
    let data = job.load_data()?;
    let split = split_for(cfg, data.n_occasions);
    let track = run_track(&data, &doc.params()?, &doc.spec, split, cfg.evaluation.mode)?;
    io::write_track(&track, &data.ids, io::Window::Forecast, &job.out_dir.join(FORECAST_FILE))?;
    Ok(track)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobEvaluation {
    pub metrics: RegimeMetrics,
    pub score: ScoreSeries,
}

/// Metrics of one job from its `filtered.csv`, `forecast.csv` and truth.
pub fn evaluate_job(cfg: &RunConfig, job: &Job) -> Result<JobEvaluation> {
    let truth_path = job
        .truth
        .as_ref()
        .ok_or_else(|| RsssError::Config(format!("{}: no truth sidecar configured", job.label)))?;
    if !truth_path.exists() {
        return Err(RsssError::Config(format!("truth sidecar {} does not exist", truth_path.display())));
    }
    let truth = io::read_truth(truth_path)?;
    let n_t = truth.regimes.first().map_or(0, |r| r.len());
    let split = split_for(cfg, n_t);
    check_split(split, n_t)?;
    let mut pr = vec![vec![f64::NAN; n_t]; truth.ids.len()];
    let mut eta = vec![vec![nalgebra::DVector::zeros(0); n_t]; truth.ids.len()];
    for file in [FILTERED_FILE, FORECAST_FILE] {
        let path = job.out_dir.join(file);
        if !path.exists() {
            return Err(RsssError::Config(format!("{} does not exist", path.display())));
        }
        let rows = io::read_track(&path)?;
        if rows.ids != truth.ids {
            return Err(RsssError::Evaluation(format!("{} lists different individuals than the truth", path.display())));
        }
        for i in 0..rows.ids.len() {
            for (k, &t) in rows.occasions[i].iter().enumerate() {
                if t == 0 || t > n_t {
                    return Err(RsssError::Evaluation(format!("{}: occasion {t} out of range", path.display())));
                }
                pr[i][t - 1] = rows.pr_s2[i][k];
                eta[i][t - 1] = rows.eta[i][k].clone();
            }
        }
    }
    if let Some((i, t)) = pr
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.iter().position(|p| p.is_nan()).map(|t| (i, t)))
    {
        return Err(RsssError::Evaluation(format!(
            "no regime probability for id {} at t {}; split {split} must match the fit",
            truth.ids[i],
            t + 1
        )));
    }
    evaluate_arrays(&pr, &eta, &truth, split, cfg.evaluation.cutoff)
}

pub fn evaluate_arrays(
    pr_s2: &[Vec<f64>],
    eta: &[Vec<nalgebra::DVector<f64>>],
    truth: &Truth,
    split: usize,
    cutoff: f64,
) -> Result<JobEvaluation> {
    Ok(JobEvaluation {
        metrics: regime_metrics(pr_s2, &truth.regimes, split, cutoff)?,
        score: score_function(eta, &truth.eta1, split)?,
    })
}

/// Outcome of one in-memory replication (simulate, fit, forecast, score).
#[derive(Clone, Debug)]
pub struct Replication {
    pub seed: u64,
    pub sim: SimOutput,
    pub fit: FitResult,
    pub evaluation: JobEvaluation,
}

/// Runs a full replication without touching the file system.
pub fn run_replication(
    spec: &ModelSpec,
    truth: &ParameterSet,
    n_individuals: usize,
    n_occasions: usize,
    optimizer: &RpropConfig,
    seed: u64,
    cutoff: f64,
) -> Result<Replication> {
    let sim = simulate_panel(&SimConfig {
        n_individuals,
        n_occasions,
        params: truth.clone(),
        spec: spec.clone(),
        seed,
        replications: 1,
        initial_state: InitialState::Prior,
    })?;
    let fit = fit_panel(&sim.data, spec, optimizer, SeChoice::None, seed)?;
    let split = fit.training_occasions;
    let track = run_track(&sim.data, &fit.params_hat, spec, split, ForecastMode::OneStep)?;
    let eta: Vec<Vec<_>> = (0..track.eta_predicted.len())
        .map(|i| {
            (0..track.eta_predicted[i].len())
                .map(|t| if t < split { track.eta_filtered[i][t].clone() } else { track.eta_predicted[i][t].clone() })
                .collect()
        })
        .collect();
    let evaluation = evaluate_arrays(&track.pr_s2, &eta, &Truth::from(&sim), split, cutoff)?;
    Ok(Replication {
        seed,
        sim,
        fit,
        evaluation,
    })
}
