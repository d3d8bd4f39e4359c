//! Approximate maximum likelihood: central-difference gradients, Rprop with
//! weight backtracking, and OPG / numerical-Hessian standard errors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::factor_scores::measurement_loglik;
use crate::filter::FilterOptions;
use crate::kernel::loglik_by_individual;
use crate::model::{Block, Layout, ParameterSet, Target, Transform, DEFAULT_GAMMA1};

/// Rprop hyperparameters and stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpropConfig {
    pub delta0: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Consecutive iterations with improvement below `tol` before stopping.
    pub patience: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative step of the central differences.
    pub gradient_step: f64,
    /// Occasions used for estimation; `None` uses the first half.
    pub training_occasions: Option<usize>,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

impl RpropConfig {
    /// Step size 0.1, as used for the simulation study.
    pub fn simulation() -> Self {
        Self {
            delta0: 0.1,
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_min: 1e-6,
            delta_max: 50.0,
            patience: 20,
            tol: 1e-4,
            n_starts: 3,
            max_iter: 1000,
            gradient_step: 1e-5,
            training_occasions: None,
        }
    }

    /// Step size 0.01, as used for the empirical application.
    pub fn empirical() -> Self {
        Self {
            delta0: 0.01,
            ..Self::simulation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RsssError::Config(format!("optimizer: {m}")));
        if !(0.0 < self.eta_minus && self.eta_minus < 1.0 && 1.0 < self.eta_plus) {
            return bad("require 0 < eta_minus < 1 < eta_plus");
        }
        if !(0.0 < self.delta_min && self.delta_min <= self.delta0 && self.delta0 <= self.delta_max) {
            return bad("require 0 < delta_min <= delta0 <= delta_max");
        }
        if self.n_starts == 0 || self.patience == 0 || self.max_iter == 0 {
            return bad("n_starts, patience and max_iter must be positive");
        }
        if !(self.gradient_step > 0.0) {
            return bad("gradient_step must be positive");
        }
        Ok(())
    }

    pub fn training_window(&self, n_occasions: usize) -> usize {
        self.training_occasions.unwrap_or(n_occasions / 2).min(n_occasions)
    }
}

/// The estimation objective: log-likelihood of the training window and of
/// the between items.
#[derive(Clone, Debug)]
pub struct ModelObjective<'a> {
    pub data: &'a PanelDataset,
    pub layout: &'a Layout,
    pub occasions: usize,
}

impl<'a> ModelObjective<'a> {
    pub fn new(data: &'a PanelDataset, layout: &'a Layout, occasions: usize) -> Self {
        Self {
            data,
            layout,
            occasions,
        }
    }

    /// Total log-likelihood of the training window plus the measurement
    /// model of the between items; any failure maps to `-inf`.
    ///
    /// The between term identifies `lambda2` and `r2`, which otherwise enter
    /// only through the direction of the factor-score weights.
    pub fn loglik(&self, theta: &[f64]) -> f64 {
        self.per_individual(theta)
            .map(|v| v.iter().sum::<f64>())
            .filter(|v: &f64| !v.is_nan())
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Log-likelihood contribution of every individual.
    pub fn per_individual(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let params = self.layout.unpack(theta).ok()?;
        self.per_individual_params(&params)
    }

    fn per_individual_params(&self, params: &ParameterSet) -> Option<Vec<f64>> {
        let mut values =
            loglik_by_individual(self.data, params, &self.layout.spec, self.occasions, &FilterOptions::default()).ok()?;
        let between = measurement_loglik(&self.data.y2, &params.lambda2, &params.r2, &params.p2).ok()?;
        for (v, b) in values.iter_mut().zip(between) {
            *v += b;
        }
        values.iter().all(|v| v.is_finite()).then_some(values)
    }
}

/// `total_loglik` over the training window of `config`.
pub fn total_loglik(theta: &[f64], data: &PanelDataset, layout: &Layout, occasions: usize) -> f64 {
    ModelObjective::new(data, layout, occasions).loglik(theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Coordinates where both probes were `-inf` (value set to 0).
    pub degenerate: Vec<usize>,
}

fn probe_step(h: f64, x: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient; falls back to one-sided differences when a
/// probe is `-inf`. `f0` is `f(theta)`.
pub fn numerical_gradient<F>(f: &F, theta: &[f64], f0: f64, h: f64) -> Gradient
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let parts: Vec<(f64, bool)> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let step = probe_step(h, theta[j]);
            let mut x = theta.to_vec();
            x[j] = theta[j] + step;
            let fp = f(&x);
            x[j] = theta[j] - step;
            let fm = f(&x);
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => ((fp - fm) / (2.0 * step), false),
                (true, false) if f0.is_finite() => ((fp - f0) / step, false),
                (false, true) if f0.is_finite() => ((f0 - fm) / step, false),
                _ => (0.0, true),
            }
        })
        .collect();
    Gradient {
        values: parts.iter().map(|p| p.0).collect(),
        degenerate: parts.iter().enumerate().filter(|p| p.1 .1).map(|p| p.0).collect(),
    }
}

/// One Rprop run.
#[derive(Clone, Debug, PartialEq)]
pub struct RpropRun {
    pub theta: Vec<f64>,
    pub loglik: f64,
    /// Objective value after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Largest and smallest step size seen, for diagnostics.
    pub step_range: (f64, f64),
}

/// Maximizes `f` with Rprop+ (sign-based steps, backtracking on sign flips).
///
/// Stops once the improvement stays below `tol` for `patience` consecutive
/// iterations or after `max_iter` iterations. Returns the best point seen.
pub fn rprop_maximize<F>(f: &F, theta0: &[f64], config: &RpropConfig) -> Result<RpropRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut current = f(&theta);
    if !current.is_finite() {
        return Err(RsssError::FitFailed("objective is -inf at the starting point".into()));
    }
    let mut delta = vec![config.delta0; n];
    let mut g_prev = vec![0.0; n];
    let mut last_step = vec![0.0; n];
    let mut best = (theta.clone(), current);
    let mut trace = Vec::new();
    let mut small = 0usize;
    let mut converged = false;
    let mut step_range = (config.delta0, config.delta0);

    for _ in 0..config.max_iter {
        let grad = numerical_gradient(f, &theta, current, config.gradient_step);
        let previous = theta.clone();
        for j in 0..n {
            let g = grad.values[j];
            let agreement = g * g_prev[j];
            if agreement > 0.0 {
                delta[j] = (delta[j] * config.eta_plus).min(config.delta_max);
                last_step[j] = g.signum() * delta[j];
                theta[j] += last_step[j];
                g_prev[j] = g;
            } else if agreement < 0.0 {
                delta[j] = (delta[j] * config.eta_minus).max(config.delta_min);
                theta[j] -= last_step[j];
                last_step[j] = 0.0;
                g_prev[j] = 0.0;
            } else {
                last_step[j] = if g == 0.0 { 0.0 } else { g.signum() * delta[j] };
                theta[j] += last_step[j];
                g_prev[j] = g;
            }
            step_range.0 = step_range.0.max(delta[j]);
            step_range.1 = step_range.1.min(delta[j]);
        }
        let mut next = f(&theta);
        if !next.is_finite() {
            // the whole move left the feasible region: undo and shrink
            theta = previous;
            for j in 0..n {
                delta[j] = (delta[j] * config.eta_minus).max(config.delta_min);
                step_range.1 = step_range.1.min(delta[j]);
            }
            g_prev.iter_mut().for_each(|g| *g = 0.0);
            last_step.iter_mut().for_each(|s| *s = 0.0);
            next = current;
        }
        trace.push(next);
        if next - current < config.tol {
            small += 1;
        } else {
            small = 0;
        }
        current = next;
        if current > best.1 {
            best = (theta.clone(), current);
        }
        if small >= config.patience {
            converged = true;
            break;
        }
    }
    Ok(RpropRun {
        theta: best.0,
        loglik: best.1,
        trace,
        converged,
        step_range,
    })
}

/// Starting values: small perturbations of neutral values, with
/// measurement variances at half the observed item variances.
pub fn initial_parameters(data: &PanelDataset, layout: &Layout, occasions: usize, seed: u64) -> Result<ParameterSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let spec = &layout.spec;
    let (_, var1) = data.y1_moments(occasions.max(1));
    let (_, var2) = data.y2_moments();
    let mut p = ParameterSet::baseline(spec);
    let floor = |v: f64| if v.is_finite() && v > 1e-3 { v } else { 1.0 };
    for e in &layout.entries {
        let t = &e.target;
        let value = match t.block {
            Block::Lambda1 | Block::Lambda2 => 1.0 + 0.1 * z(),
            Block::R1 => 0.5 * floor(var1[t.row]) * (0.1 * z()).exp(),
            Block::R2 => 0.5 * floor(var2[t.row]) * (0.1 * z()).exp(),
            Block::B1 if e.transform == Transform::OrderedOffset => p.get(&Target { regime: Some(0), ..*t }) + 0.1 * (0.1 * z()).exp(),
            Block::B1 | Block::B2 | Block::B4 => 0.05 * z(),
            Block::B3 if t.row == t.col => 0.5 + 0.05 * z(),
            Block::B3 => 0.0,
            Block::Q1 => 0.1 * (0.1 * z()).exp(),
            Block::Q2 => 0.05 * (0.1 * z()).exp(),
            Block::Gamma1 => DEFAULT_GAMMA1,
            Block::Gamma2 | Block::Gamma3 | Block::Gamma4 => 0.1 * z(),
            Block::P12 => 0.01,
            Block::P2 => continue,
        };
        p.set(t, value);
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub seed: u64,
    pub initial_loglik: f64,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub params_hat: ParameterSet,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub start_index: usize,
    pub starts: Vec<StartSummary>,
    pub training_occasions: usize,
    pub se_opg: Option<StandardErrors>,
    pub se_hessian: Option<StandardErrors>,
}

/// Multi-start Rprop fit on the training window.
pub fn rprop_fit(data: &PanelDataset, layout: &Layout, config: &RpropConfig, seed: u64) -> Result<FitResult> {
    config.validate()?;
    let occasions = config.training_window(data.n_occasions);
    let objective = ModelObjective::new(data, layout, occasions);
    let f = |theta: &[f64]| objective.loglik(theta);
    let mut starts = Vec::with_capacity(config.n_starts);
    let mut best: Option<(usize, RpropRun)> = None;
    for k in 0..config.n_starts {
        let start_seed = seed.wrapping_add(k as u64);
        let init = initial_parameters(data, layout, occasions, start_seed)?;
        let theta0 = layout.pack(&init)?;
        let initial_loglik = f(&theta0);
        match rprop_maximize(&f, &theta0, config) {
            Ok(run) => {
                starts.push(StartSummary {
                    seed: start_seed,
                    initial_loglik,
                    loglik: Some(run.loglik),
                    iterations: run.trace.len(),
                    converged: run.converged,
                    error: None,
                });
                if best.as_ref().is_none_or(|(_, b)| run.loglik > b.loglik) {
                    best = Some((k, run));
                }
            }
            Err(e) => starts.push(StartSummary {
                seed: start_seed,
                initial_loglik,
                loglik: None,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let (start_index, run) = best.ok_or_else(|| {
        let detail: Vec<String> = starts
            .iter()
            .map(|s| format!("seed {}: {}", s.seed, s.error.as_deref().unwrap_or("no result")))
            .collect();
        RsssError::FitFailed(format!("all starts diverged ({})", detail.join("; ")))
    })?;
    let params_hat = layout.unpack(&run.theta)?;
    Ok(FitResult {
        theta_hat: run.theta,
        params_hat,
        loglik: run.loglik,
        loglik_trace: run.trace,
        start_index,
        starts,
        training_occasions: occasions,
        se_opg: None,
        se_hessian: None,
    })
}

/// Standard errors on the optimisation scale and on the reported scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub theta: Vec<Option<f64>>,
    pub constrained: Vec<Option<f64>>,
    pub diagnostics: Vec<String>,
}

/// Pseudo-inverse of an information matrix. Coordinates touching a
/// non-positive or negligible eigen-direction are flagged unusable.
pub fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>, Vec<String>) {
    let n = info.nrows();
    let mut diagnostics = Vec::new();
    if info.iter().any(|v| !v.is_finite()) {
        diagnostics.push("information matrix has non-finite entries".to_string());
        let ok: Vec<bool> = (0..n)
            .map(|j| (0..n).all(|k| info[(j, k)].is_finite()))
            .collect();
        let mut cleaned = info.clone();
        for j in 0..n {
            for k in 0..n {
                if !ok[j] || !ok[k] {
                    cleaned[(j, k)] = if j == k { 1.0 } else { 0.0 };
                }
            }
        }
        let (cov, inner_ok, mut more) = invert_information(&cleaned);
        diagnostics.append(&mut more);
        let merged = ok.iter().zip(&inner_ok).map(|(a, b)| *a && *b).collect();
        return (cov, merged, diagnostics);
    }
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = scale * 1e-10;
    let mut ok = vec![true; n];
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k);
        if lambda > cutoff && lambda > 0.0 {
            cov += (v * v.transpose()) / lambda;
        } else {
            diagnostics.push(format!("eigenvalue {lambda:.3e} is not positive"));
            for j in 0..n {
                if v[j] * v[j] > 1e-3 {
                    ok[j] = false;
                }
            }
        }
    }
    (cov, ok, diagnostics)
}

fn standard_errors_from_information(info: &DMatrix<f64>, layout: &Layout, theta: &[f64]) -> Result<StandardErrors> {
    let (cov, ok, mut diagnostics) = invert_information(info);
    let n = theta.len();
    let theta_se: Vec<Option<f64>> = (0..n)
        .map(|j| (ok[j] && cov[(j, j)] >= 0.0).then(|| cov[(j, j)].sqrt()))
        .collect();
    let jac = layout.jacobian(theta)?;
    let cov_c = &jac * &cov * jac.transpose();
    let constrained = (0..n)
        .map(|k| {
            let depends_ok = (0..n).all(|j| jac[(k, j)] == 0.0 || theta_se[j].is_some());
            (depends_ok && cov_c[(k, k)] >= 0.0).then(|| cov_c[(k, k)].sqrt())
        })
        .collect::<Vec<_>>();
    for (k, se) in theta_se.iter().enumerate() {
        if se.is_none() {
            diagnostics.push(format!("no standard error for {}", layout.entries[k].name));
        }
    }
    Ok(StandardErrors {
        theta: theta_se,
        constrained,
        diagnostics,
    })
}

/// Per-unit scores `g_i` by central differences of per-unit contributions.
pub fn per_unit_scores<F>(f: &F, theta: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let cols: Vec<Option<Vec<f64>>> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let step = probe_step(h, theta[j]);
            let mut x = theta.to_vec();
            x[j] = theta[j] + step;
            let plus = f(&x)?;
            x[j] = theta[j] - step;
            let minus = f(&x)?;
            Some(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * step)).collect())
        })
        .collect();
    let cols: Vec<Vec<f64>> = cols.into_iter().collect::<Option<_>>()?;
    let units = cols.first().map_or(0, |c| c.len());
    Some(DMatrix::from_fn(units, theta.len(), |i, j| cols[j][i]))
}

/// `sum_i g_i g_i'`.
pub fn opg_information<F>(f: &F, theta: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let g = per_unit_scores(f, theta, h)?;
    Some(g.transpose() * g)
}

/// Central-difference Hessian of `f` at `theta`.
pub fn numerical_hessian<F>(f: &F, theta: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = theta.len();
    let f0 = f(theta);
    let steps: Vec<f64> = theta.iter().map(|&x| probe_step(h, x)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j..n).map(move |k| (j, k))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let mut x = theta.to_vec();
            if j == k {
                x[j] = theta[j] + steps[j];
                let fp = f(&x);
                x[j] = theta[j] - steps[j];
                let fm = f(&x);
                (fp - 2.0 * f0 + fm) / (steps[j] * steps[j])
            } else {
                let mut eval = |dj: f64, dk: f64| {
                    x[j] = theta[j] + dj * steps[j];
                    x[k] = theta[k] + dk * steps[k];
                    f(&x)
                };
                let v = eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0);
                v / (4.0 * steps[j] * steps[k])
            }
        })
        .collect();
    let mut hess = DMatrix::zeros(n, n);
    for (&(j, k), &v) in pairs.iter().zip(&values) {
        let v = if v.is_finite() { v } else { f64::NAN };
        hess[(j, k)] = v;
        hess[(k, j)] = v;
    }
    hess
}

/// OPG standard errors from per-unit contributions `f`.
pub fn opg_standard_errors_with<F>(f: &F, theta: &[f64], layout: &Layout, h: f64) -> Result<StandardErrors>
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let info = opg_information(f, theta, h)
        .ok_or_else(|| RsssError::Estimation("per-unit log-likelihood failed near the estimate".into()))?;
    standard_errors_from_information(&info, layout, theta)
}

/// Standard errors from the negative Hessian of `f`.
pub fn hessian_standard_errors_with<F>(f: &F, theta: &[f64], layout: &Layout, h: f64) -> Result<StandardErrors>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let info = -numerical_hessian(f, theta, h);
    standard_errors_from_information(&info, layout, theta)
}

pub const DEFAULT_SCORE_STEP: f64 = 1e-5;
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-4;

/// OPG standard errors of the RSSS model at `theta_hat`.
pub fn opg_standard_errors(
    theta_hat: &[f64],
    data: &PanelDataset,
    layout: &Layout,
    occasions: usize,
    h: f64,
) -> Result<StandardErrors> {
    let objective = ModelObjective::new(data, layout, occasions);
    opg_standard_errors_with(&|t: &[f64]| objective.per_individual(t), theta_hat, layout, h)
}

/// Negative-Hessian standard errors of the RSSS model at `theta_hat`.
pub fn hessian_standard_errors(
    theta_hat: &[f64],
    data: &PanelDataset,
    layout: &Layout,
    occasions: usize,
    h: f64,
) -> Result<StandardErrors> {
    let objective = ModelObjective::new(data, layout, occasions);
    hessian_standard_errors_with(&|t: &[f64]| objective.loglik(t), theta_hat, layout, h)
}

/// Gaussian per-unit log-densities for a mean/log-variance pair. Used as
/// the reference model for the standard-error machinery.
pub fn gaussian_mean_contributions(y: &[f64], theta: &[f64]) -> Vec<f64> {
    let (mu, log_var) = (theta[0], theta[1]);
    let var = log_var.exp();
    y.iter()
        .map(|v| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mu).powi(2) / var))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn gradient_of_quadratic() {
        let f = |t: &[f64]| -t.iter().map(|x| x * x).sum::<f64>();
        let theta = [0.3, -1.7, 4.0];
        let g = numerical_gradient(&f, &theta, f(&theta), 1e-5);
        for (gj, tj) in g.values.iter().zip(theta) {
            assert!((gj + 2.0 * tj).abs() < 1e-6);
        }
        let c = |_: &[f64]| 3.5;
        let g = numerical_gradient(&c, &theta, 3.5, 1e-5);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_one_sided_and_degenerate() {
        // -inf for x > 1
        let f = |t: &[f64]| if t[0] > 1.0 { f64::NEG_INFINITY } else { -t[0] * t[0] };
        let g = numerical_gradient(&f, &[1.0], -1.0, 1e-5);
        assert!((g.values[0] + 2.0).abs() < 1e-3);
        assert!(g.degenerate.is_empty());
        let dead = |_: &[f64]| f64::NEG_INFINITY;
        let g = numerical_gradient(&dead, &[0.0, 1.0], f64::NEG_INFINITY, 1e-5);
        assert_eq!(g.values, vec![0.0, 0.0]);
        assert_eq!(g.degenerate, vec![0, 1]);
    }

    #[test]
    fn rprop_finds_quadratic_maximum() {
        let target = [1.5, -0.7, 3.2];
        let f = |t: &[f64]| -t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let run = rprop_maximize(&f, &[0.0, 0.0, 0.0], &RpropConfig::simulation()).unwrap();
        assert!(run.converged);
        assert!(run.trace.len() < 500);
        for (a, b) in run.theta.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        let cfg = RpropConfig::simulation();
        assert!(run.step_range.0 <= cfg.delta_max && run.step_range.1 >= cfg.delta_min);
    }

    #[test]
    fn rprop_trace_length_matches_patience() {
        let f = |_: &[f64]| 1.0;
        let cfg = RpropConfig {
            patience: 7,
            ..RpropConfig::simulation()
        };
        let run = rprop_maximize(&f, &[0.0], &cfg).unwrap();
        assert!(run.converged);
        assert_eq!(run.trace.len(), 7);
    }

    #[test]
    fn rprop_rejects_infeasible_start() {
        let f = |_: &[f64]| f64::NEG_INFINITY;
        assert!(matches!(
            rprop_maximize(&f, &[0.0], &RpropConfig::simulation()),
            Err(RsssError::FitFailed(_))
        ));
    }

    #[test]
    fn rprop_backs_off_infeasible_region() {
        // optimum at 2 but everything beyond 1.05 is infeasible
        let f = |t: &[f64]| if t[0] > 1.05 { f64::NEG_INFINITY } else { -(t[0] - 2.0).powi(2) };
        let run = rprop_maximize(&f, &[0.0], &RpropConfig::simulation()).unwrap();
        assert!(run.loglik.is_finite());
        assert!(run.theta[0] <= 1.05 && run.theta[0] > 0.9);
        let mut best = f64::NEG_INFINITY;
        for v in &run.trace {
            assert!(v.is_finite());
            best = best.max(*v);
        }
        assert_eq!(best, run.loglik);
    }

    #[test]
    fn config_validation() {
        let mut c = RpropConfig::simulation();
        c.eta_plus = 0.5;
        c.eta_minus = 1.2;
        assert!(c.validate().is_err());
        let mut c = RpropConfig::simulation();
        c.delta0 = 100.0;
        assert!(c.validate().is_err());
        assert!(RpropConfig::empirical().validate().is_ok());
        assert_eq!(RpropConfig::simulation().training_window(50), 25);
        assert_eq!(RpropConfig::simulation().training_window(0), 0);
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let f = |t: &[f64]| {
            let v = DVector::from_column_slice(t);
            -0.5 * (v.transpose() * &a * &v)[(0, 0)]
        };
        let h = numerical_hessian(&f, &[0.2, -0.4, 1.1], DEFAULT_HESSIAN_STEP);
        assert!((h + &a).abs().max() < 1e-4);
    }

    #[test]
    fn information_inverse_flags_null_directions() {
        // coordinates 1 and 2 only enter through their sum
        let info = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let (cov, ok, diag) = invert_information(&info);
        assert_eq!(ok, vec![true, false, false]);
        assert!((cov[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(!diag.is_empty());
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(invert_information(&neg).1, vec![true, false]);
    }
}
