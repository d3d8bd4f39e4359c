//! Extended Kim filter.
//!
//! Each occasion runs four Kalman branches per individual, one for every
//! (current, previous) regime pair, on the augmented state
//! `[eta1; zeta2]`. Regime probabilities are propagated by the extended
//! Hamilton filter and the branch moments are collapsed back to one mean and
//! covariance per regime. Branch densities are handled in log space.
//!
//! Regime indices are 0-based; branch arrays are indexed `[s][s_prev]`.

use nalgebra::{DMatrix, DVector};

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::factor_scores::{bartlett_weights, score};
use crate::model::{transition_probability, ModelSpec, ParameterSet, N_REGIMES};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

type Pair<T> = [T; 2];
type Branches<T> = [[T; 2]; 2];

/// Augmented system matrices. `b1_aug` and `b3_aug` depend on the
/// individual through the between-factor score.
#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub lambda_aug: Pair<DMatrix<f64>>,
    pub r1: Pair<DVector<f64>>,
    pub q_aug: Pair<DMatrix<f64>>,
    pub b1_aug: Vec<Pair<DVector<f64>>>,
    pub b3_aug: Vec<Pair<DMatrix<f64>>>,
}

impl AugmentedSystem {
    pub fn new(params: &ParameterSet, eta2: &[DVector<f64>]) -> Self {
        let u1 = params.b1[0].len();
        let o1 = params.r1[0].len();
        let lambda_aug = std::array::from_fn(|s| {
            let mut l = DMatrix::zeros(o1, 2 * u1);
            l.view_mut((0, 0), (o1, u1)).copy_from(&params.lambda1[s]);
            l
        });
        let q_aug = std::array::from_fn(|s| {
            let mut q = DMatrix::zeros(2 * u1, 2 * u1);
            for j in 0..u1 {
                q[(j, j)] = params.q1[s][j];
            }
            q
        });
        let mut b1_aug = Vec::with_capacity(eta2.len());
        let mut b3_aug = Vec::with_capacity(eta2.len());
        for e2 in eta2 {
            let moderator = e2.get(0).copied().unwrap_or(0.0);
            b1_aug.push(std::array::from_fn(|s| {
                let mut b = DVector::zeros(2 * u1);
                let top = &params.b1[s] + &params.b2[s] * e2;
                b.rows_mut(0, u1).copy_from(&top);
                b
            }));
            b3_aug.push(std::array::from_fn(|s| {
                let mut b = DMatrix::identity(2 * u1, 2 * u1);
                let b3i = &params.b3[s] + &params.b4[s] * moderator;
                b.view_mut((0, 0), (u1, u1)).copy_from(&b3i);
                // the random intercept enters every occasion
                b.view_mut((0, u1), (u1, u1)).fill_with_identity();
                b
            }));
        }
        Self {
            lambda_aug,
            r1: params.r1.clone(),
            q_aug,
            b1_aug,
            b3_aug,
        }
    }
}

/// Collapsed moments and regime probabilities of one individual.
#[derive(Clone, Debug, PartialEq)]
pub struct IndividualState {
    pub eta: Pair<DVector<f64>>,
    pub p: Pair<DMatrix<f64>>,
    pub pr: Pair<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub individuals: Vec<IndividualState>,
    /// Sum over individuals of the log prediction-error density at this occasion.
    pub loglik_t: f64,
}

/// Intermediates of one individual-occasion.
#[derive(Clone, Debug)]
pub struct BranchRecord {
    pub eta_pred: Branches<DVector<f64>>,
    pub p_pred: Branches<DMatrix<f64>>,
    /// Innovations on the observed entries (empty when all missing).
    pub v: Branches<DVector<f64>>,
    pub f: Branches<DMatrix<f64>>,
    pub eta_upd: Branches<DVector<f64>>,
    pub p_upd: Branches<DMatrix<f64>>,
    pub pr_joint_pred: Branches<f64>,
    pub pr_joint_upd: Branches<f64>,
    /// Log conditional densities; `None` when the occasion is all missing.
    pub branch_loglik: Branches<Option<f64>>,
}

/// Per individual-occasion quantities reported by the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub pr_filtered: Pair<f64>,
    /// One-step-ahead regime probabilities `Pr[S_t = s | D_{1:t-1}]`.
    pub pr_predicted: Pair<f64>,
    /// Marginal filtered mean and variance of the within factors.
    pub eta_filtered: DVector<f64>,
    pub var_filtered: DVector<f64>,
    /// Marginal one-step-ahead mean and variance of the within factors.
    pub eta_predicted: DVector<f64>,
    pub var_predicted: DVector<f64>,
    /// One-step-ahead prediction of the observed items.
    pub y_predicted: DVector<f64>,
    pub loglik: Option<f64>,
}

pub fn init_state(spec: &ModelSpec, params: &ParameterSet, n: usize) -> FilterState {
    let u1 = spec.n_lat1;
    let mut p0 = DMatrix::zeros(2 * u1, 2 * u1);
    for j in 0..u1 {
        p0[(j, j)] = 1.0;
        p0[(u1 + j, u1 + j)] = params.q2[j];
    }
    let one = IndividualState {
        eta: [DVector::zeros(2 * u1), DVector::zeros(2 * u1)],
        p: [p0.clone(), p0],
        pr: spec.initial_regime_probs,
    };
    FilterState {
        individuals: vec![one; n],
        loglik_t: 0.0,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// One-step prediction of a branch from the previous collapsed moments.
pub fn kalman_predict(
    eta_prev: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    b1_aug: &DVector<f64>,
    b3_aug: &DMatrix<f64>,
    q_aug: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let eta = b1_aug + b3_aug * eta_prev;
    let mut p = b3_aug * p_prev * b3_aug.transpose() + q_aug;
    symmetrize(&mut p);
    (eta, p)
}

/// `(I - K L) P (I - K L)' + K R K'` with `R` diagonal.
pub fn joseph_covariance(
    p_pred: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    r_diag: &DVector<f64>,
) -> DMatrix<f64> {
    let n = p_pred.nrows();
    let a = DMatrix::identity(n, n) - gain * lambda;
    let mut kr = gain.clone();
    for (j, mut col) in kr.column_iter_mut().enumerate() {
        col *= r_diag[j];
    }
    let mut p = &a * p_pred * a.transpose() + kr * gain.transpose();
    symmetrize(&mut p);
    p
}

/// `P - K L P`, the textbook update.
pub fn standard_covariance(p_pred: &DMatrix<f64>, gain: &DMatrix<f64>, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    p_pred - gain * lambda * p_pred
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub v: DVector<f64>,
    pub f: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Log density of the observed entries; `None` when nothing is observed.
    pub loglik: Option<f64>,
}

/// Measurement update restricted to the observed entries of `y`.
///
/// Returns `Err(reason)` when the innovation covariance is not positive
/// definite.
pub fn kalman_update(
    eta_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    y: &[f64],
    observed: &[bool],
    lambda_aug: &DMatrix<f64>,
    r1: &DVector<f64>,
) -> std::result::Result<UpdateOutcome, String> {
    let rows: Vec<usize> = (0..y.len()).filter(|&k| observed[k]).collect();
    let m = rows.len();
    if m == 0 {
        return Ok(UpdateOutcome {
            v: DVector::zeros(0),
            f: DMatrix::zeros(0, 0),
            eta: eta_pred.clone(),
            p: p_pred.clone(),
            loglik: None,
        });
    }
    let selected;
    let lambda = if m == y.len() {
        lambda_aug
    } else {
        selected = lambda_aug.select_rows(&rows);
        &selected
    };
    let r = DVector::from_iterator(m, rows.iter().map(|&k| r1[k]));
    let v = DVector::from_iterator(m, rows.iter().map(|&k| y[k])) - lambda * eta_pred;
    let lp = lambda * p_pred;
    let mut f = &lp * lambda.transpose();
    for k in 0..m {
        f[(k, k)] += r[k];
    }
    symmetrize(&mut f);
    let chol = f
        .clone()
        .cholesky()
        .ok_or_else(|| "innovation covariance is not positive definite".to_string())?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let finv_v = chol.solve(&v);
    let quad = v.dot(&finv_v);
    let loglik = -0.5 * (m as f64 * LN_2PI + log_det + quad);
    // K' = F^-1 (L P)
    let gain = chol.solve(&lp).transpose();
    let eta = eta_pred + &gain * &v;
    let p = joseph_covariance(p_pred, &gain, lambda, &r);
    if !loglik.is_finite() {
        return Err(format!("non-finite branch log-likelihood {loglik}"));
    }
    Ok(UpdateOutcome {
        v,
        f,
        eta,
        p,
        loglik: Some(loglik),
    })
}

/// Joint prior `joint[s][s'] = trans[s'][s] * pr_prev[s']`.
///
/// `trans[s']` is the transition row out of regime `s'`.
pub fn hamilton_predict(pr_prev: &Pair<f64>, trans: &[Pair<f64>; 2]) -> Branches<f64> {
    let mut joint = [[0.0; 2]; 2];
    for s in 0..N_REGIMES {
        for sp in 0..N_REGIMES {
            joint[s][sp] = trans[sp][s] * pr_prev[sp];
        }
    }
    joint
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonUpdate {
    pub joint: Branches<f64>,
    pub marginal: Pair<f64>,
    /// Log prediction-error density; `None` for an all-missing occasion.
    pub log_f: Option<f64>,
}

/// Bayes update of the joint regime probabilities.
///
/// `branch_loglik` entries are `None` only when the whole occasion is
/// missing, in which case the prior passes through unchanged. Returns `None`
/// when the prediction-error density is zero.
pub fn hamilton_update(joint_prior: &Branches<f64>, branch_loglik: &Branches<Option<f64>>) -> Option<HamiltonUpdate> {
    let mut terms = [[f64::NEG_INFINITY; 2]; 2];
    let mut any_observed = false;
    for s in 0..N_REGIMES {
        for sp in 0..N_REGIMES {
            if let Some(l) = branch_loglik[s][sp] {
                any_observed = true;
                if joint_prior[s][sp] > 0.0 {
                    terms[s][sp] = l + joint_prior[s][sp].ln();
                }
            }
        }
    }
    if !any_observed {
        return Some(HamiltonUpdate {
            joint: *joint_prior,
            marginal: marginal_of(joint_prior),
            log_f: None,
        });
    }
    let max = terms.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let sum: f64 = terms.iter().flatten().map(|&x| (x - max).exp()).sum();
    let log_f = max + sum.ln();
    let mut joint = [[0.0; 2]; 2];
    for s in 0..N_REGIMES {
        for sp in 0..N_REGIMES {
            joint[s][sp] = (terms[s][sp] - log_f).exp();
        }
    }
    normalize(&mut joint);
    Some(HamiltonUpdate {
        joint,
        marginal: marginal_of(&joint),
        log_f: Some(log_f),
    })
}

fn marginal_of(joint: &Branches<f64>) -> Pair<f64> {
    [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]]
}

fn normalize(joint: &mut Branches<f64>) {
    let total: f64 = joint.iter().flatten().sum();
    if total > 0.0 {
        for row in joint.iter_mut() {
            for x in row.iter_mut() {
                *x /= total;
            }
        }
    }
}

/// Puts all mass on the second regime, keeping the split over `s'`.
pub(crate) fn clamp_to_second_regime(joint: &mut Branches<f64>, pr_prev: &Pair<f64>) {
    joint[0] = [0.0, 0.0];
    let mass: f64 = joint[1].iter().sum();
    if mass > 0.0 {
        joint[1][0] /= mass;
        joint[1][1] /= mass;
    } else {
        joint[1] = if pr_prev[1] >= pr_prev[0] { [0.0, 1.0] } else { [1.0, 0.0] };
    }
}

/// Mixture moments per current regime.
///
/// `fallback[s][s']` decides which branch is carried forward when the
/// marginal probability of `s` is zero.
pub fn collapse(
    joint_post: &Branches<f64>,
    eta_upd: &Branches<DVector<f64>>,
    p_upd: &Branches<DMatrix<f64>>,
    fallback: &Branches<f64>,
) -> (Pair<DVector<f64>>, Pair<DMatrix<f64>>) {
    let collapse_one = |s: usize| -> (DVector<f64>, DMatrix<f64>) {
        let marginal = joint_post[s][0] + joint_post[s][1];
        let weights = if marginal >= f64::MIN_POSITIVE {
            [joint_post[s][0] / marginal, joint_post[s][1] / marginal]
        } else if fallback[s][1] > fallback[s][0] {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        };
        let mut mean = &eta_upd[s][0] * weights[0];
        mean += &eta_upd[s][1] * weights[1];
        let n = mean.len();
        let mut cov = DMatrix::zeros(n, n);
        for sp in 0..N_REGIMES {
            if weights[sp] == 0.0 {
                continue;
            }
            let d = &mean - &eta_upd[s][sp];
            cov += (&p_upd[s][sp] + &d * d.transpose()) * weights[sp];
        }
        symmetrize(&mut cov);
        (mean, cov)
    };
    let (m0, c0) = collapse_one(0);
    let (m1, c1) = collapse_one(1);
    ([m0, m1], [c0, c1])
}

/// Options shared by the filter drivers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterOptions {
    /// Treat every occasion after this one as unobserved (pure
    /// extrapolation beyond the last update).
    pub last_update: Option<usize>,
}

/// Filters individual `i` from `prev` through occasion `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn individual_step(
    prev: &IndividualState,
    y: &[f64],
    observed: &[bool],
    sys: &AugmentedSystem,
    params: &ParameterSet,
    eta2: &DVector<f64>,
    i: usize,
    t: usize,
    regime_event: Option<usize>,
) -> Result<(IndividualState, BranchRecord, StepOutput)> {
    let u1 = params.b1[0].len();
    let (state, record, loglik) = step_core(prev, y, observed, sys, params, eta2, i, t, regime_event)?;
    let IndividualState { eta, p, pr } = &state;
    let BranchRecord {
        eta_pred,
        p_pred,
        pr_joint_pred,
        ..
    } = &record;
    let pr_predicted = marginal_of(pr_joint_pred);
    let (eta_f, var_f) = marginal_moments(pr, eta, p, u1);
    let flat_pred: Vec<f64> = pr_joint_pred.iter().flatten().copied().collect();
    let flat_eta: Vec<&DVector<f64>> = eta_pred.iter().flatten().collect();
    let flat_p: Vec<&DMatrix<f64>> = p_pred.iter().flatten().collect();
    let (eta_p, var_p) = mixture_moments(&flat_pred, &flat_eta, &flat_p, u1);
    let mut y_predicted = DVector::zeros(y.len());
    for s in 0..N_REGIMES {
        for sp in 0..N_REGIMES {
            y_predicted += (&sys.lambda_aug[s] * &eta_pred[s][sp]) * pr_joint_pred[s][sp];
        }
    }
    let output = StepOutput {
        pr_filtered: *pr,
        pr_predicted,
        eta_filtered: eta_f,
        var_filtered: var_f,
        eta_predicted: eta_p,
        var_predicted: var_p,
        y_predicted,
        loglik,
    };
    Ok((state, record, output))
}

/// The filtering recursion without the reporting quantities.
#[allow(clippy::too_many_arguments)]
fn step_core(
    prev: &IndividualState,
    y: &[f64],
    observed: &[bool],
    sys: &AugmentedSystem,
    params: &ParameterSet,
    eta2: &DVector<f64>,
    i: usize,
    t: usize,
    regime_event: Option<usize>,
) -> Result<(IndividualState, BranchRecord, Option<f64>)> {
    let trans = [
        transition_probability(prev.eta[0].as_slice(), eta2.as_slice(), params, 0),
        transition_probability(prev.eta[1].as_slice(), eta2.as_slice(), params, 1),
    ];
    let pr_joint_pred = hamilton_predict(&prev.pr, &trans);

    let mut eta_pred: Branches<DVector<f64>> = Default::default();
    let mut p_pred: Branches<DMatrix<f64>> = Default::default();
    let mut v: Branches<DVector<f64>> = Default::default();
    let mut f: Branches<DMatrix<f64>> = Default::default();
    let mut eta_upd: Branches<DVector<f64>> = Default::default();
    let mut p_upd: Branches<DMatrix<f64>> = Default::default();
    let mut branch_loglik = [[None; 2]; 2];
    for s in 0..N_REGIMES {
        for sp in 0..N_REGIMES {
            let (e, p) = kalman_predict(
                &prev.eta[sp],
                &prev.p[sp],
                &sys.b1_aug[i][s],
                &sys.b3_aug[i][s],
                &sys.q_aug[s],
            );
            let upd = kalman_update(&e, &p, y, observed, &sys.lambda_aug[s], &sys.r1[s]).map_err(|reason| {
                RsssError::Filter {
                    i,
                    t,
                    s: s + 1,
                    s_prev: sp + 1,
                    reason,
                }
            })?;
            branch_loglik[s][sp] = upd.loglik;
            eta_pred[s][sp] = e;
            p_pred[s][sp] = p;
            v[s][sp] = upd.v;
            f[s][sp] = upd.f;
            eta_upd[s][sp] = upd.eta;
            p_upd[s][sp] = upd.p;
        }
    }

    let update = hamilton_update(&pr_joint_pred, &branch_loglik).ok_or(RsssError::DegenerateLikelihood { i, t })?;
    let mut pr_joint_upd = update.joint;
    if regime_event.is_some_and(|d| t >= d) {
        clamp_to_second_regime(&mut pr_joint_upd, &prev.pr);
    }
    let pr = marginal_of(&pr_joint_upd);
    let (eta, p) = collapse(&pr_joint_upd, &eta_upd, &p_upd, &pr_joint_pred);

    let record = BranchRecord {
        eta_pred,
        p_pred,
        v,
        f,
        eta_upd,
        p_upd,
        pr_joint_pred,
        pr_joint_upd,
        branch_loglik,
    };
    Ok((IndividualState { eta, p, pr }, record, update.log_f))
}

fn marginal_moments(
    pr: &Pair<f64>,
    eta: &Pair<DVector<f64>>,
    p: &Pair<DMatrix<f64>>,
    u1: usize,
) -> (DVector<f64>, DVector<f64>) {
    mixture_moments(pr, &[&eta[0], &eta[1]], &[&p[0], &p[1]], u1)
}

/// Mean and per-coordinate variance of a Gaussian mixture, first `u1` coordinates.
fn mixture_moments(
    weights: &[f64],
    means: &[&DVector<f64>],
    covs: &[&DMatrix<f64>],
    u1: usize,
) -> (DVector<f64>, DVector<f64>) {
    let mut mean = DVector::zeros(u1);
    for (w, m) in weights.iter().zip(means) {
        mean += m.rows(0, u1) * *w;
    }
    let mut var = DVector::zeros(u1);
    for ((w, m), c) in weights.iter().zip(means).zip(covs) {
        for j in 0..u1 {
            let d = m[j] - mean[j];
            var[j] += w * (c[(j, j)] + d * d);
        }
    }
    (mean, var)
}

/// Between-factor scores for the current measurement parameters.
pub fn between_scores(data: &PanelDataset, params: &ParameterSet) -> Result<Vec<DVector<f64>>> {
    let w = bartlett_weights(&params.lambda2, &params.r2)?;
    Ok(score(&data.y2, &w))
}

/// Advances every individual by one occasion.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    state: &FilterState,
    data: &PanelDataset,
    t: usize,
    params: &ParameterSet,
    sys: &AugmentedSystem,
    scores: &[DVector<f64>],
    options: &FilterOptions,
) -> Result<(FilterState, Vec<StepOutput>)> {
    let mut individuals = Vec::with_capacity(state.individuals.len());
    let mut outputs = Vec::with_capacity(state.individuals.len());
    let mut loglik_t = 0.0;
    let blank = vec![false; data.n_obs1];
    for (i, prev) in state.individuals.iter().enumerate() {
        let (y, mask) = data.y1_at(i, t);
        let mask = if options.last_update.is_some_and(|last| t > last) {
            &blank[..]
        } else {
            mask
        };
        let (next, _, out) = individual_step(prev, y, mask, sys, params, &scores[i], i, t, data.regime_event[i])?;
        if let Some(l) = out.loglik {
            loglik_t += l;
        }
        individuals.push(next);
        outputs.push(out);
    }
    Ok((FilterState { individuals, loglik_t }, outputs))
}

/// Result of filtering a panel over occasions `1..=occasions`.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub loglik: f64,
    pub loglik_by_individual: Vec<f64>,
    pub final_state: FilterState,
    /// `outputs[i][t-1]`; empty unless requested.
    pub outputs: Vec<Vec<StepOutput>>,
}

/// Runs the filter over the first `occasions` occasions.
///
/// Individuals are processed one at a time over the whole window; the total
/// is summed in individual order.
pub fn run_filter(
    data: &PanelDataset,
    params: &ParameterSet,
    spec: &ModelSpec,
    occasions: usize,
    record: bool,
    options: &FilterOptions,
) -> Result<FilterRun> {
    if occasions > data.n_occasions {
        return Err(RsssError::Data(format!(
            "requested {occasions} occasions, data has {}",
            data.n_occasions
        )));
    }
    let n = data.n_individuals();
    let scores = between_scores(data, params)?;
    let sys = AugmentedSystem::new(params, &scores);
    let init = init_state(spec, params, n);
    let blank = vec![false; data.n_obs1];
    let mut loglik_by_individual = vec![0.0; n];
    let mut finals = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(if record { n } else { 0 });
    let mut last_t = 0.0;
    for (i, start) in init.individuals.into_iter().enumerate() {
        let mut st = start;
        let mut rec = Vec::with_capacity(if record { occasions } else { 0 });
        for t in 1..=occasions {
            let (y, mask) = data.y1_at(i, t);
            let mask = if options.last_update.is_some_and(|last| t > last) {
                &blank[..]
            } else {
                mask
            };
            let event = data.regime_event[i];
            let (next, loglik) = if record {
                let (next, _, out) = individual_step(&st, y, mask, &sys, params, &scores[i], i, t, event)?;
                let l = out.loglik;
                rec.push(out);
                (next, l)
            } else {
                let (next, _, l) = step_core(&st, y, mask, &sys, params, &scores[i], i, t, event)?;
                (next, l)
            };
            if let Some(l) = loglik {
                loglik_by_individual[i] += l;
                if t == occasions {
                    last_t += l;
                }
            }
            st = next;
        }
        finals.push(st);
        if record {
            outputs.push(rec);
        }
    }
    let loglik = loglik_by_individual.iter().sum();
    Ok(FilterRun {
        loglik,
        loglik_by_individual,
        final_state: FilterState {
            individuals: finals,
            loglik_t: if occasions == 0 { 0.0 } else { last_t },
        },
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn predict_identity_keeps_state() {
        let eta = DVector::from_vec(vec![0.3, -0.2]);
        let p = DMatrix::identity(2, 2);
        let (e, pp) = kalman_predict(&eta, &p, &DVector::zeros(2), &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2));
        assert_eq!(e, eta);
        assert_eq!(pp, p);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        let (_, pq) = kalman_predict(&eta, &p, &DVector::zeros(2), &DMatrix::identity(2, 2), &q);
        assert_eq!(pq, DMatrix::identity(2, 2) + q);
    }

    #[test]
    fn predict_scalar_mean() {
        // augmented [eta; zeta] with zeta = 0
        let eta = DVector::from_vec(vec![0.5, 0.0]);
        let b3 = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 1.0]);
        let b1 = DVector::from_vec(vec![0.1, 0.0]);
        let (e, _) = kalman_predict(&eta, &DMatrix::zeros(2, 2), &b1, &b3, &DMatrix::zeros(2, 2));
        assert!((e[0] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn update_scalar_hand_values() {
        let out = kalman_update(
            &DVector::from_vec(vec![0.0]),
            &scalar(1.0),
            &[2.0],
            &[true],
            &scalar(1.0),
            &DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert!((out.v[0] - 2.0).abs() < 1e-15);
        assert!((out.f[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((out.eta[0] - 1.0).abs() < 1e-15);
        assert!((out.p[(0, 0)] - 0.5).abs() < 1e-15);
        // N(2; 0, 2)
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 4.0 / 2.0);
        assert!((out.loglik.unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn update_without_noise_hits_observation() {
        let out = kalman_update(
            &DVector::from_vec(vec![0.0, 0.0]),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0])),
            &[1.7],
            &[true],
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &DVector::from_vec(vec![1e-14]),
        )
        .unwrap();
        assert!((out.eta[0] - 1.7).abs() < 1e-10);
    }

    #[test]
    fn all_missing_update_is_prediction() {
        let eta = DVector::from_vec(vec![0.4, 0.1]);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let out = kalman_update(
            &eta,
            &p,
            &[f64::NAN, f64::NAN],
            &[false, false],
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.8, 0.0]),
            &DVector::from_vec(vec![0.3, 0.3]),
        )
        .unwrap();
        assert_eq!(out.eta, eta);
        assert_eq!(out.p, p);
        assert!(out.loglik.is_none());
    }

    #[test]
    fn non_pd_innovation_is_error() {
        let r = kalman_update(
            &DVector::zeros(1),
            &scalar(0.0),
            &[1.0],
            &[true],
            &scalar(1.0),
            &DVector::from_vec(vec![-1.0]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn joseph_with_zero_gain_is_prior() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let k = DMatrix::zeros(2, 1);
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(joseph_covariance(&p, &k, &l, &DVector::from_vec(vec![0.4])), p);
    }

    #[test]
    fn hamilton_predict_examples() {
        let trans = [[0.99, 0.01], [1e-12, 1.0 - 1e-12]];
        let j = hamilton_predict(&[1.0, 0.0], &trans);
        assert_eq!(j, [[0.99, 0.0], [0.01, 0.0]]);
        let j = hamilton_predict(&[0.5, 0.5], &[[0.5, 0.5], [0.5, 0.5]]);
        assert!(j.iter().flatten().all(|&x| x == 0.25));
        let j = hamilton_predict(&[0.0, 1.0], &trans);
        assert!((j[1][1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn hamilton_update_examples() {
        let prior = [[0.99, 0.0], [0.01, 0.0]];
        // lik (0.2, 0.8) on branches (1,1) and (2,1)
        let ll = [[Some(0.2f64.ln()), Some(0.0)], [Some(0.8f64.ln()), Some(0.0)]];
        let u = hamilton_update(&prior, &ll).unwrap();
        assert!((u.log_f.unwrap().exp() - 0.206).abs() < 1e-12);
        assert!((u.joint[0][0] - 0.198 / 0.206).abs() < 1e-12);
        assert!((u.joint[1][0] - 0.008 / 0.206).abs() < 1e-12);
        assert!((u.joint[0][0] - 0.9612).abs() < 1e-4);

        let prior = [[0.4, 0.1], [0.2, 0.3]];
        let eq = [[Some(-1.3); 2]; 2];
        let u = hamilton_update(&prior, &eq).unwrap();
        for s in 0..2 {
            for sp in 0..2 {
                assert!((u.joint[s][sp] - prior[s][sp]).abs() < 1e-15);
            }
        }

        let ll = [[Some(0.0), Some(f64::NEG_INFINITY)], [Some(f64::NEG_INFINITY), Some(f64::NEG_INFINITY)]];
        let u = hamilton_update(&prior, &ll).unwrap();
        assert_eq!(u.joint, [[1.0, 0.0], [0.0, 0.0]]);

        let missing = [[None; 2]; 2];
        let u = hamilton_update(&prior, &missing).unwrap();
        assert_eq!(u.joint, prior);
        assert!(u.log_f.is_none());

        let dead = [[Some(f64::NEG_INFINITY); 2]; 2];
        assert!(hamilton_update(&prior, &dead).is_none());
    }

    #[test]
    fn collapse_examples() {
        let e = |x: f64| DVector::from_vec(vec![x]);
        let one = scalar(1.0);
        let etas = [[e(0.0), e(2.0)], [e(5.0), e(5.0)]];
        let ps = [[one.clone(), one.clone()], [one.clone(), one.clone()]];
        let joint = [[0.25, 0.25], [0.3, 0.2]];
        let (m, c) = collapse(&joint, &etas, &ps, &joint);
        assert!((m[0][0] - 1.0).abs() < 1e-15);
        assert!((c[0][(0, 0)] - 2.0).abs() < 1e-15);
        // identical branch moments: no inflation
        assert!((m[1][0] - 5.0).abs() < 1e-15);
        assert!((c[1][(0, 0)] - 1.0).abs() < 1e-15);

        let (m, c) = collapse(&[[0.6, 0.0], [0.4, 0.0]], &etas, &ps, &joint);
        assert_eq!(m[0][0], 0.0);
        assert_eq!(c[0][(0, 0)], 1.0);

        // zero marginal falls back to the branch with the larger prior mass
        let (m, _) = collapse(&[[1.0, 0.0], [0.0, 0.0]], &etas, &ps, &[[0.5, 0.0], [0.1, 0.4]]);
        assert_eq!(m[1][0], 5.0);
    }

    #[test]
    fn init_state_block_covariance() {
        let spec = crate::presets::simulation_spec();
        let params = crate::presets::simulation_truth();
        let st = init_state(&spec, &params, 3);
        assert_eq!(st.individuals.len(), 3);
        let p0 = &st.individuals[0].p[0];
        assert_eq!(p0.diagonal().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        assert!(st.individuals.iter().all(|s| s == &st.individuals[0]));
        assert_eq!(st.individuals[2].pr, [1.0, 0.0]);
    }

    #[test]
    fn augmented_transition_blocks() {
        let params = crate::presets::simulation_truth();
        let eta2 = [DVector::from_element(1, 0.5)];
        let sys = AugmentedSystem::new(&params, &eta2);
        let b = &sys.b3_aug[0][1];
        let b3 = &params.b3[1] + &params.b4[1] * 0.5;
        assert_eq!(b.view((0, 0), (2, 2)), b3.view((0, 0), (2, 2)));
        assert_eq!(b.view((0, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(b.view((2, 0), (2, 2)), DMatrix::<f64>::zeros(2, 2));
        assert_eq!(b.view((2, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(sys.b1_aug[0][1].rows(2, 2), DVector::<f64>::zeros(2));
        assert_eq!(sys.q_aug[1].view((2, 2), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    }
}
