#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsss::data::PanelDataset;
use rsss::filter::{individual_step, init_state, joseph_covariance, standard_covariance, AugmentedSystem, IndividualState};
use rsss::model::{ModelSpec, ParameterSet};
use rsss::presets;
use rsss::simulate::{simulate_panel, InitialState, SimConfig};

/// Simple-structure spec with one between factor measured by one item, so
/// the between score equals the `y2` value.
pub fn small_spec(items1: &[usize]) -> ModelSpec {
    ModelSpec::simple_structure(items1, &[1], vec![vec![0.8]])
}

/// Random stationary-ish parameters for `spec`, both regimes drawn independently.
pub fn random_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParameterSet {
    let mut p = ParameterSet::baseline(spec);
    let (o1, u1) = (spec.n_obs1, spec.n_lat1);
    for s in 0..2 {
        for i in 0..o1 {
            for j in 0..u1 {
                if spec.loadings1[i][j].is_free() {
                    p.lambda1[s][(i, j)] = rng.random_range(0.5..1.5);
                }
            }
            p.r1[s][i] = rng.random_range(0.1..0.8);
        }
        for j in 0..u1 {
            p.b1[s][j] = rng.random_range(-0.3..0.3);
            p.b2[s][(j, 0)] = rng.random_range(-0.3..0.3);
            p.b3[s][(j, j)] = rng.random_range(0.2..0.95);
            p.b4[s][(j, j)] = rng.random_range(-0.1..0.1);
            p.q1[s][j] = rng.random_range(0.05..0.6);
        }
    }
    p.r2[0] = 0.5;
    for j in 0..u1 {
        p.q2[j] = rng.random_range(0.0..0.4);
        p.gamma3[j] = rng.random_range(-2.0..2.0);
        p.gamma4[j] = rng.random_range(-1.0..1.0);
    }
    p.gamma1 = rng.random_range(-1.0..4.0);
    p.gamma2[0] = rng.random_range(-1.0..1.0);
    p.p12 = rng.random_range(0.01..0.5);
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One individual's panel; `y1[t]` holds the items of occasion `t + 1`.
pub fn one_person(y1: &[Vec<f64>], y2: f64) -> PanelDataset {
    let o1 = y1[0].len();
    let flat: Vec<f64> = y1.iter().flatten().copied().collect();
    PanelDataset::new(vec!["a".into()], y1.len(), o1, flat, vec![DVector::from_element(1, y2)]).unwrap()
}

/// Log-density of the stacked observations `(y_1, ..., y_T)` when regime `s`
/// holds throughout, computed without any recursion.
///
/// Every quantity is an affine function of the independent innovations
/// `x = (eta_0, zeta_2, zeta_1, ..., zeta_T, eps_1, ..., eps_T)`; the joint
/// covariance is `A D A'` with `D` their variances.
pub fn joint_gaussian_loglik(params: &ParameterSet, s: usize, eta2: f64, y1: &[Vec<f64>]) -> f64 {
    let u1 = params.b1[0].len();
    let o1 = params.r1[0].len();
    let t_len = y1.len();
    let dim = 2 * u1 + t_len * (u1 + o1);
    let mut var = DVector::zeros(dim);
    for j in 0..u1 {
        var[j] = 1.0;
        var[u1 + j] = params.q2[j];
    }
    let zeta_at = |t: usize| 2 * u1 + t * u1;
    let eps_at = |t: usize| 2 * u1 + t_len * u1 + t * o1;
    for t in 0..t_len {
        for j in 0..u1 {
            var[zeta_at(t) + j] = params.q1[s][j];
        }
        for k in 0..o1 {
            var[eps_at(t) + k] = params.r1[s][k];
        }
    }

    let c = &params.b1[s] + &params.b2[s] * DVector::from_element(1, eta2);
    let a = &params.b3[s] + &params.b4[s] * eta2;
    // eta_t = mean_t + coef_t x
    let mut mean = DVector::<f64>::zeros(u1);
    let mut coef = DMatrix::<f64>::zeros(u1, dim);
    for j in 0..u1 {
        coef[(j, j)] = 1.0;
    }
    let mut intercept_row = DMatrix::<f64>::zeros(u1, dim);
    for j in 0..u1 {
        intercept_row[(j, u1 + j)] = 1.0;
    }

    let n_y = t_len * o1;
    let mut y_mean = DVector::zeros(n_y);
    let mut y_coef = DMatrix::zeros(n_y, dim);
    let mut y_obs = DVector::zeros(n_y);
    for t in 0..t_len {
        mean = &c + &a * &mean;
        coef = &a * &coef + &intercept_row;
        for j in 0..u1 {
            coef[(j, zeta_at(t) + j)] += 1.0;
        }
        let lam = &params.lambda1[s];
        let m = lam * &mean;
        let mut cf = lam * &coef;
        for k in 0..o1 {
            cf[(k, eps_at(t) + k)] += 1.0;
            y_mean[t * o1 + k] = m[k];
            y_obs[t * o1 + k] = y1[t][k];
        }
        y_coef.rows_mut(t * o1, o1).copy_from(&cf);
    }
    let cov = &y_coef * DMatrix::from_diagonal(&var) * y_coef.transpose();
    gaussian_logpdf(&y_obs, &y_mean, &cov)
}

pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let chol = cov.clone().cholesky().expect("joint covariance is positive definite");
    let d = x - mean;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = d.dot(&chol.solve(&d));
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Makes regime 2 unreachable within the horizon and copies regime 1 into it.
pub fn single_regime(mut p: ParameterSet) -> ParameterSet {
    p.gamma1 = 40.0;
    p.gamma2.fill(0.0);
    p.gamma3.fill(0.0);
    p.gamma4.fill(0.0);
    p.lambda1[1] = p.lambda1[0].clone();
    p.r1[1] = p.r1[0].clone();
    p.b1[1] = p.b1[0].clone();
    p.b2[1] = p.b2[0].clone();
    p.b3[1] = p.b3[0].clone();
    p.b4[1] = p.b4[0].clone();
    p.q1[1] = p.q1[0].clone();
    p
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub struct StepStats {
    pub steps: usize,
    pub worst_sum: f64,
    pub worst_eig: f64,
    pub worst_joseph: f64,
}

/// Chains of random filter steps: random models, random observations and
/// random missingness, each chain started from the initial state.
pub fn random_steps(total: usize, seed: u64) -> StepStats {
    let mut r = rng(seed);
    let mut stats = StepStats {
        steps: 0,
        worst_sum: 0.0,
        worst_eig: f64::INFINITY,
        worst_joseph: 0.0,
    };
    let chain = 50;
    while stats.steps < total {
        let items: &[usize] = if r.random_bool(0.5) { &[2, 2] } else { &[1] };
        let spec = small_spec(items);
        let params = random_params(&spec, &mut r);
        let o1 = spec.n_obs1;
        let eta2 = DVector::from_element(1, r.random_range(-1.5..1.5));
        let sys = AugmentedSystem::new(&params, std::slice::from_ref(&eta2));
        let mut state: IndividualState = init_state(&spec, &params, 1).individuals.remove(0);
        let event = r.random_bool(0.2).then(|| r.random_range(1..chain));
        for t in 1..=chain {
            let y: Vec<f64> = (0..o1).map(|_| r.random_range(-3.0..3.0)).collect();
            let observed: Vec<bool> = if r.random_bool(0.05) {
                vec![false; o1]
            } else {
                (0..o1).map(|_| r.random_bool(0.9)).collect()
            };
            let (next, record, _) =
                individual_step(&state, &y, &observed, &sys, &params, &eta2, 0, t, event).expect("finite step");
            stats.worst_sum = stats.worst_sum.max((next.pr.iter().sum::<f64>() - 1.0).abs());
            stats.worst_sum = stats.worst_sum.max((record.pr_joint_pred.iter().flatten().sum::<f64>() - 1.0).abs());
            stats.worst_sum = stats.worst_sum.max((record.pr_joint_upd.iter().flatten().sum::<f64>() - 1.0).abs());
            for s in 0..2 {
                stats.worst_eig = stats.worst_eig.min(min_eigenvalue(&next.p[s]));
                for sp in 0..2 {
                    stats.worst_eig = stats.worst_eig.min(min_eigenvalue(&record.p_upd[s][sp]));
                }
            }
            // the two covariance forms with the exact gain of branch (s, s')
            let rows: Vec<usize> = (0..o1).filter(|&k| observed[k]).collect();
            if !rows.is_empty() {
                let s = r.random_range(0..2);
                let sp = r.random_range(0..2);
                let lambda = sys.lambda_aug[s].select_rows(&rows);
                let r1 = DVector::from_iterator(rows.len(), rows.iter().map(|&k| params.r1[s][k]));
                let p_pred = &record.p_pred[s][sp];
                let f = &record.f[s][sp];
                let gain = (f.clone().cholesky().unwrap().solve(&(&lambda * p_pred))).transpose();
                let joseph = joseph_covariance(p_pred, &gain, &lambda, &r1);
                let standard = standard_covariance(p_pred, &gain, &lambda);
                stats.worst_joseph = stats.worst_joseph.max((&joseph - &standard).abs().max());
            }
            state = next;
            stats.steps += 1;
        }
    }
    stats
}

pub fn sim_data(n: usize, t: usize, seed: u64) -> (rsss::data::PanelDataset, ParameterSet) {
    let out = simulate_panel(&SimConfig {
        n_individuals: n,
        n_occasions: t,
        params: presets::simulation_truth(),
        spec: presets::simulation_spec(),
        seed,
        replications: 1,
        initial_state: InitialState::Prior,
    })
    .unwrap();
    (out.data, presets::simulation_truth())
}
