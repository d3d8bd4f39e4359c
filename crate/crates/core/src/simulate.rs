//! Data-generating process for panels of the model class.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::model::{transition_probability, Layout, ModelSpec, ParameterSet};

/// How the within factors start before the first occasion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// `eta1_{i0} ~ N(0, I)`, the initial distribution the filter assumes.
    #[default]
    Prior,
    /// `eta1_{i0} = 0`.
    Zero,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub n_occasions: usize,
    pub params: ParameterSet,
    pub spec: ModelSpec,
    pub seed: u64,
    pub replications: usize,
    pub initial_state: InitialState,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        Layout::new(&self.spec)?;
        self.params.check_shapes(&self.spec)?;
        let negative = |v: &DVector<f64>| v.iter().any(|&x| !(x >= 0.0));
        if self.params.r1.iter().any(negative)
            || self.params.q1.iter().any(negative)
            || negative(&self.params.r2)
            || negative(&self.params.q2)
        {
            return Err(RsssError::Config("variances of the generating model must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.params.p12) {
            return Err(RsssError::Config("p12 must be a probability".into()));
        }
        Ok(())
    }
}

/// A simulated panel together with its latent ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub data: PanelDataset,
    /// Regime labels `1` or `2`, `[i][t-1]`.
    pub true_regimes: Vec<Vec<u8>>,
    /// Within factors, `[i][t-1]`.
    pub true_eta1: Vec<Vec<DVector<f64>>>,
    pub true_eta2: Vec<DVector<f64>>,
    pub true_zeta2: Vec<DVector<f64>>,
    pub seed: u64,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn scaled(rng: &mut ChaCha8Rng, var_diag: &DVector<f64>) -> DVector<f64> {
    let z = normal_vec(rng, var_diag.len());
    z.zip_map(var_diag, |z, v| z * v.max(0.0).sqrt())
}

/// Lower factor of a covariance matrix; falls back to the square roots of
/// the diagonal when the matrix is only semi-definite.
fn covariance_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.clone().cholesky() {
        Some(c) => c.l(),
        None => DMatrix::from_diagonal(&m.diagonal().map(|v| v.max(0.0).sqrt())),
    }
}

/// Simulates one complete panel with `S_{i0} = 1` and `eta1_{i0}` drawn
/// according to `initial_state`.
///
/// Regimes are drawn from the switching model using the true latent states.
pub fn simulate_panel(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let p = &config.params;
    let (n, t_max) = (config.n_individuals, config.n_occasions);
    let (o1, u1, u2) = (config.spec.n_obs1, config.spec.n_lat1, config.spec.n_lat2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p2_factor = covariance_factor(&p.p2);

    let mut ids = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n * t_max * o1);
    let mut y2 = Vec::with_capacity(n);
    let mut true_regimes = Vec::with_capacity(n);
    let mut true_eta1 = Vec::with_capacity(n);
    let mut true_eta2 = Vec::with_capacity(n);
    let mut true_zeta2 = Vec::with_capacity(n);

    for i in 0..n {
        ids.push(format!("{}", i + 1));
        let eta2 = &p2_factor * normal_vec(&mut rng, u2);
        let zeta2 = scaled(&mut rng, &p.q2);
        y2.push(&p.lambda2 * &eta2 + scaled(&mut rng, &p.r2));
        let moderator = eta2[0];
        let intercept: [DVector<f64>; 2] = std::array::from_fn(|s| &p.b1[s] + &p.b2[s] * &eta2 + &zeta2);
        let dynamics: [DMatrix<f64>; 2] = std::array::from_fn(|s| &p.b3[s] + &p.b4[s] * moderator);

        let mut regime = 0usize;
        let mut eta1 = match config.initial_state {
            InitialState::Prior => normal_vec(&mut rng, u1),
            InitialState::Zero => DVector::zeros(u1),
        };
        let mut regimes = Vec::with_capacity(t_max);
        let mut path = Vec::with_capacity(t_max);
        for _ in 0..t_max {
            let probs = transition_probability(eta1.as_slice(), eta2.as_slice(), p, regime);
            let u: f64 = rng.random();
            regime = if u < probs[0] { 0 } else { 1 };
            eta1 = &intercept[regime] + &dynamics[regime] * &eta1 + scaled(&mut rng, &p.q1[regime]);
            let obs = &p.lambda1[regime] * &eta1 + scaled(&mut rng, &p.r1[regime]);
            y1.extend(obs.iter());
            regimes.push(regime as u8 + 1);
            path.push(eta1.clone());
        }
        true_regimes.push(regimes);
        true_eta1.push(path);
        true_eta2.push(eta2);
        true_zeta2.push(zeta2);
    }
    let data = PanelDataset::new(ids, t_max, o1, y1, y2)?;
    Ok(SimOutput {
        data,
        true_regimes,
        true_eta1,
        true_eta2,
        true_zeta2,
        seed: config.seed,
    })
}

/// `replications` independent panels; replication `r` uses seed `seed + r`.
pub fn simulate_study(config: &SimConfig) -> Result<Vec<SimOutput>> {
    (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(r as u64);
            simulate_panel(&c)
        })
        .collect()
}

/// Share of person-occasions spent in the second regime.
pub fn second_regime_share(out: &SimOutput) -> f64 {
    let total: usize = out.true_regimes.iter().map(|r| r.len()).sum();
    let second: usize = out.true_regimes.iter().flatten().filter(|&&s| s == 2).count();
    if total == 0 {
        0.0
    } else {
        second as f64 / total as f64
    }
}
