//! Model class, parameter containers and the constrained <-> unconstrained
//! parameter bijection.
//!
//! A model has two regimes. Regime-indexed containers are `[T; 2]` and regime
//! indices in code are 0-based (`0` = first regime, `1` = second regime);
//! names written to reports are 1-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RsssError};

pub const N_REGIMES: usize = 2;

/// A model entry that is either held at a constant or estimated.
///
/// In config files a fixed entry is written as a number and a free entry as
/// the string `"free"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFixable", into = "RawFixable")]
pub enum Fixable {
    Fixed(f64),
    Free,
}

impl Fixable {
    pub fn is_free(&self) -> bool {
        matches!(self, Fixable::Free)
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            Fixable::Fixed(v) => Some(*v),
            Fixable::Free => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawFixable {
    Num(f64),
    Str(String),
}

impl TryFrom<RawFixable> for Fixable {
    type Error = String;

    fn try_from(raw: RawFixable) -> std::result::Result<Self, Self::Error> {
        match raw {
            RawFixable::Num(v) => Ok(Fixable::Fixed(v)),
            RawFixable::Str(s) if s.eq_ignore_ascii_case("free") => Ok(Fixable::Free),
            RawFixable::Str(s) => Err(format!("expected a number or \"free\", got \"{s}\"")),
        }
    }
}

impl From<Fixable> for RawFixable {
    fn from(f: Fixable) -> Self {
        match f {
            Fixable::Fixed(v) => RawFixable::Num(v),
            Fixable::Free => RawFixable::Str("free".to_string()),
        }
    }
}

/// Which measurement/process blocks are shared across the two regimes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInvariance {
    #[serde(default = "yes")]
    pub lambda1: bool,
    #[serde(default = "yes")]
    pub r1: bool,
    #[serde(default = "yes")]
    pub q1: bool,
}

impl Default for ClassInvariance {
    fn default() -> Self {
        Self {
            lambda1: true,
            r1: true,
            q1: true,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_regimes() -> usize {
    N_REGIMES
}

/// logit(0.99), rounded as used for regime identification.
pub const DEFAULT_GAMMA1: f64 = 4.60;
/// Return probability from the second regime to the first.
pub const DEFAULT_P12: f64 = 1e-12;

fn default_gamma1() -> Fixable {
    Fixable::Fixed(DEFAULT_GAMMA1)
}

fn default_p12() -> Fixable {
    Fixable::Fixed(DEFAULT_P12)
}

fn default_initial_probs() -> [f64; 2] {
    [1.0, 0.0]
}

/// Dimensions, sparsity patterns and identification constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Time-dependent observed variables (O1).
    pub n_obs1: usize,
    /// Time-dependent latent factors (U1).
    pub n_lat1: usize,
    /// Time-invariant observed variables (O2).
    pub n_obs2: usize,
    /// Time-invariant latent factors (U2).
    pub n_lat2: usize,
    #[serde(default = "default_regimes")]
    pub regimes: usize,
    /// O1 x U1 loading pattern.
    pub loadings1: Vec<Vec<Fixable>>,
    /// O2 x U2 loading pattern.
    pub loadings2: Vec<Vec<Fixable>>,
    /// Free interaction effects in the switching model (length U1).
    pub gamma4_mask: Vec<bool>,
    /// Restrict the VAR(1) and interaction matrices to their diagonals.
    #[serde(default = "yes")]
    pub diagonal_b: bool,
    #[serde(default)]
    pub class_invariant: ClassInvariance,
    /// Second-regime intercepts are at least the first-regime intercepts.
    #[serde(default = "yes")]
    pub ordered_intercepts: bool,
    #[serde(default = "default_gamma1")]
    pub gamma1: Fixable,
    #[serde(default = "default_p12")]
    pub p12: Fixable,
    /// Between-factor covariance, held fixed for identification (U2 x U2).
    pub p2: Vec<Vec<f64>>,
    /// Fixed random-intercept variances; `None` estimates them.
    #[serde(default)]
    pub q2_fixed: Option<Vec<f64>>,
    /// Allow the interaction term when U2 > 1 (uses the first between factor).
    #[serde(default)]
    pub interaction_first_between: bool,
    /// Regime distribution at t = 0.
    #[serde(default = "default_initial_probs")]
    pub initial_regime_probs: [f64; 2],
}

impl ModelSpec {
    /// Simple-structure spec: factor `k` of the time-dependent block owns
    /// `items1[k]` consecutive items with the first loading fixed to 1.
    pub fn simple_structure(items1: &[usize], items2: &[usize], p2: Vec<Vec<f64>>) -> Self {
        let loadings1 = simple_pattern(items1);
        let loadings2 = simple_pattern(items2);
        let n_lat1 = items1.len();
        Self {
            n_obs1: loadings1.len(),
            n_lat1,
            n_obs2: loadings2.len(),
            n_lat2: items2.len(),
            regimes: N_REGIMES,
            loadings1,
            loadings2,
            gamma4_mask: vec![true; n_lat1],
            diagonal_b: true,
            class_invariant: ClassInvariance::default(),
            ordered_intercepts: true,
            gamma1: default_gamma1(),
            p12: default_p12(),
            p2,
            q2_fixed: None,
            interaction_first_between: false,
            initial_regime_probs: default_initial_probs(),
        }
    }

    pub fn aug_dim(&self) -> usize {
        2 * self.n_lat1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RsssError::Spec(m));
        if self.regimes != N_REGIMES {
            return bad(format!("only two regimes are supported, got {}", self.regimes));
        }
        if self.n_obs1 == 0 || self.n_lat1 == 0 || self.n_obs2 == 0 || self.n_lat2 == 0 {
            return bad("all dimensions must be positive".into());
        }
        check_pattern("loadings1", &self.loadings1, self.n_obs1, self.n_lat1)?;
        check_pattern("loadings2", &self.loadings2, self.n_obs2, self.n_lat2)?;
        if self.gamma4_mask.len() != self.n_lat1 {
            return bad(format!(
                "gamma4_mask has length {}, expected {}",
                self.gamma4_mask.len(),
                self.n_lat1
            ));
        }
        if self.n_lat2 > 1 && !self.interaction_first_between && self.gamma4_mask.iter().any(|&m| m) {
            return bad(
                "interaction effects with more than one between factor require interaction_first_between = true"
                    .into(),
            );
        }
        if self.p2.len() != self.n_lat2 || self.p2.iter().any(|r| r.len() != self.n_lat2) {
            return bad(format!("p2 must be {0}x{0}", self.n_lat2));
        }
        if let Some(q2) = &self.q2_fixed {
            if q2.len() != self.n_lat1 || q2.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("q2_fixed must hold {} non-negative values", self.n_lat1));
            }
        }
        if let Fixable::Fixed(p) = self.p12 {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("p12 = {p} is not a probability"));
            }
        }
        let [a, b] = self.initial_regime_probs;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-12 {
            return bad("initial_regime_probs must be a probability vector".into());
        }
        Ok(())
    }
}

fn simple_pattern(items: &[usize]) -> Vec<Vec<Fixable>> {
    let n_factors = items.len();
    let mut rows = Vec::new();
    for (k, &count) in items.iter().enumerate() {
        for j in 0..count {
            let mut row = vec![Fixable::Fixed(0.0); n_factors];
            row[k] = if j == 0 { Fixable::Fixed(1.0) } else { Fixable::Free };
            rows.push(row);
        }
    }
    rows
}

fn check_pattern(name: &str, pattern: &[Vec<Fixable>], rows: usize, cols: usize) -> Result<()> {
    if pattern.len() != rows || pattern.iter().any(|r| r.len() != cols) {
        return Err(RsssError::Spec(format!("{name} must be {rows}x{cols}")));
    }
    for k in 0..cols {
        let anchored = pattern
            .iter()
            .any(|r| matches!(r[k], Fixable::Fixed(v) if v != 0.0));
        if !anchored {
            return Err(RsssError::Spec(format!(
                "{name}: factor {} has no fixed non-zero loading",
                k + 1
            )));
        }
    }
    Ok(())
}

/// All parameters of the measurement, structural and switching models.
///
/// Diagonal covariance matrices are stored as their diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub lambda1: [DMatrix<f64>; 2],
    pub r1: [DVector<f64>; 2],
    pub lambda2: DMatrix<f64>,
    pub r2: DVector<f64>,
    pub p2: DMatrix<f64>,
    pub b1: [DVector<f64>; 2],
    /// U1 x U2 between effects on the intercept.
    pub b2: [DMatrix<f64>; 2],
    pub b3: [DMatrix<f64>; 2],
    pub b4: [DMatrix<f64>; 2],
    pub q1: [DVector<f64>; 2],
    pub q2: DVector<f64>,
    pub gamma1: f64,
    pub gamma2: DVector<f64>,
    pub gamma3: DVector<f64>,
    pub gamma4: DVector<f64>,
    pub p12: f64,
}

impl ParameterSet {
    /// Zero-valued free entries with every fixed entry taken from `spec`.
    pub fn baseline(spec: &ModelSpec) -> Self {
        let (o1, u1, o2, u2) = (spec.n_obs1, spec.n_lat1, spec.n_obs2, spec.n_lat2);
        let pattern_matrix = |p: &[Vec<Fixable>], r: usize, c: usize| {
            DMatrix::from_fn(r, c, |i, j| p[i][j].fixed_value().unwrap_or(0.0))
        };
        let lambda1 = pattern_matrix(&spec.loadings1, o1, u1);
        Self {
            lambda1: [lambda1.clone(), lambda1],
            r1: [DVector::zeros(o1), DVector::zeros(o1)],
            lambda2: pattern_matrix(&spec.loadings2, o2, u2),
            r2: DVector::zeros(o2),
            p2: DMatrix::from_fn(u2, u2, |i, j| spec.p2[i][j]),
            b1: [DVector::zeros(u1), DVector::zeros(u1)],
            b2: [DMatrix::zeros(u1, u2), DMatrix::zeros(u1, u2)],
            b3: [DMatrix::zeros(u1, u1), DMatrix::zeros(u1, u1)],
            b4: [DMatrix::zeros(u1, u1), DMatrix::zeros(u1, u1)],
            q1: [DVector::zeros(u1), DVector::zeros(u1)],
            q2: spec
                .q2_fixed
                .as_ref()
                .map(|q| DVector::from_column_slice(q))
                .unwrap_or_else(|| DVector::zeros(u1)),
            gamma1: spec.gamma1.fixed_value().unwrap_or(0.0),
            gamma2: DVector::zeros(u2),
            gamma3: DVector::zeros(u1),
            gamma4: DVector::zeros(u1),
            p12: spec.p12.fixed_value().unwrap_or(0.5),
        }
    }

    /// Checks shapes against `spec`.
    pub fn check_shapes(&self, spec: &ModelSpec) -> Result<()> {
        let (o1, u1, o2, u2) = (spec.n_obs1, spec.n_lat1, spec.n_obs2, spec.n_lat2);
        let mut problems = Vec::new();
        let mut mat = |name: &str, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.shape() != (r, c) {
                problems.push(format!("{name} is {:?}, expected ({r}, {c})", m.shape()));
            }
        };
        for s in 0..N_REGIMES {
            mat("lambda1", &self.lambda1[s], o1, u1);
            mat("b2", &self.b2[s], u1, u2);
            mat("b3", &self.b3[s], u1, u1);
            mat("b4", &self.b4[s], u1, u1);
        }
        mat("lambda2", &self.lambda2, o2, u2);
        mat("p2", &self.p2, u2, u2);
        let mut vec_len = |name: &str, v: &DVector<f64>, n: usize| {
            if v.len() != n {
                problems.push(format!("{name} has length {}, expected {n}", v.len()));
            }
        };
        for s in 0..N_REGIMES {
            vec_len("r1", &self.r1[s], o1);
            vec_len("b1", &self.b1[s], u1);
            vec_len("q1", &self.q1[s], u1);
        }
        vec_len("r2", &self.r2, o2);
        vec_len("q2", &self.q2, u1);
        vec_len("gamma2", &self.gamma2, u2);
        vec_len("gamma3", &self.gamma3, u1);
        vec_len("gamma4", &self.gamma4, u1);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RsssError::Spec(problems.join("; ")))
        }
    }

    pub(crate) fn get(&self, t: &Target) -> f64 {
        let s = t.regime.unwrap_or(0);
        match t.block {
            Block::Lambda1 => self.lambda1[s][(t.row, t.col)],
            Block::R1 => self.r1[s][t.row],
            Block::Lambda2 => self.lambda2[(t.row, t.col)],
            Block::R2 => self.r2[t.row],
            Block::P2 => self.p2[(t.row, t.col)],
            Block::B1 => self.b1[s][t.row],
            Block::B2 => self.b2[s][(t.row, t.col)],
            Block::B3 => self.b3[s][(t.row, t.col)],
            Block::B4 => self.b4[s][(t.row, t.col)],
            Block::Q1 => self.q1[s][t.row],
            Block::Q2 => self.q2[t.row],
            Block::Gamma1 => self.gamma1,
            Block::Gamma2 => self.gamma2[t.row],
            Block::Gamma3 => self.gamma3[t.row],
            Block::Gamma4 => self.gamma4[t.row],
            Block::P12 => self.p12,
        }
    }

    pub(crate) fn set(&mut self, t: &Target, v: f64) {
        let regimes: &[usize] = match t.regime {
            Some(0) => &[0],
            Some(_) => &[1],
            None => &[0, 1],
        };
        for &s in regimes {
            match t.block {
                Block::Lambda1 => self.lambda1[s][(t.row, t.col)] = v,
                Block::R1 => self.r1[s][t.row] = v,
                Block::B1 => self.b1[s][t.row] = v,
                Block::B2 => self.b2[s][(t.row, t.col)] = v,
                Block::B3 => self.b3[s][(t.row, t.col)] = v,
                Block::B4 => self.b4[s][(t.row, t.col)] = v,
                Block::Q1 => self.q1[s][t.row] = v,
                Block::Lambda2 => self.lambda2[(t.row, t.col)] = v,
                Block::R2 => self.r2[t.row] = v,
                Block::P2 => self.p2[(t.row, t.col)] = v,
                Block::Q2 => self.q2[t.row] = v,
                Block::Gamma1 => self.gamma1 = v,
                Block::Gamma2 => self.gamma2[t.row] = v,
                Block::Gamma3 => self.gamma3[t.row] = v,
                Block::Gamma4 => self.gamma4[t.row] = v,
                Block::P12 => self.p12 = v,
            }
        }
    }

    /// Every reportable scalar: free entries in layout order, followed by the
    /// fixed identification constants.
    pub fn named_values(&self, layout: &Layout) -> Vec<NamedValue> {
        let mut out: Vec<NamedValue> = layout
            .entries
            .iter()
            .map(|e| NamedValue {
                name: e.name.clone(),
                value: self.get(&e.target),
                fixed: false,
            })
            .collect();
        out.extend(layout.fixed.iter().map(|e| NamedValue {
            name: e.name.clone(),
            value: self.get(&e.target),
            fixed: true,
        }));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
    pub fixed: bool,
}

/// Sigmoid that never produces NaN for finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Transition probabilities `(Pr[S=1], Pr[S=2])` out of `s_prev`.
///
/// From the first regime the stay probability is the sigmoid of the
/// intercept, between effects, within effects and within x between
/// interactions; the second regime returns with the constant `p12`.
/// `eta1_prev` may be longer than U1 (an augmented state); only the leading
/// U1 entries are used.
pub fn transition_probability(
    eta1_prev: &[f64],
    eta2: &[f64],
    params: &ParameterSet,
    s_prev: usize,
) -> [f64; 2] {
    if s_prev == 1 {
        return [params.p12, 1.0 - params.p12];
    }
    let u1 = params.gamma3.len();
    let mut x = params.gamma1;
    for (g, e) in params.gamma2.iter().zip(eta2) {
        x += g * e;
    }
    let moderator = eta2.first().copied().unwrap_or(0.0);
    for j in 0..u1 {
        x += (params.gamma3[j] + params.gamma4[j] * moderator) * eta1_prev[j];
    }
    let stay = sigmoid(x);
    [stay, 1.0 - stay]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Lambda1,
    R1,
    Lambda2,
    R2,
    P2,
    B1,
    B2,
    B3,
    B4,
    Q1,
    Q2,
    Gamma1,
    Gamma2,
    Gamma3,
    Gamma4,
    P12,
}

/// Address of one scalar inside a [`ParameterSet`]. `regime: None` means the
/// entry is shared by both regimes (or has no regime index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Target {
    pub block: Block,
    pub regime: Option<usize>,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Stored as the log of a positive value.
    Log,
    /// Second-regime intercept stored as log(b1[2] - b1[1]).
    OrderedOffset,
    /// Probability stored on the logit scale.
    Logit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    pub target: Target,
    pub transform: Transform,
}

/// Ordered map from optimisation-vector positions to parameter entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub spec: ModelSpec,
    pub entries: Vec<LayoutEntry>,
    /// Fixed entries listed in reports.
    pub fixed: Vec<LayoutEntry>,
}

const EXP_CLAMP: f64 = 700.0;

fn bounded_exp(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

fn regime_tag(regime: Option<usize>) -> String {
    match regime {
        Some(s) => format!("_s{}", s + 1),
        None => String::new(),
    }
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (o1, u1, o2, u2) = (spec.n_obs1, spec.n_lat1, spec.n_obs2, spec.n_lat2);
        let mut entries = Vec::new();
        let mut fixed = Vec::new();
        let inv = spec.class_invariant;
        let regimes_for = |shared: bool| -> Vec<Option<usize>> {
            if shared {
                vec![None]
            } else {
                vec![Some(0), Some(1)]
            }
        };
        let push = |list: &mut Vec<LayoutEntry>, base: &str, block, regime, row, col, idx: String, transform| {
            list.push(LayoutEntry {
                name: format!("{base}{}{idx}", regime_tag(regime)),
                target: Target {
                    block,
                    regime,
                    row,
                    col,
                },
                transform,
            });
        };

        for regime in regimes_for(inv.lambda1) {
            for i in 0..o1 {
                for j in 0..u1 {
                    let idx = format!("[{},{}]", i + 1, j + 1);
                    match spec.loadings1[i][j] {
                        Fixable::Free => push(&mut entries, "lambda1", Block::Lambda1, regime, i, j, idx, Transform::Identity),
                        Fixable::Fixed(v) if v != 0.0 => {
                            push(&mut fixed, "lambda1", Block::Lambda1, regime, i, j, idx, Transform::Identity)
                        }
                        Fixable::Fixed(_) => {}
                    }
                }
            }
        }
        for regime in regimes_for(inv.r1) {
            for i in 0..o1 {
                push(&mut entries, "r1", Block::R1, regime, i, 0, format!("[{}]", i + 1), Transform::Log);
            }
        }
        for i in 0..o2 {
            for j in 0..u2 {
                let idx = format!("[{},{}]", i + 1, j + 1);
                match spec.loadings2[i][j] {
                    Fixable::Free => push(&mut entries, "lambda2", Block::Lambda2, None, i, j, idx, Transform::Identity),
                    Fixable::Fixed(v) if v != 0.0 => {
                        push(&mut fixed, "lambda2", Block::Lambda2, None, i, j, idx, Transform::Identity)
                    }
                    Fixable::Fixed(_) => {}
                }
            }
        }
        for i in 0..o2 {
            push(&mut entries, "r2", Block::R2, None, i, 0, format!("[{}]", i + 1), Transform::Log);
        }
        for i in 0..u2 {
            for j in 0..u2 {
                push(&mut fixed, "p2", Block::P2, None, i, j, format!("[{},{}]", i + 1, j + 1), Transform::Identity);
            }
        }
        for s in 0..N_REGIMES {
            let transform = if s == 1 && spec.ordered_intercepts {
                Transform::OrderedOffset
            } else {
                Transform::Identity
            };
            for i in 0..u1 {
                push(&mut entries, "b1", Block::B1, Some(s), i, 0, format!("[{}]", i + 1), transform);
            }
        }
        for s in 0..N_REGIMES {
            for i in 0..u1 {
                for j in 0..u2 {
                    let idx = format!("[{},{}]", i + 1, j + 1);
                    push(&mut entries, "b2", Block::B2, Some(s), i, j, idx, Transform::Identity);
                }
            }
        }
        for (base, block) in [("b3", Block::B3), ("b4", Block::B4)] {
            for s in 0..N_REGIMES {
                for i in 0..u1 {
                    for j in 0..u1 {
                        if spec.diagonal_b && i != j {
                            continue;
                        }
                        let idx = format!("[{},{}]", i + 1, j + 1);
                        push(&mut entries, base, block, Some(s), i, j, idx, Transform::Identity);
                    }
                }
            }
        }
        for regime in regimes_for(inv.q1) {
            for i in 0..u1 {
                push(&mut entries, "q1", Block::Q1, regime, i, 0, format!("[{}]", i + 1), Transform::Log);
            }
        }
        let q2_list = if spec.q2_fixed.is_some() { &mut fixed } else { &mut entries };
        for i in 0..u1 {
            push(q2_list, "q2", Block::Q2, None, i, 0, format!("[{}]", i + 1), Transform::Log);
        }
        let g1_list = if spec.gamma1.is_free() { &mut entries } else { &mut fixed };
        push(g1_list, "gamma1", Block::Gamma1, None, 0, 0, String::new(), Transform::Identity);
        for i in 0..u2 {
            push(&mut entries, "gamma2", Block::Gamma2, None, i, 0, format!("[{}]", i + 1), Transform::Identity);
        }
        for i in 0..u1 {
            push(&mut entries, "gamma3", Block::Gamma3, None, i, 0, format!("[{}]", i + 1), Transform::Identity);
        }
        for i in 0..u1 {
            if spec.gamma4_mask[i] {
                push(&mut entries, "gamma4", Block::Gamma4, None, i, 0, format!("[{}]", i + 1), Transform::Identity);
            }
        }
        let p12_list = if spec.p12.is_free() { &mut entries } else { &mut fixed };
        push(p12_list, "p12", Block::P12, None, 0, 0, String::new(), Transform::Logit);

        Ok(Self {
            spec: spec.clone(),
            entries,
            fixed,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Checks that fixed and masked entries of `params` agree with the `ModelSpec`.
    fn check_fixed(&self, params: &ParameterSet) -> Result<()> {
        let spec = &self.spec;
        let baseline = ParameterSet::baseline(spec);
        let violation = |entry: String, got: f64, want: f64| {
            Err(RsssError::Constraint {
                entry,
                reason: format!("fixed at {want}, got {got}"),
            })
        };
        for s in 0..N_REGIMES {
            for i in 0..spec.n_obs1 {
                for j in 0..spec.n_lat1 {
                    if let Fixable::Fixed(v) = spec.loadings1[i][j] {
                        let got = params.lambda1[s][(i, j)];
                        if got != v {
                            return violation(format!("lambda1_s{}[{},{}]", s + 1, i + 1, j + 1), got, v);
                        }
                    }
                }
            }
            for i in 0..spec.n_lat1 {
                for j in 0..spec.n_lat1 {
                    if spec.diagonal_b && i != j {
                        if params.b3[s][(i, j)] != 0.0 {
                            return violation(format!("b3_s{}[{},{}]", s + 1, i + 1, j + 1), params.b3[s][(i, j)], 0.0);
                        }
                        if params.b4[s][(i, j)] != 0.0 {
                            return violation(format!("b4_s{}[{},{}]", s + 1, i + 1, j + 1), params.b4[s][(i, j)], 0.0);
                        }
                    }
                }
            }
        }
        let inv = spec.class_invariant;
        if inv.lambda1 && params.lambda1[0] != params.lambda1[1] {
            return Err(RsssError::Constraint {
                entry: "lambda1".into(),
                reason: "class-invariant but differs between regimes".into(),
            });
        }
        if inv.r1 && params.r1[0] != params.r1[1] {
            return Err(RsssError::Constraint {
                entry: "r1".into(),
                reason: "class-invariant but differs between regimes".into(),
            });
        }
        if inv.q1 && params.q1[0] != params.q1[1] {
            return Err(RsssError::Constraint {
                entry: "q1".into(),
                reason: "class-invariant but differs between regimes".into(),
            });
        }
        for i in 0..spec.n_obs2 {
            for j in 0..spec.n_lat2 {
                if let Fixable::Fixed(v) = spec.loadings2[i][j] {
                    if params.lambda2[(i, j)] != v {
                        return violation(format!("lambda2[{},{}]", i + 1, j + 1), params.lambda2[(i, j)], v);
                    }
                }
            }
        }
        for j in 0..spec.n_lat1 {
            if !spec.gamma4_mask[j] && params.gamma4[j] != 0.0 {
                return violation(format!("gamma4[{}]", j + 1), params.gamma4[j], 0.0);
            }
        }
        if spec.q2_fixed.is_some() && params.q2 != baseline.q2 {
            return Err(RsssError::Constraint {
                entry: "q2".into(),
                reason: "fixed by the model but differs".into(),
            });
        }
        if let Fixable::Fixed(v) = spec.gamma1 {
            if params.gamma1 != v {
                return violation("gamma1".into(), params.gamma1, v);
            }
        }
        if let Fixable::Fixed(v) = spec.p12 {
            if params.p12 != v {
                return violation("p12".into(), params.p12, v);
            }
        }
        Ok(())
    }

    /// Maps constrained parameters to the unconstrained vector.
    pub fn pack(&self, params: &ParameterSet) -> Result<Vec<f64>> {
        params.check_shapes(&self.spec)?;
        self.check_fixed(params)?;
        let mut theta = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let v = params.get(&e.target);
            if !v.is_finite() {
                return Err(RsssError::Constraint {
                    entry: e.name.clone(),
                    reason: format!("non-finite value {v}"),
                });
            }
            let x = match e.transform {
                Transform::Identity => v,
                Transform::Log => {
                    if v <= 0.0 {
                        return Err(RsssError::Constraint {
                            entry: e.name.clone(),
                            reason: format!("variance must be positive, got {v}"),
                        });
                    }
                    v.ln()
                }
                Transform::OrderedOffset => {
                    let base = params.b1[0][e.target.row];
                    let diff = v - base;
                    if diff <= 0.0 {
                        return Err(RsssError::Constraint {
                            entry: e.name.clone(),
                            reason: format!("ordering violated: second-regime intercept {v} <= first-regime {base}"),
                        });
                    }
                    diff.ln()
                }
                Transform::Logit => {
                    if v <= 0.0 || v >= 1.0 {
                        return Err(RsssError::Constraint {
                            entry: e.name.clone(),
                            reason: format!("probability must lie in (0, 1), got {v}"),
                        });
                    }
                    logit(v)
                }
            };
            theta.push(x);
        }
        Ok(theta)
    }

    /// Inverse of [`Layout::pack`]; total on finite input.
    pub fn unpack(&self, theta: &[f64]) -> Result<ParameterSet> {
        if theta.len() != self.entries.len() {
            return Err(RsssError::LengthMismatch {
                expected: self.entries.len(),
                got: theta.len(),
            });
        }
        let mut p = ParameterSet::baseline(&self.spec);
        for (e, &x) in self.entries.iter().zip(theta) {
            let v = match e.transform {
                Transform::Identity => x,
                Transform::Log => bounded_exp(x),
                Transform::OrderedOffset => p.b1[0][e.target.row] + bounded_exp(x),
                Transform::Logit => sigmoid(x),
            };
            p.set(&e.target, v);
        }
        Ok(p)
    }

    /// Jacobian of the reported (constrained) free values with respect to
    /// theta. Row `k` is the derivative of entry `k`'s constrained value.
    pub fn jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.unpack(theta)?;
        let n = self.entries.len();
        let mut jac = DMatrix::zeros(n, n);
        for (k, e) in self.entries.iter().enumerate() {
            match e.transform {
                Transform::Identity => jac[(k, k)] = 1.0,
                Transform::Log => jac[(k, k)] = p.get(&e.target),
                Transform::Logit => {
                    let v = p.get(&e.target);
                    jac[(k, k)] = v * (1.0 - v);
                }
                Transform::OrderedOffset => {
                    jac[(k, k)] = p.b1[1][e.target.row] - p.b1[0][e.target.row];
                    let base = self.entries.iter().position(|b| {
                        b.target.block == Block::B1 && b.target.regime == Some(0) && b.target.row == e.target.row
                    });
                    if let Some(b) = base {
                        jac[(k, b)] = 1.0;
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Constrained values of the free entries, in layout order.
    pub fn constrained_values(&self, params: &ParameterSet) -> Vec<f64> {
        self.entries.iter().map(|e| params.get(&e.target)).collect()
    }
}

/// Unconstrained parameters together with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub theta: Vec<f64>,
    pub layout: Layout,
}

pub fn pack(params: &ParameterSet, spec: &ModelSpec) -> Result<ParameterVector> {
    let layout = Layout::new(spec)?;
    let theta = layout.pack(params)?;
    Ok(ParameterVector { theta, layout })
}

pub fn unpack(theta: &ParameterVector, spec: &ModelSpec) -> Result<ParameterSet> {
    if &theta.layout.spec != spec {
        return Err(RsssError::Spec("parameter vector was packed under a different spec".into()));
    }
    theta.layout.unpack(&theta.theta)
}

/// A matrix in config files: a list of rows.
pub type Rows = Vec<Vec<f64>>;

/// A regime-indexed value, written either once (shared) or as a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRegime<T> {
    Shared(T),
    Split([T; 2]),
}

impl<T: Clone> PerRegime<T> {
    fn pair(&self) -> [T; 2] {
        match self {
            PerRegime::Shared(v) => [v.clone(), v.clone()],
            PerRegime::Split(v) => v.clone(),
        }
    }
}

/// Plain-data form of [`ParameterSet`] used in config files and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterValues {
    pub lambda1: PerRegime<Rows>,
    pub r1: PerRegime<Vec<f64>>,
    pub lambda2: Rows,
    pub r2: Vec<f64>,
    pub p2: Rows,
    pub b1: PerRegime<Vec<f64>>,
    pub b2: PerRegime<Rows>,
    pub b3: PerRegime<Rows>,
    pub b4: PerRegime<Rows>,
    pub q1: PerRegime<Vec<f64>>,
    pub q2: Vec<f64>,
    pub gamma1: f64,
    pub gamma2: Vec<f64>,
    pub gamma3: Vec<f64>,
    pub gamma4: Vec<f64>,
    pub p12: f64,
}

fn to_matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(RsssError::Config(format!("{name}: ragged matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl ParameterValues {
    pub fn to_parameter_set(&self) -> Result<ParameterSet> {
        let pair_m = |name: &str, v: &PerRegime<Rows>| -> Result<[DMatrix<f64>; 2]> {
            let [a, b] = v.pair();
            Ok([to_matrix(name, &a)?, to_matrix(name, &b)?])
        };
        let pair_v = |v: &PerRegime<Vec<f64>>| {
            let [a, b] = v.pair();
            [DVector::from_vec(a), DVector::from_vec(b)]
        };
        Ok(ParameterSet {
            lambda1: pair_m("lambda1", &self.lambda1)?,
            r1: pair_v(&self.r1),
            lambda2: to_matrix("lambda2", &self.lambda2)?,
            r2: DVector::from_vec(self.r2.clone()),
            p2: to_matrix("p2", &self.p2)?,
            b1: pair_v(&self.b1),
            b2: pair_m("b2", &self.b2)?,
            b3: pair_m("b3", &self.b3)?,
            b4: pair_m("b4", &self.b4)?,
            q1: pair_v(&self.q1),
            q2: DVector::from_vec(self.q2.clone()),
            gamma1: self.gamma1,
            gamma2: DVector::from_vec(self.gamma2.clone()),
            gamma3: DVector::from_vec(self.gamma3.clone()),
            gamma4: DVector::from_vec(self.gamma4.clone()),
            p12: self.p12,
        })
    }

    pub fn from_parameter_set(p: &ParameterSet) -> Self {
        let pm = |m: &[DMatrix<f64>; 2]| PerRegime::Split([to_rows(&m[0]), to_rows(&m[1])]);
        let pv = |v: &[DVector<f64>; 2]| PerRegime::Split([v[0].as_slice().to_vec(), v[1].as_slice().to_vec()]);
        Self {
            lambda1: pm(&p.lambda1),
            r1: pv(&p.r1),
            lambda2: to_rows(&p.lambda2),
            r2: p.r2.as_slice().to_vec(),
            p2: to_rows(&p.p2),
            b1: pv(&p.b1),
            b2: pm(&p.b2),
            b3: pm(&p.b3),
            b4: pm(&p.b4),
            q1: pv(&p.q1),
            q2: p.q2.as_slice().to_vec(),
            gamma1: p.gamma1,
            gamma2: p.gamma2.as_slice().to_vec(),
            gamma3: p.gamma3.as_slice().to_vec(),
            gamma4: p.gamma4.as_slice().to_vec(),
            p12: p.p12,
        }
    }
}
