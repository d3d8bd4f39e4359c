//! Allocation-free likelihood evaluation.
//!
//! Computes the same recursion as [`crate::filter::run_filter`] on flat
//! buffers, without recording any per-occasion output. This is the inner
//! loop of estimation, so every probe of the gradient goes through here.
//! Matrices are column-major, like nalgebra's storage.

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::filter::{between_scores, hamilton_predict, hamilton_update, AugmentedSystem, FilterOptions};
use crate::model::{transition_probability, ModelSpec, ParameterSet, N_REGIMES};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Workspace {
    n: usize,
    eta: [Vec<f64>; 2],
    p: [Vec<f64>; 2],
    eta_upd: [[Vec<f64>; 2]; 2],
    p_upd: [[Vec<f64>; 2]; 2],
    eta_pred: Vec<f64>,
    p_pred: Vec<f64>,
    tmp: Vec<f64>,
    a: Vec<f64>,
    rows: Vec<usize>,
    lam: Vec<f64>,
    lp: Vec<f64>,
    f: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    gain: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, o: usize) -> Self {
        let vec_n = || vec![0.0; n];
        let mat_n = || vec![0.0; n * n];
        Self {
            n,
            eta: [vec_n(), vec_n()],
            p: [mat_n(), mat_n()],
            eta_upd: [[vec_n(), vec_n()], [vec_n(), vec_n()]],
            p_upd: [[mat_n(), mat_n()], [mat_n(), mat_n()]],
            eta_pred: vec_n(),
            p_pred: mat_n(),
            tmp: mat_n(),
            a: mat_n(),
            rows: Vec::with_capacity(o),
            lam: vec![0.0; o * n],
            lp: vec![0.0; o * n],
            f: vec![0.0; o * o],
            v: vec![0.0; o],
            w: vec![0.0; o],
            gain: vec![0.0; n * o],
        }
    }
}

fn symmetrize(m: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[i + j * n] + m[j + i * n]);
            m[i + j * n] = a;
            m[j + i * n] = a;
        }
    }
}

/// In-place lower Cholesky factor of an `m x m` matrix; `false` if not PD.
fn cholesky(f: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = f[j + j * m];
        for k in 0..j {
            d -= f[j + k * m] * f[j + k * m];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        f[j + j * m] = d;
        for i in (j + 1)..m {
            let mut s = f[i + j * m];
            for k in 0..j {
                s -= f[i + k * m] * f[j + k * m];
            }
            f[i + j * m] = s / d;
        }
    }
    true
}

/// Solves `L L' x = b` in place.
fn chol_solve(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i + k * m] * b[k];
        }
        b[i] = s / l[i + i * m];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in (i + 1)..m {
            s -= l[k + i * m] * b[k];
        }
        b[i] = s / l[i + i * m];
    }
}

/// `c = a b` with `a` m x k, `b` k x n.
fn gemm_nn(m: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for (cj, bj) in c.chunks_exact_mut(m).zip(b.chunks_exact(k)) {
        cj.iter_mut().for_each(|x| *x = 0.0);
        for (ap, &bpj) in a.chunks_exact(m).zip(bj) {
            for (ci, ai) in cj.iter_mut().zip(ap) {
                *ci += ai * bpj;
            }
        }
    }
}

/// `c += a b'` with `a` m x k, `b` n x k.
fn gemm_nt_acc(m: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for (j, cj) in c.chunks_exact_mut(m).enumerate() {
        for (ap, bp) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
            let bjp = bp[j];
            for (ci, ai) in cj.iter_mut().zip(ap) {
                *ci += ai * bjp;
            }
        }
    }
}

/// `c = a' b` with `a` k x m, `b` k x n.
fn gemm_tn(k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let m = a.len() / k;
    for (cj, bj) in c.chunks_exact_mut(m).zip(b.chunks_exact(k)) {
        for (ci, ai) in cj.iter_mut().zip(a.chunks_exact(k)) {
            *ci = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
        }
    }
}

/// Predict + masked update of one branch. Result lands in
/// `ws.eta_upd[s][sp]` / `ws.p_upd[s][sp]`. `ws.lam` and `ws.rows` must
/// already hold the observed rows of the loading matrix.
#[allow(clippy::too_many_arguments)]
fn branch(
    ws: &mut Workspace,
    s: usize,
    sp: usize,
    b1: &[f64],
    b3: &[f64],
    q: &[f64],
    r: &[f64],
    y: &[f64],
) -> std::result::Result<Option<f64>, &'static str> {
    let n = ws.n;
    let nn = n * n;
    // eta_pred = b1 + B3 eta
    ws.eta_pred.copy_from_slice(b1);
    for (col, &e) in b3.chunks_exact(n).zip(&ws.eta[sp]) {
        for (x, c) in ws.eta_pred.iter_mut().zip(col) {
            *x += c * e;
        }
    }
    // P_pred = B3 P B3' + Q
    gemm_nn(n, n, b3, &ws.p[sp], &mut ws.tmp[..nn]);
    ws.p_pred.copy_from_slice(q);
    gemm_nt_acc(n, n, &ws.tmp[..nn], b3, &mut ws.p_pred);
    symmetrize(&mut ws.p_pred, n);

    let m = ws.rows.len();
    if m == 0 {
        ws.eta_upd[s][sp].copy_from_slice(&ws.eta_pred);
        ws.p_upd[s][sp].copy_from_slice(&ws.p_pred);
        return Ok(None);
    }
    let lam = &ws.lam[..m * n];
    // v = y - L eta_pred
    for (a, &row) in ws.rows.iter().enumerate() {
        ws.v[a] = y[row];
    }
    for (col, &e) in lam.chunks_exact(m).zip(&ws.eta_pred) {
        for (x, c) in ws.v[..m].iter_mut().zip(col) {
            *x -= c * e;
        }
    }
    // LP (m x n), F = LP L' + R
    gemm_nn(m, n, lam, &ws.p_pred, &mut ws.lp[..m * n]);
    let f = &mut ws.f[..m * m];
    f.iter_mut().for_each(|x| *x = 0.0);
    gemm_nt_acc(m, m, &ws.lp[..m * n], lam, f);
    for (a, &row) in ws.rows.iter().enumerate() {
        f[a + a * m] += r[row];
    }
    symmetrize(f, m);
    if !cholesky(f, m) {
        return Err("innovation covariance is not positive definite");
    }
    let l = &ws.f[..m * m];
    let log_det: f64 = 2.0 * (0..m).map(|k| l[k + k * m].ln()).sum::<f64>();
    ws.w[..m].copy_from_slice(&ws.v[..m]);
    chol_solve(l, m, &mut ws.w[..m]);
    let quad: f64 = ws.v[..m].iter().zip(&ws.w[..m]).map(|(a, b)| a * b).sum();
    let loglik = -0.5 * (m as f64 * LN_2PI + log_det + quad);
    // K' = F^-1 LP (m x n), solved column by column
    let kt = &mut ws.lp[..m * n];
    for col in kt.chunks_exact_mut(m) {
        chol_solve(l, m, col);
    }
    let kt = &ws.lp[..m * n];
    // eta_upd = eta_pred + K v
    let eta_out = &mut ws.eta_upd[s][sp];
    for ((x, &e), col) in eta_out.iter_mut().zip(&ws.eta_pred).zip(kt.chunks_exact(m)) {
        *x = e + col.iter().zip(&ws.v[..m]).map(|(a, b)| a * b).sum::<f64>();
    }
    // Joseph form: A = I - K L; P = A P_pred A' + K R K'
    gemm_tn(m, kt, lam, &mut ws.a[..nn]);
    for (k, x) in ws.a.iter_mut().enumerate() {
        *x = if k % (n + 1) == 0 { 1.0 } else { 0.0 } - *x;
    }
    gemm_nn(n, n, &ws.a, &ws.p_pred, &mut ws.tmp[..nn]);
    // scaled copy R K' (m x n) in gain
    let rk = &mut ws.gain[..m * n];
    for (dst, src) in rk.chunks_exact_mut(m).zip(kt.chunks_exact(m)) {
        for ((d, s), &row) in dst.iter_mut().zip(src).zip(&ws.rows) {
            *d = s * r[row];
        }
    }
    let p_out = &mut ws.p_upd[s][sp];
    gemm_tn(m, kt, &ws.gain[..m * n], p_out);
    gemm_nt_acc(n, n, &ws.tmp[..nn], &ws.a, p_out);
    symmetrize(p_out, n);
    if !loglik.is_finite() {
        return Err("non-finite branch log-likelihood");
    }
    Ok(Some(loglik))
}

fn collapse(ws: &mut Workspace, joint: &[[f64; 2]; 2], fallback: &[[f64; 2]; 2]) {
    let n = ws.n;
    for s in 0..N_REGIMES {
        let marginal = joint[s][0] + joint[s][1];
        let weights = if marginal >= f64::MIN_POSITIVE {
            [joint[s][0] / marginal, joint[s][1] / marginal]
        } else if fallback[s][1] > fallback[s][0] {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        };
        let (eta, p) = (&mut ws.eta[s], &mut ws.p[s]);
        for i in 0..n {
            eta[i] = ws.eta_upd[s][0][i] * weights[0] + ws.eta_upd[s][1][i] * weights[1];
        }
        p.iter_mut().for_each(|x| *x = 0.0);
        for sp in 0..N_REGIMES {
            let w = weights[sp];
            if w == 0.0 {
                continue;
            }
            let (e, pu) = (&ws.eta_upd[s][sp], &ws.p_upd[s][sp]);
            for j in 0..n {
                let dj = eta[j] - e[j];
                for i in 0..n {
                    let di = eta[i] - e[i];
                    p[i + j * n] += w * (pu[i + j * n] + di * dj);
                }
            }
        }
        symmetrize(p, n);
    }
}

/// Per-individual log-likelihood over occasions `1..=occasions`.
pub fn loglik_by_individual(
    data: &PanelDataset,
    params: &ParameterSet,
    spec: &ModelSpec,
    occasions: usize,
    options: &FilterOptions,
) -> Result<Vec<f64>> {
    if occasions > data.n_occasions {
        return Err(RsssError::Data(format!(
            "requested {occasions} occasions, data has {}",
            data.n_occasions
        )));
    }
    let scores = between_scores(data, params)?;
    let sys = AugmentedSystem::new(params, &scores);
    let u1 = spec.n_lat1;
    let n = 2 * u1;
    let mut ws = Workspace::new(n, data.n_obs1);
    let blank = vec![false; data.n_obs1];
    let mut out = vec![0.0; data.n_individuals()];
    for (i, total) in out.iter_mut().enumerate() {
        for s in 0..N_REGIMES {
            ws.eta[s].iter_mut().for_each(|x| *x = 0.0);
            ws.p[s].iter_mut().for_each(|x| *x = 0.0);
            for j in 0..u1 {
                ws.p[s][j + j * n] = 1.0;
                ws.p[s][(u1 + j) * (n + 1)] = params.q2[j];
            }
        }
        let mut pr = spec.initial_regime_probs;
        let eta2 = scores[i].as_slice();
        for t in 1..=occasions {
            let (y, mask) = data.y1_at(i, t);
            let mask = if options.last_update.is_some_and(|last| t > last) {
                &blank[..]
            } else {
                mask
            };
            let trans = [
                transition_probability(&ws.eta[0], eta2, params, 0),
                transition_probability(&ws.eta[1], eta2, params, 1),
            ];
            let prior = hamilton_predict(&pr, &trans);
            ws.rows.clear();
            ws.rows.extend((0..data.n_obs1).filter(|&k| mask[k]));
            let m = ws.rows.len();
            let mut branch_loglik = [[None; 2]; 2];
            for s in 0..N_REGIMES {
                let lambda = sys.lambda_aug[s].as_slice();
                for k in 0..n {
                    for a in 0..m {
                        ws.lam[a + k * m] = lambda[ws.rows[a] + k * data.n_obs1];
                    }
                }
                for sp in 0..N_REGIMES {
                    branch_loglik[s][sp] = branch(
                        &mut ws,
                        s,
                        sp,
                        sys.b1_aug[i][s].as_slice(),
                        sys.b3_aug[i][s].as_slice(),
                        sys.q_aug[s].as_slice(),
                        sys.r1[s].as_slice(),
                        y,
                    )
                    .map_err(|reason| RsssError::Filter {
                        i,
                        t,
                        s: s + 1,
                        s_prev: sp + 1,
                        reason: reason.to_string(),
                    })?;
                }
            }
            let update = hamilton_update(&prior, &branch_loglik).ok_or(RsssError::DegenerateLikelihood { i, t })?;
            let mut joint = update.joint;
            if data.regime_event[i].is_some_and(|d| t >= d) {
                crate::filter::clamp_to_second_regime(&mut joint, &pr);
            }
            collapse(&mut ws, &joint, &prior);
            pr = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
            if let Some(l) = update.log_f {
                *total += l;
            }
        }
    }
    Ok(out)
}
