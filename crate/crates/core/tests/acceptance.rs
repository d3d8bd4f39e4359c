//! Acceptance checks. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.
//!
//! The default is the fast study (N=40 against N=20, T=30, 5 replications,
//! bands of criterion 4 widened by 1.5). `RSSS_FULL=1` runs the desk-scale
//! study (N=100 against N=75, T=50, 10 replications).

mod common;

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use common::*;
use rsss::estimate::{
    gaussian_mean_contributions, hessian_standard_errors, invert_information, opg_information, opg_standard_errors,
    rprop_maximize, ModelObjective, RpropConfig, DEFAULT_HESSIAN_STEP, DEFAULT_SCORE_STEP,
};
use rsss::config::ForecastMode;
use rsss::evaluate::{average_metrics, recovery_stats, score_function, RegimeMetrics, DEFAULT_CUTOFF};
use rsss::filter::{between_scores, individual_step, init_state, run_filter, AugmentedSystem, FilterOptions};
use rsss::model::{transition_probability, Layout};
use rsss::pipeline::{run_replication, run_track, Replication};
use rsss::presets;
use rsss::simulate::{simulate_panel, InitialState, SimConfig};

struct Mode {
    name: &'static str,
    /// Sizes reported against the reference values.
    headline: Vec<usize>,
    large: usize,
    small: usize,
    n_occasions: usize,
    replications: u64,
    band_scale: f64,
    /// Wall-clock budget of one headline study, seconds.
    budget: Option<f64>,
}

impl Mode {
    fn from_env() -> Self {
        if std::env::var("RSSS_FULL").is_ok_and(|v| v == "1") {
            Self {
                name: "full",
                headline: vec![75, 100],
                large: 100,
                small: 75,
                n_occasions: 50,
                replications: 10,
                band_scale: 1.0,
                budget: None,
            }
        } else {
            Self {
                name: "fast",
                headline: vec![40],
                large: 40,
                small: 20,
                n_occasions: 30,
                replications: 5,
                band_scale: 1.5,
                budget: Some(1800.0),
            }
        }
    }
}

const SEED: u64 = 1000;
const ACCURACY: (f64, f64) = (0.80, 0.08);
const SENSITIVITY: (f64, f64) = (0.72, 0.12);
const SPECIFICITY: (f64, f64) = (0.85, 0.10);
const B3_BIAS: f64 = 0.05;
const RMSE_SHARE: f64 = 0.70;
const SCORE_SHARE: f64 = 0.80;
const IID_SE_TOL: f64 = 0.15;
const SE_AGREEMENT: f64 = 0.30;
const SE_SHARE: f64 = 0.80;
/// Individuals and occasions of the standard-error panel.
const SE_PANEL: (usize, usize) = (400, 30);

struct Study {
    size: usize,
    runs: Vec<Replication>,
    seconds: f64,
}

/// Replication `r` uses seed `SEED + r` at every size, so the smaller panel
/// holds the first individuals of the larger one.
fn study(size: usize, mode: &Mode) -> Study {
    let spec = presets::simulation_spec();
    let truth = presets::simulation_truth();
    let optimizer = RpropConfig::simulation();
    let start = Instant::now();
    let runs = (0..mode.replications)
        .map(|r| {
            run_replication(&spec, &truth, size, mode.n_occasions, &optimizer, SEED + r, DEFAULT_CUTOFF)
                .unwrap_or_else(|e| panic!("replication {r} at N={size}: {e}"))
        })
        .collect();
    Study {
        size,
        runs,
        seconds: start.elapsed().as_secs_f64(),
    }
}

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, criterion: usize, pass: bool, detail: String) {
        if !pass {
            self.failed.push(criterion);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        // written past the test harness capture so the lines always show
        let mut out = std::io::stdout().lock();
        writeln!(out, "{verdict} criterion {criterion}: {detail}").unwrap();
        out.flush().unwrap();
    }
}

fn within(value: Option<f64>, (centre, half): (f64, f64), scale: f64) -> bool {
    value.is_some_and(|v| (v - centre).abs() <= half * scale)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let spec = small_spec(&[1]);
    let mut p = rsss::model::ParameterSet::baseline(&spec);
    for s in 0..2 {
        p.r1[s][0] = 0.4;
        p.b1[s][0] = 0.1;
        p.b2[s][(0, 0)] = -0.2;
        p.b3[s][(0, 0)] = 0.7;
        p.b4[s][(0, 0)] = 0.05;
        p.q1[s][0] = 0.3;
    }
    p.r2[0] = 0.5;
    p.q2[0] = 0.2;
    let p = single_regime(p);
    let y1 = vec![vec![0.3], vec![-0.5], vec![1.1]];
    let exact = joint_gaussian_loglik(&p, 0, 0.6, &y1);
    let data = one_person(&y1, 0.6);
    let filtered = run_filter(&data, &p, &spec, 3, false, &FilterOptions::default()).unwrap().loglik;
    let secs = start.elapsed().as_secs_f64();
    let rel = relative_error(filtered, exact);
    report.line(
        1,
        rel <= 1e-6 && secs < 1.0,
        format!("relative error {rel:.2e} (<= 1e-6), {secs:.3} s (< 1 s)"),
    );
}

fn criterion_2(report: &mut Report) {
    let start = Instant::now();
    let stats = random_steps(100_000, 2024);
    let secs = start.elapsed().as_secs_f64();
    let pass = stats.steps >= 100_000
        && stats.worst_sum <= 1e-10
        && stats.worst_eig >= -1e-8
        && stats.worst_joseph <= 1e-8
        && secs < 120.0;
    report.line(
        2,
        pass,
        format!(
            "{} steps, sum error {:.1e} (<= 1e-10), min eigenvalue {:.1e} (>= -1e-8), Joseph gap {:.1e} (<= 1e-8), {secs:.1} s (< 120 s)",
            stats.steps, stats.worst_sum, stats.worst_eig, stats.worst_joseph
        ),
    );
}

fn criterion_3(report: &mut Report) {
    let spec = presets::simulation_spec();
    let (mut data, params) = sim_data(6, 12, 3);
    let holes = [(0, 1), (0, 2), (2, 7), (5, 12), (3, 6)];
    for &(i, t) in &holes {
        for k in 0..data.n_obs1 {
            data.set_missing(i, t, k);
        }
    }
    let scores = between_scores(&data, &params).unwrap();
    let sys = AugmentedSystem::new(&params, &scores);
    let run = run_filter(&data, &params, &spec, 12, true, &FilterOptions::default()).unwrap();
    let mut moments_equal = true;
    let mut no_likelihood = true;
    for i in 0..6 {
        let mut state = init_state(&spec, &params, 1).individuals.remove(0);
        for t in 1..=12 {
            let (y, mask) = data.y1_at(i, t);
            let (next, record, out) =
                individual_step(&state, y, mask, &sys, &params, &scores[i], i, t, data.regime_event[i]).unwrap();
            if holes.contains(&(i, t)) {
                moments_equal &= record.eta_upd == record.eta_pred
                    && record.p_upd == record.p_pred
                    && record.pr_joint_upd == record.pr_joint_pred;
                no_likelihood &= out.loglik.is_none() && run.outputs[i][t - 1].loglik.is_none();
            }
            state = next;
        }
        let observed: f64 = run.outputs[i].iter().filter_map(|o| o.loglik).sum();
        no_likelihood &= run.loglik_by_individual[i] == observed;
    }
    report.line(
        3,
        moments_equal && no_likelihood,
        format!(
            "{} all-missing occasions: updated moments equal predicted {moments_equal}, no likelihood contribution {no_likelihood}",
            holes.len()
        ),
    );
}

fn metrics_of(study: &Study) -> RegimeMetrics {
    let runs: Vec<RegimeMetrics> = study.runs.iter().map(|r| r.evaluation.metrics).collect();
    average_metrics(&runs)
}

fn criterion_4(report: &mut Report, studies: &[&Study], mode: &Mode) {
    let k = mode.band_scale;
    let mut pass = true;
    let mut parts = Vec::new();
    for s in studies {
        let m = metrics_of(s);
        let ok = within(m.observed.accuracy, ACCURACY, k)
            && within(m.forecast.accuracy, ACCURACY, k)
            && within(m.forecast.sensitivity, SENSITIVITY, k)
            && within(m.forecast.specificity, SPECIFICITY, k)
            && mode.budget.is_none_or(|b| s.seconds < b);
        pass &= ok;
        parts.push(format!(
            "N={}: accuracy {}/{} sensitivity {} specificity {} in {:.0} s",
            s.size,
            fmt(m.observed.accuracy),
            fmt(m.forecast.accuracy),
            fmt(m.forecast.sensitivity),
            fmt(m.forecast.specificity),
            s.seconds
        ));
    }
    let budget = mode.budget.map_or(String::new(), |b| format!(", < {b:.0} s"));
    report.line(
        4,
        pass,
        format!(
            "{}; bands {:.2}±{:.3}, {:.2}±{:.3}, {:.2}±{:.3}{budget}",
            parts.join("; "),
            ACCURACY.0,
            ACCURACY.1 * k,
            SENSITIVITY.0,
            SENSITIVITY.1 * k,
            SPECIFICITY.0,
            SPECIFICITY.1 * k
        ),
    );
}

fn estimates(study: &Study, layout: &Layout) -> Vec<Option<Vec<f64>>> {
    study
        .runs
        .iter()
        .map(|r| Some(layout.constrained_values(&r.fit.params_hat)))
        .collect()
}

fn criterion_5(report: &mut Report, headline: &[&Study], large: &Study, small: &Study) {
    let layout = Layout::new(&presets::simulation_spec()).unwrap();
    let names = layout.names();
    let truth = layout.constrained_values(&presets::simulation_truth());
    let mut bias_ok = true;
    let mut biases = Vec::new();
    for s in headline {
        let rec = recovery_stats(&names, &estimates(s, &layout), &truth).unwrap();
        for row in rec.rows.iter().filter(|r| r.name == "b3_s1[1,1]" || r.name == "b3_s1[2,2]") {
            bias_ok &= row.bias.abs() <= B3_BIAS;
            biases.push(format!("N={} {} {:+.3}", s.size, row.name, row.bias));
        }
    }
    let big = recovery_stats(&names, &estimates(large, &layout), &truth).unwrap();
    let little = recovery_stats(&names, &estimates(small, &layout), &truth).unwrap();
    // transition effects excluded: they are neither structural nor measurement parameters
    let pairs: Vec<(f64, f64)> = big
        .rows
        .iter()
        .zip(&little.rows)
        .filter(|(a, _)| !a.name.starts_with("gamma"))
        .map(|(a, b)| (a.rmse, b.rmse))
        .collect();
    let smaller = pairs.iter().filter(|(a, b)| a <= b).count();
    let share = smaller as f64 / pairs.len() as f64;
    report.line(
        5,
        bias_ok && share >= RMSE_SHARE,
        format!(
            "bias {} (|bias| <= {B3_BIAS}); RMSE at N={} <= N={} for {smaller}/{} parameters ({share:.2} >= {RMSE_SHARE})",
            biases.join(", "),
            large.size,
            small.size,
            pairs.len()
        ),
    );
}

fn criterion_6(report: &mut Report, large: &Study, small: &Study) {
    let pairs: Vec<(f64, f64)> = large
        .runs
        .iter()
        .zip(&small.runs)
        .map(|(a, b)| (a.evaluation.score.mean(), b.evaluation.score.mean()))
        .collect();
    let lower = pairs.iter().filter(|(a, b)| a <= b).count();
    let share = lower as f64 / pairs.len() as f64;
    let detail: Vec<String> = pairs.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
    // not part of the verdict: both fits scored on the individuals the
    // panels share, which removes the sampling noise of the extra ones
    let spec = presets::simulation_spec();
    let shared: Vec<usize> = (0..small.size).collect();
    let common: Vec<(f64, f64)> = large
        .runs
        .iter()
        .zip(&small.runs)
        .map(|(a, b)| {
            let data = a.sim.data.subset(&shared);
            let split = a.fit.training_occasions;
            let track = run_track(&data, &a.fit.params_hat, &spec, split, ForecastMode::OneStep).unwrap();
            let pred: Vec<Vec<_>> = track
                .eta_predicted
                .iter()
                .zip(&track.eta_filtered)
                .map(|(p, f)| (0..p.len()).map(|t| if t < split { f[t].clone() } else { p[t].clone() }).collect())
                .collect();
            let truth = &a.sim.true_eta1[..small.size];
            (score_function(&pred, truth, split).unwrap().mean(), b.evaluation.score.mean())
        })
        .collect();
    let common_lower = common.iter().filter(|(a, b)| a <= b).count();
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "note criterion 6: on the {} shared individuals the N={} fit scores lower in {common_lower}/{} pairs ({})",
        small.size,
        large.size,
        common.len(),
        common.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    drop(out);
    report.line(
        6,
        share >= SCORE_SHARE,
        format!(
            "mean score N={} vs N={}: {}; lower in {lower}/{} ({share:.2} >= {SCORE_SHARE})",
            large.size,
            small.size,
            detail.join(" "),
            pairs.len()
        ),
    );
}

fn criterion_7(report: &mut Report) {
    // i.i.d. Gaussian mean, evaluated at the MLE
    let (mu, sigma, n) = (1.0, 2.0, 5000usize);
    let mut r = rng(70);
    let y: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = r.sample(StandardNormal);
            mu + sigma * z
        })
        .collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let info = opg_information(&|t: &[f64]| Some(gaussian_mean_contributions(&y, t)), &[mean, var.ln()], DEFAULT_SCORE_STEP)
        .unwrap();
    let (cov, _, _) = invert_information(&info);
    let se = cov[(0, 0)].sqrt();
    let reference = sigma / (n as f64).sqrt();
    let iid_rel = (se - reference).abs() / reference;

    // one correctly specified panel large enough that the sum of N outer
    // products is not dominated by its own sampling noise (N >> 32)
    let spec = presets::simulation_spec();
    let truth = presets::simulation_truth();
    let layout = Layout::new(&spec).unwrap();
    let sim = simulate_panel(&SimConfig {
        n_individuals: SE_PANEL.0,
        n_occasions: SE_PANEL.1,
        params: truth.clone(),
        spec,
        seed: SEED,
        replications: 1,
        initial_state: InitialState::Prior,
    })
    .unwrap();
    let data = &sim.data;
    let optimizer = RpropConfig::simulation();
    let occ = optimizer.training_window(data.n_occasions);
    let objective = ModelObjective::new(data, &layout, occ);
    let fit = rprop_maximize(&|t: &[f64]| objective.loglik(t), &layout.pack(&truth).unwrap(), &optimizer).unwrap();
    let opg = opg_standard_errors(&fit.theta, data, &layout, occ, DEFAULT_SCORE_STEP).unwrap();
    let hes = hessian_standard_errors(&fit.theta, data, &layout, occ, DEFAULT_HESSIAN_STEP).unwrap();
    let agree = opg
        .constrained
        .iter()
        .zip(&hes.constrained)
        .filter(|(o, h)| matches!((o, h), (Some(o), Some(h)) if (o - h).abs() <= SE_AGREEMENT * h))
        .count();
    let share = agree as f64 / layout.len() as f64;
    report.line(
        7,
        iid_rel <= IID_SE_TOL && share >= SE_SHARE,
        format!(
            "i.i.d. mean OPG SE {se:.4} vs {reference:.4} (relative {iid_rel:.3} <= {IID_SE_TOL}); \
             OPG/Hessian within {SE_AGREEMENT} for {agree}/{} parameters at N={} ({share:.2} >= {SE_SHARE})",
            layout.len(),
            data.n_individuals()
        ),
    );
}

fn criterion_8(report: &mut Report) {
    let truth = presets::simulation_truth();
    let stay = transition_probability(&[0.0, 0.0], &[0.0], &truth, 0)[0];
    let fifty = 0.99f64.powi(50);
    report.line(
        8,
        (stay - 0.990).abs() <= 0.001 && (fifty - 0.605).abs() <= 0.001,
        format!("stay probability {stay:.4} (0.990 ± 0.001), 0.99^50 = {fifty:.4} (0.605 ± 0.001)"),
    );
}

#[test]
fn acceptance_criteria() {
    let mode = Mode::from_env();
    let mut report = Report { failed: Vec::new() };
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "acceptance ({} mode)", mode.name).unwrap();
    }
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);

    let large = study(mode.large, &mode);
    let small = study(mode.small, &mode);
    let headline: Vec<&Study> = [&large, &small].into_iter().filter(|s| mode.headline.contains(&s.size)).collect();
    criterion_4(&mut report, &headline, &mode);
    criterion_5(&mut report, &headline, &large, &small);
    criterion_6(&mut report, &large, &small);
    criterion_7(&mut report);
    criterion_8(&mut report);

    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}
