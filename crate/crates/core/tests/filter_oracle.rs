//! The filter against closed-form Gaussian densities.

mod common;

use std::time::Instant;

use common::*;
use rsss::filter::{run_filter, FilterOptions};
use rsss::model::{sigmoid, ParameterSet};

fn scalar_params() -> ParameterSet {
    let spec = small_spec(&[1]);
    let mut p = ParameterSet::baseline(&spec);
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
    p
}

fn filter_loglik(params: &ParameterSet, spec_items: &[usize], y1: &[Vec<f64>], y2: f64) -> f64 {
    let spec = small_spec(spec_items);
    let data = one_person(y1, y2);
    run_filter(&data, params, &spec, y1.len(), false, &FilterOptions::default())
        .unwrap()
        .loglik
}

#[test]
fn scalar_three_occasions_matches_trivariate_normal() {
    let start = Instant::now();
    let p = single_regime(scalar_params());
    let y1 = vec![vec![0.3], vec![-0.5], vec![1.1]];
    let y2 = 0.6;
    let exact = joint_gaussian_loglik(&p, 0, y2, &y1);
    let filtered = filter_loglik(&p, &[1], &y1, y2);
    assert!(relative_error(filtered, exact) <= 1e-6, "{filtered} vs {exact}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn unreachable_second_regime_leaves_first_regime_density() {
    // regime 2 differs but has prior mass below 1e-17 at every step
    let mut p = single_regime(scalar_params());
    p.b3[1][(0, 0)] = 0.1;
    p.r1[1][0] = 2.0;
    p.q1[1][0] = 1.5;
    let y1 = vec![vec![0.3], vec![-0.5], vec![1.1]];
    let exact = joint_gaussian_loglik(&p, 0, -0.4, &y1);
    let filtered = filter_loglik(&p, &[1], &y1, -0.4);
    assert!(relative_error(filtered, exact) <= 1e-6, "{filtered} vs {exact}");
}

#[test]
fn two_factors_four_occasions() {
    let spec = small_spec(&[2, 1]);
    let mut r = rng(5);
    for case in 0..20 {
        let p = single_regime(random_params(&spec, &mut r));
        let y1: Vec<Vec<f64>> = (0..4).map(|t| (0..3).map(|k| ((t * 3 + k + case) as f64 * 0.37).sin()).collect()).collect();
        let y2 = 0.25 * case as f64 - 2.0;
        let exact = joint_gaussian_loglik(&p, 0, y2, &y1);
        let filtered = filter_loglik(&p, &[2, 1], &y1, y2);
        assert!(relative_error(filtered, exact) <= 1e-6, "case {case}: {filtered} vs {exact}");
    }
}

#[test]
fn first_occasion_is_an_exact_two_component_mixture() {
    // one step from a known regime: no collapsing has happened yet
    let spec = small_spec(&[1]);
    let mut r = rng(17);
    for _ in 0..50 {
        let p = random_params(&spec, &mut r);
        let y = vec![vec![r_value(&mut r)]];
        let y2 = 0.3;
        // the first regime is certain at t = 0 and eta_0 = 0
        let stay = sigmoid(p.gamma1 + p.gamma2[0] * y2);
        let l1 = joint_gaussian_loglik(&p, 0, y2, &y);
        let l2 = joint_gaussian_loglik(&p, 1, y2, &y);
        let exact = (stay * l1.exp() + (1.0 - stay) * l2.exp()).ln();
        let filtered = filter_loglik(&p, &[1], &y, y2);
        assert!(relative_error(filtered, exact) <= 1e-9, "{filtered} vs {exact}");
    }
}

fn r_value(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    r.random_range(-2.0..2.0)
}

#[test]
fn empty_window_has_zero_loglik() {
    let spec = small_spec(&[1]);
    let data = one_person(&[vec![0.3]], 0.0);
    let run = run_filter(&data, &scalar_params(), &spec, 0, false, &FilterOptions::default()).unwrap();
    assert_eq!(run.loglik, 0.0);
    assert_eq!(run.final_state.individuals[0].pr, [1.0, 0.0]);
}

