//! Ready-made model designs.
//!
//! The two-factor design is the default simulation configuration: two
//! within factors with two items each and one between factor measured by two
//! items. Its population values follow the reported simulation truth. The
//! seven-factor design carries the empirical estimates and is used for
//! larger-scale runs.

use nalgebra::{DMatrix, DVector};

use crate::model::{ModelSpec, ParameterSet};

pub fn simulation_spec() -> ModelSpec {
    let mut spec = ModelSpec::simple_structure(&[2, 2], &[2], vec![vec![0.74]]);
    spec.q2_fixed = Some(vec![0.0, 0.0]);
    spec
}

pub fn simulation_truth() -> ParameterSet {
    let lambda1 = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.92, 0.0, 0.0, 1.0, 0.0, 0.92]);
    let r1 = DVector::from_vec(vec![0.26, 0.29, 0.32, 0.35]);
    let q1 = DVector::from_vec(vec![0.03, 0.01]);
    ParameterSet {
        lambda1: [lambda1.clone(), lambda1],
        r1: [r1.clone(), r1],
        lambda2: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        r2: DVector::from_vec(vec![0.47, 0.54]),
        p2: DMatrix::from_element(1, 1, 0.74),
        b1: [
            DVector::from_vec(vec![-0.01, -0.01]),
            DVector::from_vec(vec![0.06, 0.06]),
        ],
        b2: [
            DMatrix::from_row_slice(2, 1, &[-0.03, -0.03]),
            DMatrix::from_row_slice(2, 1, &[-0.02, -0.03]),
        ],
        b3: [
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.94, 0.93])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.93, 0.96])),
        ],
        b4: [
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.00])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.02])),
        ],
        q1: [q1.clone(), q1],
        q2: DVector::zeros(2),
        gamma1: 4.60,
        gamma2: DVector::from_vec(vec![-0.93]),
        gamma3: DVector::from_vec(vec![-3.28, -2.58]),
        gamma4: DVector::from_vec(vec![1.55, -2.28]),
        p12: 1e-12,
    }
}

/// Item counts of the seven within factors.
const EMPIRICAL_ITEMS: [usize; 7] = [3, 2, 2, 2, 2, 3, 3];

pub fn empirical_spec() -> ModelSpec {
    let mut spec = ModelSpec::simple_structure(&EMPIRICAL_ITEMS, &[2], vec![vec![0.74]]);
    // interactions only for cost, afraid to fail and stress
    spec.gamma4_mask = vec![false, true, true, false, true, false, false];
    spec.q2_fixed = Some(vec![0.0; 7]);
    spec
}

pub fn empirical_truth() -> ParameterSet {
    let spec = empirical_spec();
    let mut p = ParameterSet::baseline(&spec);
    // reported free loadings in item order; loadings beyond the six reported stay at 1
    let reported = [1.29, 1.03, 0.92, 0.92, 1.14, 1.09];
    let mut next = reported.iter();
    for (i, row) in spec.loadings1.iter().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            if entry.is_free() {
                p.lambda1[0][(i, j)] = *next.next().unwrap_or(&1.0);
            }
        }
    }
    p.lambda1[1] = p.lambda1[0].clone();
    let r1 = DVector::from_vec(vec![
        0.37, 0.29, 0.50, 0.26, 0.29, 0.32, 0.35, 0.31, 0.36, 0.29, 0.24, 0.40, 0.53, 0.66, 0.56, 0.32, 0.49,
    ]);
    p.r1 = [r1.clone(), r1];
    p.lambda2 = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    p.r2 = DVector::from_vec(vec![0.47, 0.54]);
    p.b1 = [
        DVector::from_vec(vec![0.04, -0.01, -0.01, 0.02, 0.03, 0.03, -0.07]),
        DVector::from_vec(vec![0.06, 0.06, 0.06, 0.07, 0.12, 0.09, 0.04]),
    ];
    p.b2 = [
        DMatrix::from_column_slice(7, 1, &[-0.02, -0.03, -0.03, -0.03, -0.05, -0.01, -0.04]),
        DMatrix::from_column_slice(7, 1, &[-0.02, -0.02, -0.03, -0.04, -0.04, -0.01, -0.01]),
    ];
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    p.b3 = [
        diag(&[0.89, 0.94, 0.93, 0.91, 0.90, 0.91, 0.88]),
        diag(&[0.93, 0.93, 0.96, 0.91, 0.91, 0.88, 0.93]),
    ];
    p.b4 = [
        diag(&[0.05, 0.01, 0.00, 0.01, 0.00, 0.04, 0.00]),
        diag(&[0.02, 0.01, 0.02, 0.02, 0.02, 0.03, 0.00]),
    ];
    let q1 = DVector::from_vec(vec![0.02, 0.03, 0.01, 0.02, 0.03, 0.09, 0.09]);
    p.q1 = [q1.clone(), q1];
    p.gamma2 = DVector::from_vec(vec![-0.93]);
    p.gamma3 = DVector::from_vec(vec![-3.92, -3.28, -2.58, 0.76, -0.78, -0.24, -0.97]);
    p.gamma4 = DVector::from_vec(vec![0.0, 1.55, -2.28, 0.0, -1.35, 0.0, 0.0]);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;

    #[test]
    fn presets_are_valid() {
        for (spec, truth) in [
            (simulation_spec(), simulation_truth()),
            (empirical_spec(), empirical_truth()),
        ] {
            let layout = Layout::new(&spec).unwrap();
            layout.pack(&truth).unwrap();
        }
    }
}
