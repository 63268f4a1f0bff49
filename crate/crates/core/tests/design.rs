//! Oracle-backed integration tests for the feedback design at the reference
//! configuration c = 2, alpha = 1, rho = 5 (d = 2, gains 6 and 7). Frozen
//! constants come from an independent prototype of the same formulas.

use nalgebra::{DMatrix, DVector};
use nstab_core::delay::mat_exp;
use nstab_core::design::{
    assemble_bk, build_design, build_design_from_parts, build_lambda, determinant_chain_agrees,
    feedback_u, feedback_u_per_k, kalman_rank, lambda_analytic, lifting_modes, mode_identity_check,
    solve_lifting_bvp,
};
use nstab_core::spectral::{eigenvalues, BasisPair, DEFAULT_QUAD_NODES};
use nstab_core::verify::verify_design;
use nstab_core::{DesignSet, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C: f64 = 2.0;
const ALPHA: f64 = 1.0;
const RHO: f64 = 5.0;

/// Jordan coupling entry Lambda_{01} = -(2 beta_0 + 1).
const LAMBDA_01: f64 = -2.395_773_843_796_416_9;

/// Weight matrix A = (sum_k B_k)^{-1} (symmetric).
const A_ORACLE: [[f64; 2]; 2] = [
    [743_199.240_058_809_6, -3_303_885.910_318_145],
    [-3_303_885.910_318_145, 14_687_648.893_278_973],
];

/// Gain matrix C = -Lambda - sum_k gamma_k B_k A.
const C_ORACLE: [[f64; 2]; 2] = [
    [-126.855_496_918_945_62, 533.317_811_087_948_3],
    [-26.831_594_180_417_37, 112.803_681_542_040_74],
];

/// Feedback row: u = k_row . U.
const K_ROW: [f64; 2] = [-92.771_589_165_794_353, 390.024_414_130_695_73];

const SUM_BK_COND: f64 = 1_270_687.248_206_914_6;

/// Resolvent projections (Lambda + 50 I)^{-1} L.
const LIFT_50: [f64; 2] = [0.027_083_134_038_486_053, 0.005_778_453_818_372_698_8];

/// Spectrum of Lambda + e^{-tau Lambda} C at tau = 0.2 (complex pair).
const DELAYED_POLE_RE: f64 = -1.379_107_024_958_830_9;
const DELAYED_POLE_IM: f64 = 6.339_461_486_184_501_0;

fn reference_basis() -> BasisPair {
    let spectrum = eigenvalues(2, C, ALPHA).expect("eigenvalues solvable");
    BasisPair::build(spectrum, DEFAULT_QUAD_NODES).expect("basis builds")
}

fn reference_design() -> DesignSet {
    build_design(&reference_basis(), RHO, None).expect("design builds")
}

#[test]
fn jordan_coupling_matches_frozen_value() {
    let basis = reference_basis();
    let analytic = lambda_analytic(&basis.spectrum, 2);
    assert!((analytic[(0, 1)] - LAMBDA_01).abs() <= 1e-13);
    // the raw quadrature matrix agrees with the closed form to quadrature accuracy
    let quad = build_lambda(&basis, 2).expect("validated quadrature matrix");
    assert!((quad[(0, 1)] - LAMBDA_01).abs() <= 1e-8);
    assert!((quad - analytic).amax() <= 1e-8);
}

#[test]
fn frozen_gain_matrices_match() {
    let ds = reference_design();
    assert_eq!(ds.d, 2);
    assert_eq!(ds.gammas, vec![6.0, 7.0]);
    for i in 0..2 {
        for j in 0..2 {
            let a = ds.a_mat[(i, j)];
            assert!(
                ((a - A_ORACLE[i][j]) / A_ORACLE[i][j]).abs() <= 1e-8,
                "A[{i}{j}] = {a:.17e} vs {:.17e}",
                A_ORACLE[i][j]
            );
            let c = ds.c_mat[(i, j)];
            assert!(
                (c - C_ORACLE[i][j]).abs() <= 1e-6,
                "C[{i}{j}] = {c:.17e} vs {:.17e}",
                C_ORACLE[i][j]
            );
        }
        assert!(
            (ds.k_row[i] - K_ROW[i]).abs() <= 1e-6,
            "k_row[{i}] = {:.17e} vs {:.17e}",
            ds.k_row[i],
            K_ROW[i]
        );
    }
    assert!(((ds.sum_bk_cond - SUM_BK_COND) / SUM_BK_COND).abs() <= 1e-6);
    assert!(ds.kalman.full_rank);
}

#[test]
fn delay_compensated_poles_match_frozen_pair() {
    // eigenvalues of Lambda + e^{-tau Lambda} C govern the compensated loop
    let ds = reference_design();
    let shifted = &ds.lambda + mat_exp(&(-&ds.lambda), 0.2) * &ds.c_mat;
    let eigs = shifted.complex_eigenvalues();
    let mut re: Vec<f64> = eigs.iter().map(|z| z.re).collect();
    let mut im: Vec<f64> = eigs.iter().map(|z| z.im.abs()).collect();
    re.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    for r in &re {
        assert!((r - DELAYED_POLE_RE).abs() <= 1e-6, "re = {r:.17e}");
    }
    for i in &im {
        assert!((i - DELAYED_POLE_IM).abs() <= 1e-6, "im = {i:.17e}");
    }
}

#[test]
fn mode_identity_holds_over_random_inputs() {
    let ds = reference_design();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        worst = worst.max(mode_identity_check(&ds, &u));
    }
    assert!(worst <= 1e-12, "mode identity residual {worst:.3e}");
}

#[test]
fn assembled_feedback_matches_per_mode_sum() {
    // moderate-scale system: the two evaluation orders agree to 1e-14
    let lambda = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -10.0]);
    let l = DVector::from_row_slice(&[1.0, 1.0]);
    let toy = build_design_from_parts(lambda, l, vec![1.0, 11.0]).expect("toy design");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let diff = (feedback_u(&toy, &u) - feedback_u_per_k(&toy, &u)).abs();
        assert!(diff <= 1e-14, "toy-scale feedback mismatch {diff:.3e}");
    }
    // at the reference scale the products pass through |A| ~ 1.5e7 before
    // cancelling down to O(100), so the agreement is absolute ~ |A| eps
    let ds = reference_design();
    for _ in 0..100 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let diff = (feedback_u(&ds, &u) - feedback_u_per_k(&ds, &u)).abs();
        assert!(diff <= 1e-9, "reference-scale feedback mismatch {diff:.3e}");
    }
}

#[test]
fn resolvent_projections_match_frozen_values() {
    let ds = reference_design();
    let modes = lifting_modes(&ds, 50.0, 1.0).expect("resolvent solve");
    for j in 0..2 {
        assert!(
            ((modes[j] - LIFT_50[j]) / LIFT_50[j]).abs() <= 1e-10,
            "lift[{j}] = {:.17e} vs {:.17e}",
            modes[j],
            LIFT_50[j]
        );
    }
    // scaling in the boundary value is linear
    let scaled = lifting_modes(&ds, 50.0, -2.5).expect("resolvent solve");
    assert!((scaled + 2.5 * &modes).amax() <= 1e-14);
}

#[test]
fn lifting_bvp_reproduces_resolvent_at_fine_grid() {
    let basis = reference_basis();
    let ds = reference_design();
    let sol = solve_lifting_bvp(&basis, 50.0, 2001).expect("bvp solves");
    let alg = lifting_modes(&ds, 50.0, 1.0).expect("resolvent solve");
    let err = (&sol.projections - &alg).amax();
    assert!(err <= 1e-4, "bvp vs resolvent {err:.3e}");
    assert!(sol.boundary_residual <= 1e-6);
    assert!((sol.values[0] - 1.0).abs() <= 1e-15, "Dirichlet datum");
}

#[test]
fn lifting_bvp_converges_at_second_order() {
    let basis = reference_basis();
    let ds = reference_design();
    let alg = lifting_modes(&ds, 50.0, 1.0).expect("resolvent solve");
    let errs: Vec<f64> = [250usize, 500, 1000]
        .iter()
        .map(|&m| {
            let sol = solve_lifting_bvp(&basis, 50.0, m).expect("bvp solves");
            (&sol.projections - &alg).amax()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (3.2..4.8).contains(&ratio),
            "convergence ratio {ratio:.3} from errors {errs:?}"
        );
    }
}

#[test]
fn resonant_gamma_is_rejected_with_estimate() {
    let basis = reference_basis();
    // gamma = 1 collides with lambda_0 = 1 at c = 2: the stationary operator
    // is singular there and the probe estimate must flag it
    match solve_lifting_bvp(&basis, 1.0, 801) {
        Err(Error::GammaTooSmall { gamma, estimate, .. }) => {
            assert_eq!(gamma, 1.0);
            assert!(estimate > 1e11);
        }
        other => panic!("expected GammaTooSmall, got {other:?}"),
    }
    let healthy = solve_lifting_bvp(&basis, 50.0, 801).expect("healthy gamma solves");
    assert!(healthy.kappa_estimate < 1e9);
}

#[test]
fn kalman_fixture_fails_rank_and_design() {
    let lambda = DMatrix::from_row_slice(2, 2, &[-2.0 + C, 0.0, 0.0, -5.0 + C]);
    let l = DVector::from_row_slice(&[1.0, 0.0]);
    let report = kalman_rank(&lambda, &l);
    assert!(!report.full_rank);
    assert_eq!(report.rank, 1);
    let asm = assemble_bk(&lambda, &l, &[6.0, 7.0]).expect("assembly itself succeeds");
    assert!(asm.sigma_min < 1e-12 * asm.sigma_max);
    let err = build_design_from_parts(lambda, l, vec![6.0, 7.0]).unwrap_err();
    assert!(matches!(err, Error::RankConditionViolated { .. }));
}

#[test]
fn determinant_chain_agrees_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..100 {
        let d = 2 + (trial % 3); // 2, 3, 4
        // upper-triangular Lambda with well-separated diagonal
        let mut lambda = DMatrix::zeros(d, d);
        for i in 0..d {
            lambda[(i, i)] = -(i as f64 + 1.0) * 2.0 + rng.gen_range(-0.3..0.3);
            for j in (i + 1)..d {
                lambda[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        // every other trial zeroes one L entry against a *diagonal* matrix,
        // which breaks controllability
        let diag_only = trial % 2 == 0;
        let mut l = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
        if diag_only {
            lambda.fill_upper_triangle(0.0, 1);
            l[trial % d] = 0.0;
        }
        let gammas: Vec<f64> = (0..d).map(|k| 9.0 + k as f64).collect();
        let agree = determinant_chain_agrees(&lambda, &l, &gammas).expect("chain evaluates");
        assert!(agree, "trial {trial}: chain disagrees with Kalman test");
        let expected_rank = kalman_rank(&lambda, &l).full_rank;
        assert_eq!(expected_rank, !diag_only, "trial {trial}: rank expectation");
    }
}

#[test]
fn gamma_overrides_are_validated() {
    let basis = reference_basis();
    let err = build_design(&basis, RHO, Some(&[7.0, 6.0])).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    let err = build_design(&basis, RHO, Some(&[6.0])).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    let ds = build_design(&basis, RHO, Some(&[6.0, 7.0])).expect("explicit gains accepted");
    assert_eq!(ds.gammas, vec![6.0, 7.0]);
}

#[test]
fn verify_design_suite_passes() {
    let report = verify_design().expect("suite runs");
    for check in &report.checks {
        assert!(
            check.passed,
            "design check '{}' failed: measured {:.3e} vs tolerance {:.3e}",
            check.name, check.measured, check.tolerance
        );
    }
    assert!(report.passed);
}
