mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{gauss, gaussian_matrix, gaussian_vector, min_norm_least_squares, rng};
use spa_core::{kl_divergence, solve_pattern_ls, unbiased_risk, DesignMatrix, SparsityPattern};

fn instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, u64, u64)> {
    (2usize..9, 2usize..7).prop_flat_map(|(n, m)| {
        (
            proptest::collection::vec(-3.0f64..3.0, n * m),
            proptest::collection::vec(-3.0f64..3.0, n),
            0u64..1 << m,
            0u64..1 << m,
        )
            .prop_map(move |(xs, ys, a, b)| {
                (DMatrix::from_vec(n, m, xs), DVector::from_vec(ys), a, b)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn refitting_the_fit_is_idempotent((x, y, a, _) in instance()) {
        let design = DesignMatrix::new(x).unwrap();
        let p = SparsityPattern::from_mask(design.m(), a);
        let first = solve_pattern_ls(&design, &y, &p).unwrap();
        let second = solve_pattern_ls(&design, &first.fitted, &p).unwrap();
        for (u, v) in first.fitted.iter().zip(second.fitted.iter()) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()));
        }
        prop_assert!(second.rss_mean <= 1e-12 * (1.0 + first.fitted.norm_squared()));
    }

    #[test]
    fn larger_patterns_fit_no_worse((x, y, a, b) in instance()) {
        let design = DesignMatrix::new(x).unwrap();
        let m = design.m();
        let small = SparsityPattern::from_mask(m, a & b);
        let large = SparsityPattern::from_mask(m, a);
        let fs = solve_pattern_ls(&design, &y, &small).unwrap();
        let fl = solve_pattern_ls(&design, &y, &large).unwrap();
        prop_assert!(fl.rss_mean <= fs.rss_mean + 1e-10);
        prop_assert!(fl.rank >= fs.rank);
    }

    #[test]
    fn residual_is_orthogonal_to_active_columns((x, y, a, _) in instance()) {
        let design = DesignMatrix::new(x.clone()).unwrap();
        let p = SparsityPattern::from_mask(design.m(), a);
        let fit = solve_pattern_ls(&design, &y, &p).unwrap();
        let resid = &y - &fit.fitted;
        for j in p.active() {
            let dot = x.column(j).dot(&resid);
            prop_assert!(dot.abs() <= 1e-8 * (1.0 + x.column(j).norm() * y.norm()));
        }
        for j in 0..design.m() {
            if !p.get(j) {
                prop_assert_eq!(fit.theta[j], 0.0);
            }
        }
    }

    #[test]
    fn min_norm_solution_matches_pseudo_inverse((x, y, a, _) in instance()) {
        let design = DesignMatrix::new(x.clone()).unwrap();
        let p = SparsityPattern::from_mask(design.m(), a);
        let fit = solve_pattern_ls(&design, &y, &p).unwrap();
        let (theta, rank) = min_norm_least_squares(&x, &y, &p.active_indices());
        prop_assert_eq!(fit.rank, rank);
        for (u, v) in fit.theta.iter().zip(theta.iter()) {
            prop_assert!((u - v).abs() <= 1e-7 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn kl_is_nonnegative(raw_l in proptest::collection::vec(0.0f64..1.0, 1..8),
                         raw_p in proptest::collection::vec(0.01f64..1.0, 8)) {
        prop_assume!(raw_l.iter().sum::<f64>() > 0.0);
        let k = raw_l.len();
        let sl: f64 = raw_l.iter().sum();
        let sp: f64 = raw_p[..k].iter().sum();
        let lambda: Vec<f64> = raw_l.iter().map(|v| v / sl).collect();
        let pi: Vec<f64> = raw_p[..k].iter().map(|v| v / sp).collect();
        prop_assert!(kl_divergence(&lambda, &pi).unwrap() >= -1e-15);
    }
}

#[test]
fn collinear_columns_report_reduced_rank() {
    let mut r = rng(11);
    let mut x = gaussian_matrix(&mut r, 12, 4);
    let combo = 2.0 * x.column(0) - x.column(1);
    x.set_column(3, &combo);
    let design = DesignMatrix::new(x).unwrap();
    let y = gaussian_vector(&mut r, 12);
    let fit = solve_pattern_ls(&design, &y, &SparsityPattern::ones(4)).unwrap();
    assert_eq!(fit.rank, 3);
}

#[test]
fn unbiased_risk_is_unbiased_on_average() {
    // E[R̃] = E[|f̂ − η|²] for a projection estimator; Monte Carlo with
    // a deliberately misspecified η and a rank-deficient pattern.
    let (n, m, sigma) = (15, 4, 0.8);
    let mut r = rng(12);
    let mut x = gaussian_matrix(&mut r, n, m);
    let dup = x.column(0).clone_owned();
    x.set_column(1, &dup);
    let design = DesignMatrix::new(x).unwrap();
    let eta = DVector::from_fn(n, |i, _| (i as f64 / 3.0).cos());
    let p = SparsityPattern::from_mask(m, 0b0111);
    let reps = 20_000;
    let mut diffs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let y = DVector::from_fn(n, |i, _| eta[i] + sigma * gauss(&mut r));
        let fit = solve_pattern_ls(&design, &y, &p).unwrap();
        let est = unbiased_risk(&fit, sigma).unwrap();
        let truth = (&fit.fitted - &eta).norm_squared() / n as f64;
        diffs.push(est - truth);
    }
    let mean = diffs.iter().sum::<f64>() / reps as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!(
        mean.abs() <= 4.0 * sd / (reps as f64).sqrt(),
        "mean {mean}, sd {sd}"
    );
}

#[test]
fn wide_design_full_pattern_interpolates() {
    let mut r = rng(13);
    let design = DesignMatrix::new(gaussian_matrix(&mut r, 5, 9)).unwrap();
    let y = gaussian_vector(&mut r, 5);
    let fit = solve_pattern_ls(&design, &y, &SparsityPattern::ones(9)).unwrap();
    assert_eq!(fit.rank, 5);
    assert_abs_diff_eq!(fit.rss_mean, 0.0, epsilon = 1e-20);
    let sigma = 1.5;
    assert_abs_diff_eq!(
        unbiased_risk(&fit, sigma).unwrap(),
        sigma * sigma,
        epsilon = 1e-12
    );
}
