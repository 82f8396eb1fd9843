mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};

use common::{
    cp, gaussian_matrix, gaussian_vector, mask_indices, min_norm_least_squares, rng,
    sparsity_prior, weighted_average,
};
use spa_core::frontends::LinearMapD;
use spa_core::{
    fit_coordinatewise, fit_fused, fit_group, make_first_difference, AggregationConfig,
    DesignMatrix, GroupStructure, Problem, SparsityPattern,
};

/// Orthonormal basis of `{θ : (Dθ)_j = 0 for j ∉ p}` from the eigenvectors
/// of the projector onto the constraint null space.
fn constraint_null_space(d: &DMatrix<f64>, p: u64) -> DMatrix<f64> {
    let m = d.ncols();
    let off: Vec<usize> = (0..m).filter(|j| p >> j & 1 == 0).collect();
    if off.is_empty() {
        return DMatrix::identity(m, m);
    }
    let c = d.select_rows(&off);
    // The constraint rows are independent, so C C^T is invertible.
    let gram_inv = (&c * c.transpose()).try_inverse().unwrap();
    let proj = DMatrix::identity(m, m) - c.transpose() * gram_inv * &c;
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    eig.eigenvectors.select_columns(&keep)
}

fn first_difference_dense(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

#[test]
fn fused_pattern_fits_match_constrained_least_squares() {
    let (n, m) = (12, 8);
    let mut r = rng(31);
    let x = gaussian_matrix(&mut r, n, m);
    let y = gaussian_vector(&mut r, n);
    let d = make_first_difference(m).unwrap();
    let dense = first_difference_dense(m);
    let xd = d
        .transform_design(&DesignMatrix::new(x.clone()).unwrap())
        .unwrap();
    let problem = Problem::new(xd, y.clone(), 1.0).unwrap();
    for mask in 0..1u64 << m {
        let gamma = problem
            .fit(&SparsityPattern::from_mask(m, mask))
            .unwrap()
            .theta;
        let theta = d.inverse(&gamma);
        let basis = constraint_null_space(&dense, mask);
        let expected = if basis.ncols() == 0 {
            DVector::zeros(m)
        } else {
            let xb = &x * &basis;
            let all: Vec<usize> = (0..xb.ncols()).collect();
            &basis * min_norm_least_squares(&xb, &y, &all).0
        };
        for (a, b) in theta.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}

#[test]
fn identity_map_reproduces_the_coordinatewise_chain() {
    let mut r = rng(32);
    let x = DesignMatrix::new(gaussian_matrix(&mut r, 20, 7)).unwrap();
    let y = gaussian_vector(&mut r, 20);
    let config = AggregationConfig {
        record_trace: true,
        ..AggregationConfig::mh(200, 800, 5)
    };
    let identity = LinearMapD::custom(DMatrix::identity(7, 7)).unwrap();
    let fused = fit_fused(&x, &y, 0.8, &identity, &config).unwrap();
    let coord = fit_coordinatewise(&x, &y, 0.8, &config).unwrap();
    assert_eq!(fused.chain().unwrap().trace, coord.chain().unwrap().trace);
    assert_eq!(fused.theta, coord.theta);
}

#[test]
fn fused_estimate_is_piecewise_constant_on_a_step() {
    let (n, m) = (60, 12);
    let mut r = rng(33);
    let x = DesignMatrix::new(gaussian_matrix(&mut r, n, m)).unwrap();
    let theta_star = DVector::from_fn(m, |j, _| if j < 6 { 2.0 } else { -1.0 });
    let y = x.apply(&theta_star) + 0.3 * gaussian_vector(&mut r, n);
    let d = make_first_difference(m).unwrap();
    let est = fit_fused(&x, &y, 0.3, &d, &AggregationConfig::exact()).unwrap();
    let jumps = d.forward(&est.theta);
    let biggest = (1..m)
        .max_by(|&a, &b| jumps[a].abs().total_cmp(&jumps[b].abs()))
        .unwrap();
    assert_eq!(biggest, 6);
    assert!((est.theta[0] - 2.0).abs() < 0.3 && (est.theta[m - 1] + 1.0).abs() < 0.3);
}

#[test]
fn group_weights_match_enumeration_and_concentrate() {
    let (n, k, size, sigma) = (30, 4, 3, 0.5);
    let m = k * size;
    let mut r = rng(34);
    let xm = gaussian_matrix(&mut r, n, m);
    let theta_star = DVector::from_fn(m, |j, _| if (3..6).contains(&j) { 1.5 } else { 0.0 });
    let y = &xm * &theta_star + sigma * gaussian_vector(&mut r, n);
    let groups = GroupStructure::contiguous(k, size).unwrap();

    let beta = 4.0 * sigma * sigma;
    let mut logits = Vec::new();
    let mut thetas = Vec::new();
    for mask in 0..1u64 << k {
        let cols: Vec<usize> = mask_indices(k, mask)
            .into_iter()
            .flat_map(|g| g * size..(g + 1) * size)
            .collect();
        let (risk, theta) = cp(&xm, &y, &cols, sigma);
        logits.push(-(n as f64) * risk / beta + sparsity_prior(k, mask.count_ones() as usize).ln());
        thetas.push(theta);
    }
    let (nu, reference) = weighted_average(&logits, &thetas);
    let mode = (0..nu.len())
        .max_by(|&a, &b| nu[a].total_cmp(&nu[b]))
        .unwrap();
    assert_eq!(mode, 0b0010);
    assert!(nu[mode] > 0.5);

    let x = DesignMatrix::new(xm).unwrap();
    let exact = fit_group(&x, &y, sigma, &groups, &AggregationConfig::exact()).unwrap();
    for (a, b) in exact.theta.iter().zip(reference.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    let chain = fit_group(&x, &y, sigma, &groups, &AggregationConfig::mh(500, 2000, 9)).unwrap();
    let diag = chain.chain().unwrap();
    assert_eq!(diag.final_pattern, SparsityPattern::from_mask(k, 0b0010));
    assert!(diag.pattern_size_trace.iter().all(|&s| s <= k));
}

#[test]
fn overlapping_groups_fit_the_union() {
    let mut r = rng(35);
    let xm = gaussian_matrix(&mut r, 15, 5);
    let y = gaussian_vector(&mut r, 15);
    let groups = GroupStructure::new(5, vec![vec![0, 1, 2], vec![2, 3], vec![4]]).unwrap();
    let x = DesignMatrix::new(xm.clone()).unwrap();
    let est = fit_group(&x, &y, 1.0, &groups, &AggregationConfig::exact()).unwrap();
    let mut logits = Vec::new();
    let mut thetas = Vec::new();
    for mask in 0..8u64 {
        let mut cols: Vec<usize> = mask_indices(3, mask)
            .into_iter()
            .flat_map(|g| groups.group(g).to_vec())
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let (risk, theta) = cp(&xm, &y, &cols, 1.0);
        logits.push(-15.0 * risk / 4.0 + sparsity_prior(3, mask.count_ones() as usize).ln());
        thetas.push(theta);
    }
    let (_, reference) = weighted_average(&logits, &thetas);
    for (a, b) in est.theta.iter().zip(reference.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
}

#[test]
fn relabeling_columns_permutes_the_estimate() {
    let (n, m) = (18, 6);
    let mut r = rng(36);
    let xm = gaussian_matrix(&mut r, n, m);
    let y = gaussian_vector(&mut r, n);
    let perm = [4usize, 0, 5, 2, 1, 3];
    let xp = xm.select_columns(&perm);
    let config = AggregationConfig::exact();

    let a = fit_coordinatewise(&DesignMatrix::new(xm.clone()).unwrap(), &y, 0.9, &config).unwrap();
    let b = fit_coordinatewise(&DesignMatrix::new(xp.clone()).unwrap(), &y, 0.9, &config).unwrap();
    for (k, &j) in perm.iter().enumerate() {
        assert_abs_diff_eq!(b.theta[k], a.theta[j], epsilon = 1e-10);
    }

    let g = GroupStructure::new(m, vec![vec![0, 1], vec![2, 3], vec![4, 5]]).unwrap();
    // Column perm[k] moves to position k; regroup accordingly.
    let inv: Vec<usize> = (0..m)
        .map(|j| perm.iter().position(|&p| p == j).unwrap())
        .collect();
    let gp = GroupStructure::new(
        m,
        vec![
            vec![inv[4], inv[5]],
            vec![inv[0], inv[1]],
            vec![inv[2], inv[3]],
        ],
    )
    .unwrap();
    let a = fit_group(&DesignMatrix::new(xm).unwrap(), &y, 0.9, &g, &config).unwrap();
    let b = fit_group(&DesignMatrix::new(xp).unwrap(), &y, 0.9, &gp, &config).unwrap();
    for (k, &j) in perm.iter().enumerate() {
        assert_abs_diff_eq!(b.theta[k], a.theta[j], epsilon = 1e-10);
    }
}

#[test]
fn singular_custom_map_is_rejected() {
    let mut d = DMatrix::identity(3, 3);
    d[(2, 2)] = 0.0;
    assert!(LinearMapD::custom(d).is_err());
}
