//! Pattern-restricted least squares, empirical and unbiased risks.
//!
//! All risks use the mean-square convention `‖v‖² = (1/n) Σ v_i²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::pattern::SparsityPattern;

/// Relative threshold on the pivots of the column-pivoted QR factorization
/// below which a direction is treated as numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Fixed `n × M` design matrix; column `j` holds `f_j(x_1..x_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Input(format!(
                "design matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design matrix has non-finite entries".into()));
        }
        Ok(DesignMatrix { values })
    }

    pub fn from_row_slice(n: usize, m: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * m {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n}x{m} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, m, data))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `Xθ`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.values * theta
    }
}

/// Least-squares fit restricted to a sparsity pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternFit {
    /// Coefficients, zero outside the pattern.
    pub theta: DVector<f64>,
    /// `Xθ`.
    pub fitted: DVector<f64>,
    /// Numerical rank of the active-column submatrix, `Tr[A_p]`.
    pub rank: usize,
    /// `‖Y − Xθ‖²` with the `1/n` convention.
    pub rss_mean: f64,
    /// Mallows-Cp estimate; unset until a noise level is supplied.
    pub unbiased_risk: Option<f64>,
}

impl PatternFit {
    pub fn with_unbiased_risk(mut self, sigma: f64) -> Result<Self> {
        self.unbiased_risk = Some(unbiased_risk(&self, sigma)?);
        Ok(self)
    }
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} has non-finite entries")))
    }
}

/// Minimum-norm least squares on the columns selected by `pattern`.
///
/// The active submatrix is factorized with Householder QR and column
/// pivoting. Its numerical rank is the number of pivots exceeding
/// [`RANK_TOLERANCE`] times the largest one. Rank-deficient systems are
/// completed with a second orthogonal factorization so the returned
/// coefficient vector has minimal Euclidean norm.
pub fn solve_pattern_ls(
    x: &DesignMatrix,
    y: &DVector<f64>,
    pattern: &SparsityPattern,
) -> Result<PatternFit> {
    let (n, m) = (x.n(), x.m());
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "response has length {}, design has {n} rows",
            y.len()
        )));
    }
    if pattern.len() != m {
        return Err(Error::Dimension(format!(
            "pattern has length {}, design has {m} columns",
            pattern.len()
        )));
    }
    check_finite(y, "response")?;
    Ok(solve_unchecked(x.values(), y, &pattern.active_indices()))
}

pub(crate) fn solve_unchecked(x: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> PatternFit {
    let n = x.nrows();
    let m = x.ncols();
    let mut theta = DVector::zeros(m);
    if cols.is_empty() {
        return PatternFit {
            theta,
            fitted: DVector::zeros(n),
            rank: 0,
            rss_mean: y.norm_squared() / n as f64,
            unbiased_risk: None,
        };
    }
    let qr = PivotedQr::factor(x, cols);
    let coef = qr.min_norm_solve(y);
    for (pos, &c) in qr.perm.iter().enumerate() {
        theta[cols[c]] = coef[pos];
    }
    let mut fitted = DVector::zeros(n);
    for &c in cols {
        let t = theta[c];
        if t != 0.0 {
            fitted.axpy(t, &x.column(c), 1.0);
        }
    }
    let rss_mean = (y - &fitted).norm_squared() / n as f64;
    PatternFit {
        theta,
        fitted,
        rank: qr.rank,
        rss_mean,
        unbiased_risk: None,
    }
}

/// Householder QR with column pivoting of an `n × k` column selection.
struct PivotedQr {
    /// Column-major `n × k`; `R` in the upper triangle, reflectors below.
    a: Vec<f64>,
    /// Householder scalars, one per reflector.
    tau: Vec<f64>,
    rows: usize,
    cols: usize,
    /// `perm[i]` = position in the original selection of factored column `i`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    fn factor(x: &DMatrix<f64>, sel: &[usize]) -> Self {
        let rows = x.nrows();
        let cols = sel.len();
        let mut a = Vec::with_capacity(rows * cols);
        for &c in sel {
            a.extend_from_slice(x.column(c).as_slice());
        }
        let mut perm: Vec<usize> = (0..cols).collect();
        let steps = rows.min(cols);
        let mut tau = Vec::with_capacity(steps);
        let mut first_pivot = 0.0;
        let mut rank = 0;
        for j in 0..steps {
            // Pivot on the largest remaining column norm, recomputed exactly.
            let (mut best, mut best_norm) = (j, -1.0);
            for c in j..cols {
                let col = &a[c * rows + j..(c + 1) * rows];
                let s: f64 = col.iter().map(|v| v * v).sum();
                if s > best_norm {
                    best = c;
                    best_norm = s;
                }
            }
            let pivot = best_norm.sqrt();
            if j == 0 {
                first_pivot = pivot;
            }
            if pivot <= RANK_TOLERANCE * first_pivot || pivot == 0.0 {
                break;
            }
            if best != j {
                for i in 0..rows {
                    a.swap(j * rows + i, best * rows + i);
                }
                perm.swap(j, best);
            }
            let t = householder_in_place(&mut a[j * rows + j..(j + 1) * rows]);
            for c in j + 1..cols {
                let (head, tail) = a.split_at_mut(c * rows);
                let v = &head[j * rows + j..(j + 1) * rows];
                apply_reflector(v, t, &mut tail[j..rows]);
            }
            tau.push(t);
            rank += 1;
        }
        PivotedQr {
            a,
            tau,
            rows,
            cols,
            perm,
            rank,
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.rows + i]
    }

    /// Minimum-norm solution in factored column order.
    fn min_norm_solve(&self, y: &DVector<f64>) -> Vec<f64> {
        let (rows, r) = (self.rows, self.rank);
        let mut qty = y.as_slice().to_vec();
        for j in 0..r {
            let v = &self.a[j * rows + j..(j + 1) * rows];
            apply_reflector(v, self.tau[j], &mut qty[j..]);
        }
        let c = &qty[..r];
        let k = self.cols;
        if r == k {
            let mut z = vec![0.0; k];
            for i in (0..k).rev() {
                let mut s = c[i];
                for j in i + 1..k {
                    s -= self.r(i, j) * z[j];
                }
                z[i] = s / self.r(i, i);
            }
            return z;
        }
        // Rank deficient: W = R[0..r, 0..k]. Factor Wᵀ = Z L (Householder,
        // no pivoting) so that the min-norm solution of W u = c is
        // u = Z (Lᵀ)⁻¹ c.
        let mut wt = vec![0.0; k * r]; // column-major k × r
        for i in 0..r {
            for j in i..k {
                wt[i * k + j] = self.r(i, j);
            }
        }
        let mut ztau = Vec::with_capacity(r);
        for j in 0..r {
            let t = householder_in_place(&mut wt[j * k + j..(j + 1) * k]);
            for c2 in j + 1..r {
                let (head, tail) = wt.split_at_mut(c2 * k);
                let v = &head[j * k + j..(j + 1) * k];
                apply_reflector(v, t, &mut tail[j..k]);
            }
            ztau.push(t);
        }
        // Lᵀ w = c, Lᵀ lower triangular with (Lᵀ)[i][j] = L[j][i] = wt[i*k + j].
        let mut w = vec![0.0; k];
        for i in 0..r {
            let mut s = c[i];
            for j in 0..i {
                s -= wt[i * k + j] * w[j];
            }
            w[i] = s / wt[i * k + i];
        }
        for j in (0..r).rev() {
            let v = &wt[j * k + j..(j + 1) * k];
            apply_reflector(v, ztau[j], &mut w[j..]);
        }
        w
    }
}

/// Turns `x` into a Householder vector `v` (with `v[0] = 1` implicit and
/// `x[0]` overwritten by the resulting diagonal entry). Returns `tau` such
/// that `(I − tau v vᵀ) x = alpha e_1`.
fn householder_in_place(x: &mut [f64]) -> f64 {
    let tail: f64 = x[1..].iter().map(|v| v * v).sum();
    if tail == 0.0 {
        return 0.0;
    }
    let x0 = x[0];
    let norm = (x0 * x0 + tail).sqrt();
    let alpha = if x0 >= 0.0 { -norm } else { norm };
    let v0 = x0 - alpha;
    for v in x[1..].iter_mut() {
        *v /= v0;
    }
    x[0] = alpha;
    (alpha - x0) / alpha
}

/// `y ← (I − tau v vᵀ) y`, where `v[0] = 1` and `v[1..]` are stored in `v`.
fn apply_reflector(v: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let mut dot = y[0];
    for i in 1..y.len() {
        dot += v[i] * y[i];
    }
    let s = tau * dot;
    y[0] -= s;
    for i in 1..y.len() {
        y[i] -= s * v[i];
    }
}

/// `R̂_n(f) = (1/n) Σ (Y_i − f_i)²`.
pub fn empirical_risk(f: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if f.len() != y.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "empirical risk needs equal non-empty lengths, got {} and {}",
            f.len(),
            y.len()
        )));
    }
    Ok((y - f).norm_squared() / y.len() as f64)
}

/// Mallows-Cp risk of a projection estimator: `rss_mean + 2σ²d/n − σ²`.
pub fn cp_risk(rss_mean: f64, rank: usize, sigma: f64, n: usize) -> f64 {
    let s2 = sigma * sigma;
    rss_mean + 2.0 * s2 * rank as f64 / n as f64 - s2
}

/// Unbiased risk estimate of a pattern fit at noise level `sigma`.
pub fn unbiased_risk(fit: &PatternFit, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
    }
    Ok(cp_risk(fit.rss_mean, fit.rank, sigma, fit.fitted.len()))
}

fn check_probability(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Input(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Kullback–Leibler divergence `Σ λ_j log(λ_j/π_j)` with `0 log 0 = 0`,
/// `0 log(0/0) = 0` and `log(a/0) = ∞`.
pub fn kl_divergence(lambda: &[f64], pi: &[f64]) -> Result<f64> {
    if lambda.len() != pi.len() || lambda.is_empty() {
        return Err(Error::Dimension(format!(
            "KL divergence needs equal non-empty lengths, got {} and {}",
            lambda.len(),
            pi.len()
        )));
    }
    check_probability(lambda, "lambda")?;
    check_probability(pi, "pi")?;
    let mut kl = 0.0;
    for (&l, &p) in lambda.iter().zip(pi) {
        if l == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += l * (l / p).ln();
    }
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pat(s: &str) -> SparsityPattern {
        SparsityPattern::parse_bitstring(s).unwrap()
    }

    #[test]
    fn identity_projection() {
        let x = DesignMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_vec(vec![3.0, 4.0]);
        let fit = solve_pattern_ls(&x, &y, &pat("10")).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 3.0, epsilon = 1e-14);
        assert_eq!(fit.theta[1], 0.0);
        assert_eq!(fit.rank, 1);
        assert_abs_diff_eq!(fit.rss_mean, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_pattern() {
        let x = DesignMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let fit = solve_pattern_ls(&x, &y, &pat("00")).unwrap();
        assert!(fit.theta.iter().all(|&t| t == 0.0));
        assert_eq!(fit.rank, 0);
        assert_abs_diff_eq!(fit.rss_mean, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn duplicated_columns_split_equally() {
        // Two copies of c = (1, 2, 2). Rank-1 projection oracle:
        // fitted = c (cᵀy)/(cᵀc); min-norm splits the coefficient in half.
        let x = DesignMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0, 3.0]);
        let fit = solve_pattern_ls(&x, &y, &pat("11")).unwrap();
        let full = 7.0 / 9.0;
        assert_eq!(fit.rank, 1);
        assert_abs_diff_eq!(fit.theta[0], full / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.theta[1], full / 2.0, epsilon = 1e-12);
        let expected = [full, 2.0 * full, 2.0 * full];
        for i in 0..3 {
            assert_abs_diff_eq!(fit.fitted[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn wide_pattern_interpolates() {
        let x = DesignMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let y = DVector::from_vec(vec![2.0, -1.0]);
        let fit = solve_pattern_ls(&x, &y, &pat("111")).unwrap();
        assert_eq!(fit.rank, 2);
        assert!(fit.rss_mean < 1e-24);
        // min-norm solution = Xᵀ(XXᵀ)⁻¹y
        let xm = x.values();
        let expected = xm.transpose() * (xm * xm.transpose()).try_inverse().unwrap() * &y;
        assert_abs_diff_eq!(fit.theta, expected, epsilon = 1e-12);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let x = DesignMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            solve_pattern_ls(&x, &y, &pat("100")),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            solve_pattern_ls(&x, &DVector::from_vec(vec![1.0]), &pat("10")),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            solve_pattern_ls(&x, &DVector::from_vec(vec![1.0, f64::NAN]), &pat("10")),
            Err(Error::Input(_))
        ));
        assert!(DesignMatrix::new(DMatrix::from_element(1, 1, f64::INFINITY)).is_err());
        assert!(DesignMatrix::new(DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn empirical_risk_examples() {
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(empirical_risk(&y, &y).unwrap(), 0.0);
        let ones = DVector::from_element(4, 1.0);
        assert_eq!(empirical_risk(&DVector::zeros(4), &ones).unwrap(), 1.0);
        let f = DVector::from_vec(vec![1.0, 0.0]);
        let y2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(empirical_risk(&f, &y2).unwrap(), 1.0);
        assert!(empirical_risk(&f, &y).is_err());
    }

    #[test]
    fn unbiased_risk_examples() {
        let n = 4;
        let sigma = 1.5;
        let s2 = sigma * sigma;
        let empty = PatternFit {
            theta: DVector::zeros(2),
            fitted: DVector::zeros(n),
            rank: 0,
            rss_mean: 2.0,
            unbiased_risk: None,
        };
        assert_abs_diff_eq!(
            unbiased_risk(&empty, sigma).unwrap(),
            2.0 - s2,
            epsilon = 1e-15
        );
        let saturated = PatternFit {
            rank: n,
            rss_mean: 0.0,
            ..empty.clone()
        };
        assert_abs_diff_eq!(
            unbiased_risk(&saturated, sigma).unwrap(),
            s2,
            epsilon = 1e-15
        );
        let interp = PatternFit {
            rank: 3,
            rss_mean: 0.0,
            ..empty.clone()
        };
        assert_abs_diff_eq!(
            unbiased_risk(&interp, sigma).unwrap(),
            2.0 * s2 * 3.0 / 4.0 - s2,
            epsilon = 1e-15
        );
        assert!(unbiased_risk(&empty, 0.0).is_err());
        assert!(unbiased_risk(&empty, -1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(kl_divergence(&[1.1, -0.1], &[0.5, 0.5]).is_err());
        assert!(kl_divergence(&[0.6, 0.6], &[0.5, 0.5]).is_err());
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }
}
