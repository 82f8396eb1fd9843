//! Exhaustive enumeration of pattern spaces for exact aggregation.
//!
//! The coordinate hypercube is walked depth-first in lexicographic order so
//! that each pattern extends its parent by one column. The Cholesky factor
//! of the parent's Gram matrix is grown by one row, giving the residual sum
//! of squares and coefficients in `O(k²)` per pattern. A column whose
//! component orthogonal to the current span is below [`DEPENDENCE_TOLERANCE`]
//! sends its whole subtree through the pivoted-QR solver instead, so rank
//! and min-norm coefficients always come from the same routine as
//! [`crate::linalg::solve_pattern_ls`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::aggregate::{log_weight, Problem, WeightRow, WeightTable};
use crate::error::{Error, Result};
use crate::linalg::cp_risk;
use crate::pattern::{GroupStructure, SparsityPattern};
use crate::prior::{ln_sparsity_prior, PriorSpec};

/// Relative squared norm of the orthogonal component of a new column under
/// which the incremental factorization hands over to pivoted QR.
const DEPENDENCE_TOLERANCE: f64 = 1e-8;

pub(crate) struct Outcome {
    pub theta: DVector<f64>,
    pub patterns: u64,
    pub log_normalizer: f64,
    pub table: Option<WeightTable>,
}

struct RawRow {
    mask: u64,
    risk: f64,
    log_prior: f64,
    log_weight: f64,
}

/// Streaming `Σ exp(lw_p) θ_p` with a running max shift.
struct Accumulator {
    max: f64,
    sum: f64,
    theta: Vec<f64>,
    patterns: u64,
    rows: Option<Vec<RawRow>>,
}

impl Accumulator {
    fn new(m: usize, keep_rows: bool) -> Self {
        Accumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            theta: vec![0.0; m],
            patterns: 0,
            rows: keep_rows.then(Vec::new),
        }
    }

    fn rescale(&mut self, new_max: f64) {
        let s = (self.max - new_max).exp();
        self.sum *= s;
        for t in &mut self.theta {
            *t *= s;
        }
        self.max = new_max;
    }

    /// Adds a pattern whose coefficients are `coef` on columns `cols`.
    fn push(
        &mut self,
        mask: u64,
        risk: f64,
        log_prior: f64,
        lw: f64,
        cols: &[usize],
        coef: &[f64],
    ) {
        self.patterns += 1;
        if let Some(rows) = &mut self.rows {
            rows.push(RawRow {
                mask,
                risk,
                log_prior,
                log_weight: lw,
            });
        }
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.max {
            self.rescale(lw);
        }
        let w = (lw - self.max).exp();
        self.sum += w;
        for (&c, &v) in cols.iter().zip(coef) {
            self.theta[c] += w * v;
        }
    }

    fn merge(&mut self, mut other: Accumulator) {
        self.patterns += other.patterns;
        if let (Some(a), Some(b)) = (&mut self.rows, other.rows.take()) {
            a.extend(b);
        }
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.rescale(other.max);
        }
        let s = (other.max - self.max).exp();
        self.sum += s * other.sum;
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += s * b;
        }
    }

    fn finish(self, len: usize) -> Result<Outcome> {
        if self.max == f64::NEG_INFINITY {
            return Err(Error::DegeneratePrior);
        }
        let log_normalizer = self.max + self.sum.ln();
        let theta =
            DVector::from_iterator(self.theta.len(), self.theta.iter().map(|t| t / self.sum));
        let table = self.rows.map(|mut rows| {
            rows.sort_by_key(|r| r.mask);
            WeightTable {
                rows: rows
                    .into_iter()
                    .map(|r| WeightRow {
                        pattern: SparsityPattern::from_mask(len, r.mask),
                        unbiased_risk: r.risk,
                        log_prior: r.log_prior,
                        weight: (r.log_weight - log_normalizer).exp(),
                    })
                    .collect(),
            }
        });
        Ok(Outcome {
            theta,
            patterns: self.patterns,
            log_normalizer,
            table,
        })
    }
}

struct CoordinateWalk<'a> {
    problem: &'a Problem,
    prior: &'a PriorSpec,
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    yty: f64,
    beta: f64,
    m: usize,
    /// Packed lower-triangular Cholesky factor, row `i` at `i(i+1)/2`.
    chol: Vec<f64>,
    z: Vec<f64>,
    cols: Vec<usize>,
    row: Vec<f64>,
    coef: Vec<f64>,
}

impl<'a> CoordinateWalk<'a> {
    fn new(problem: &'a Problem, prior: &'a PriorSpec, beta: f64) -> Self {
        let x = problem.x().values();
        let m = x.ncols();
        CoordinateWalk {
            problem,
            prior,
            gram: x.transpose() * x,
            xty: (x.transpose() * problem.y()).as_slice().to_vec(),
            yty: problem.y().norm_squared(),
            beta,
            m,
            chol: vec![0.0; m * (m + 1) / 2],
            z: vec![0.0; m],
            cols: vec![0; m],
            row: vec![0.0; m],
            coef: vec![0.0; m],
        }
    }

    fn log_prior(&self, mask: u64, size: usize) -> f64 {
        if self.prior.size_only() {
            ln_sparsity_prior(self.m, size)
        } else {
            self.prior
                .log_mass(&SparsityPattern::from_mask(self.m, mask))
        }
    }

    fn record(
        &self,
        acc: &mut Accumulator,
        mask: u64,
        size: usize,
        rss_mean: f64,
        rank: usize,
        cols: &[usize],
        coef: &[f64],
    ) {
        let n = self.problem.n();
        let risk = cp_risk(rss_mean, rank, self.problem.sigma(), n);
        let lp = self.log_prior(mask, size);
        let lw = log_weight(risk, lp, self.beta, n);
        acc.push(mask, risk, lp, lw, cols, coef);
    }

    fn empty(&self, acc: &mut Accumulator) {
        let rss = self.yty / self.problem.n() as f64;
        self.record(acc, 0, 0, rss, 0, &[], &[]);
    }

    /// Visits every pattern whose smallest active column is `first`.
    fn branch(&mut self, first: usize, acc: &mut Accumulator) {
        self.extend(first, 0, 0.0, 0, acc);
    }

    /// Adds column `j` to the current `k`-column factorization and recurses.
    fn extend(&mut self, j: usize, k: usize, zz: f64, mask: u64, acc: &mut Accumulator) {
        let base = |i: usize| i * (i + 1) / 2;
        // Solve L l = G[cols, j].
        for i in 0..k {
            let mut s = self.gram[(self.cols[i], j)];
            let ri = base(i);
            for t in 0..i {
                s -= self.chol[ri + t] * self.row[t];
            }
            self.row[i] = s / self.chol[ri + i];
        }
        let gjj = self.gram[(j, j)];
        let ll: f64 = self.row[..k].iter().map(|v| v * v).sum();
        let d = gjj - ll;
        let new_mask = mask | (1u64 << j);
        if !(d > DEPENDENCE_TOLERANCE * gjj) {
            self.qr_subtree(new_mask, j + 1, acc);
            return;
        }
        let r = d.sqrt();
        let lz: f64 = self.row[..k]
            .iter()
            .zip(&self.z[..k])
            .map(|(a, b)| a * b)
            .sum();
        let zj = (self.xty[j] - lz) / r;
        let rk = base(k);
        self.chol[rk..rk + k].copy_from_slice(&self.row[..k]);
        self.chol[rk + k] = r;
        self.z[k] = zj;
        self.cols[k] = j;
        let size = k + 1;
        let zz = zz + zj * zj;
        let n = self.problem.n() as f64;
        let rss_mean = (self.yty - zz).max(0.0) / n;

        // Back-substitute Lᵀ θ = z.
        for i in (0..size).rev() {
            let mut s = self.z[i];
            for t in i + 1..size {
                s -= self.chol[base(t) + i] * self.coef[t];
            }
            self.coef[i] = s / self.chol[base(i) + i];
        }
        self.record(
            acc,
            new_mask,
            size,
            rss_mean,
            size,
            &self.cols[..size],
            &self.coef[..size],
        );

        for next in j + 1..self.m {
            self.extend(next, size, zz, new_mask, acc);
        }
    }

    /// All patterns `base ∪ T` with `T ⊆ {from..M}`, solved by pivoted QR.
    fn qr_subtree(&self, base: u64, from: usize, acc: &mut Accumulator) {
        let free = self.m - from;
        for t in 0..1u64 << free {
            let mask = base | (t << from);
            let cols: Vec<usize> = (0..self.m).filter(|&c| mask >> c & 1 == 1).collect();
            let fit = self.problem.fit_columns(&cols);
            let coef: Vec<f64> = cols.iter().map(|&c| fit.theta[c]).collect();
            self.record(acc, mask, cols.len(), fit.rss_mean, fit.rank, &cols, &coef);
        }
    }
}

pub(crate) fn coordinates(
    problem: &Problem,
    prior: &PriorSpec,
    beta: f64,
    keep_table: bool,
) -> Result<Outcome> {
    let m = problem.m();
    let mut acc = Accumulator::new(m, keep_table);
    CoordinateWalk::new(problem, prior, beta).empty(&mut acc);
    let branches: Vec<Accumulator> = (0..m)
        .into_par_iter()
        .map(|first| {
            let mut walk = CoordinateWalk::new(problem, prior, beta);
            let mut a = Accumulator::new(m, keep_table);
            walk.branch(first, &mut a);
            a
        })
        .collect();
    for b in branches {
        acc.merge(b);
    }
    acc.finish(m)
}

pub(crate) fn groups(
    problem: &Problem,
    groups: &GroupStructure,
    prior: &PriorSpec,
    beta: f64,
    keep_table: bool,
) -> Result<Outcome> {
    let k = groups.num_groups();
    let m = problem.m();
    let n = problem.n();
    let chunks: Vec<Accumulator> = (0..1u64 << k)
        .collect::<Vec<_>>()
        .par_chunks(1024)
        .map(|masks| {
            let mut a = Accumulator::new(m, keep_table);
            for &mask in masks {
                let j = SparsityPattern::from_mask(k, mask);
                let cols = groups
                    .expand(&j)
                    .expect("index set length is K")
                    .active_indices();
                let fit = problem.fit_columns(&cols);
                let risk = cp_risk(fit.rss_mean, fit.rank, problem.sigma(), n);
                let lp = prior.log_mass(&j);
                let lw = log_weight(risk, lp, beta, n);
                let coef: Vec<f64> = cols.iter().map(|&c| fit.theta[c]).collect();
                a.push(mask, risk, lp, lw, &cols, &coef);
            }
            a
        })
        .collect();
    let mut acc = Accumulator::new(m, keep_table);
    for c in chunks {
        acc.merge(c);
    }
    acc.finish(k)
}
