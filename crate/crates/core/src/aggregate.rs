//! Exponential weights over finite families and exact sparsity pattern
//! aggregation by enumeration.

use std::borrow::Cow;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::enumerate;
use crate::error::{Error, Result};
use crate::linalg::{self, kl_divergence, DesignMatrix, PatternFit};
use crate::mh::ChainDiagnostics;
use crate::pattern::{GroupStructure, SparsityPattern};
use crate::prior::PriorSpec;

/// Largest hypercube dimension accepted by exact enumeration.
pub const EXACT_LIMIT: usize = 25;

/// Regression data with known noise level.
#[derive(Clone, Debug)]
pub struct Problem {
    x: DesignMatrix,
    y: DVector<f64>,
    sigma: f64,
}

impl Problem {
    pub fn new(x: DesignMatrix, y: DVector<f64>, sigma: f64) -> Result<Self> {
        if y.len() != x.n() {
            return Err(Error::Dimension(format!(
                "response has length {}, design has {} rows",
                y.len(),
                x.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("response has non-finite entries".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Problem { x, y, sigma })
    }

    pub fn x(&self) -> &DesignMatrix {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn m(&self) -> usize {
        self.x.m()
    }

    /// Least squares on a column pattern, with its unbiased risk filled in.
    pub fn fit(&self, columns: &SparsityPattern) -> Result<PatternFit> {
        linalg::solve_pattern_ls(&self.x, &self.y, columns)?.with_unbiased_risk(self.sigma)
    }

    pub(crate) fn fit_columns(&self, cols: &[usize]) -> PatternFit {
        let mut fit = linalg::solve_unchecked(self.x.values(), &self.y, cols);
        fit.unbiased_risk = Some(linalg::cp_risk(
            fit.rss_mean,
            fit.rank,
            self.sigma,
            self.n(),
        ));
        fit
    }
}

/// The hypercube a chain or enumeration walks on.
#[derive(Clone, Debug)]
pub enum PatternSpace {
    /// `{0,1}^M` over design columns.
    Coordinates,
    /// `{0,1}^K` over group index sets, each expanded to the union of its groups.
    Groups(GroupStructure),
}

impl PatternSpace {
    pub fn dim(&self, m: usize) -> usize {
        match self {
            PatternSpace::Coordinates => m,
            PatternSpace::Groups(g) => g.num_groups(),
        }
    }

    /// Column pattern corresponding to a point of the space.
    pub fn columns<'a>(&self, p: &'a SparsityPattern) -> Result<Cow<'a, SparsityPattern>> {
        match self {
            PatternSpace::Coordinates => Ok(Cow::Borrowed(p)),
            PatternSpace::Groups(g) => g.expand(p).map(Cow::Owned),
        }
    }

    pub(crate) fn check(&self, m: usize) -> Result<()> {
        if let PatternSpace::Groups(g) = self {
            if g.num_columns() != m {
                return Err(Error::Dimension(format!(
                    "groups are defined over {} columns, design has {m}",
                    g.num_columns()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Mh,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregationConfig {
    /// Temperature; `None` means `4σ²`.
    pub beta: Option<f64>,
    pub mode: Mode,
    /// Burn-in iterations.
    pub t0: usize,
    /// Averaging iterations.
    pub t: usize,
    pub seed: u64,
    pub cache_capacity: usize,
    /// Keep the full per-pattern weight table in exact mode.
    pub keep_table: bool,
    /// Record per-iteration `(|p|, accepted, risk)` rows in MH mode.
    pub record_trace: bool,
    /// MH start state; `None` starts from the empty pattern.
    #[serde(skip)]
    pub warm_start: Option<SparsityPattern>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            beta: None,
            mode: Mode::Mh,
            t0: 3000,
            t: 7000,
            seed: 0,
            cache_capacity: 4096,
            keep_table: false,
            record_trace: false,
            warm_start: None,
        }
    }
}

impl AggregationConfig {
    pub fn exact() -> Self {
        AggregationConfig {
            mode: Mode::Exact,
            ..Default::default()
        }
    }

    pub fn mh(t0: usize, t: usize, seed: u64) -> Self {
        AggregationConfig {
            t0,
            t,
            seed,
            ..Default::default()
        }
    }

    /// Temperature in effect for noise level `sigma`.
    pub fn beta_for(&self, sigma: f64) -> f64 {
        self.beta.unwrap_or(4.0 * sigma * sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Input(format!("beta must be positive, got {b}")));
            }
        }
        if self.mode == Mode::Mh {
            if self.t == 0 {
                return Err(Error::Input("T must be at least 1".into()));
            }
            if self.cache_capacity == 0 {
                return Err(Error::Input("cache capacity must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// One row of an exact weight table.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub pattern: SparsityPattern,
    pub unbiased_risk: f64,
    pub log_prior: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightTable {
    pub rows: Vec<WeightRow>,
}

impl WeightTable {
    /// CSV with columns `pattern,unbiased_risk,log_prior,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pattern", "unbiased_risk", "log_prior", "weight"])?;
        for r in &self.rows {
            w.write_record([
                r.pattern.to_bitstring(),
                format!("{:e}", r.unbiased_risk),
                format!("{:e}", r.log_prior),
                format!("{:e}", r.weight),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSummary {
    pub patterns: u64,
    /// `log Σ_p exp(−n R̃_p/β) π_p`.
    pub log_normalizer: f64,
    pub table: Option<WeightTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostics {
    Exact(ExactSummary),
    Mh(ChainDiagnostics),
}

/// Aggregated coefficient vector with run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaEstimate {
    pub theta: DVector<f64>,
    pub mode: Mode,
    pub beta: f64,
    pub diagnostics: Diagnostics,
    pub config: AggregationConfig,
}

impl SpaEstimate {
    pub fn predict(&self, x: &DesignMatrix) -> DVector<f64> {
        x.apply(&self.theta)
    }

    pub fn chain(&self) -> Option<&ChainDiagnostics> {
        match &self.diagnostics {
            Diagnostics::Mh(d) => Some(d),
            Diagnostics::Exact(_) => None,
        }
    }

    pub fn exact(&self) -> Option<&ExactSummary> {
        match &self.diagnostics {
            Diagnostics::Exact(s) => Some(s),
            Diagnostics::Mh(_) => None,
        }
    }
}

/// Log of the unnormalized exponential weight `exp(−n·risk/β)·π`.
pub fn log_weight(risk: f64, log_prior: f64, beta: f64, n: usize) -> f64 {
    if log_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    -(n as f64) * risk / beta + log_prior
}

/// Normalized exponential weights `∝ exp(−n·risk_j/β + log π_j)`.
///
/// Uses a single max shift so that very large `n·risk` values do not
/// overflow. Exact zeros arise only from `log π_j = −∞`.
pub fn exp_weights(risks: &[f64], log_priors: &[f64], beta: f64, n: usize) -> Result<Vec<f64>> {
    if risks.len() != log_priors.len() || risks.is_empty() {
        return Err(Error::Dimension(format!(
            "need equal non-empty risk and prior vectors, got {} and {}",
            risks.len(),
            log_priors.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::Input(format!("beta must be positive, got {beta}")));
    }
    if risks.iter().any(|r| r.is_nan())
        || log_priors.iter().any(|l| l.is_nan() || *l == f64::INFINITY)
    {
        return Err(Error::Input(
            "risks and log-priors must not be NaN or +inf".into(),
        ));
    }
    let logits: Vec<f64> = risks
        .iter()
        .zip(log_priors)
        .map(|(&r, &lp)| log_weight(r, lp, beta, n))
        .collect();
    softmax(&logits)
}

pub(crate) fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegeneratePrior);
    }
    let mut w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// `Σ λ_j risk_j + (β/n) K(λ, π)`, minimized over the simplex by the
/// exponential weights.
pub fn penalized_objective(
    lambda: &[f64],
    risks: &[f64],
    pi: &[f64],
    beta: f64,
    n: usize,
) -> Result<f64> {
    if risks.len() != lambda.len() {
        return Err(Error::Dimension("risks and lambda differ in length".into()));
    }
    let kl = kl_divergence(lambda, pi)?;
    let linear: f64 = lambda.iter().zip(risks).map(|(l, r)| l * r).sum();
    Ok(linear + beta / n as f64 * kl)
}

/// Index of the smallest risk; ties go to the lowest index.
pub fn erm_select(risks: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &r) in risks.iter().enumerate() {
        if r.is_nan() {
            return Err(Error::Input(format!("risk {j} is NaN")));
        }
        if best.is_none_or(|(_, b)| r < b) {
            best = Some((j, r));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::Input("cannot select from an empty family".into()))
}

/// Exponentially weighted aggregate of fixed functions (the columns of `f`).
///
/// The risk of a deterministic function is `R̂_n(f_j) − σ²`; the shift
/// cancels in the weights.
pub fn dict_aggregate(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: f64,
    beta: f64,
    log_priors: &[f64],
) -> Result<(Vec<f64>, DVector<f64>)> {
    if f.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows, response has {}",
            f.nrows(),
            y.len()
        )));
    }
    if f.ncols() != log_priors.len() {
        return Err(Error::Dimension(format!(
            "dictionary has {} functions, prior has {}",
            f.ncols(),
            log_priors.len()
        )));
    }
    let n = y.len();
    let s2 = sigma * sigma;
    let risks = f
        .column_iter()
        .map(|c| Ok(linalg::empirical_risk(&c.into_owned(), y)? - s2))
        .collect::<Result<Vec<f64>>>()?;
    let weights = exp_weights(&risks, log_priors, beta, n)?;
    let mut agg = DVector::zeros(n);
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            agg.axpy(w, &f.column(j), 1.0);
        }
    }
    Ok((weights, agg))
}

/// Exact sparsity pattern aggregate: fits every pattern of the space and
/// averages the fits under the exponential weights.
pub fn aggregate_exact(
    problem: &Problem,
    prior: &PriorSpec,
    space: &PatternSpace,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    config.validate()?;
    space.check(problem.m())?;
    let dim = space.dim(problem.m());
    if dim > EXACT_LIMIT {
        return Err(Error::ExactGuard {
            dim,
            limit: EXACT_LIMIT,
        });
    }
    let beta = config.beta_for(problem.sigma());
    let outcome = match space {
        PatternSpace::Coordinates => {
            enumerate::coordinates(problem, prior, beta, config.keep_table)
        }
        PatternSpace::Groups(g) => enumerate::groups(problem, g, prior, beta, config.keep_table),
    }?;
    Ok(SpaEstimate {
        theta: outcome.theta,
        mode: Mode::Exact,
        beta,
        diagnostics: Diagnostics::Exact(ExactSummary {
            patterns: outcome.patterns,
            log_normalizer: outcome.log_normalizer,
            table: outcome.table,
        }),
        config: config.clone(),
    })
}
