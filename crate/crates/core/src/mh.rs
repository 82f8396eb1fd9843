//! Metropolis–Hastings chain on a pattern hypercube and the averaged
//! estimator `θ̃ = (1/T) Σ_{t=T0+1}^{T0+T} θ̂_{P_t}`.
//!
//! Proposals flip one uniformly chosen coordinate, so every vertex has the
//! same number of neighbors and the proposal kernel is symmetric. The
//! acceptance probability reduces to the Gibbs measure ratio and is
//! evaluated in log space.

use std::collections::HashSet;
use std::io::Write;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{AggregationConfig, Diagnostics, Mode, PatternSpace, Problem, SpaEstimate};
use crate::error::{Error, Result};
use crate::linalg::PatternFit;
use crate::pattern::SparsityPattern;
use crate::prior::PriorSpec;

/// RNG stream reserved for MH chains within a seed.
pub const CHAIN_STREAM: u64 = 2;

/// Seeded chain generator: ChaCha8 keyed by `seed`, on stream `stream`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Current vertex of the chain with its cached fit.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub pattern: SparsityPattern,
    pub fit: Arc<PatternFit>,
    pub unbiased_risk: f64,
    pub log_prior: f64,
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub size: usize,
    pub accepted: bool,
    pub unbiased_risk: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub iterations: u64,
    pub unique_patterns_visited: usize,
    /// `|P_t|` for `t = 1..T0+T`.
    pub pattern_size_trace: Vec<usize>,
    pub final_pattern: SparsityPattern,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Full per-iteration trace when requested.
    pub trace: Option<Vec<TraceRow>>,
}

impl ChainDiagnostics {
    /// CSV with columns `iteration,size,accepted,unbiased_risk`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::Input("chain was run without trace recording".into()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "size", "accepted", "unbiased_risk"])?;
        for r in rows {
            w.write_record([
                r.iteration.to_string(),
                r.size.to_string(),
                u8::from(r.accepted).to_string(),
                format!("{:e}", r.unbiased_risk),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `log r(p, q) = min(0, −n(R̃_q − R̃_p)/β + log π_q − log π_p)`.
pub fn log_acceptance(
    risk_from: f64,
    log_prior_from: f64,
    risk_to: f64,
    log_prior_to: f64,
    beta: f64,
    n: usize,
) -> f64 {
    if log_prior_to == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if log_prior_from == f64::NEG_INFINITY {
        return 0.0;
    }
    let delta = -(n as f64) * (risk_to - risk_from) / beta + (log_prior_to - log_prior_from);
    delta.min(0.0)
}

/// Transition machinery shared by all steps of one chain: the problem, the
/// space, the prior and a bounded LRU cache of pattern fits.
pub struct Sampler<'a> {
    problem: &'a Problem,
    space: &'a PatternSpace,
    prior: &'a PriorSpec,
    beta: f64,
    cache: LruCache<SparsityPattern, Arc<PatternFit>>,
    hits: u64,
    misses: u64,
}

impl<'a> Sampler<'a> {
    pub fn new(
        problem: &'a Problem,
        space: &'a PatternSpace,
        prior: &'a PriorSpec,
        beta: f64,
        cache_capacity: usize,
    ) -> Result<Self> {
        space.check(problem.m())?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Input(format!("beta must be positive, got {beta}")));
        }
        let cap = NonZeroUsize::new(cache_capacity)
            .ok_or_else(|| Error::Input("cache capacity must be at least 1".into()))?;
        Ok(Sampler {
            problem,
            space,
            prior,
            beta,
            cache: LruCache::new(cap),
            hits: 0,
            misses: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim(self.problem.m())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Fit for a vertex of the space, from the cache when available.
    pub fn fit(&mut self, p: &SparsityPattern) -> Result<Arc<PatternFit>> {
        if let Some(f) = self.cache.get(p) {
            self.hits += 1;
            return Ok(Arc::clone(f));
        }
        self.misses += 1;
        let cols = self.space.columns(p)?;
        if cols.len() != self.problem.m() {
            return Err(Error::Dimension(format!(
                "pattern has length {}, design has {} columns",
                cols.len(),
                self.problem.m()
            )));
        }
        let fit = Arc::new(self.problem.fit_columns(&cols.active_indices()));
        self.cache.put(p.clone(), Arc::clone(&fit));
        Ok(fit)
    }

    pub fn state(&mut self, pattern: SparsityPattern, iteration: u64) -> Result<ChainState> {
        if pattern.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "start pattern has length {}, space has dimension {}",
                pattern.len(),
                self.dim()
            )));
        }
        let fit = self.fit(&pattern)?;
        Ok(ChainState {
            unbiased_risk: fit.unbiased_risk.expect("fits carry their risk"),
            log_prior: self.prior.log_mass(&pattern),
            pattern,
            fit,
            iteration,
        })
    }

    /// One MH transition. Returns the next state and whether the proposal
    /// was accepted. Proposals with zero prior mass are rejected without
    /// being fitted.
    pub fn step<R: Rng + ?Sized>(&mut self, state: ChainState, rng: &mut R) -> (ChainState, bool) {
        let dim = self.dim();
        let coord = rng.gen_range(0..dim);
        let u: f64 = rng.gen();
        let proposal = state.pattern.flipped(coord);
        let lp_q = self.prior.log_mass(&proposal);
        let next_iter = state.iteration + 1;
        if lp_q == f64::NEG_INFINITY {
            return (
                ChainState {
                    iteration: next_iter,
                    ..state
                },
                false,
            );
        }
        let fit = self.fit(&proposal).expect("proposal lies in the space");
        let risk_q = fit.unbiased_risk.expect("fits carry their risk");
        let log_r = log_acceptance(
            state.unbiased_risk,
            state.log_prior,
            risk_q,
            lp_q,
            self.beta,
            self.problem.n(),
        );
        if u.ln() < log_r || log_r == 0.0 {
            (
                ChainState {
                    pattern: proposal,
                    fit,
                    unbiased_risk: risk_q,
                    log_prior: lp_q,
                    iteration: next_iter,
                },
                true,
            )
        } else {
            (
                ChainState {
                    iteration: next_iter,
                    ..state
                },
                false,
            )
        }
    }

    pub fn cache_stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }
}

/// Runs `T0 + T` transitions from the empty pattern (or the configured warm
/// start) and averages the coefficient vectors of iterations `T0+1..T0+T`.
pub fn mh_run(
    problem: &Problem,
    prior: &PriorSpec,
    space: &PatternSpace,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    config.validate()?;
    if config.t == 0 {
        return Err(Error::Input("T must be at least 1".into()));
    }
    let beta = config.beta_for(problem.sigma());
    let mut sampler = Sampler::new(problem, space, prior, beta, config.cache_capacity)?;
    let dim = sampler.dim();
    if dim == 0 {
        return Err(Error::Input("pattern space has dimension 0".into()));
    }
    let start = config
        .warm_start
        .clone()
        .unwrap_or_else(|| SparsityPattern::zeros(dim));
    let mut state = sampler.state(start, 0)?;
    let mut rng = chain_rng(config.seed, CHAIN_STREAM);

    let total = config.t0 + config.t;
    let m = problem.m();
    let mut sum = DVector::<f64>::zeros(m);
    let mut accepted = 0u64;
    let mut visited: HashSet<SparsityPattern> = HashSet::new();
    visited.insert(state.pattern.clone());
    let mut sizes = Vec::with_capacity(total);
    let mut trace = config.record_trace.then(|| Vec::with_capacity(total));

    for it in 1..=total {
        let (next, acc) = sampler.step(state, &mut rng);
        state = next;
        if acc {
            accepted += 1;
            visited.insert(state.pattern.clone());
        }
        sizes.push(state.pattern.count());
        if let Some(tr) = &mut trace {
            tr.push(TraceRow {
                iteration: it as u64,
                size: state.pattern.count(),
                accepted: acc,
                unbiased_risk: state.unbiased_risk,
            });
        }
        if it > config.t0 {
            sum += &state.fit.theta;
        }
    }
    let theta = sum / config.t as f64;
    let (cache_hits, cache_misses) = sampler.cache_stats();
    Ok(SpaEstimate {
        theta,
        mode: Mode::Mh,
        beta,
        diagnostics: Diagnostics::Mh(ChainDiagnostics {
            acceptance_rate: accepted as f64 / total as f64,
            accepted,
            iterations: total as u64,
            unique_patterns_visited: visited.len(),
            pattern_size_trace: sizes,
            final_pattern: state.pattern,
            cache_hits,
            cache_misses,
            trace,
        }),
        config: config.clone(),
    })
}
