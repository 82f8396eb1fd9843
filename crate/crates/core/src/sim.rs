//! Seeded Monte Carlo replications of the Gaussian-design experiments.
//!
//! Replication `r` of a scenario with base seed `s` draws from ChaCha8
//! generators keyed by `s ^ r`: the design on stream [`DESIGN_STREAM`], the
//! noise on stream [`NOISE_STREAM`] and MH chains on
//! [`crate::mh::CHAIN_STREAM`].

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{erm_select, AggregationConfig};
use crate::error::{Error, Result};
use crate::frontends::{fit_coordinatewise, fit_fused, fit_group, make_first_difference};
use crate::linalg::{solve_pattern_ls, DesignMatrix};
use crate::mh::chain_rng;
use crate::pattern::{GroupStructure, SparsityPattern};

pub const DESIGN_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;

/// Width of the blocks in the fused scenario.
pub const FUSED_BLOCK: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ThetaKind {
    /// `θ*_j = 1(j ≤ s)`.
    Coordinatewise,
    /// `(−1)^j` on block `I_j = {10(j−1)+1..10j}`, `j = 1..s`, and `1/2`
    /// elsewhere.
    FusedBlocks,
    /// Ones on the first `s` of `m / group_size` contiguous groups.
    GroupBlocks { group_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaRule {
    /// `σ² = |Xθ*|²₂ / (9n)`.
    Derived,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Coordinatewise aggregate.
    Spa,
    /// Fused aggregate with first differences.
    SpaFused,
    /// Group aggregate over the scenario's contiguous groups.
    SpaGroup,
    /// `θ̂ = 0`.
    Null,
    /// Minimum-norm least squares on all columns.
    FullLs,
    /// Least squares on the true support (of `θ*`, or of `Dθ*` for fused).
    OraclePattern,
    /// Empirical risk minimizer among the `M` single-column fits.
    ErmSingle,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Spa => "spa",
            Estimator::SpaFused => "spa-fused",
            Estimator::SpaGroup => "spa-group",
            Estimator::Null => "null",
            Estimator::FullLs => "full-ls",
            Estimator::OraclePattern => "oracle-pattern",
            Estimator::ErmSingle => "erm-single",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "spa" => Estimator::Spa,
            "spa-fused" => Estimator::SpaFused,
            "spa-group" => Estimator::SpaGroup,
            "null" => Estimator::Null,
            "full-ls" => Estimator::FullLs,
            "oracle-pattern" => Estimator::OraclePattern,
            "erm-single" => Estimator::ErmSingle,
            other => return Err(Error::Input(format!("unknown estimator {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimScenario {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub theta_kind: ThetaKind,
    pub sigma_rule: SigmaRule,
    pub reps: usize,
    pub base_seed: u64,
    pub roster: Vec<Estimator>,
    /// Aggregation settings; the seed is replaced per replication.
    pub config: AggregationConfig,
}

impl SimScenario {
    /// Coordinatewise scenario with the aggregate and all baselines.
    pub fn coordinatewise(m: usize, n: usize, s: usize, reps: usize, base_seed: u64) -> Self {
        SimScenario {
            m,
            n,
            s,
            theta_kind: ThetaKind::Coordinatewise,
            sigma_rule: SigmaRule::Derived,
            reps,
            base_seed,
            roster: vec![
                Estimator::Spa,
                Estimator::Null,
                Estimator::FullLs,
                Estimator::OraclePattern,
                Estimator::ErmSingle,
            ],
            config: AggregationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Input("reps must be at least 1".into()));
        }
        if self.roster.is_empty() {
            return Err(Error::Input("estimator roster is empty".into()));
        }
        if self.m == 0 || self.n == 0 {
            return Err(Error::Input("m and n must be positive".into()));
        }
        if let SigmaRule::Fixed(v) = self.sigma_rule {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!(
                    "fixed sigma must be positive, got {v}"
                )));
            }
        }
        self.config.validate()?;
        let theta = gen_theta_star(self.theta_kind, self.m, self.s)?;
        if self.sigma_rule == SigmaRule::Derived && theta.iter().all(|&t| t == 0.0) {
            return Err(Error::Input(
                "derived noise level is zero for theta* = 0; use a fixed sigma".into(),
            ));
        }
        if self.roster.contains(&Estimator::SpaGroup) && self.groups().is_none() {
            return Err(Error::Input(
                "spa-group needs a group-blocks scenario".into(),
            ));
        }
        Ok(())
    }

    pub fn groups(&self) -> Option<GroupStructure> {
        match self.theta_kind {
            ThetaKind::GroupBlocks { group_size } => {
                GroupStructure::contiguous(self.m / group_size, group_size).ok()
            }
            _ => None,
        }
    }

    /// Generator seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.base_seed ^ rep as u64
    }
}

/// True coefficient vector of a scenario.
pub fn gen_theta_star(kind: ThetaKind, m: usize, s: usize) -> Result<DVector<f64>> {
    match kind {
        ThetaKind::Coordinatewise => {
            if s > m {
                return Err(Error::Input(format!("sparsity {s} exceeds m = {m}")));
            }
            Ok(DVector::from_fn(m, |j, _| if j < s { 1.0 } else { 0.0 }))
        }
        ThetaKind::FusedBlocks => {
            if FUSED_BLOCK * s > m {
                return Err(Error::Input(format!(
                    "fused blocks need 10 s <= m, got s = {s}, m = {m}"
                )));
            }
            Ok(DVector::from_fn(m, |j, _| {
                let block = j / FUSED_BLOCK + 1;
                if block <= s {
                    if block % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.5
                }
            }))
        }
        ThetaKind::GroupBlocks { group_size } => {
            if group_size == 0 || m % group_size != 0 {
                return Err(Error::Input(format!(
                    "group size {group_size} must divide m = {m}"
                )));
            }
            if s * group_size > m {
                return Err(Error::Input(format!(
                    "{s} groups of size {group_size} exceed m = {m}"
                )));
            }
            Ok(DVector::from_fn(m, |j, _| {
                if j < s * group_size {
                    1.0
                } else {
                    0.0
                }
            }))
        }
    }
}

/// One generated data set.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedProblem {
    pub x: DesignMatrix,
    pub y: DVector<f64>,
    pub theta_star: DVector<f64>,
    pub sigma: f64,
}

/// Draws `X` with iid standard Gaussian entries and `Y = Xθ* + σξ`.
pub fn gen_problem(scenario: &SimScenario, rep: usize) -> Result<GeneratedProblem> {
    if rep >= scenario.reps {
        return Err(Error::Input(format!(
            "replication {rep} out of range for {} reps",
            scenario.reps
        )));
    }
    let theta_star = gen_theta_star(scenario.theta_kind, scenario.m, scenario.s)?;
    let (n, m) = (scenario.n, scenario.m);
    let seed = scenario.rep_seed(rep);
    let mut design_rng = chain_rng(seed, DESIGN_STREAM);
    let x = DMatrix::from_row_iterator(
        n,
        m,
        (0..n * m).map(|_| StandardNormal.sample(&mut design_rng)),
    );
    let signal = &x * &theta_star;
    let sigma = match scenario.sigma_rule {
        SigmaRule::Derived => (signal.norm_squared() / (9.0 * n as f64)).sqrt(),
        SigmaRule::Fixed(v) => v,
    };
    if !(sigma > 0.0) {
        return Err(Error::Input(
            "noise level is zero; scenario is degenerate".into(),
        ));
    }
    let mut noise_rng = chain_rng(seed, NOISE_STREAM);
    let y = DVector::from_fn(n, |i, _| {
        let xi: f64 = StandardNormal.sample(&mut noise_rng);
        signal[i] + sigma * xi
    });
    Ok(GeneratedProblem {
        x: DesignMatrix::new(x)?,
        y,
        theta_star,
        sigma,
    })
}

/// `|X(θ̂ − θ*)|²₂ / n`.
pub fn prediction_error(x: &DesignMatrix, theta: &DVector<f64>, theta_star: &DVector<f64>) -> f64 {
    x.apply(&(theta - theta_star)).norm_squared() / x.n() as f64
}

/// Runs one estimator on a generated problem.
pub fn estimate(
    estimator: Estimator,
    problem: &GeneratedProblem,
    scenario: &SimScenario,
    rep: usize,
) -> Result<DVector<f64>> {
    let config = AggregationConfig {
        seed: scenario.rep_seed(rep),
        ..scenario.config.clone()
    };
    let (x, y, sigma) = (&problem.x, &problem.y, problem.sigma);
    let m = x.m();
    match estimator {
        Estimator::Spa => Ok(fit_coordinatewise(x, y, sigma, &config)?.theta),
        Estimator::SpaFused => {
            Ok(fit_fused(x, y, sigma, &make_first_difference(m)?, &config)?.theta)
        }
        Estimator::SpaGroup => {
            let groups = scenario
                .groups()
                .ok_or_else(|| Error::Input("spa-group needs a group-blocks scenario".into()))?;
            Ok(fit_group(x, y, sigma, &groups, &config)?.theta)
        }
        Estimator::Null => Ok(DVector::zeros(m)),
        Estimator::FullLs => Ok(solve_pattern_ls(x, y, &SparsityPattern::ones(m))?.theta),
        Estimator::OraclePattern => {
            let support = |v: &DVector<f64>| {
                let idx: Vec<usize> = (0..m).filter(|&j| v[j] != 0.0).collect();
                SparsityPattern::from_indices(m, &idx)
            };
            if scenario.theta_kind == ThetaKind::FusedBlocks {
                let d = make_first_difference(m)?;
                let xd = d.transform_design(x)?;
                let p = support(&d.forward(&problem.theta_star))?;
                Ok(d.inverse(&solve_pattern_ls(&xd, y, &p)?.theta))
            } else {
                let p = support(&problem.theta_star)?;
                Ok(solve_pattern_ls(x, y, &p)?.theta)
            }
        }
        Estimator::ErmSingle => {
            let fits = (0..m)
                .map(|j| solve_pattern_ls(x, y, &SparsityPattern::from_indices(m, &[j])?))
                .collect::<Result<Vec<_>>>()?;
            let risks: Vec<f64> = fits.iter().map(|f| f.rss_mean).collect();
            let best = erm_select(&risks)?;
            Ok(fits[best].theta.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: Estimator,
    pub sigma: f64,
    /// `None` when the estimator failed on this replication.
    pub prediction_error: Option<f64>,
    pub estimation_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub ok_reps: usize,
    pub failed_reps: usize,
    pub prediction_mean: f64,
    pub prediction_sd: f64,
    pub estimation_mean: f64,
    pub estimation_sd: f64,
    /// Set when fewer than two replications succeeded; sd is then 0.
    pub sd_degenerate: bool,
}

impl EstimatorSummary {
    pub fn prediction_se(&self) -> f64 {
        self.prediction_sd / (self.ok_reps.max(1) as f64).sqrt()
    }

    pub fn estimation_se(&self) -> f64 {
        self.estimation_sd / (self.ok_reps.max(1) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub scenario: SimScenario,
    pub summaries: Vec<EstimatorSummary>,
    pub records: Vec<RepRecord>,
    /// Wall-clock time; excluded from serialized reports so they stay
    /// reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Mean and sample standard deviation in index order; sd is 0 for fewer
/// than two values.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

impl SimReport {
    pub fn summary(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    /// Summary CSV, one row per estimator.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "estimator,ok_reps,failed_reps,prediction_mean,prediction_sd,estimation_mean,estimation_sd,sd_degenerate\n",
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.estimator.name(),
                s.ok_reps,
                s.failed_reps,
                s.prediction_mean,
                s.prediction_sd,
                s.estimation_mean,
                s.estimation_sd,
                s.sd_degenerate
            );
        }
        out
    }

    /// Per-replication CSV.
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rep",
            "estimator",
            "sigma",
            "prediction_error",
            "estimation_error",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.rep.to_string(),
                r.estimator.name().to_string(),
                r.sigma.to_string(),
                opt(r.prediction_error),
                opt(r.estimation_error),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every estimator of the roster on every replication.
///
/// Replications run in parallel on the current rayon pool; records are
/// reduced in replication order so the report does not depend on the
/// number of workers. A failing estimator marks its replication as failed
/// and is excluded from that estimator's statistics.
pub fn run_replications(scenario: &SimScenario) -> Result<SimReport> {
    scenario.validate()?;
    let started = Instant::now();
    let per_rep: Vec<Vec<RepRecord>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| run_one(scenario, rep))
        .collect();
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let summaries = scenario
        .roster
        .iter()
        .map(|&est| {
            let mine: Vec<&RepRecord> = records.iter().filter(|r| r.estimator == est).collect();
            let pred: Vec<f64> = mine.iter().filter_map(|r| r.prediction_error).collect();
            let estn: Vec<f64> = mine.iter().filter_map(|r| r.estimation_error).collect();
            let (pm, psd) = mean_sd(&pred);
            let (em, esd) = mean_sd(&estn);
            EstimatorSummary {
                estimator: est,
                ok_reps: pred.len(),
                failed_reps: mine.len() - pred.len(),
                prediction_mean: pm,
                prediction_sd: psd,
                estimation_mean: em,
                estimation_sd: esd,
                sd_degenerate: pred.len() < 2,
            }
        })
        .collect();
    Ok(SimReport {
        scenario: scenario.clone(),
        summaries,
        records,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn run_one(scenario: &SimScenario, rep: usize) -> Vec<RepRecord> {
    let problem = gen_problem(scenario, rep);
    scenario
        .roster
        .iter()
        .map(|&est| {
            let outcome = problem
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|p| estimate(est, p, scenario, rep).map(|theta| (p, theta)));
            match outcome {
                Ok((p, theta)) if theta.iter().all(|v| v.is_finite()) => RepRecord {
                    rep,
                    estimator: est,
                    sigma: p.sigma,
                    prediction_error: Some(prediction_error(&p.x, &theta, &p.theta_star)),
                    estimation_error: Some((&theta - &p.theta_star).norm_squared()),
                    error: None,
                },
                Ok((p, _)) => RepRecord {
                    rep,
                    estimator: est,
                    sigma: p.sigma,
                    prediction_error: None,
                    estimation_error: None,
                    error: Some("non-finite estimate".into()),
                },
                Err(e) => RepRecord {
                    rep,
                    estimator: est,
                    sigma: problem.as_ref().map(|p| p.sigma).unwrap_or(f64::NAN),
                    prediction_error: None,
                    estimation_error: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinatewise_theta() {
        let t = gen_theta_star(ThetaKind::Coordinatewise, 5, 2).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 1.0, 0.0, 0.0, 0.0]);
        let z = gen_theta_star(ThetaKind::Coordinatewise, 4, 0).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_theta() {
        let t = gen_theta_star(ThetaKind::FusedBlocks, 25, 2).unwrap();
        for j in 0..10 {
            assert_eq!(t[j], -1.0);
        }
        for j in 10..20 {
            assert_eq!(t[j], 1.0);
        }
        for j in 20..25 {
            assert_eq!(t[j], 0.5);
        }
        assert!(gen_theta_star(ThetaKind::FusedBlocks, 25, 3).is_err());
    }

    #[test]
    fn group_theta() {
        let t = gen_theta_star(ThetaKind::GroupBlocks { group_size: 2 }, 6, 1).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(gen_theta_star(ThetaKind::GroupBlocks { group_size: 4 }, 6, 1).is_err());
    }

    #[test]
    fn derived_sigma_rule() {
        let sc = SimScenario::coordinatewise(8, 12, 3, 2, 5);
        let p = gen_problem(&sc, 1).unwrap();
        let signal = p.x.apply(&p.theta_star);
        let expected = (signal.norm_squared() / (9.0 * 12.0)).sqrt();
        assert!((p.sigma - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_theta_rejected_under_derived_rule() {
        let sc = SimScenario::coordinatewise(5, 10, 0, 2, 0);
        assert!(run_replications(&sc).is_err());
        let fixed = SimScenario {
            sigma_rule: SigmaRule::Fixed(1.0),
            ..sc
        };
        assert!(fixed.validate().is_ok());
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = SimScenario::coordinatewise(6, 9, 2, 3, 42);
        assert_eq!(gen_problem(&sc, 2).unwrap(), gen_problem(&sc, 2).unwrap());
        assert_ne!(
            gen_problem(&sc, 1).unwrap().x,
            gen_problem(&sc, 2).unwrap().x
        );
        assert!(gen_problem(&sc, 3).is_err());
    }

    #[test]
    fn single_rep_flags_degenerate_sd() {
        let mut sc = SimScenario::coordinatewise(6, 12, 2, 1, 3);
        sc.roster = vec![Estimator::Null, Estimator::FullLs];
        let rep = run_replications(&sc).unwrap();
        for s in &rep.summaries {
            assert_eq!(s.prediction_sd, 0.0);
            assert!(s.sd_degenerate);
        }
    }

    #[test]
    fn reps_zero_and_empty_roster_rejected() {
        let mut sc = SimScenario::coordinatewise(6, 12, 2, 0, 3);
        assert!(sc.validate().is_err());
        sc.reps = 2;
        sc.roster.clear();
        assert!(sc.validate().is_err());
    }

    #[test]
    fn mean_sd_basics() {
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }
}
