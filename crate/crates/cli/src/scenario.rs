//! Simulation scenarios from `key = value` files and command-line flags.

use spa_core::aggregate::{AggregationConfig, Mode};
use spa_core::sim::{Estimator, SigmaRule, SimScenario, ThetaKind};

use crate::commands::CliError;
use crate::{Method, SimulateArgs};

#[derive(Debug, Default, Clone)]
pub struct ScenarioFields {
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub s: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub kind: Option<String>,
    pub group_size: Option<usize>,
    pub sigma: Option<f64>,
    pub estimators: Option<String>,
    pub method: Option<Method>,
    pub t0: Option<usize>,
    pub t: Option<usize>,
    pub beta: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("scenario line {line}: bad value {v:?} for {key}")))
}

impl ScenarioFields {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut f = ScenarioFields::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("scenario line {lineno}: expected key = value"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "m" => f.m = Some(parse_value(key, value, lineno)?),
                "n" => f.n = Some(parse_value(key, value, lineno)?),
                "s" => f.s = Some(parse_value(key, value, lineno)?),
                "reps" => f.reps = Some(parse_value(key, value, lineno)?),
                "seed" => f.seed = Some(parse_value(key, value, lineno)?),
                "kind" => f.kind = Some(value.to_string()),
                "group_size" => f.group_size = Some(parse_value(key, value, lineno)?),
                "sigma" => f.sigma = Some(parse_value(key, value, lineno)?),
                "estimators" => f.estimators = Some(value.to_string()),
                "method" => {
                    f.method = Some(match value {
                        "exact" => Method::Exact,
                        "mh" => Method::Mh,
                        _ => {
                            return Err(CliError::Usage(format!(
                                "scenario line {lineno}: method must be exact or mh"
                            )))
                        }
                    })
                }
                "t0" => f.t0 = Some(parse_value(key, value, lineno)?),
                "t" => f.t = Some(parse_value(key, value, lineno)?),
                "beta" => f.beta = Some(parse_value(key, value, lineno)?),
                other => {
                    return Err(CliError::Usage(format!(
                        "scenario line {lineno}: unknown key {other:?}"
                    )))
                }
            }
        }
        Ok(f)
    }

    pub fn overlay(mut self, a: &SimulateArgs) -> Self {
        macro_rules! take {
            ($($field:ident),*) => { $( if a.$field.is_some() { self.$field = a.$field.clone(); } )* };
        }
        take!(m, n, s, reps, seed, kind, group_size, sigma, estimators, method, t0, t, beta);
        self
    }

    pub fn build(self) -> Result<SimScenario, CliError> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| CliError::Usage(format!("missing scenario value: {name}")))
        };
        let m = need(self.m, "m")?;
        let n = need(self.n, "n")?;
        let s = need(self.s, "s")?;
        let reps = need(self.reps, "reps")?;
        let theta_kind = match self.kind.as_deref().unwrap_or("coordinatewise") {
            "coordinatewise" | "coord" => ThetaKind::Coordinatewise,
            "fused" | "fused-blocks" => ThetaKind::FusedBlocks,
            "group" | "group-blocks" => ThetaKind::GroupBlocks {
                group_size: self
                    .group_size
                    .ok_or_else(|| CliError::Usage("group scenarios need group_size".into()))?,
            },
            other => return Err(CliError::Usage(format!("unknown scenario kind {other:?}"))),
        };
        let roster = match &self.estimators {
            Some(list) => list
                .split(',')
                .map(|e| Estimator::parse(e.trim()).map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
            None => {
                let primary = match theta_kind {
                    ThetaKind::Coordinatewise => Estimator::Spa,
                    ThetaKind::FusedBlocks => Estimator::SpaFused,
                    ThetaKind::GroupBlocks { .. } => Estimator::SpaGroup,
                };
                vec![
                    primary,
                    Estimator::Null,
                    Estimator::FullLs,
                    Estimator::OraclePattern,
                    Estimator::ErmSingle,
                ]
            }
        };
        let defaults = AggregationConfig::default();
        let config = AggregationConfig {
            beta: self.beta,
            mode: match self.method.unwrap_or(Method::Mh) {
                Method::Exact => Mode::Exact,
                Method::Mh => Mode::Mh,
            },
            t0: self.t0.unwrap_or(defaults.t0),
            t: self.t.unwrap_or(defaults.t),
            ..defaults
        };
        Ok(SimScenario {
            m,
            n,
            s,
            theta_kind,
            sigma_rule: self.sigma.map_or(SigmaRule::Derived, SigmaRule::Fixed),
            reps,
            base_seed: self.seed.unwrap_or(0),
            roster,
            config,
        })
    }
}
