//! Coordinatewise, fused and group sparsity pattern aggregates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aggregate::{
    aggregate_exact, AggregationConfig, Mode, PatternSpace, Problem, SpaEstimate,
};
use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::mh::mh_run;
use crate::pattern::GroupStructure;
use crate::prior::PriorSpec;

/// Number of random probes used to verify a custom inverse.
const INVERSE_PROBES: usize = 16;
/// Largest accepted relative round-trip residual `‖D D⁻¹ v − v‖ / ‖v‖`.
const INVERSE_TOLERANCE: f64 = 1e-8;

/// An invertible linear map `θ ↦ Dθ` on `R^M`.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearMapD {
    /// `(Dθ)_1 = θ_1`, `(Dθ)_j = θ_j − θ_{j−1}`; the inverse is the
    /// cumulative sum.
    FirstDifference { m: usize },
    Custom {
        forward: DMatrix<f64>,
        inverse: DMatrix<f64>,
    },
}

pub fn make_first_difference(m: usize) -> Result<LinearMapD> {
    if m == 0 {
        return Err(Error::Input("first-difference map needs m >= 1".into()));
    }
    Ok(LinearMapD::FirstDifference { m })
}

impl LinearMapD {
    /// Wraps a dense square matrix, inverting it and checking the inverse on
    /// random probes.
    pub fn custom(d: DMatrix<f64>) -> Result<Self> {
        if !d.is_square() || d.nrows() == 0 {
            return Err(Error::Input(format!(
                "D must be a non-empty square matrix, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("D has non-finite entries".into()));
        }
        let inverse = d
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Input("D is singular".into()))?;
        let map = LinearMapD::Custom {
            forward: d,
            inverse,
        };
        map.verify_inverse()?;
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearMapD::FirstDifference { m } => *m,
            LinearMapD::Custom { forward, .. } => forward.nrows(),
        }
    }

    pub fn forward(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            LinearMapD::FirstDifference { m } => {
                assert_eq!(theta.len(), *m);
                DVector::from_fn(*m, |j, _| {
                    if j == 0 {
                        theta[0]
                    } else {
                        theta[j] - theta[j - 1]
                    }
                })
            }
            LinearMapD::Custom { forward, .. } => forward * theta,
        }
    }

    pub fn inverse(&self, gamma: &DVector<f64>) -> DVector<f64> {
        match self {
            LinearMapD::FirstDifference { m } => {
                assert_eq!(gamma.len(), *m);
                let mut acc = 0.0;
                DVector::from_iterator(
                    *m,
                    gamma.iter().map(|g| {
                        acc += g;
                        acc
                    }),
                )
            }
            LinearMapD::Custom { inverse, .. } => inverse * gamma,
        }
    }

    /// Dense `D⁻¹`.
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        match self {
            LinearMapD::FirstDifference { m } => {
                DMatrix::from_fn(*m, *m, |i, j| if i >= j { 1.0 } else { 0.0 })
            }
            LinearMapD::Custom { inverse, .. } => inverse.clone(),
        }
    }

    /// `X D⁻¹`.
    pub fn transform_design(&self, x: &DesignMatrix) -> Result<DesignMatrix> {
        if x.m() != self.dim() {
            return Err(Error::Dimension(format!(
                "D is {0}x{0}, design has {1} columns",
                self.dim(),
                x.m()
            )));
        }
        let xd = match self {
            LinearMapD::FirstDifference { m } => {
                // Column k of X D⁻¹ is the sum of columns k..M of X.
                let mut out = x.values().clone();
                for k in (0..m.saturating_sub(1)).rev() {
                    let next = out.column(k + 1).clone_owned();
                    out.column_mut(k).axpy(1.0, &next, 1.0);
                }
                out
            }
            LinearMapD::Custom { inverse, .. } => x.values() * inverse,
        };
        DesignMatrix::new(xd)
    }

    fn verify_inverse(&self) -> Result<()> {
        let m = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1ff);
        for _ in 0..INVERSE_PROBES {
            let v = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let back = self.forward(&self.inverse(&v));
            let res = (&back - &v).norm() / v.norm().max(f64::MIN_POSITIVE);
            if !(res <= INVERSE_TOLERANCE) {
                return Err(Error::Input(format!(
                    "D is numerically singular: round-trip residual {res:e}"
                )));
            }
        }
        Ok(())
    }
}

fn dispatch(
    problem: &Problem,
    prior: &PriorSpec,
    space: &PatternSpace,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    match config.mode {
        Mode::Exact => aggregate_exact(problem, prior, space, config),
        Mode::Mh => mh_run(problem, prior, space, config),
    }
}

/// Coordinatewise sparsity pattern aggregate over `{0,1}^M` with the
/// sparsity prior.
pub fn fit_coordinatewise(
    x: &DesignMatrix,
    y: &DVector<f64>,
    sigma: f64,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    let problem = Problem::new(x.clone(), y.clone(), sigma)?;
    dispatch(
        &problem,
        &PriorSpec::Coordinatewise,
        &PatternSpace::Coordinates,
        config,
    )
}

/// Fused sparsity pattern aggregate. Runs coordinatewise aggregation on the
/// design `X D⁻¹` over `γ = Dθ` and maps the result back by `θ = D⁻¹γ`.
pub fn fit_fused(
    x: &DesignMatrix,
    y: &DVector<f64>,
    sigma: f64,
    d: &LinearMapD,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    let xd = d.transform_design(x)?;
    let mut est = fit_coordinatewise(&xd, y, sigma, config)?;
    est.theta = d.inverse(&est.theta);
    Ok(est)
}

/// Group sparsity pattern aggregate over index sets `J ⊆ {1..K}`, each
/// fitted on the union of its groups, with the group prior.
pub fn fit_group(
    x: &DesignMatrix,
    y: &DVector<f64>,
    sigma: f64,
    groups: &GroupStructure,
    config: &AggregationConfig,
) -> Result<SpaEstimate> {
    let problem = Problem::new(x.clone(), y.clone(), sigma)?;
    dispatch(
        &problem,
        &PriorSpec::Group,
        &PatternSpace::Groups(groups.clone()),
        config,
    )
}
