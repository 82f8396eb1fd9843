//! Priors over pattern spaces, expressed as log-masses.

use std::collections::HashMap;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::pattern::SparsityPattern;

/// `log C(n, k)` through log-gamma.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `log H_L` with `H_L = Σ_{k=0}^{L} e^{-k}`.
pub fn ln_h(len: usize) -> f64 {
    // Geometric sum in closed form: (1 − e^{-(L+1)}) / (1 − e^{-1}).
    let q = (-1.0f64).exp();
    ((-(len as f64 + 1.0)).exp_m1() / (q - 1.0)).ln()
}

/// Log-mass of the sparsity prior `[C(L,|p|) e^{|p|} H_L]^{-1}` as a function
/// of the dimension `len` and the pattern size only.
pub fn ln_sparsity_prior(len: usize, size: usize) -> f64 {
    -(ln_binomial(len, size) + size as f64 + ln_h(len))
}

/// Coordinatewise prior over `{0,1}^M`.
pub fn log_prior_coordinatewise(p: &SparsityPattern, m: usize) -> f64 {
    assert_eq!(p.len(), m, "pattern length must equal M");
    ln_sparsity_prior(m, p.count())
}

/// Group prior over index sets `J ⊆ {1..K}`.
pub fn log_prior_group(j: &SparsityPattern, k: usize) -> f64 {
    assert_eq!(j.len(), k, "index set length must equal K");
    ln_sparsity_prior(k, j.count())
}

/// Right-hand side of the complexity bound
/// `log(1/π_p) ≤ 2|p| log(eL/|p|) + 1/2`, with the `|p| = 0` term taken as 0.
pub fn complexity_bound(len: usize, size: usize) -> f64 {
    if size == 0 {
        0.5
    } else {
        let s = size as f64;
        2.0 * s * (std::f64::consts::E * len as f64 / s).ln() + 0.5
    }
}

/// Log-prior over a pattern space of dimension `L`.
#[derive(Clone)]
pub enum PriorSpec {
    /// Sparsity prior on `{0,1}^M`.
    Coordinatewise,
    /// Sparsity prior on group index sets `{0,1}^K`.
    Group,
    /// Arbitrary, possibly unnormalized log-masses; patterns absent from the
    /// table get `default` (use `-inf` to exclude them).
    Table {
        masses: Arc<HashMap<SparsityPattern, f64>>,
        default: f64,
    },
}

impl std::fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorSpec::Coordinatewise => f.write_str("Coordinatewise"),
            PriorSpec::Group => f.write_str("Group"),
            PriorSpec::Table { masses, default } => f
                .debug_struct("Table")
                .field("entries", &masses.len())
                .field("default", default)
                .finish(),
        }
    }
}

impl PriorSpec {
    pub fn table(masses: HashMap<SparsityPattern, f64>, default: f64) -> Self {
        PriorSpec::Table {
            masses: Arc::new(masses),
            default,
        }
    }

    /// Prior supported on the listed patterns only, uniform over them.
    pub fn restricted_to(patterns: impl IntoIterator<Item = SparsityPattern>) -> Self {
        let masses = patterns.into_iter().map(|p| (p, 0.0)).collect();
        Self::table(masses, f64::NEG_INFINITY)
    }

    pub fn log_mass(&self, p: &SparsityPattern) -> f64 {
        match self {
            PriorSpec::Coordinatewise | PriorSpec::Group => ln_sparsity_prior(p.len(), p.count()),
            PriorSpec::Table { masses, default } => masses.get(p).copied().unwrap_or(*default),
        }
    }

    /// True when the log-mass depends on `|p|` only.
    pub(crate) fn size_only(&self) -> bool {
        matches!(self, PriorSpec::Coordinatewise | PriorSpec::Group)
    }
}
