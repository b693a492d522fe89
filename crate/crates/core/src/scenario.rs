//! Regime classification for the token dynamics.
//!
//! For a single channel the sign of `μ = S_Cᵀ S_B` and the signs of
//! `S_Δ x_l(0)` decide between three behaviours:
//!
//! | `μ` | `S_Δ x_l(0)` | regime |
//! |-----|--------------|--------|
//! | `< 0` | any | tokens decay to zero like `1/√t` |
//! | `> 0` | all `< 0` | tokens grow without bound, logarithmically |
//! | `> 0` | some `> 0` | those tokens blow up in finite time |
//!
//! With several channels the same test is applied to the spectrum of the
//! symmetric part of `S_Cᵀ S_B`; those labels are conjectural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, eigh, sym_part};
use crate::s6::{softplus, S6Params, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioLabel {
    Convergence,
    SlowDivergence,
    FastDivergence,
    Indeterminate,
}

impl std::fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScenarioLabel::Convergence => "Convergence",
            ScenarioLabel::SlowDivergence => "SlowDivergence",
            ScenarioLabel::FastDivergence => "FastDivergence",
            ScenarioLabel::Indeterminate => "Indeterminate",
        };
        f.write_str(s)
    }
}

/// The input-output coefficient: a scalar for one channel, otherwise the
/// eigenvalues (descending) of the symmetric part of `S_Cᵀ S_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputOutputSpectrum {
    Scalar(f64),
    Eigenvalues(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupBounds {
    /// Upper bound on the blow-up time of each token; `None` for tokens the
    /// bound does not cover (`S_Δ x_l(0) ≤ 0`).
    pub per_token: Vec<Option<f64>>,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub mu: InputOutputSpectrum,
    /// `sign(S_Δ,d · x_l(0))` indexed `[token][channel]`.
    pub per_token_sdelta_sign: Vec<Vec<i8>>,
    pub label: ScenarioLabel,
    /// Set for multi-channel inputs, where the classification is a conjecture.
    pub conjectural: bool,
    pub r0: f64,
    pub hypothesis_holds: bool,
    pub blowup_bounds: Option<BlowupBounds>,
}

/// `h(r) = 2 ln(1 + e^{-r}) - r e^{-r} / (1 + e^{-r})`.
pub fn r0_function(r: f64) -> f64 {
    // e^{-r}/(1+e^{-r}) = 1/(1+e^{r})
    2.0 * softplus(-r) - r / (1.0 + r.exp())
}

/// Unique positive root of [`r0_function`] (about 2.116), by bisection on
/// `[1, 4]` until the bracket is narrower than `tol`.
pub fn find_r0(tol: f64) -> Result<f64> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::Argument(format!("tol must lie in (0, 1e-2], got {tol}")));
    }
    let (mut lo, mut hi) = (1.0_f64, 4.0_f64);
    debug_assert!(r0_function(lo) > 0.0 && r0_function(hi) < 0.0);
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if r0_function(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tolerance used for the reported `r0` and the hypothesis check.
const R0_TOL: f64 = 1e-8;
/// Eigenvalues this small relative to `‖μ‖_F` count as zero.
const ZERO_EIGENVALUE_TOL: f64 = 1e-12;

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn sdelta_products(params: &S6Params, x0: &TokenSequence) -> Vec<Vec<f64>> {
    x0.tokens()
        .iter()
        .map(|t| {
            (0..params.channels())
                .map(|d| dot(params.s_delta().row(d), t))
                .collect()
        })
        .collect()
}

/// Sorts `(params, x0)` into one of the three regimes.
///
/// Strict signs only: a zero `μ`, zero eigenvalue, or zero `S_Δ x_l(0)` gives
/// [`ScenarioLabel::Indeterminate`]. For several channels a token counts as
/// "fast" when any channel of `S_Δ x_l(0)` is positive and as "slow" when all
/// are negative.
pub fn classify(params: &S6Params, x0: &TokenSequence) -> Result<ScenarioReport> {
    if x0.channels() != params.channels() {
        return Err(Error::Dimension(format!(
            "initial tokens have {} channels, layer has {}",
            x0.channels(),
            params.channels()
        )));
    }
    for l in 0..x0.len() {
        let token = x0.token(l);
        if token.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroToken { token: l, channel: 0 });
        }
    }

    let products = sdelta_products(params, x0);
    let signs: Vec<Vec<i8>> = products
        .iter()
        .map(|t| t.iter().map(|&v| sign(v)).collect())
        .collect();
    let any_fast = signs.iter().any(|t| t.iter().any(|&s| s > 0));
    let all_slow = signs.iter().all(|t| t.iter().all(|&s| s < 0));
    let r0 = find_r0(R0_TOL)?;

    let (mu, growth_sign, conjectural) = if params.channels() == 1 {
        let mu = params.mu()?;
        (InputOutputSpectrum::Scalar(mu), sign(mu), false)
    } else {
        let sym = sym_part(&params.input_output())?;
        let spectrum = eigh(&sym)?;
        let zero = ZERO_EIGENVALUE_TOL * sym.frobenius_norm().max(f64::MIN_POSITIVE);
        let s = if spectrum.max_eigenvalue() > zero {
            1
        } else if spectrum.eigenvalues.iter().all(|&v| v < -zero) {
            -1
        } else {
            0
        };
        (InputOutputSpectrum::Eigenvalues(spectrum.eigenvalues), s, true)
    };

    let label = match growth_sign {
        -1 => ScenarioLabel::Convergence,
        1 if any_fast => ScenarioLabel::FastDivergence,
        1 if all_slow => ScenarioLabel::SlowDivergence,
        _ => ScenarioLabel::Indeterminate,
    };

    let hypothesis_holds = params.channels() == 1 && hypothesis_chain(&products, r0);
    let blowup_bounds = if params.channels() == 1 && growth_sign > 0 {
        blowup_bound(params, x0).ok()
    } else {
        None
    };

    Ok(ScenarioReport {
        mu,
        per_token_sdelta_sign: signs,
        label,
        conjectural,
        r0,
        hypothesis_holds,
        blowup_bounds,
    })
}

fn hypothesis_chain(products: &[Vec<f64>], r0: f64) -> bool {
    let values: Vec<f64> = products.iter().map(|t| t[0]).collect();
    // S_Δ x_L0 ≤ … ≤ S_Δ x_10 ≤ -r0
    values.first().is_some_and(|&first| first <= -r0) && values.windows(2).all(|w| w[1] <= w[0])
}

/// Checks the ordering hypothesis of the logarithmic divergence bound:
/// `S_Δ x_L(0) ≤ … ≤ S_Δ x_1(0) ≤ -r0`.
pub fn slow_divergence_hypothesis(params: &S6Params, x0: &TokenSequence) -> Result<bool> {
    if params.channels() != 1 {
        return Err(Error::UnsupportedDimension(params.channels()));
    }
    if x0.channels() != 1 {
        return Err(Error::Dimension("expected a single-channel sequence".into()));
    }
    let r0 = find_r0(R0_TOL)?;
    Ok(hypothesis_chain(&sdelta_products(params, x0), r0))
}

/// Upper bounds `T_l = 1 / (2 μ Δ(x_l0) x_l0²)` on the blow-up time of each
/// token with `S_Δ x_l(0) > 0`.
///
/// Follows from `x_l' ≥ μ Δ(x_l0) x_l³` once `x_l` and `Δ(x_l)` are known to
/// increase, whose comparison solution `(x_l0^{-2} - 2 μ Δ(x_l0) t)^{-1/2}`
/// is unbounded at `T_l`.
pub fn blowup_bound(params: &S6Params, x0: &TokenSequence) -> Result<BlowupBounds> {
    let mu = params.mu()?;
    if !(mu > 0.0) {
        return Err(Error::NotApplicable(format!(
            "blow-up bounds need a positive input-output coefficient, got {mu}"
        )));
    }
    let s_delta = params.s_delta()[(0, 0)];
    let per_token: Vec<Option<f64>> = x0
        .channel(0)
        .iter()
        .map(|&x| {
            let u = s_delta * x;
            (u > 0.0).then(|| 1.0 / (2.0 * mu * softplus(u) * x * x))
        })
        .collect();
    let min = per_token
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NotApplicable(
            "no token has S_Δ x_l(0) > 0".into(),
        ));
    }
    Ok(BlowupBounds { per_token, min })
}
