//! Reference parameter sets for the three single-channel regimes and three
//! two-channel examples.
//!
//! The single-channel sets list a negative decay for two of the regimes; the
//! decay must be positive, so its magnitude is used.

use crate::linalg::Matrix;
use crate::s6::{S6Params, TokenSequence};

/// A named layer plus initial tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub params: S6Params,
    pub x0: TokenSequence,
}

fn scalar_fixture(name: &'static str, mu: f64, s_delta: f64, a: f64, x0: &[f64]) -> Fixture {
    Fixture {
        name,
        params: S6Params::scalar(mu, s_delta, a).expect("fixture parameters are valid"),
        x0: TokenSequence::from_scalars(x0).expect("fixture tokens are valid"),
    }
}

/// Convergent regime: `μ = -1.58`, `S_Δ = -0.17`, `a = 1.08`, ten tokens.
pub fn convergence() -> Fixture {
    scalar_fixture(
        "convergence",
        -1.58,
        -0.17,
        1.08,
        &[-1.79, -0.34, 0.46, -1.25, 0.83, -0.83, 1.81, -1.16, 0.13, -0.19],
    )
}

/// Slowly divergent regime: `μ = 1.79`, `S_Δ = -0.71`, `a = 1.80`.
pub fn slow_divergence() -> Fixture {
    scalar_fixture(
        "slow_divergence",
        1.79,
        -0.71,
        1.80,
        &[1.55, 2.84, 3.81, 4.57, 5.99, 6.94, 7.71, 8.96, 9.59, 10.75],
    )
}

/// Slowly divergent instance that satisfies the ordering hypothesis
/// `S_Δ x_L0 ≤ … ≤ S_Δ x_10 ≤ -r0`.
pub fn slow_divergence_ordered() -> Fixture {
    scalar_fixture(
        "slow_divergence_ordered",
        1.0,
        -1.0,
        1.0,
        &[2.5, 3.0, 3.5, 4.0, 4.5],
    )
}

/// Finite-time blow-up regime: `μ = 0.76`, `S_Δ = 0.59`, `a = 1.66`.
pub fn fast_divergence() -> Fixture {
    scalar_fixture(
        "fast_divergence",
        0.76,
        0.59,
        1.66,
        &[0.83, 0.91, 0.64, 0.78, 0.66, 0.99, 0.68, 0.72, 0.61, 0.90],
    )
}

fn planar_fixture(
    name: &'static str,
    input_output: [[f64; 2]; 2],
    s_delta: [[f64; 2]; 2],
    a: f64,
    tokens: [[f64; 2]; 4],
) -> Fixture {
    let m = |rows: [[f64; 2]; 2]| {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .expect("fixture matrices are valid")
    };
    Fixture {
        name,
        params: S6Params::with_input_output(m(input_output), m(s_delta), a)
            .expect("fixture parameters are valid"),
        x0: TokenSequence::from_tokens(&tokens.iter().map(|t| t.to_vec()).collect::<Vec<_>>())
            .expect("fixture tokens are valid"),
    }
}

/// Two channels, symmetric part with two negative eigenvalues
/// (−0.967445, −0.552276).
pub fn planar_negative() -> Fixture {
    planar_fixture(
        "planar_negative",
        [[-0.552679, -0.843293], [0.869146, -0.967042]],
        [[0.287585, 0.99662], [-0.201208, -0.964587]],
        0.370332,
        [
            [-1.47982, -0.228103],
            [-0.406453, 1.24415],
            [1.8491, -0.625385],
            [1.26989, -1.91216],
        ],
    )
}

/// Two channels, one positive and one negative eigenvalue
/// (0.846723, −0.741258).
pub fn planar_mixed() -> Fixture {
    planar_fixture(
        "planar_mixed",
        [[-0.155283, 0.542694], [0.989821, 0.260748]],
        [[0.430263, 0.555071], [-0.654555, 0.422737]],
        0.573698,
        [
            [1.39902, 1.60628],
            [-0.342366, -0.845203],
            [0.616744, 1.63846],
            [-0.185335, -1.34566],
        ],
    )
}

/// Two channels, two positive eigenvalues (1.39646, 0.190429).
pub fn planar_positive() -> Fixture {
    planar_fixture(
        "planar_positive",
        [[0.981721, -0.803219], [-0.342524, 0.605171]],
        [[0.653732, -0.228578], [-0.960714, -0.495344]],
        0.997408,
        [
            [1.1932, -0.702409],
            [-1.49159, -0.735305],
            [1.21287, -0.816296],
            [-0.462258, 1.44549],
        ],
    )
}

/// Every fixture, for lookup by name.
pub fn all() -> Vec<Fixture> {
    vec![
        convergence(),
        slow_divergence(),
        slow_divergence_ordered(),
        fast_divergence(),
        planar_negative(),
        planar_mixed(),
        planar_positive(),
    ]
}

pub fn by_name(name: &str) -> Option<Fixture> {
    all().into_iter().find(|f| f.name == name)
}
