//! Continuous-time token dynamics with layer depth as time.
//!
//! Every token evolves by the S6 output evaluated at the current state:
//!
//! ```text
//! d/dt x_dl(t) = Σ_{j ≤ l} P_dlj(x(t)) x_dj(t)
//! ```
//!
//! so the right-hand side is exactly [`s6_forward_convolutional`]. This module
//! wraps the generic integrators from [`crate::ode`] around that vector field
//! and adds the discrete residual-stack iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, FixedStep, Sampling, Solution, Status, StepDoubling};
use crate::s6::{
    attention_with, delta_table, s6_forward_convolutional, HiddenAttention, S6Params,
    TokenSequence,
};

/// Right-hand side of the token ODE at state `x`.
pub fn ode_rhs(params: &S6Params, x: &TokenSequence) -> Result<TokenSequence> {
    if !x.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    s6_forward_convolutional(params, x)
}

/// Split of the single-channel drift into `μ x_l³ Δ(x_l)` and `g_l x_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTerms {
    pub self_term: Vec<f64>,
    pub coupling_term: Vec<f64>,
    /// The coupling coefficients `g_l`; `g_1 = 0`.
    pub coupling_coefficient: Vec<f64>,
}

/// Decomposes the single-channel drift as
/// `μ x_l³ Δ(x_l) + g_l x_l` with
/// `g_l = Σ_{j<l} μ x_j² Δ(x_j) exp(-a Σ_{k=j+1..l} Δ(x_k))`.
pub fn drift_decomposition(params: &S6Params, x: &TokenSequence) -> Result<DriftTerms> {
    if params.channels() != 1 {
        return Err(Error::UnsupportedDimension(params.channels()));
    }
    if x.channels() != 1 {
        return Err(Error::Dimension(format!(
            "sequence has {} channels, expected 1",
            x.channels()
        )));
    }
    let mu = params.mu()?;
    let a = params.decay()[0];
    let xs = x.channel(0);
    let steps = &delta_table(params, x)[0];

    let self_term = xs
        .iter()
        .zip(steps)
        .map(|(&v, &s)| mu * v * v * v * s)
        .collect();
    let coupling_coefficient: Vec<f64> = (0..xs.len())
        .map(|l| {
            (0..l)
                .map(|j| {
                    let tail: f64 = steps[j + 1..=l].iter().sum();
                    mu * xs[j] * xs[j] * steps[j] * (-a * tail).exp()
                })
                .sum()
        })
        .collect();
    let coupling_term = coupling_coefficient
        .iter()
        .zip(xs)
        .map(|(g, v)| g * v)
        .collect();
    Ok(DriftTerms {
        self_term,
        coupling_term,
        coupling_coefficient,
    })
}

/// Sampled solution of the token ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<TokenSequence>,
    /// Attention tensors at the same times, when requested.
    pub attention: Option<Vec<HiddenAttention>>,
    pub status: Status,
    /// Last trusted time, present exactly when `status` is a blow-up.
    pub blowup_time: Option<f64>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &TokenSequence {
        self.states.last().expect("a record always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a record always holds t = 0")
    }

    /// Time series of `x_dl`.
    pub fn series(&self, d: usize, l: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.get(d, l)).collect()
    }

    /// Time series of `P_dlj`, if attention was recorded.
    pub fn attention_series(&self, d: usize, l: usize, j: usize) -> Option<Vec<f64>> {
        self.attention
            .as_ref()
            .map(|att| att.iter().map(|p| p.get(d, l, j)).collect())
    }
}

/// Where a divergence was first seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlowupTrigger {
    pub token: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub detected: bool,
    pub blowup_time: Option<f64>,
    pub trigger: Option<BlowupTrigger>,
}

/// Options for [`integrate_fixed`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedOptions {
    pub t_end: f64,
    pub h: f64,
    pub sampling: Sampling,
    pub with_attention: bool,
    pub blowup_threshold: f64,
}

impl FixedOptions {
    /// Constant step `h` to `t_end`, snapshot every `sample_every` steps.
    pub fn new(t_end: f64, h: f64, sample_every: usize) -> Self {
        FixedOptions {
            t_end,
            h,
            sampling: Sampling::EveryStep(sample_every),
            with_attention: false,
            blowup_threshold: ode::DEFAULT_BLOWUP_THRESHOLD,
        }
    }

    pub fn with_attention(mut self) -> Self {
        self.with_attention = true;
        self
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }
}

/// Options for [`integrate_adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOptions {
    pub t_end: f64,
    pub rel_tol: f64,
    pub blowup_threshold: f64,
    pub min_step: f64,
    pub sampling: Sampling,
    pub with_attention: bool,
}

impl AdaptiveOptions {
    pub fn new(t_end: f64, rel_tol: f64) -> Self {
        AdaptiveOptions {
            t_end,
            rel_tol,
            blowup_threshold: ode::DEFAULT_BLOWUP_THRESHOLD,
            min_step: ode::DEFAULT_MIN_STEP,
            sampling: Sampling::EveryStep(1),
            with_attention: false,
        }
    }

    pub fn with_attention(mut self) -> Self {
        self.with_attention = true;
        self
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn blowup_threshold(mut self, threshold: f64) -> Self {
        self.blowup_threshold = threshold;
        self
    }
}

/// The vector field on channel-major flat storage.
fn vector_field<'a>(
    params: &'a S6Params,
    shape: (usize, usize),
) -> impl FnMut(&[f64], &mut [f64]) + 'a {
    let input_output = params.input_output();
    move |x: &[f64], out: &mut [f64]| {
        let seq = TokenSequence::from_flat_unchecked(shape.0, shape.1, x.to_vec());
        let y = attention_with(params, &input_output, &seq)
            .apply(&seq)
            .expect("shapes fixed by the caller");
        out.copy_from_slice(y.as_slice());
    }
}

fn check_initial(params: &S6Params, x0: &TokenSequence) -> Result<()> {
    if x0.channels() != params.channels() {
        return Err(Error::Dimension(format!(
            "initial tokens have {} channels, layer has {}",
            x0.channels(),
            params.channels()
        )));
    }
    Ok(())
}

fn into_record(
    params: &S6Params,
    shape: (usize, usize),
    sol: Solution,
    with_attention: bool,
) -> TrajectoryRecord {
    let states: Vec<TokenSequence> = sol
        .states
        .into_iter()
        .map(|v| TokenSequence::from_flat_unchecked(shape.0, shape.1, v))
        .collect();
    let attention = with_attention.then(|| {
        let input_output = params.input_output();
        states
            .iter()
            .map(|s| attention_with(params, &input_output, s))
            .collect()
    });
    TrajectoryRecord {
        times: sol.times,
        states,
        attention,
        status: sol.status,
        blowup_time: sol.blowup_time,
    }
}

/// Classical RK4 with constant step.
pub fn integrate_fixed(
    params: &S6Params,
    x0: &TokenSequence,
    opts: &FixedOptions,
) -> Result<TrajectoryRecord> {
    check_initial(params, x0)?;
    let shape = (x0.channels(), x0.len());
    let sol = ode::integrate_rk4(
        vector_field(params, shape),
        x0.as_slice(),
        &FixedStep {
            t_end: opts.t_end,
            h: opts.h,
            sampling: opts.sampling.clone(),
            blowup_threshold: opts.blowup_threshold,
        },
    )?;
    Ok(into_record(params, shape, sol, opts.with_attention))
}

/// Step-doubling adaptive RK4 with blow-up detection.
pub fn integrate_adaptive(
    params: &S6Params,
    x0: &TokenSequence,
    opts: &AdaptiveOptions,
) -> Result<(TrajectoryRecord, BlowupReport)> {
    check_initial(params, x0)?;
    let shape = (x0.channels(), x0.len());
    let mut driver = StepDoubling::new(opts.t_end, opts.rel_tol);
    driver.blowup_threshold = opts.blowup_threshold;
    driver.min_step = opts.min_step;
    driver.sampling = opts.sampling.clone();
    let sol = ode::integrate_step_doubling(vector_field(params, shape), x0.as_slice(), &driver)?;

    let detected = sol.status.is_blowup();
    let trigger = detected.then(|| BlowupTrigger {
        channel: sol.peak_index / shape.1,
        token: sol.peak_index % shape.1,
    });
    let report = BlowupReport {
        detected,
        blowup_time: sol.blowup_time,
        trigger,
    };
    Ok((into_record(params, shape, sol, opts.with_attention), report))
}

/// Per-block token norms from iterating a stack of identical layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSeries {
    /// `norms[k][l]` is `‖x_l‖₂` after `k` blocks; `norms[0]` is the input.
    pub norms: Vec<Vec<f64>>,
    pub status: Status,
    pub final_state: TokenSequence,
}

/// Iterates `n_blocks` layers.
///
/// With `skip`, each block is the residual update `x + step · rhs(x)` (the
/// explicit Euler discretization of the ODE); without it, each block replaces
/// the sequence by the S6 output.
pub fn depth_iterate(
    params: &S6Params,
    x0: &TokenSequence,
    n_blocks: usize,
    step: f64,
    skip: bool,
    blowup_threshold: f64,
) -> Result<DepthSeries> {
    if n_blocks == 0 {
        return Err(Error::Argument("n_blocks must be >= 1".into()));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {step}")));
    }
    check_initial(params, x0)?;
    let mut x = x0.clone();
    let mut norms = vec![x.token_norms()];
    for _ in 0..n_blocks {
        let y = s6_forward_convolutional(params, &x)?;
        let next: Vec<f64> = if skip {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(a, b)| a + step * b)
                .collect()
        } else {
            y.as_slice().to_vec()
        };
        let next = TokenSequence::from_flat_unchecked(x.channels(), x.len(), next);
        if !next.is_finite() || next.max_abs() > blowup_threshold {
            return Ok(DepthSeries {
                norms,
                status: Status::BlowupDetected,
                final_state: x,
            });
        }
        x = next;
        norms.push(x.token_norms());
    }
    Ok(DepthSeries {
        norms,
        status: Status::Completed,
        final_state: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_an_equilibrium() {
        let p = S6Params::scalar(1.3, 0.4, 1.0).unwrap();
        let x = TokenSequence::zeros(1, 4);
        assert_eq!(ode_rhs(&p, &x).unwrap().max_abs(), 0.0);
        let rec = integrate_fixed(&p, &x, &FixedOptions::new(1.0, 0.1, 1)).unwrap();
        assert_eq!(rec.status, Status::Completed);
        assert!(rec.states.iter().all(|s| s.max_abs() == 0.0));
    }

    #[test]
    fn single_token_rhs() {
        let p = S6Params::scalar(1.0, 0.0, 1.0).unwrap();
        let x = TokenSequence::from_scalars(&[1.0]).unwrap();
        let v = ode_rhs(&p, &x).unwrap().get(0, 0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn first_token_has_no_coupling() {
        let p = S6Params::scalar(-0.8, 0.5, 1.2).unwrap();
        let x = TokenSequence::from_scalars(&[0.3, -1.2, 2.0]).unwrap();
        let terms = drift_decomposition(&p, &x).unwrap();
        assert_eq!(terms.coupling_term[0], 0.0);
        assert_eq!(terms.coupling_coefficient[0], 0.0);
    }

    #[test]
    fn negative_mu_positive_tokens_have_nonpositive_coupling() {
        let p = S6Params::scalar(-1.5, -0.3, 0.7).unwrap();
        let x = TokenSequence::from_scalars(&[0.4, 1.1, 2.5, 0.9]).unwrap();
        let terms = drift_decomposition(&p, &x).unwrap();
        assert!(terms.coupling_term.iter().all(|c| *c <= 0.0));
    }

    #[test]
    fn decomposition_requires_one_channel() {
        let p = S6Params::with_input_output(
            crate::linalg::Matrix::identity(2),
            crate::linalg::Matrix::zeros(2, 2),
            1.0,
        )
        .unwrap();
        let x = TokenSequence::zeros(2, 3);
        assert!(matches!(
            drift_decomposition(&p, &x),
            Err(Error::UnsupportedDimension(2))
        ));
    }

    #[test]
    fn rhs_rejects_nonfinite_state() {
        let p = S6Params::scalar(1.0, 0.0, 1.0).unwrap();
        let x = TokenSequence::from_flat_unchecked(1, 1, vec![f64::NAN]);
        assert!(matches!(ode_rhs(&p, &x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn depth_iterate_from_zero() {
        let p = S6Params::scalar(0.9, 0.2, 1.0).unwrap();
        let x = TokenSequence::zeros(1, 3);
        for skip in [true, false] {
            let s = depth_iterate(&p, &x, 5, 0.1, skip, 1e8).unwrap();
            assert_eq!(s.norms.len(), 6);
            assert!(s.norms.iter().flatten().all(|v| *v == 0.0));
        }
        assert!(depth_iterate(&p, &x, 0, 0.1, true, 1e8).is_err());
        assert!(depth_iterate(&p, &x, 3, 0.0, true, 1e8).is_err());
    }

    #[test]
    fn adaptive_reports_no_blowup_on_decay() {
        let p = S6Params::scalar(-1.0, 0.0, 1.0).unwrap();
        let x = TokenSequence::from_scalars(&[1.0, -0.5]).unwrap();
        let (rec, report) = integrate_adaptive(&p, &x, &AdaptiveOptions::new(5.0, 1e-6)).unwrap();
        assert!(!report.detected);
        assert_eq!(rec.status, Status::Completed);
        assert_eq!(rec.final_time(), 5.0);
    }
}
