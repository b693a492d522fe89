//! Explicit Runge–Kutta integration of autonomous systems `x' = f(x)` on flat
//! state vectors, with blow-up detection.
//!
//! Two drivers share the classical 4th-order step:
//!
//! * [`integrate_rk4`] takes constant steps `h` (the last step and steps that
//!   would overshoot a requested sample time are shortened to land on it);
//! * [`integrate_step_doubling`] controls the local error by comparing one
//!   step of size `h` against two steps of size `h/2`.
//!
//! Both stop as soon as the sup-norm of the state passes a threshold, which
//! is how finite-time singularities are reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    BlowupDetected,
    /// The step budget ran out before `t_end` or a blow-up was reached.
    StepUnderflow,
}

impl Status {
    /// Whether the run stopped short of `t_end`.
    pub fn is_blowup(self) -> bool {
        !matches!(self, Status::Completed)
    }
}

/// When to record snapshots. The initial and final states are always kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every `n`-th (accepted) step.
    EveryStep(usize),
    /// At the given increasing times; steps are shortened to land on them.
    Times(Vec<f64>),
}

impl Sampling {
    /// `count` equally spaced times ending at `t_end` (excluding 0).
    pub fn linear(t_end: f64, count: usize) -> Self {
        let count = count.max(1);
        Sampling::Times(
            (1..=count)
                .map(|k| t_end * k as f64 / count as f64)
                .collect(),
        )
    }

    /// `count` geometrically spaced times from `t_first` to `t_end`.
    pub fn geometric(t_first: f64, t_end: f64, count: usize) -> Self {
        let count = count.max(2);
        let ratio = (t_end / t_first).ln();
        let mut times: Vec<f64> = (0..count)
            .map(|k| t_first * (ratio * k as f64 / (count - 1) as f64).exp())
            .collect();
        *times.last_mut().expect("count >= 2") = t_end;
        Sampling::Times(times)
    }

    fn validate(&self, t_end: f64) -> Result<()> {
        match self {
            Sampling::EveryStep(0) => Err(Error::Argument("sample_every must be >= 1".into())),
            Sampling::EveryStep(_) => Ok(()),
            Sampling::Times(ts) => {
                if ts.iter().any(|t| !(t.is_finite() && *t > 0.0 && *t <= t_end)) {
                    return Err(Error::Argument(format!(
                        "sample times must lie in (0, {t_end}]"
                    )));
                }
                if ts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Argument("sample times must increase".into()));
                }
                Ok(())
            }
        }
    }
}

/// Sampled solution of an initial value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub status: Status,
    /// Last accepted time when `status` is a blow-up, else `None`.
    pub blowup_time: Option<f64>,
    /// Index of the largest component of the last state.
    pub peak_index: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// One classical RK4 step from `x` with step `h`.
pub fn rk4_step<F>(f: &mut F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

fn peak_index(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map_or(0, |(i, _)| i)
}

fn diverged(x: &[f64], threshold: f64) -> bool {
    let m = sup_norm(x);
    !(m.is_finite() && m <= threshold)
}

/// Times within this fraction of a step of a stop are snapped onto it.
const SNAP: f64 = 1e-9;

struct Recorder {
    sampling: Sampling,
    next_sample: usize,
    steps_since: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl Recorder {
    fn new(sampling: Sampling, x0: &[f64]) -> Self {
        Recorder {
            sampling,
            next_sample: 0,
            steps_since: 0,
            times: vec![0.0],
            states: vec![x0.to_vec()],
        }
    }

    /// The next time at which a step must end.
    fn next_stop(&self, t_end: f64) -> f64 {
        match &self.sampling {
            Sampling::Times(ts) => ts.get(self.next_sample).copied().unwrap_or(t_end).min(t_end),
            Sampling::EveryStep(_) => t_end,
        }
    }

    fn push(&mut self, t: f64, x: &[f64]) {
        if self.times.last().is_some_and(|&last| last >= t) {
            return;
        }
        self.times.push(t);
        self.states.push(x.to_vec());
    }

    fn after_step(&mut self, t: f64, x: &[f64], t_end: f64) {
        match &self.sampling {
            Sampling::EveryStep(n) => {
                self.steps_since += 1;
                if self.steps_since >= *n {
                    self.steps_since = 0;
                    self.push(t, x);
                }
            }
            Sampling::Times(ts) => {
                let passed = ts[self.next_sample..].iter().take_while(|&&s| s <= t).count();
                if passed > 0 {
                    self.next_sample += passed;
                    self.push(t, x);
                }
            }
        }
        if t >= t_end {
            self.push(t, x);
        }
    }

    fn finish(self, status: Status, blowup_time: Option<f64>, accepted: usize, rejected: usize) -> Solution {
        let peak = self.states.last().map_or(0, |s| peak_index(s));
        Solution {
            times: self.times,
            states: self.states,
            status,
            blowup_time,
            peak_index: peak,
            accepted_steps: accepted,
            rejected_steps: rejected,
        }
    }
}

/// Constant-step RK4 options.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedStep {
    pub t_end: f64,
    pub h: f64,
    pub sampling: Sampling,
    pub blowup_threshold: f64,
}

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e8;
pub const DEFAULT_MIN_STEP: f64 = 1e-12;

impl FixedStep {
    pub fn new(t_end: f64, h: f64) -> Self {
        FixedStep {
            t_end,
            h,
            sampling: Sampling::EveryStep(1),
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
        }
    }
}

/// Integrates `x' = f(x)` from `x0` with classical RK4 and constant step.
///
/// The run stops with [`Status::BlowupDetected`] at the last time whose
/// state stayed finite and under the threshold; the offending state is not
/// recorded.
pub fn integrate_rk4<F>(mut f: F, x0: &[f64], opts: &FixedStep) -> Result<Solution>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let FixedStep {
        t_end,
        h,
        ref sampling,
        blowup_threshold,
    } = *opts;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Argument(format!("t_end must be positive, got {t_end}")));
    }
    if !(h.is_finite() && h > 0.0 && h <= t_end) {
        return Err(Error::Argument(format!("step must lie in (0, t_end], got {h}")));
    }
    if !(blowup_threshold > 0.0) {
        return Err(Error::Argument("blow-up threshold must be positive".into()));
    }
    sampling.validate(t_end)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }

    let mut rec = Recorder::new(sampling.clone(), x0);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut steps = 0usize;
    // grid index; steps that land on a sample time do not advance it
    let mut k = 0u64;
    while t < t_end {
        let grid_next = ((k + 1) as f64 * h).min(t_end);
        let stop = rec.next_stop(t_end);
        let mut t_next = if stop < grid_next - SNAP * h {
            stop
        } else {
            k += 1;
            grid_next
        };
        if t_end - t_next < SNAP * h {
            t_next = t_end;
        }
        let x_next = rk4_step(&mut f, &x, t_next - t);
        if diverged(&x_next, blowup_threshold) {
            rec.push(t, &x);
            return Ok(rec.finish(Status::BlowupDetected, Some(t), steps, 0));
        }
        x = x_next;
        t = t_next;
        steps += 1;
        rec.after_step(t, &x, t_end);
    }
    Ok(rec.finish(Status::Completed, None, steps, 0))
}

/// Step-doubling adaptive RK4 options.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDoubling {
    pub t_end: f64,
    pub rel_tol: f64,
    pub blowup_threshold: f64,
    pub min_step: f64,
    pub initial_step: f64,
    pub sampling: Sampling,
    pub max_steps: usize,
}

impl StepDoubling {
    pub fn new(t_end: f64, rel_tol: f64) -> Self {
        StepDoubling {
            t_end,
            rel_tol,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            min_step: DEFAULT_MIN_STEP,
            initial_step: (t_end * 1e-4).min(1e-2),
            sampling: Sampling::EveryStep(1),
            max_steps: 1_000_000,
        }
    }
}

/// Integrates `x' = f(x)` with error control by step doubling.
///
/// A step of size `h` is accepted when every component of the difference
/// between the one-step and two-half-step results is at most
/// `rel_tol · (1 + |x|)`; the accepted value is the Richardson-extrapolated
/// two-half-step result. The run ends with [`Status::BlowupDetected`] when the
/// state exceeds `blowup_threshold` or the step shrinks below `min_step`, and
/// with [`Status::StepUnderflow`] when `max_steps` attempts are used up before
/// either happens (typically a stiff approach the explicit method can only
/// crawl along).
pub fn integrate_step_doubling<F>(mut f: F, x0: &[f64], opts: &StepDoubling) -> Result<Solution>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let t_end = opts.t_end;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Argument(format!("t_end must be positive, got {t_end}")));
    }
    if !(opts.rel_tol > 0.0 && opts.rel_tol <= 1e-2) {
        return Err(Error::Argument(format!(
            "rel_tol must lie in (0, 1e-2], got {}",
            opts.rel_tol
        )));
    }
    if !(opts.blowup_threshold >= 1e3) {
        return Err(Error::Argument(format!(
            "blow-up threshold must be at least 1e3, got {}",
            opts.blowup_threshold
        )));
    }
    if !(opts.min_step > 0.0 && opts.initial_step > 0.0) {
        return Err(Error::Argument("step sizes must be positive".into()));
    }
    opts.sampling.validate(t_end)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }

    let mut rec = Recorder::new(opts.sampling.clone(), x0);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut h = opts.initial_step.min(t_end);
    let (mut accepted, mut rejected) = (0usize, 0usize);

    while t < t_end {
        if accepted + rejected >= opts.max_steps {
            // progress has stalled as surely as with a step below min_step
            rec.push(t, &x);
            return Ok(rec.finish(Status::StepUnderflow, Some(t), accepted, rejected));
        }
        let stop = rec.next_stop(t_end);
        let remaining = stop - t;
        let lands = remaining <= h * (1.0 + SNAP);
        let step = if lands { remaining } else { h };

        let full = rk4_step(&mut f, &x, step);
        let half = rk4_step(&mut f, &x, 0.5 * step);
        let two_half = rk4_step(&mut f, &half, 0.5 * step);

        let mut err: f64 = 0.0;
        for i in 0..x.len() {
            let e = (two_half[i] - full[i]).abs() / (opts.rel_tol * (1.0 + two_half[i].abs()));
            err = if e.is_nan() { f64::INFINITY } else { err.max(e) };
        }

        if err <= 1.0 {
            let x_next: Vec<f64> = two_half
                .iter()
                .zip(&full)
                .map(|(a, b)| a + (a - b) / 15.0)
                .collect();
            let t_next = if lands { stop } else { t + step };
            if diverged(&x_next, opts.blowup_threshold) {
                if x_next.iter().all(|v| v.is_finite()) {
                    x = x_next;
                    t = t_next;
                    accepted += 1;
                }
                rec.push(t, &x);
                return Ok(rec.finish(Status::BlowupDetected, Some(t), accepted, rejected));
            }
            x = x_next;
            t = t_next;
            accepted += 1;
            rec.after_step(t, &x, t_end);
            // a step truncated to land on a stop says nothing about the next one
            if !(lands && step < h) {
                h = step * growth(err);
            }
        } else {
            rejected += 1;
            h = step * growth(err);
        }

        if h < opts.min_step && t < t_end {
            // the error control cannot follow the solution any further
            rec.push(t, &x);
            return Ok(rec.finish(Status::BlowupDetected, Some(t), accepted, rejected));
        }
    }
    Ok(rec.finish(Status::Completed, None, accepted, rejected))
}

fn growth(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else if err.is_finite() {
        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
    } else {
        0.2
    }
}
