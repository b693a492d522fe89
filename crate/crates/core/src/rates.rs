//! Numerical verdicts on asymptotic rates.
//!
//! The convergence and divergence statements are one-sided `O(·)` bounds, so
//! the fits here are meant to be compared against an upper limit, not an
//! exact exponent.

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};

/// Least-squares line through transformed samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

const MIN_SAMPLES: usize = 10;

fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

/// Samples with `t` inside the closed window.
fn windowed(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    if times.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} times for {} values",
            times.len(),
            values.len()
        )));
    }
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::Argument(format!("empty window [{lo}, {hi}]")));
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if ts.len() < MIN_SAMPLES {
        return Err(Error::Argument(format!(
            "{} samples in [{lo}, {hi}], need at least {MIN_SAMPLES}",
            ts.len()
        )));
    }
    if let Some(v) = vs.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "values must be positive and finite, got {v}; pass magnitudes"
        )));
    }
    Ok((ts, vs))
}

/// Fits `ln value = slope · ln t + intercept`; `slope` estimates the power.
pub fn fit_power(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    if window.0 <= 0.0 {
        return Err(Error::Argument("power fits need t > 0".into()));
    }
    let (ts, vs) = windowed(times, values, window)?;
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let (slope, intercept, r_squared) = line_fit(&lx, &ly);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window,
        samples: ts.len(),
    })
}

/// Result of [`fit_logpower`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPowerFit {
    /// `slope` is the effective exponent `k` in `value ~ (ln t)^k`.
    pub fit: RateFit,
    /// Smallest and largest `value / (ln t)^power` over the window.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl LogPowerFit {
    /// `ratio_max / ratio_min`; close to 1 when the reference power fits.
    pub fn ratio_spread(&self) -> f64 {
        self.ratio_max / self.ratio_min
    }
}

/// Fits `ln value = slope · ln ln t + intercept` and reports how stable
/// `value / (ln t)^power` is over the window.
pub fn fit_logpower(
    times: &[f64],
    values: &[f64],
    power: u32,
    window: (f64, f64),
) -> Result<LogPowerFit> {
    if window.0 <= 1.0 {
        return Err(Error::Argument(format!(
            "log-power fits need t_lo > 1, got {}",
            window.0
        )));
    }
    let (ts, vs) = windowed(times, values, window)?;
    let lx: Vec<f64> = ts.iter().map(|t| t.ln().ln()).collect();
    let ly: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let (slope, intercept, r_squared) = line_fit(&lx, &ly);
    let ratios = ts.iter().zip(&vs).map(|(t, v)| v / t.ln().powi(power as i32));
    let (ratio_min, ratio_max) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (lo.min(r), hi.max(r))
    });
    Ok(LogPowerFit {
        fit: RateFit {
            slope,
            intercept,
            r_squared,
            window,
            samples: ts.len(),
        },
        ratio_min,
        ratio_max,
    })
}

/// Largest value among samples with `t` in the closed window.
pub fn window_max(times: &[f64], values: &[f64], window: (f64, f64)) -> Option<f64> {
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(_, v)| *v)
        .reduce(f64::max)
}

/// Summary of one attention entry `P_dlj` along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntryStats {
    pub channel: usize,
    pub l: usize,
    pub j: usize,
    /// `sup_t t · |P_dlj(t)|` over the snapshots.
    pub max_scaled: f64,
    /// `sup_t |P_dlj(t)|`.
    pub running_max: f64,
    /// `|P_dlj|` at the last snapshot.
    pub terminal: f64,
}

/// Per-entry decay statistics for every lower-triangular attention entry.
pub fn attention_decay_check(record: &TrajectoryRecord) -> Result<Vec<AttentionEntryStats>> {
    let attention = record
        .attention
        .as_ref()
        .ok_or_else(|| Error::Argument("record has no attention snapshots".into()))?;
    let first = attention
        .first()
        .ok_or_else(|| Error::Argument("record has no attention snapshots".into()))?;
    let (dd, len) = (first.channels(), first.len());
    let mut stats = Vec::with_capacity(dd * len * (len + 1) / 2);
    for d in 0..dd {
        for l in 0..len {
            for j in 0..=l {
                let mut entry = AttentionEntryStats {
                    channel: d,
                    l,
                    j,
                    max_scaled: 0.0,
                    running_max: 0.0,
                    terminal: 0.0,
                };
                for (t, p) in record.times.iter().zip(attention) {
                    let v = p.get(d, l, j).abs();
                    entry.max_scaled = entry.max_scaled.max(t * v);
                    entry.running_max = entry.running_max.max(v);
                    entry.terminal = v;
                }
                stats.push(entry);
            }
        }
    }
    Ok(stats)
}

/// Number of trailing samples used by [`estimate_blowup`].
pub const BLOWUP_TAIL: usize = 10;

/// Extrapolated blow-up time of a trajectory that stopped on divergence.
///
/// Near a singularity of the form `x ≈ c (T - t)^{-1/2}` the quantity
/// `‖x‖_∞^{-2}` is affine in `t`; the root of a line fitted to the last
/// [`BLOWUP_TAIL`] samples estimates `T`.
pub fn estimate_blowup(record: &TrajectoryRecord) -> Result<f64> {
    if record.status != crate::ode::Status::BlowupDetected {
        return Err(Error::Argument(
            "trajectory did not stop on a blow-up".into(),
        ));
    }
    let sup: Vec<f64> = record.states.iter().map(|s| s.max_abs()).collect();
    extrapolate_singularity(&record.times, &sup, BLOWUP_TAIL)
}

/// Root of the line through `(t, v^{-2})` over the last `tail` samples.
pub fn extrapolate_singularity(times: &[f64], magnitudes: &[f64], tail: usize) -> Result<f64> {
    if times.len() != magnitudes.len() {
        return Err(Error::Dimension("times and magnitudes differ in length".into()));
    }
    let tail = tail.max(MIN_SAMPLES);
    if times.len() < tail {
        return Err(Error::Argument(format!(
            "{} samples, need at least {tail}",
            times.len()
        )));
    }
    let start = times.len() - tail;
    let ts = &times[start..];
    let inv_sq: Vec<f64> = magnitudes[start..]
        .iter()
        .map(|m| {
            if *m > 0.0 && m.is_finite() {
                Ok(m.powi(-2))
            } else {
                Err(Error::Domain(format!("magnitude {m} near the blow-up")))
            }
        })
        .collect::<Result<_>>()?;
    let (slope, intercept, _) = line_fit(ts, &inv_sq);
    if !(slope < 0.0) {
        return Err(Error::Domain(
            "magnitudes are not growing toward a singularity".into(),
        ));
    }
    Ok(-intercept / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn exact_inverse_sqrt() {
        let ts = grid(1.0, 100.0, 50);
        let vs: Vec<f64> = ts.iter().map(|t| t.powf(-0.5)).collect();
        let fit = fit_power(&ts, &vs, (1.0, 100.0)).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-10);
        assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn exact_inverse() {
        let ts = grid(2.0, 80.0, 30);
        let vs: Vec<f64> = ts.iter().map(|t| 3.7 / t).collect();
        let fit = fit_power(&ts, &vs, (2.0, 80.0)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10);
        assert!((fit.intercept - 3.7f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn power_fit_errors() {
        let ts = grid(1.0, 10.0, 20);
        let mut vs = vec![1.0; 20];
        vs[3] = -1.0;
        assert!(matches!(fit_power(&ts, &vs, (1.0, 10.0)), Err(Error::Domain(_))));
        assert!(matches!(
            fit_power(&ts[..5], &vs[..5], (1.0, 10.0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn exact_log_square() {
        let ts = grid(10.0, 1e6, 40);
        let vs: Vec<f64> = ts.iter().map(|t| t.ln().powi(2)).collect();
        let fit = fit_logpower(&ts, &vs, 2, (10.0, 1e6)).unwrap();
        assert!((fit.fit.slope - 2.0).abs() < 1e-6);
        assert!((fit.ratio_spread() - 1.0).abs() < 1e-12);
        assert!(fit_logpower(&ts, &vs, 2, (1.0, 1e6)).is_err());
    }

    #[test]
    fn inverse_sqrt_singularity() {
        let ts = grid(0.5, 0.99, 40);
        let vs: Vec<f64> = ts.iter().map(|t| (1.0 - t).powf(-0.5)).collect();
        let tb = extrapolate_singularity(&ts, &vs, 10).unwrap();
        assert!((tb - 1.0).abs() < 1e-3);
    }

    #[test]
    fn singularity_estimate_scales_with_time() {
        let ts: Vec<f64> = (0..20).map(|k| 0.1 + 0.04 * k as f64).collect();
        let vs: Vec<f64> = ts.iter().map(|t| 2.0 * (1.0 - t).powf(-0.5)).collect();
        let base = extrapolate_singularity(&ts, &vs, 12).unwrap();
        let scaled: Vec<f64> = ts.iter().map(|t| 3.0 * t).collect();
        let est = extrapolate_singularity(&scaled, &vs, 12).unwrap();
        assert!((est - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn window_max_selects_window() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let vs = [9.0, 1.0, 5.0, 2.0];
        assert_eq!(window_max(&ts, &vs, (1.0, 3.0)), Some(5.0));
        assert_eq!(window_max(&ts, &vs, (4.0, 5.0)), None);
    }
}
