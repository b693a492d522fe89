//! Run configuration: the JSON document read by `--config`, and its
//! resolution into concrete parameters, tokens and integrator settings.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use s6_dynamics::fixtures;
use s6_dynamics::ode::{Sampling, DEFAULT_BLOWUP_THRESHOLD};
use s6_dynamics::parameterization::{ldl_build, LdlFactors};
use s6_dynamics::{Matrix, S6Params, TokenSequence};

use crate::CliError;

/// Top-level config document. Every field is optional in the JSON; the
/// "exactly one source" rules are checked by [`RunConfig::resolve`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of a built-in fixture supplying both `params` and `x0`.
    pub fixture: Option<String>,
    pub params: Option<ParamsSpec>,
    pub x0: Option<TokensSpec>,
    pub seed: Option<u64>,
    pub integrator: Option<IntegratorSpec>,
    pub t_end: Option<f64>,
    pub snapshots: Option<SnapshotSpec>,
    pub blowup_threshold: Option<f64>,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub fits: Vec<FitSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub explicit: Option<ExplicitParams>,
    pub scalar: Option<ScalarParams>,
    pub input_output: Option<InputOutputParams>,
    pub ldl: Option<LdlParams>,
    pub random: Option<RandomParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitParams {
    pub a: Vec<f64>,
    pub s_delta: Vec<Vec<f64>>,
    pub s_b: Vec<Vec<f64>>,
    pub s_c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParams {
    pub mu: f64,
    pub s_delta: f64,
    pub a: f64,
}

/// `S_C = I`, `S_B = input_output`, one shared decay.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputOutputParams {
    pub matrix: Vec<Vec<f64>>,
    pub s_delta: Vec<Vec<f64>>,
    pub a: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdlParams {
    /// Only the strictly lower part is read.
    pub lower: Vec<Vec<f64>>,
    pub d_raw: Vec<f64>,
    pub signs: Vec<i8>,
    pub s_delta: Vec<Vec<f64>>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomParams {
    pub channels: usize,
    pub state_size: usize,
    /// Standard deviation of the matrix entries.
    #[serde(default = "one")]
    pub scale: f64,
}

/// Either explicit values (one row per channel) or a random draw.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TokensSpec {
    Values(Vec<Vec<f64>>),
    Random { random: RandomTokens },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTokens {
    pub len: usize,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub fixed: Option<FixedSpec>,
    pub adaptive: Option<AdaptiveSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSpec {
    pub h: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSpec {
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SnapshotSpec {
    /// Every n-th step.
    Every(usize),
    /// `count` equally spaced times.
    Linear(usize),
    Geometric { first: f64, count: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_trajectory")]
    pub trajectory_csv: Option<String>,
    #[serde(default)]
    pub attention_csv: Option<String>,
    #[serde(default = "default_report")]
    pub report_json: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            trajectory_csv: default_trajectory(),
            attention_csv: None,
            report_json: default_report(),
        }
    }
}

/// A rate fit applied to `|x_dl(t)|` of every token.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum FitSpec {
    Power {
        window: (f64, f64),
    },
    /// `power` defaults to the 1-based token index.
    Logpower {
        window: (f64, f64),
        power: Option<u32>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_trajectory() -> Option<String> {
    Some("trajectory.csv".into())
}

fn default_report() -> String {
    "report.json".into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    Fixed { h: f64 },
    Adaptive { rel_tol: f64 },
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct Run {
    pub params: S6Params,
    pub x0: TokenSequence,
    pub seed: u64,
    pub integrator: Integrator,
    pub t_end: f64,
    pub sampling: Sampling,
    pub blowup_threshold: f64,
    pub outputs: OutputSpec,
    pub fits: Vec<FitSpec>,
}

pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const DEFAULT_SNAPSHOTS: usize = 500;

impl RunConfig {
    /// Reads and parses a config file; any failure here is exit code 2.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))
    }

    /// Validates the document and draws any random inputs. `seed_override`
    /// (the `--seed` flag) wins over the `seed` key.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Run, CliError> {
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let mut rng = crate::rng(seed);
        let (params, x0) = self.resolve_inputs(&mut rng)?;

        let integrator = match &self.integrator {
            None => Integrator::Adaptive {
                rel_tol: DEFAULT_REL_TOL,
            },
            Some(IntegratorSpec {
                fixed: Some(f),
                adaptive: None,
            }) => Integrator::Fixed { h: f.h },
            Some(IntegratorSpec {
                fixed: None,
                adaptive: Some(a),
            }) => Integrator::Adaptive { rel_tol: a.rel_tol },
            Some(_) => return Err(invalid("integrator needs exactly one of `fixed`, `adaptive`")),
        };
        match integrator {
            Integrator::Fixed { h } if !(h > 0.0 && h.is_finite()) => {
                return Err(invalid(format!("step h must be positive, got {h}")))
            }
            Integrator::Adaptive { rel_tol } if !(rel_tol > 0.0 && rel_tol <= 1e-2) => {
                return Err(invalid(format!("rel_tol must lie in (0, 1e-2], got {rel_tol}")))
            }
            _ => {}
        }

        let t_end = self.t_end.ok_or_else(|| invalid("missing `t_end`"))?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(invalid(format!("t_end must be positive, got {t_end}")));
        }
        let sampling = match &self.snapshots {
            None => Sampling::linear(t_end, DEFAULT_SNAPSHOTS),
            Some(SnapshotSpec::Every(0)) => return Err(invalid("snapshots.every must be >= 1")),
            Some(SnapshotSpec::Every(n)) => Sampling::EveryStep(*n),
            Some(SnapshotSpec::Linear(0)) => return Err(invalid("snapshots.linear must be >= 1")),
            Some(SnapshotSpec::Linear(n)) => Sampling::linear(t_end, *n),
            Some(SnapshotSpec::Geometric { first, count }) => {
                if !(*first > 0.0 && *first < t_end) || *count < 2 {
                    return Err(invalid(
                        "geometric snapshots need 0 < first < t_end and count >= 2",
                    ));
                }
                Sampling::geometric(*first, t_end, *count)
            }
        };
        let blowup_threshold = self.blowup_threshold.unwrap_or(DEFAULT_BLOWUP_THRESHOLD);
        if !(blowup_threshold >= 1e3 && blowup_threshold.is_finite()) {
            return Err(invalid(format!(
                "blowup_threshold must be finite and >= 1e3, got {blowup_threshold}"
            )));
        }
        for fit in &self.fits {
            let (lo, hi) = match fit {
                FitSpec::Power { window } | FitSpec::Logpower { window, .. } => *window,
            };
            if !(lo < hi) {
                return Err(invalid(format!("empty fit window [{lo}, {hi}]")));
            }
        }
        Ok(Run {
            params,
            x0,
            seed,
            integrator,
            t_end,
            sampling,
            blowup_threshold,
            outputs: self.outputs.clone(),
            fits: self.fits.clone(),
        })
    }

    /// Parameters and tokens only; enough for `classify`.
    pub fn resolve_inputs(&self, rng: &mut ChaCha8Rng) -> Result<(S6Params, TokenSequence), CliError> {
        if let Some(name) = &self.fixture {
            if self.params.is_some() || self.x0.is_some() {
                return Err(invalid("`fixture` excludes `params` and `x0`"));
            }
            let f = fixtures::by_name(name).ok_or_else(|| {
                let names: Vec<&str> = fixtures::all().iter().map(|f| f.name).collect();
                invalid(format!("unknown fixture `{name}`; known: {}", names.join(", ")))
            })?;
            return Ok((f.params, f.x0));
        }
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| invalid("missing `params` (or `fixture`)"))?
            .resolve(rng)?;
        let x0 = match self.x0.as_ref().ok_or_else(|| invalid("missing `x0`"))? {
            TokensSpec::Values(rows) => TokenSequence::from_channels(rows).map_err(validation)?,
            TokensSpec::Random { random } => random_tokens(rng, params.channels(), random)?,
        };
        if x0.channels() != params.channels() {
            return Err(invalid(format!(
                "x0 has {} channels, params have {}",
                x0.channels(),
                params.channels()
            )));
        }
        Ok((params, x0))
    }
}

impl ParamsSpec {
    fn resolve(&self, rng: &mut ChaCha8Rng) -> Result<S6Params, CliError> {
        let sources = [
            self.explicit.is_some(),
            self.scalar.is_some(),
            self.input_output.is_some(),
            self.ldl.is_some(),
            self.random.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(invalid(
                "params needs exactly one of `explicit`, `scalar`, `input_output`, `ldl`, `random`",
            ));
        }
        let p = if let Some(e) = &self.explicit {
            S6Params::new(e.a.clone(), matrix(&e.s_delta)?, matrix(&e.s_b)?, matrix(&e.s_c)?)
        } else if let Some(s) = &self.scalar {
            S6Params::scalar(s.mu, s.s_delta, s.a)
        } else if let Some(io) = &self.input_output {
            S6Params::with_input_output(matrix(&io.matrix)?, matrix(&io.s_delta)?, io.a)
        } else if let Some(l) = &self.ldl {
            let factors = LdlFactors::from_lower(&matrix(&l.lower)?, l.d_raw.clone(), l.signs.clone())
                .map_err(validation)?;
            let (s_b, s_c) = ldl_build(&factors).map_err(validation)?;
            S6Params::new(l.a.clone(), matrix(&l.s_delta)?, s_b, s_c)
        } else {
            let r = self.random.as_ref().expect("one source is set");
            random_params(rng, r)
        };
        p.map_err(validation)
    }
}

fn random_params(rng: &mut ChaCha8Rng, spec: &RandomParams) -> s6_dynamics::Result<S6Params> {
    if spec.channels == 0 || spec.state_size == 0 {
        return Err(s6_dynamics::Error::Dimension(
            "random params need channels, state_size >= 1".into(),
        ));
    }
    let normal = Normal::new(0.0, spec.scale)
        .map_err(|e| s6_dynamics::Error::Argument(format!("scale: {e}")))?;
    let (d, n) = (spec.channels, spec.state_size);
    let mut draw = |rows: usize, cols: usize| {
        Matrix::from_row_major(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
    };
    let s_delta = draw(d, d)?;
    let s_b = draw(n, d)?;
    let s_c = draw(n, d)?;
    let decay = Uniform::new(0.5, 2.0).expect("valid range");
    let a = (0..d).map(|_| rng.sample(decay)).collect();
    S6Params::new(a, s_delta, s_b, s_c)
}

fn random_tokens(
    rng: &mut ChaCha8Rng,
    channels: usize,
    spec: &RandomTokens,
) -> Result<TokenSequence, CliError> {
    let normal = Normal::new(0.0, spec.scale).map_err(|e| invalid(format!("x0 scale: {e}")))?;
    let rows: Vec<Vec<f64>> = (0..channels)
        .map(|_| (0..spec.len).map(|_| normal.sample(rng)).collect())
        .collect();
    TokenSequence::from_channels(&rows).map_err(validation)
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(validation)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn validation(e: s6_dynamics::Error) -> CliError {
    CliError::Validation(e.to_string())
}
