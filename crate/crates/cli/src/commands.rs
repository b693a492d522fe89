use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::Serialize;

use s6_dynamics::dynamics::{
    integrate_adaptive, integrate_fixed, AdaptiveOptions, BlowupReport, BlowupTrigger,
    FixedOptions, TrajectoryRecord,
};
use s6_dynamics::linalg::{eigh, sym_part};
use s6_dynamics::ode::Status;
use s6_dynamics::parameterization::{ldl_build, spectrum_signs, LdlFactors, SignRegime};
use s6_dynamics::rates::{estimate_blowup, fit_logpower, fit_power};
use s6_dynamics::reorder::{
    importance_scores, reorder_tokens, softsort, sort_permutation, ReorderParams, SortOrder,
};
use s6_dynamics::scenario::{classify, InputOutputSpectrum, ScenarioReport};
use s6_dynamics::{Matrix, S6Params, TokenSequence};

use crate::config::{FitSpec, Integrator, Run, RunConfig};
use crate::output::{attention_csv, trajectory_csv, write_atomic};
use crate::{Cli, CliError, Command, Order, ParamcheckArgs, Regime, ReorderArgs, RNG_NAME};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Simulate => simulate(&load(cli)?.resolve(cli.seed)?, &out_dir),
        Command::Classify => classify_cmd(&load(cli)?, cli.seed, &out_dir),
        Command::FitRates => fit_rates(&load(cli)?.resolve(cli.seed)?, &out_dir),
        Command::ReorderDemo(args) => reorder_demo(args, cli.seed.unwrap_or(0), cli.out_dir.as_deref()),
        Command::Paramcheck(args) => paramcheck(args, cli, cli.out_dir.as_deref()),
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config <path>".into()))?;
    RunConfig::load(path)
}

#[derive(Debug, Serialize)]
struct Inputs<'a> {
    params: &'a S6Params,
    x0: &'a TokenSequence,
}

#[derive(Debug, Serialize)]
struct IntegrationSummary {
    method: &'static str,
    h: Option<f64>,
    rel_tol: Option<f64>,
    t_end: f64,
    blowup_threshold: f64,
    status: Status,
    final_time: f64,
    snapshots: usize,
}

#[derive(Debug, Serialize)]
struct FitResult {
    channel: usize,
    token: usize,
    kind: &'static str,
    window: (f64, f64),
    power: Option<u32>,
    slope: Option<f64>,
    intercept: Option<f64>,
    r_squared: Option<f64>,
    samples: Option<usize>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    command: &'static str,
    rng: &'static str,
    seed: u64,
    inputs: Inputs<'a>,
    scenario: Option<ScenarioReport>,
    scenario_error: Option<String>,
    integration: IntegrationSummary,
    blowup: BlowupReport,
    blowup_estimate: Option<f64>,
    blowup_estimate_error: Option<String>,
    fits: Vec<FitResult>,
}

fn integrate(run: &Run, with_attention: bool) -> Result<(TrajectoryRecord, BlowupReport), CliError> {
    let invalid = |e: s6_dynamics::Error| CliError::Validation(e.to_string());
    match run.integrator {
        Integrator::Fixed { h } => {
            let mut opts = FixedOptions::new(run.t_end, h, 1).sampling(run.sampling.clone());
            opts.blowup_threshold = run.blowup_threshold;
            if with_attention {
                opts = opts.with_attention();
            }
            let record = integrate_fixed(&run.params, &run.x0, &opts).map_err(invalid)?;
            let detected = record.status.is_blowup();
            let trigger = detected.then(|| peak(record.final_state()));
            let report = BlowupReport {
                detected,
                blowup_time: record.blowup_time,
                trigger,
            };
            Ok((record, report))
        }
        Integrator::Adaptive { rel_tol } => {
            let mut opts = AdaptiveOptions::new(run.t_end, rel_tol)
                .sampling(run.sampling.clone())
                .blowup_threshold(run.blowup_threshold);
            if with_attention {
                opts = opts.with_attention();
            }
            integrate_adaptive(&run.params, &run.x0, &opts).map_err(invalid)
        }
    }
}

fn peak(x: &TokenSequence) -> BlowupTrigger {
    let mut best = (0.0, BlowupTrigger { token: 0, channel: 0 });
    for d in 0..x.channels() {
        for l in 0..x.len() {
            if x.get(d, l).abs() > best.0 {
                best = (x.get(d, l).abs(), BlowupTrigger { token: l, channel: d });
            }
        }
    }
    best.1
}

fn run_fits(record: &TrajectoryRecord, specs: &[FitSpec]) -> Vec<FitResult> {
    let first = &record.states[0];
    let mut results = Vec::new();
    for spec in specs {
        for d in 0..first.channels() {
            for l in 0..first.len() {
                let magnitudes: Vec<f64> = record.series(d, l).iter().map(|v| v.abs()).collect();
                let mut r = FitResult {
                    channel: d + 1,
                    token: l + 1,
                    kind: "power",
                    window: (0.0, 0.0),
                    power: None,
                    slope: None,
                    intercept: None,
                    r_squared: None,
                    samples: None,
                    error: None,
                };
                let fit = match spec {
                    FitSpec::Power { window } => {
                        r.window = *window;
                        fit_power(&record.times, &magnitudes, *window)
                    }
                    FitSpec::Logpower { window, power } => {
                        let power = power.unwrap_or(l as u32 + 1);
                        r.kind = "logpower";
                        r.window = *window;
                        r.power = Some(power);
                        fit_logpower(&record.times, &magnitudes, power, *window).map(|f| f.fit)
                    }
                };
                match fit {
                    Ok(f) => {
                        r.slope = Some(f.slope);
                        r.intercept = Some(f.intercept);
                        r.r_squared = Some(f.r_squared);
                        r.samples = Some(f.samples);
                    }
                    Err(e) => r.error = Some(e.to_string()),
                }
                results.push(r);
            }
        }
    }
    results
}

fn build_report<'a>(
    command: &'static str,
    run: &'a Run,
    record: &TrajectoryRecord,
    blowup: BlowupReport,
    fits: Vec<FitResult>,
) -> RunReport<'a> {
    let (scenario, scenario_error) = match classify(&run.params, &run.x0) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (blowup_estimate, blowup_estimate_error) = if record.status.is_blowup() {
        match estimate_blowup(record) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let (method, h, rel_tol) = match run.integrator {
        Integrator::Fixed { h } => ("fixed_rk4", Some(h), None),
        Integrator::Adaptive { rel_tol } => ("adaptive_rk4", None, Some(rel_tol)),
    };
    RunReport {
        command,
        rng: RNG_NAME,
        seed: run.seed,
        inputs: Inputs {
            params: &run.params,
            x0: &run.x0,
        },
        scenario,
        scenario_error,
        integration: IntegrationSummary {
            method,
            h,
            rel_tol,
            t_end: run.t_end,
            blowup_threshold: run.blowup_threshold,
            status: record.status,
            final_time: record.final_time(),
            snapshots: record.times.len(),
        },
        blowup,
        blowup_estimate,
        blowup_estimate_error,
        fits,
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

fn status_line(record: &TrajectoryRecord, blowup: &BlowupReport) -> String {
    match (record.status, blowup.trigger) {
        (Status::Completed, _) => format!("completed at t = {:?}", record.final_time()),
        (status, Some(t)) => format!(
            "{} at t = {:?} (channel {}, token {})",
            serde_json::to_value(status).expect("status serializes").as_str().unwrap_or("blowup"),
            record.final_time(),
            t.channel + 1,
            t.token + 1
        ),
        (status, None) => format!("{status:?} at t = {:?}", record.final_time()),
    }
}

fn simulate(run: &Run, out_dir: &Path) -> Result<(), CliError> {
    let outputs = &run.outputs;
    let (record, blowup) = integrate(run, outputs.attention_csv.is_some())?;
    out!("{}", status_line(&record, &blowup));

    if let Some(name) = &outputs.trajectory_csv {
        write_atomic(out_dir, name, trajectory_csv(&record).as_bytes())?;
    }
    if let (Some(name), Some(csv)) = (&outputs.attention_csv, attention_csv(&record)) {
        write_atomic(out_dir, name, csv.as_bytes())?;
    }
    let fits = run_fits(&record, &run.fits);
    let report = build_report("simulate", run, &record, blowup, fits);
    write_atomic(out_dir, &outputs.report_json, &to_json(&report))
}

fn fit_rates(run: &Run, out_dir: &Path) -> Result<(), CliError> {
    let (record, blowup) = integrate(run, false)?;
    out!("{}", status_line(&record, &blowup));
    let specs = if run.fits.is_empty() {
        vec![FitSpec::Power {
            window: (run.t_end / 10.0, run.t_end),
        }]
    } else {
        run.fits.clone()
    };
    let fits = run_fits(&record, &specs);
    out!("kind      ch  token  window                    slope          r^2");
    for f in &fits {
        let window = format!("[{:?}, {:?}]", f.window.0, f.window.1);
        match (f.slope, f.r_squared) {
            (Some(s), Some(r2)) => out!(
                "{:<9} {:>2}  {:>5}  {:<24}  {:>13.6}  {:.6}",
                f.kind, f.channel, f.token, window, s, r2
            ),
            _ => out!(
                "{:<9} {:>2}  {:>5}  {:<24}  {}",
                f.kind,
                f.channel,
                f.token,
                window,
                f.error.as_deref().unwrap_or("no fit")
            ),
        }
    }
    let report = build_report("fit-rates", run, &record, blowup, fits);
    if let Some(t) = report.blowup_estimate {
        out!("extrapolated blow-up time: {t:?}");
    }
    write_atomic(out_dir, &run.outputs.report_json, &to_json(&report))
}

#[derive(Debug, Serialize)]
struct ClassifyReport<'a> {
    command: &'static str,
    rng: &'static str,
    seed: u64,
    inputs: Inputs<'a>,
    scenario: ScenarioReport,
}

fn classify_cmd(config: &RunConfig, seed_flag: Option<u64>, out_dir: &Path) -> Result<(), CliError> {
    let seed = seed_flag.or(config.seed).unwrap_or(0);
    let (params, x0) = config.resolve_inputs(&mut crate::rng(seed))?;
    let scenario = classify(&params, &x0).map_err(|e| CliError::Validation(e.to_string()))?;

    let label = if scenario.conjectural {
        format!("{} (conjectural)", scenario.label)
    } else {
        scenario.label.to_string()
    };
    out!("label: {label}");
    match &scenario.mu {
        InputOutputSpectrum::Scalar(mu) => out!("mu: {mu:?}"),
        InputOutputSpectrum::Eigenvalues(ev) => out!("eigenvalues of sym(S_C^T S_B): {ev:?}"),
    }
    for (l, signs) in scenario.per_token_sdelta_sign.iter().enumerate() {
        let s: Vec<&str> = signs
            .iter()
            .map(|s| match s {
                1 => "+",
                -1 => "-",
                _ => "0",
            })
            .collect();
        out!("token {:>3}: sign(S_Delta x) = {}", l + 1, s.join(" "));
    }
    out!("r0: {:?}", scenario.r0);
    out!("ordering hypothesis holds: {}", scenario.hypothesis_holds);
    if let Some(b) = &scenario.blowup_bounds {
        out!("blow-up time bound: {:?}", b.min);
    }

    let report = ClassifyReport {
        command: "classify",
        rng: RNG_NAME,
        seed,
        inputs: Inputs {
            params: &params,
            x0: &x0,
        },
        scenario,
    };
    write_atomic(out_dir, &config.outputs.report_json, &to_json(&report))
}

#[derive(Debug, Serialize)]
struct ReorderReport {
    command: &'static str,
    rng: &'static str,
    seed: u64,
    s_delta: Matrix,
    k: Vec<f64>,
    params: ReorderParams,
    before: TokenSequence,
    scores: Vec<f64>,
    soft_permutation: Matrix,
    hard_permutation: Vec<usize>,
    after: TokenSequence,
}

fn reorder_demo(args: &ReorderArgs, seed: u64, out_dir: Option<&Path>) -> Result<(), CliError> {
    if args.len == 0 || args.channels == 0 {
        return Err(CliError::Usage("--len and --channels must be >= 1".into()));
    }
    let order = match args.order {
        Order::Descending => SortOrder::Descending,
        Order::Ascending => SortOrder::Ascending,
    };
    let (d, len) = (args.channels, args.len);
    let mut rng = crate::rng(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let s_delta = Matrix::from_row_major(d, d, (0..d * d).map(|_| normal()).collect())
        .expect("shape matches data");
    let k: Vec<f64> = (0..d).map(|_| normal()).collect();
    let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..len).map(|_| normal()).collect()).collect();
    let k = if args.zero_k { vec![0.0; d] } else { k };
    let x = TokenSequence::from_channels(&rows).expect("finite draws");

    let usage = |e: s6_dynamics::Error| CliError::Usage(e.to_string());
    let rparams = ReorderParams::new(k.clone()).tau(args.tau).p(args.p).order(order);
    let scores = importance_scores(&s_delta, &k, &x).map_err(usage)?;
    let soft = softsort(&scores, &rparams).map_err(usage)?;
    let hard = sort_permutation(&scores, order);
    let after = reorder_tokens(&x, &soft).map_err(usage)?;

    out!("seed {seed}, L = {len}, D = {d}, tau = {:?}, p = {:?}, order = {order:?}", args.tau, args.p);
    out!("scores:");
    for (l, s) in scores.iter().enumerate() {
        out!("  {:>3}  {s:>12.6}", l + 1);
    }
    out!("soft permutation (rows sum to 1):");
    for i in 0..len {
        let row: Vec<String> = soft.matrix.row(i).iter().map(|v| format!("{v:.4}")).collect();
        out!("  {}", row.join(" "));
    }
    let one_based: Vec<usize> = hard.iter().map(|i| i + 1).collect();
    out!("hard permutation: {one_based:?}");
    print_tokens("before", &x);
    print_tokens("after", &after);

    if let Some(dir) = out_dir {
        let report = ReorderReport {
            command: "reorder-demo",
            rng: RNG_NAME,
            seed,
            s_delta,
            k,
            params: rparams,
            before: x,
            scores,
            soft_permutation: soft.matrix,
            hard_permutation: hard,
            after,
        };
        write_atomic(dir, "report.json", &to_json(&report))?;
    }
    Ok(())
}

fn print_tokens(title: &str, x: &TokenSequence) {
    out!("{title}:");
    for d in 0..x.channels() {
        let row: Vec<String> = x.channel(d).iter().map(|v| format!("{v:>9.4}")).collect();
        out!("  ch {}: {}", d + 1, row.join(" "));
    }
}

#[derive(Debug, Serialize)]
struct ParamcheckReport {
    command: &'static str,
    rng: &'static str,
    seed: Option<u64>,
    factors: LdlFactors,
    s_b: Matrix,
    s_c: Matrix,
    eigenvalues: Vec<f64>,
    requested_signs: Vec<i8>,
    obtained_signs: Vec<i8>,
    min_abs_eigenvalue: f64,
    pass: bool,
}

/// Smallest eigenvalue magnitude accepted as a clean sign.
const MIN_ABS_EIGENVALUE: f64 = 1e-10;

fn paramcheck(args: &ParamcheckArgs, cli: &Cli, out_dir: Option<&Path>) -> Result<(), CliError> {
    let invalid = |e: s6_dynamics::Error| CliError::Validation(e.to_string());
    let from_config = match &cli.config {
        Some(path) => RunConfig::load(path)?.params.and_then(|p| p.ldl),
        None => None,
    };
    let (factors, seed) = match from_config {
        Some(l) => {
            let lower = Matrix::from_rows(&l.lower).map_err(invalid)?;
            (LdlFactors::from_lower(&lower, l.d_raw, l.signs).map_err(invalid)?, None)
        }
        None => {
            if args.dim == 0 {
                return Err(CliError::Usage("--dim must be >= 1".into()));
            }
            let seed = cli.seed.unwrap_or(0);
            (random_factors(args.dim, args.regime, seed), Some(seed))
        }
    };
    let (s_b, s_c) = ldl_build(&factors).map_err(invalid)?;
    let obtained = spectrum_signs(&s_b, &s_c).map_err(invalid)?;
    let sym = sym_part(&s_c.transpose().matmul(&s_b).map_err(invalid)?).map_err(invalid)?;
    let eigenvalues = eigh(&sym).map_err(invalid)?.eigenvalues;
    let min_abs = eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));

    let mut requested = factors.signs.clone();
    requested.sort_unstable_by(|a, b| b.cmp(a));
    let mut got = obtained.clone();
    got.sort_unstable_by(|a, b| b.cmp(a));
    let pass = requested == got && min_abs > MIN_ABS_EIGENVALUE;

    let fmt = |s: &[i8]| s.iter().map(|v| match v { 1 => '+', -1 => '-', _ => '0' }).collect::<String>();
    out!("D = {}", factors.dim());
    out!("requested signs: {}", fmt(&requested));
    out!("obtained signs:  {}", fmt(&obtained));
    out!("eigenvalues: {eigenvalues:?}");
    out!("min |eigenvalue|: {min_abs:?}");
    out!("{}", if pass { "PASS" } else { "FAIL" });

    if let Some(dir) = out_dir {
        let report = ParamcheckReport {
            command: "paramcheck",
            rng: RNG_NAME,
            seed,
            factors,
            s_b,
            s_c,
            eigenvalues,
            requested_signs: requested,
            obtained_signs: obtained,
            min_abs_eigenvalue: min_abs,
            pass,
        };
        write_atomic(dir, "report.json", &to_json(&report))?;
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Validation("eigenvalue signs do not match the requested pattern".into()))
    }
}

/// Strictly lower entries uniform on `[-0.5, 0.5]`, `d_raw` standard normal.
fn random_factors(dim: usize, regime: Regime, seed: u64) -> LdlFactors {
    let regime = match regime {
        Regime::Positive => SignRegime::Positive,
        Regime::Negative => SignRegime::Negative,
        Regime::Mixed => SignRegime::Mixed,
    };
    let mut rng = crate::rng(seed);
    let uniform = Uniform::new_inclusive(-0.5, 0.5).expect("valid range");
    let mut lower = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..i {
            lower[(i, j)] = uniform.sample(&mut rng);
        }
    }
    let normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let d_raw = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    LdlFactors::from_lower(&lower, d_raw, regime.signs(dim)).expect("well-formed factors")
}
