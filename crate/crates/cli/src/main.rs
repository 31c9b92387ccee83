use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use incred::certify::{
    certify_lyapunov, certify_semidefinite, invariance_data, matrosov_analysis, CertifyOptions,
    DerivativeMode, GridSpec, DEFAULT_TOL,
};
use incred::derivative::{baseline_bc, baseline_ps, u_generalized_derivative};
use incred::interval::real_str;
use incred::reduction::tabulate_reduction;
use incred::setmap::{validate_gradient, GradientReport, RegularFunctionSpec};
use incred::simulate::{
    check_lyapunov_descent, check_partial_convergence, check_reduction_membership,
    check_selection_soundness, integrate, SelectionStrategy, DEFAULT_MEMBERSHIP_TOL,
    TAIL_THRESHOLD,
};
use incred::system::SystemDef;
use incred::Error;

/// Reduce differential inclusions, evaluate set-valued Lyapunov
/// derivatives and screen stability conditions on grids.
///
/// Exit status: 0 success or CERTIFIED, 1 analysis negative (VIOLATED,
/// INCONCLUSIVE or a failed check), 2 input parse error, 3 semantic error.
/// INCRED_THREADS caps the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "incred", version)]
struct Cli {
    /// Suppress the summary printed on stdout.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

static QUIET: OnceLock<bool> = OnceLock::new();

macro_rules! sayln {
    ($($arg:tt)*) => {
        if !QUIET.get().copied().unwrap_or(false) {
            println!($($arg)*);
        }
    };
}

macro_rules! say {
    ($($arg:tt)*) => {
        if !QUIET.get().copied().unwrap_or(false) {
            print!($($arg)*);
        }
    };
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate F and the reduced inclusion at probe points (reduction.csv, reduction.txt).
    Reduce(Common),
    /// U-generalized, BC and PS derivatives at probe points (derivative.csv).
    Deriv(Common),
    /// Certify the Lyapunov decrease condition on the grid (certificate.json).
    Certify(Common),
    /// Estimate E and screen invariance candidates (invariance.json).
    Invariance(Common),
    /// Matrosov chain, constants and conditions (matrosov.json).
    Matrosov(Common),
    /// Integrate a selection trajectory and check it (trajectory.csv, simulation.json).
    Simulate(Common),
    /// Compare declared Clarke gradients with finite differences (gradient.json).
    ValidateGradient(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// System definition JSON file.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Uniform nodes per axis, replacing the file's grid axes.
    #[arg(long, value_name = "N", conflicts_with = "grid_file")]
    grid: Option<usize>,
    /// JSON file holding a `grid` block.
    #[arg(long, value_name = "PATH")]
    grid_file: Option<PathBuf>,
    /// Margin tolerance for grid checks; membership tolerance for simulate.
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
    /// Euler step.
    #[arg(long, value_name = "X")]
    h: Option<f64>,
    /// Simulation horizon.
    #[arg(long = "T", value_name = "X")]
    horizon: Option<f64>,
    /// Seed for random-extreme selection.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// reduced-descent, midpoint or random-extreme.
    #[arg(long, value_name = "NAME")]
    strategy: Option<String>,
    /// Use U = {V} (the BC baseline) instead of the file's U.
    #[arg(long)]
    baseline: bool,
    /// Point, comma separated: initial state for simulate, probe for other commands.
    #[arg(
        long,
        value_name = "X1,X2,..",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    x0: Option<Vec<f64>>,
    /// Initial time for simulate; evaluation time for reduce, deriv and validate-gradient.
    #[arg(long, value_name = "X")]
    t0: Option<f64>,
    /// Sampling radius for validate-gradient.
    #[arg(long, value_name = "X", default_value_t = 1e-5)]
    radius: f64,
}

enum Failure {
    Core(Error),
    Io(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    QUIET.set(cli.quiet).ok();
    if let Some(n) = std::env::var("INCRED_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_parse_error() { 2 } else { 3 })
        }
        Err(Failure::Io(path, e)) => {
            eprintln!("error: {}: {e}", path.display());
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Reduce(c) => reduce(&c),
        Command::Deriv(c) => deriv(&c),
        Command::Certify(c) => certify(&c),
        Command::Invariance(c) => invariance(&c),
        Command::Matrosov(c) => matrosov(&c),
        Command::Simulate(c) => simulate(&c),
        Command::ValidateGradient(c) => validate(&c),
    }
}

fn load(c: &Common) -> Result<SystemDef, Failure> {
    let mut sys = SystemDef::from_path(&c.input)?;
    if c.baseline {
        sys.u = vec![sys.v.clone()];
    }
    Ok(sys)
}

fn grid(c: &Common, sys: &SystemDef) -> Result<GridSpec, Failure> {
    if let Some(path) = &c.grid_file {
        let src = fs::read_to_string(path).map_err(|e| Failure::Io(path.clone(), e))?;
        return Ok(sys.grid_from_json(&src)?);
    }
    if let Some(n) = c.grid {
        return Ok(sys.grid_with_count(n)?);
    }
    match &sys.grid {
        Some(g) => Ok(g.clone()),
        None => Ok(sys.grid_with_count(21)?),
    }
}

/// `--x0`, else the file's probes, else the grid nodes.
fn probes(c: &Common, sys: &SystemDef) -> Result<Vec<(Vec<f64>, f64)>, Failure> {
    let t = c.t0.unwrap_or(0.0);
    let xs = if let Some(x) = &c.x0 {
        if x.len() != sys.n {
            return Err(
                Error::invalid(format!("--x0 has {} coordinates, n = {}", x.len(), sys.n)).into(),
            );
        }
        vec![x.clone()]
    } else if !sys.probes.is_empty() && c.grid.is_none() && c.grid_file.is_none() {
        sys.probes.clone()
    } else {
        grid(c, sys)?.nodes()
    };
    Ok(xs.into_iter().map(|x| (x, t)).collect())
}

fn out_path(c: &Common, file: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&c.out).map_err(|e| Failure::Io(c.out.clone(), e))?;
    Ok(c.out.join(file))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn write_json<T: Serialize>(c: &Common, file: &str, value: &T) -> Result<PathBuf, Failure> {
    let path = out_path(c, file)?;
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_text(&path, &text)?;
    Ok(path)
}

fn create(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn reduce(c: &Common) -> Outcome {
    let sys = load(c)?;
    let table = tabulate_reduction(&sys.f, &sys.u, &probes(c, &sys)?)?;
    table.write_csv(create(&out_path(c, "reduction.csv")?)?)?;
    let text = table.to_string();
    write_text(&out_path(c, "reduction.txt")?, &text)?;
    say!("{text}");
    Ok(true)
}

fn deriv(c: &Common) -> Outcome {
    let sys = load(c)?;
    let points = probes(c, &sys)?;
    let mut header: Vec<String> = (1..=sys.n).map(|i| format!("x{i}")).collect();
    header.extend(
        [
            "t",
            "u_generalized",
            "bc_max",
            "ps_lo",
            "ps_hi",
            "empty_reduction",
        ]
        .map(String::from),
    );
    let mut rows = vec![header];
    for (x, t) in &points {
        let u = u_generalized_derivative(&sys.v, &sys.f, &sys.u, x, *t)?;
        let bc = baseline_bc(&sys.v, &sys.f, x, *t)?;
        let ps = baseline_ps(&sys.v, &sys.f, x, *t)?;
        let (ps_lo, ps_hi) = match ps.interval.and_then(|i| i.bounds()) {
            Some((lo, hi)) => (real_str(lo), real_str(hi)),
            None => (String::new(), String::new()),
        };
        let mut row: Vec<String> = x.iter().map(|&v| real_str(v)).collect();
        row.extend([
            real_str(*t),
            ext_str(u.value),
            ext_str(bc.value),
            ps_lo,
            ps_hi,
            u8::from(u.empty_reduction).to_string(),
        ]);
        sayln!(
            "x = {:?}, t = {t}: U-generalized {}, BC max {}",
            x,
            u.value,
            bc.value
        );
        rows.push(row);
    }
    let path = out_path(c, "derivative.csv")?;
    let mut w = csv::Writer::from_writer(create(&path)?);
    for r in &rows {
        w.write_record(r)
            .map_err(|e| Error::invalid(format!("writing CSV: {e}")))?;
    }
    w.flush().map_err(|e| Failure::Io(path, e))?;
    Ok(true)
}

fn ext_str(v: incred::derivative::Extended) -> String {
    v.real().map_or_else(|| "-inf".into(), real_str)
}

fn certify(c: &Common) -> Outcome {
    let sys = load(c)?;
    let g = grid(c, &sys)?;
    let opts = CertifyOptions {
        mode: if c.baseline {
            DerivativeMode::Baseline
        } else {
            DerivativeMode::Reduced
        },
        tol: c.tol.unwrap_or(DEFAULT_TOL),
        w_lower: sys.certify.w_lower.clone(),
        w_upper: sys.certify.w_upper.clone(),
    };
    let cert = match (&sys.certify.w, &sys.certify.w_semidef) {
        (Some(w), _) => certify_lyapunov(&sys, w, &g, &opts)?,
        (None, Some(w)) => certify_semidefinite(&sys, w, &g, &opts)?,
        (None, None) => {
            return Err(
                Error::invalid("certify needs certify.W or certify.W_semidef in the input").into(),
            )
        }
    };
    write_json(c, "certificate.json", &cert)?;
    say!("{cert}");
    Ok(cert.is_certified())
}

fn invariance(c: &Common) -> Outcome {
    let sys = load(c)?;
    let g = grid(c, &sys)?;
    let (zero_tol, candidates) = match &sys.invariance {
        Some(s) => (s.zero_tol, s.candidates.clone()),
        None => (incred::system::DEFAULT_ZERO_TOL, Vec::new()),
    };
    let report = invariance_data(
        &sys,
        &g,
        zero_tol,
        &candidates,
        c.tol.unwrap_or(DEFAULT_TOL),
    )?;
    write_json(c, "invariance.json", &report)?;
    say!("{}", report.semidefinite);
    sayln!(
        "E estimate: {} of {} node(s)",
        report.e_nodes.len(),
        report.nodes_checked
    );
    for cand in &report.candidates {
        sayln!(
            "candidate {:?}: 0 in F = {}, derivative {}",
            cand.x,
            cand.equilibrium,
            cand.derivative
        );
    }
    Ok(report.passed)
}

fn matrosov(c: &Common) -> Outcome {
    let sys = load(c)?;
    let prob = sys
        .matrosov
        .as_ref()
        .ok_or_else(|| Error::invalid("input has no matrosov block"))?;
    let g = grid(c, &sys)?;
    let report = matrosov_analysis(&sys, prob, &g, c.tol.unwrap_or(DEFAULT_TOL))?;
    write_json(c, "matrosov.json", &report)?;
    say!("{}", report.chain);
    if let Some(s) = &report.constants {
        say!("{}", s.certificate);
        if let Some(k) = &s.constants {
            sayln!("epsilon = {}, K = {:?}, zeta = {}", k.epsilon, k.k, k.zeta);
        }
    }
    sayln!(
        "required gamma {} (gamma = {}); derivative bounds: {}",
        report.conditions.required_gamma,
        report.conditions.gamma,
        report
            .conditions
            .derivative_bound
            .iter()
            .map(|d| format!("{} {}", d.condition, if d.passed { "pass" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join(", ")
    );
    sayln!("verdict: {}", report.verdict);
    Ok(report.verdict == incred::certify::Verdict::Certified)
}

#[derive(Serialize)]
struct SimulationReport {
    system: String,
    strategy: SelectionStrategy,
    x0: Vec<f64>,
    t0: f64,
    h: f64,
    horizon: f64,
    steps: usize,
    exited: bool,
    final_state: Vec<f64>,
    final_norm: f64,
    membership: incred::simulate::MembershipReport,
    soundness: incred::simulate::SoundnessReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    descent: Option<incred::simulate::DescentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail: Option<incred::simulate::TailReport>,
    passed: bool,
}

fn simulate(c: &Common) -> Outcome {
    let sys = load(c)?;
    let s = sys.simulate.clone();
    let x0 =
        c.x0.clone()
            .or_else(|| s.as_ref().map(|s| s.x0.clone()))
            .ok_or_else(|| Error::invalid("simulate needs --x0 or simulate.x0"))?;
    let t0 = c.t0.or(s.as_ref().map(|s| s.t0)).unwrap_or(0.0);
    let h =
        c.h.or(s.as_ref().map(|s| s.h))
            .unwrap_or(incred::simulate::DEFAULT_H);
    let horizon = c
        .horizon
        .or(s.as_ref().map(|s| s.horizon))
        .ok_or_else(|| Error::invalid("simulate needs --T or simulate.T"))?;
    let seed = c.seed.or(s.as_ref().map(|s| s.seed)).unwrap_or(0);
    let name = c
        .strategy
        .clone()
        .or_else(|| s.as_ref().and_then(|s| s.strategy.clone()))
        .unwrap_or_else(|| "reduced-descent".into());
    let strategy = SelectionStrategy::from_name(&name, seed)?;
    let tol = c
        .tol
        .or(s.as_ref().and_then(|s| s.membership_tol))
        .unwrap_or(DEFAULT_MEMBERSHIP_TOL);

    let traj = integrate(&sys, &x0, t0, h, horizon, strategy)?;
    traj.write_csv(create(&out_path(c, "trajectory.csv")?)?)?;
    let membership = check_reduction_membership(&traj, &sys, tol)?;
    let soundness = check_selection_soundness(&traj, &sys)?;
    let descent = match s.as_ref().and_then(|s| s.w.as_ref()) {
        Some(w) => Some(check_lyapunov_descent(&traj, w)?),
        None => None,
    };
    let tail = match s
        .as_ref()
        .and_then(|s| s.w_tail.as_ref().map(|w| (w, s.tail_fraction)))
    {
        Some((w, frac)) => Some(check_partial_convergence(&traj, w, frac, TAIL_THRESHOLD)?),
        None => None,
    };
    let passed = membership.passed
        && soundness.passed
        && descent.as_ref().is_none_or(|d| d.passed)
        && tail.as_ref().is_none_or(|d| d.passed);
    let report = SimulationReport {
        system: sys.name.clone(),
        strategy,
        x0,
        t0,
        h,
        horizon,
        steps: traj.samples.len() - 1,
        exited: traj.exited,
        final_state: traj.final_state().to_vec(),
        final_norm: traj.final_norm,
        membership,
        soundness,
        descent,
        tail,
        passed,
    };
    write_json(c, "simulation.json", &report)?;
    sayln!(
        "{} steps, final norm {:e}, membership violations {}/{}{}",
        report.steps,
        report.final_norm,
        report.membership.violations,
        report.membership.steps,
        if report.exited {
            ", left the domain"
        } else {
            ""
        }
    );
    if let Some(d) = &report.descent {
        sayln!(
            "descent: {} bound violation(s), max gap {:e}",
            d.bound_violations,
            d.max_gap
        );
    }
    if let Some(t) = &report.tail {
        sayln!("tail max {:e} (threshold {:e})", t.tail_max, t.threshold);
    }
    Ok(passed)
}

#[derive(Serialize)]
struct GradientSummary {
    radius: f64,
    samples: usize,
    reports: Vec<GradientReport>,
    passed: bool,
}

const GRADIENT_SAMPLES: usize = 200;

fn validate(c: &Common) -> Outcome {
    let sys = load(c)?;
    let mut functions: Vec<&RegularFunctionSpec> = vec![&sys.v];
    functions.extend(&sys.u);
    if let Some(m) = &sys.matrosov {
        for stage in &m.stages {
            functions.push(&stage.w);
            functions.extend(&stage.u);
        }
    }
    let points = probes(c, &sys)?;
    let mut reports = Vec::new();
    for f in functions {
        for (x, t) in &points {
            reports.push(validate_gradient(f, x, *t, c.radius, GRADIENT_SAMPLES)?);
        }
    }
    let passed = reports.iter().all(|r| r.pass);
    for r in &reports {
        sayln!(
            "{} at {:?}: {:.3} inside declared {} ({})",
            r.name,
            r.x,
            r.inside_fraction,
            r.declared,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    write_json(
        c,
        "gradient.json",
        &GradientSummary {
            radius: c.radius,
            samples: GRADIENT_SAMPLES,
            reports,
            passed,
        },
    )?;
    Ok(passed)
}
