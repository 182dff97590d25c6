//! Command-line front end. `run` returns the process exit status:
//! 0 success, 1 usage, 2 data error, 3 solver failure.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::eliminator::{build_eliminator, EliminatorKind};
use crate::error::Error;
use crate::io::{
    apply_solver_setting, evaluate, format_injections, format_report, read_dataset, read_scenario_config,
    read_solver_config, read_trajectory, scenario_preset, beidou_shell, write_dataset, write_trajectory,
    ErrorMetrics,
};
use crate::simulator::generate;
use crate::solver::{marginal_cost_breakdown, solve_dataset, EstimatorMode, SolveReport, SolverConfig};
use crate::types::{Constellation, Dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "wcpnav", version, about = "Batch GNSS positioning with window carrier-phase constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, its ground truth and an injection log.
    Simulate(SimulateArgs),
    /// Solve a dataset and write the estimated trajectory.
    Solve(SolveArgs),
    /// Compare a trajectory with ground truth.
    Evaluate(EvaluateArgs),
    /// Run all four estimators on one dataset and tabulate their errors.
    Compare(CompareArgs),
    /// Print an ambiguity eliminator as CSV.
    MatrixDump(MatrixDumpArgs),
    /// Write per-epoch error series and WCP residual histograms as CSV.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// noiseless, clean, urban or heavy-slip.
    #[arg(long, default_value = "urban")]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scenario key=value file; replaces --preset and --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Add a BeiDou shell.
    #[arg(long)]
    beidou: bool,
    /// Output directory for dataset.csv, truth.csv and injections.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Default)]
struct SolverArgs {
    /// Solver key=value file, applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// wls, psr-dop, psr-dop-tdcp or psr-dop-wcp.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    /// chained or disjoint.
    #[arg(long)]
    window_split: Option<String>,
    /// orthonormal, random-unitary or tdcp.
    #[arg(long)]
    eliminator: Option<String>,
    #[arg(long)]
    eliminator_seed: Option<String>,
    /// none, huber or cauchy.
    #[arg(long)]
    wcp_kernel: Option<String>,
    #[arg(long)]
    wcp_k: Option<String>,
    #[arg(long)]
    pseudorange_kernel: Option<String>,
    #[arg(long)]
    pseudorange_k: Option<String>,
    #[arg(long)]
    max_iterations: Option<String>,
    #[arg(long)]
    elevation_mask_deg: Option<String>,
    #[arg(long)]
    sagnac: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Estimated trajectory output.
    #[arg(long)]
    out: PathBuf,
    /// Solve report output; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct MatrixDumpArgs {
    /// tdcp, random-unitary or orthonormal; both D and G when absent.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 11)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PlotDataArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Histogram covers [-range, range]; values outside land in the end bins.
    #[arg(long, default_value_t = 8.0)]
    range: f64,
    /// Output directory for errors.csv and residuals.csv.
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

/// Input and format problems are data errors; everything raised while
/// solving is a solver failure.
fn data(e: Error) -> Failure {
    Failure { code: EXIT_DATA, message: e.to_string() }
}

fn solver(e: Error) -> Failure {
    Failure { code: EXIT_SOLVER, message: e.to_string() }
}

fn io_failure(path: &Path, e: Error) -> Failure {
    Failure { code: EXIT_DATA, message: format!("{}: {e}", path.display()) }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Solve(a) => solve(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Compare(a) => compare(a, out),
        Command::MatrixDump(a) => matrix_dump(a, out),
        Command::PlotData(a) => plot_data(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => read_scenario_config(path).map_err(|e| io_failure(path, e))?,
        None => scenario_preset(&a.preset, a.seed).map_err(|e| Failure::usage(e.to_string()))?,
    };
    if let Some(n) = a.epochs {
        cfg.epochs = n;
    }
    if a.beidou && !cfg.shells.iter().any(|s| s.constellation == Constellation::BeiDou) {
        cfg.shells.push(beidou_shell());
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let scenario = generate(&cfg).map_err(data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e.into()))?;
    let path = |name: &str| a.out.join(name);
    write_dataset(&scenario.dataset, &path("dataset.csv")).map_err(|e| io_failure(&path("dataset.csv"), e))?;
    write_trajectory(&scenario.truth, &path("truth.csv")).map_err(|e| io_failure(&path("truth.csv"), e))?;
    std::fs::write(path("injections.csv"), format_injections(&scenario.injections))
        .map_err(|e| io_failure(&path("injections.csv"), e.into()))?;
    let _ = writeln!(
        out,
        "wrote {} epochs, {} injections to {}",
        scenario.dataset.len(),
        scenario.injections.len(),
        a.out.display()
    );
    Ok(())
}

fn solver_config(a: &SolverArgs) -> std::result::Result<SolverConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => read_solver_config(path).map_err(|e| io_failure(path, e))?,
        None => SolverConfig::default(),
    };
    let flags = [
        ("mode", &a.mode),
        ("n_max", &a.n_max),
        ("window_split", &a.window_split),
        ("eliminator", &a.eliminator),
        ("eliminator_seed", &a.eliminator_seed),
        ("wcp_kernel", &a.wcp_kernel),
        ("wcp_k", &a.wcp_k),
        ("pseudorange_kernel", &a.pseudorange_kernel),
        ("pseudorange_k", &a.pseudorange_k),
        ("max_iterations", &a.max_iterations),
        ("elevation_mask_deg", &a.elevation_mask_deg),
    ];
    for (key, raw) in flags {
        if let Some(raw) = raw {
            let flag = format!("--{}", key.replace('_', "-"));
            apply_solver_setting(&mut cfg, 0, key, raw).map_err(|e| match e {
                Error::Parse { message, .. } => Failure::usage(format!("{flag}: {message}")),
                other => Failure::usage(format!("{flag}: {other}")),
            })?;
        }
    }
    if a.sagnac {
        cfg.sagnac = true;
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> std::result::Result<Dataset, Failure> {
    read_dataset(path).map_err(|e| io_failure(path, e))
}

fn divergence_note(report: &SolveReport) -> String {
    format!(
        "solver did not converge: {} after {} iterations (cost {:.6e} -> {:.6e})",
        report.reason, report.iterations, report.initial_cost, report.final_cost
    )
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Outcome {
    let cfg = solver_config(&a.solver)?;
    let dataset = load_dataset(&a.dataset)?;
    let report = solve_dataset(&dataset, &cfg).map_err(solver)?;
    write_trajectory(&report.trajectory(), &a.out).map_err(|e| io_failure(&a.out, e))?;
    let text = format_report(&report);
    match &a.report {
        Some(path) => std::fs::write(path, &text).map_err(|e| io_failure(path, e.into()))?,
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    if !report.converged() {
        return Err(Failure { code: EXIT_SOLVER, message: divergence_note(&report) });
    }
    Ok(())
}

/// Shared number format for metric tables so that `evaluate` and
/// `compare` agree digit for digit.
pub fn format_metric(v: f64) -> String {
    format!("{v:.4e}")
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Outcome {
    let est = read_trajectory(&a.trajectory).map_err(|e| io_failure(&a.trajectory, e))?;
    let truth = read_trajectory(&a.truth).map_err(|e| io_failure(&a.truth, e))?;
    let m = evaluate(&est, &truth).map_err(data)?;
    let mut text = String::new();
    for (name, v) in [
        ("MEAN", m.mean_2d),
        ("STD", m.std_2d),
        ("Max", m.max_2d),
        ("MEAN3D", m.mean_3d),
        ("Max3D", m.max_3d),
    ] {
        let _ = writeln!(text, "{name:<8}{}", format_metric(v));
    }
    let _ = writeln!(text, "epochs  {}", m.series.len());
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn run_modes(dataset: &Dataset, base: &SolverConfig) -> std::result::Result<Vec<SolveReport>, Failure> {
    EstimatorMode::ALL
        .iter()
        .map(|&mode| solve_dataset(dataset, &SolverConfig { mode, ..base.clone() }).map_err(solver))
        .collect()
}

/// Rows MEAN/STD/Max of the horizontal error, one column per estimator.
pub fn format_comparison(metrics: &[ErrorMetrics], converged: &[bool]) -> String {
    let mut text = format!("{:<6}", "");
    for (i, name) in ["WLS", "Sol1", "Sol2", "Sol3"].iter().enumerate() {
        let mark = if converged.get(i).copied().unwrap_or(true) { "" } else { "*" };
        let _ = write!(text, "{:>12}", format!("{name}{mark}"));
    }
    text.push('\n');
    let rows: [(&str, fn(&ErrorMetrics) -> f64); 3] =
        [("MEAN", |m| m.mean_2d), ("STD", |m| m.std_2d), ("Max", |m| m.max_2d)];
    for (name, get) in rows {
        let _ = write!(text, "{name:<6}");
        for m in metrics {
            let _ = write!(text, "{:>12}", format_metric(get(m)));
        }
        text.push('\n');
    }
    text.push_str("Sol1 = psr-dop, Sol2 = psr-dop-tdcp, Sol3 = psr-dop-wcp\n");
    if converged.iter().any(|c| !c) {
        text.push_str("* solver did not converge\n");
    }
    text
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Outcome {
    let cfg = solver_config(&a.solver)?;
    let dataset = load_dataset(&a.dataset)?;
    let truth = read_trajectory(&a.truth).map_err(|e| io_failure(&a.truth, e))?;
    let reports = run_modes(&dataset, &cfg)?;
    let metrics = reports
        .iter()
        .map(|r| evaluate(&r.trajectory(), &truth).map_err(data))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let converged: Vec<bool> = reports.iter().map(SolveReport::converged).collect();
    let _ = out.write_all(format_comparison(&metrics, &converged).as_bytes());
    Ok(())
}

fn matrix_csv(title: &str, m: &nalgebra::DMatrix<f64>) -> String {
    let mut text = format!("# {title}\n");
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| {
                let v = m[(r, c)];
                if v == 0.0 { "0".to_string() } else { v.to_string() }
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

fn matrix_dump(a: MatrixDumpArgs, out: &mut dyn Write) -> Outcome {
    let kinds = match &a.kind {
        Some(k) => vec![k.parse::<EliminatorKind>().map_err(|e| Failure::usage(format!("--kind: {e}")))?],
        None => vec![EliminatorKind::TimeDifference, EliminatorKind::RandomUnitaryImag],
    };
    let mut text = String::new();
    for (i, kind) in kinds.iter().enumerate() {
        let m = build_eliminator(*kind, a.n, a.seed).map_err(|e| Failure::usage(e.to_string()))?;
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&matrix_csv(&format!("{kind} n={} seed={}", a.n, a.seed), &m.entries));
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn histogram(values: &[f64], bins: usize, range: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let pos = ((v + range) / (2.0 * range) * bins as f64).floor();
        counts[pos.clamp(0.0, (bins - 1) as f64) as usize] += 1;
    }
    counts
}

fn plot_data(a: PlotDataArgs, out: &mut dyn Write) -> Outcome {
    if a.bins == 0 {
        return Err(Failure::usage("--bins must be positive"));
    }
    if !(a.range > 0.0) || !a.range.is_finite() {
        return Err(Failure::usage("--range must be positive"));
    }
    let cfg = solver_config(&a.solver)?;
    let dataset = load_dataset(&a.dataset)?;
    let truth = read_trajectory(&a.truth).map_err(|e| io_failure(&a.truth, e))?;
    let reports = run_modes(&dataset, &cfg)?;
    let metrics = reports
        .iter()
        .map(|r| evaluate(&r.trajectory(), &truth).map_err(data))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut errors = String::from("epoch_index,wls_m,psr_dop_m,psr_dop_tdcp_m,psr_dop_wcp_m\n");
    for (i, e) in metrics[0].series.iter().enumerate() {
        let cols: Vec<String> = metrics
            .iter()
            .map(|m| m.series.get(i).map(|s| s.horizontal().to_string()).unwrap_or_default())
            .collect();
        let _ = writeln!(errors, "{},{}", e.index, cols.join(","));
    }

    let wcp = marginal_cost_breakdown(&reports[3]);
    let raw = histogram(&wcp.wcp_components(), a.bins, a.range);
    let weighted = histogram(&wcp.wcp_reweighted(), a.bins, a.range);
    let mut residuals = String::from("bin_low,bin_high,whitened_count,reweighted_count\n");
    let width = 2.0 * a.range / a.bins as f64;
    for b in 0..a.bins {
        let lo = -a.range + width * b as f64;
        let _ = writeln!(residuals, "{lo},{},{},{}", lo + width, raw[b], weighted[b]);
    }

    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e.into()))?;
    for (name, text) in [("errors.csv", errors), ("residuals.csv", residuals)] {
        let path = a.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_failure(&path, e.into()))?;
    }
    let _ = writeln!(out, "wrote errors.csv and residuals.csv to {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("wcpnav").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn help_and_version_succeed() {
        assert_eq!(call(&["--help"]).0, EXIT_OK);
        assert_eq!(call(&["--version"]).0, EXIT_OK);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = call(&["matrix-dump", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn tdcp_dump_is_difference_matrix() {
        let (code, out, _) = call(&["matrix-dump", "--kind", "tdcp", "--n", "3"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, "# tdcp n=3 seed=0\n-1,1,0\n0,-1,1\n0,0,0\n");
    }

    #[test]
    fn invalid_numeric_flags() {
        assert_eq!(call(&["matrix-dump", "--n", "1"]).0, EXIT_USAGE);
        assert_eq!(call(&["matrix-dump", "--n", "x"]).0, EXIT_USAGE);
        let (code, _, err) = call(&["solve", "--dataset", "d", "--out", "o", "--n-max", "1"]);
        assert_eq!(code, EXIT_USAGE, "{err}");
        let (code, _, err) = call(&["solve", "--dataset", "d", "--out", "o", "--wcp-k", "-2"]);
        assert_eq!(code, EXIT_USAGE, "{err}");
    }

    #[test]
    fn missing_dataset_is_data_error() {
        let (code, _, err) = call(&["solve", "--dataset", "/nonexistent/d.csv", "--out", "/tmp/x.csv"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("/nonexistent/d.csv"));
    }

    #[test]
    fn histogram_clamps_to_end_bins() {
        assert_eq!(histogram(&[-100.0, -0.5, 0.5, 100.0], 4, 2.0), vec![1, 1, 1, 1]);
    }
}
