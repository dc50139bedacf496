//! Command-line surface: argument parsing, dispatch and output files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::checks::{self, CheckOutcome};
use crate::config::{ConfigBuilder, Experiment, ExperimentConfig, KEYS};
use crate::error::{CliError, Result};
use crate::records::{self, write_csv};
use crate::runner::{self, EnkfSummaryRow};
use crate::svg::{line_plot, Series};

const BOOL_KEYS: &[&str] = &["plot", "project_psd", "check_continuity"];

const SUBCOMMANDS: &[(Experiment, &str)] = &[
    (Experiment::Fig1, "Thresholded vs sample covariance error over lengthscales, d = 1"),
    (Experiment::Fig2, "The same comparison on the unit square, d = 2"),
    (Experiment::EnkfDemo, "Perturbed-observation vs localized EnKF analysis step"),
    (Experiment::Custom, "Estimator comparison over an arbitrary grid"),
    (Experiment::Theory, "Sparsity, operator norm, effective rank and supremum sweep"),
];

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn experiment_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Flat `key = value` config file; flags take precedence"),
        )
        .arg(
            Arg::new("check")
                .long("check")
                .action(ArgAction::SetTrue)
                .help("Evaluate the experiment's pass/fail checks; exit 3 on failure"),
        );
    for &key in KEYS {
        let arg = Arg::new(key).long(flag(key));
        let arg = if BOOL_KEYS.contains(&key) {
            arg.action(ArgAction::SetTrue)
        } else {
            arg.value_name("VALUE").allow_negative_numbers(true)
        };
        cmd = cmd.arg(arg);
    }
    cmd
}

pub fn command() -> Command {
    let mut cmd = Command::new("opcov")
        .about("Covariance operator estimation by hard thresholding")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(exp, about) in SUBCOMMANDS {
        cmd = cmd.subcommand(experiment_args(Command::new(exp.name()).about(about)));
    }
    cmd
}

/// Resolves defaults, the config file and flags into a validated config.
pub fn config_from_matches(exp: Experiment, m: &ArgMatches) -> Result<(ExperimentConfig, bool)> {
    let mut b = ConfigBuilder::new(exp);
    if let Some(path) = m.get_one::<PathBuf>("config") {
        b.apply_file(path)?;
    }
    for &key in KEYS {
        if BOOL_KEYS.contains(&key) {
            if m.get_flag(key) {
                b.apply_flag(key, "true")?;
            }
        } else if let Some(v) = m.get_one::<String>(key) {
            b.apply_flag(key, v)?;
        }
    }
    Ok((b.build()?, m.get_flag("check")))
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks: Vec<CheckOutcome>,
}

impl Outcome {
    pub fn failed_checks(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn write_text(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn estimator_outputs(cfg: &ExperimentConfig, check: bool) -> Result<Outcome> {
    let run = runner::run_estimator_grid(cfg)?;
    let summary = records::summarize(&run.records);
    let prefix = cfg.experiment.name();
    let mut out = Outcome::default();
    let path = |name: &str| cfg.out.join(format!("{prefix}_{name}.csv"));
    write_csv(&path("trials"), &run.records)?;
    write_csv(&path("summary"), &summary)?;
    write_csv(&path("timings"), &run.timings)?;
    out.files.extend(["trials", "summary", "timings"].map(path));
    if cfg.plot {
        let kernels: Vec<&str> = summary.iter().fold(Vec::new(), |mut acc, r| {
            if !acc.contains(&r.kernel.as_str()) {
                acc.push(&r.kernel);
            }
            acc
        });
        for kernel in kernels {
            let rows: Vec<_> = summary.iter().filter(|r| r.kernel == kernel).collect();
            let series = [
                Series {
                    label: "sample covariance error".into(),
                    points: rows.iter().map(|r| (r.lambda, r.mean_eps_sample)).collect(),
                    dash: Some("8 5"),
                    color: "#1f4e9c",
                    secondary: false,
                },
                Series {
                    label: "thresholded error".into(),
                    points: rows.iter().map(|r| (r.lambda, r.mean_eps_thresh)).collect(),
                    dash: None,
                    color: "#b0302a",
                    secondary: false,
                },
                Series {
                    label: "N (right axis)".into(),
                    points: rows.iter().map(|r| (r.lambda, r.n as f64)).collect(),
                    dash: Some("2 4"),
                    color: "#444444",
                    secondary: true,
                },
            ];
            let svg = line_plot(
                &format!("{prefix}: {kernel}, d = {}", cfg.d),
                "lengthscale",
                "mean relative error",
                "sample size N",
                &series,
            );
            write_text(&cfg.out.join(format!("{prefix}_{}.svg", sanitize(kernel))), &svg, &mut out.files)?;
        }
    }
    if check && matches!(cfg.experiment, Experiment::Fig1 | Experiment::Fig2) {
        out.checks.extend(checks::flat_and_divergent(&summary, 2.0, 3.0));
        out.checks.extend(checks::crossover(&summary));
    }
    Ok(out)
}

fn enkf_summary_text(rows: &[EnkfSummaryRow]) -> String {
    let mut s = format!("cells = {}\n", rows.len());
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "cell{i}.kernel = {}", r.kernel);
        let _ = writeln!(s, "cell{i}.lambda = {}", r.lambda);
        let _ = writeln!(s, "cell{i}.N = {}", r.n);
        let _ = writeln!(s, "cell{i}.trials = {}", r.trials);
        let _ = writeln!(s, "cell{i}.mean_vanilla = {}", r.mean_vanilla);
        let _ = writeln!(s, "cell{i}.mean_localized = {}", r.mean_localized);
        let _ = writeln!(s, "cell{i}.frac_localized_better = {}", r.frac_localized_better);
        let _ = writeln!(s, "cell{i}.q50_vanilla = {}", r.q50_vanilla);
        let _ = writeln!(s, "cell{i}.q90_vanilla = {}", r.q90_vanilla);
        let _ = writeln!(s, "cell{i}.q99_vanilla = {}", r.q99_vanilla);
        let _ = writeln!(s, "cell{i}.q50_localized = {}", r.q50_localized);
        let _ = writeln!(s, "cell{i}.q90_localized = {}", r.q90_localized);
        let _ = writeln!(s, "cell{i}.q99_localized = {}", r.q99_localized);
        if let Some(v) = r.continuity_violations {
            let _ = writeln!(s, "cell{i}.continuity_violations = {v}");
        }
    }
    s
}

fn enkf_outputs(cfg: &ExperimentConfig, check: bool) -> Result<Outcome> {
    let cells = runner::run_enkf(cfg)?;
    let mut out = Outcome::default();
    let nl = cfg.lambdas.len();
    for (i, cell) in cells.iter().enumerate() {
        let path = cfg.out.join(format!("enkf_trials_k{}_l{}.csv", i / nl, i % nl));
        write_csv(&path, &cell.rows(cfg.seed))?;
        out.files.push(path);
    }
    let rows: Vec<EnkfSummaryRow> = cells.iter().map(|c| c.summary_row(cfg.check_continuity)).collect();
    let path = cfg.out.join("enkf_summary.csv");
    write_csv(&path, &rows)?;
    out.files.push(path);
    write_text(&cfg.out.join("enkf_summary.txt"), &enkf_summary_text(&rows), &mut out.files)?;
    if cfg.plot {
        let series = [
            Series {
                label: "sample gain".into(),
                points: rows.iter().map(|r| (r.lambda, r.mean_vanilla)).collect(),
                dash: Some("8 5"),
                color: "#1f4e9c",
                secondary: false,
            },
            Series {
                label: "thresholded gain".into(),
                points: rows.iter().map(|r| (r.lambda, r.mean_localized)).collect(),
                dash: None,
                color: "#b0302a",
                secondary: false,
            },
        ];
        let svg = line_plot("analysis step discrepancy", "lengthscale", "mean discrepancy", "", &series);
        write_text(&cfg.out.join("enkf.svg"), &svg, &mut out.files)?;
    }
    if check {
        out.checks.extend(checks::enkf_ordering(&rows, 0.9));
    }
    Ok(out)
}

fn theory_outputs(cfg: &ExperimentConfig, check: bool) -> Result<Outcome> {
    let rows = runner::run_theory(cfg)?;
    let mut out = Outcome::default();
    let path = cfg.out.join("theory_scaling.csv");
    write_csv(&path, &rows)?;
    out.files.push(path);
    if cfg.plot {
        let series = [
            Series {
                label: "expected supremum (Monte Carlo)".into(),
                points: rows.iter().map(|r| (r.lambda, r.esup_mc)).collect(),
                dash: None,
                color: "#b0302a",
                secondary: false,
            },
            Series {
                label: "predicted scale".into(),
                points: rows.iter().filter_map(|r| r.esup_prediction.map(|p| (r.lambda, p))).collect(),
                dash: Some("8 5"),
                color: "#1f4e9c",
                secondary: false,
            },
            Series {
                label: "effective rank (right axis)".into(),
                points: rows.iter().map(|r| (r.lambda, r.eff_rank)).collect(),
                dash: Some("2 4"),
                color: "#444444",
                secondary: true,
            },
        ];
        let svg = line_plot("small-lengthscale scaling", "lengthscale", "supremum", "effective rank", &series);
        write_text(&cfg.out.join("theory.svg"), &svg, &mut out.files)?;
    }
    if check {
        out.checks.extend(checks::supremum_band(&rows, 2.0));
    }
    Ok(out)
}

/// Runs one experiment and writes its files under `cfg.out`.
pub fn execute(cfg: &ExperimentConfig, check: bool) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let work = || match cfg.experiment {
        Experiment::Fig1 | Experiment::Fig2 | Experiment::Custom => estimator_outputs(cfg, check),
        Experiment::EnkfDemo => enkf_outputs(cfg, check),
        Experiment::Theory => theory_outputs(cfg, check),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let exp: Experiment = name.parse().expect("registered subcommand");
    let result = config_from_matches(exp, sub).and_then(|(cfg, check)| {
        let outcome = execute(&cfg, check)?;
        for f in &outcome.files {
            println!("wrote {}", f.display());
        }
        for c in &outcome.checks {
            println!("{c}");
        }
        let failed = outcome.failed_checks();
        if !failed.is_empty() {
            return Err(CliError::Check(format!("{} of {} checks failed", failed.len(), outcome.checks.len())));
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
