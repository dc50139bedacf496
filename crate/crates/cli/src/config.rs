//! Experiment configuration: defaults per command, a flat `key = value`
//! file format and flag overrides applied through the same setter.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use opcov_core::{KernelFamily, KernelModel, ThresholdForm, ThresholdRule};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fig1,
    Fig2,
    EnkfDemo,
    Custom,
    Theory,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::EnkfDemo => "enkf-demo",
            Self::Custom => "custom",
            Self::Theory => "theory",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Self::Fig1, Self::Fig2, Self::EnkfDemo, Self::Custom, Self::Theory]
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// Sample size per lengthscale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NRule {
    /// `ceil(5 log_b(λ^{-e}))`, at least 2.
    FiveLog,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    Pointwise,
    LocalAverage,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Kernel families; the lengthscale comes from the grid.
    pub kernels: Vec<KernelFamily>,
    pub d: usize,
    pub m: usize,
    /// Strictly positive, descending.
    pub lambdas: Vec<f64>,
    pub n_rule: NRule,
    pub log_base: f64,
    /// Exponent `e` in the sample-size rule; defaults to `d`.
    pub n_exponent: f64,
    pub c0: f64,
    pub form: ThresholdForm,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub plot: bool,
    pub threads: Option<usize>,
    pub memory_limit_gb: f64,
    pub dy: usize,
    pub noise_std: f64,
    pub observation: ObservationKind,
    pub obs_radius: f64,
    pub project_psd: bool,
    pub check_continuity: bool,
    pub q: f64,
    pub esup_samples: usize,
}

impl ExperimentConfig {
    pub fn rule(&self) -> ThresholdRule {
        ThresholdRule {
            c0: self.c0,
            form: self.form,
        }
    }

    pub fn n_for(&self, lambda: f64) -> usize {
        match self.n_rule {
            NRule::Fixed(n) => n,
            NRule::FiveLog => five_log_rule(lambda, self.n_exponent, self.log_base),
        }
    }

    pub fn mesh_len(&self) -> usize {
        self.m.pow(self.d as u32)
    }
}

/// `max(2, ceil(5 log_base(λ^{-e})))`. A relative slack of `1e-12` keeps
/// exact integers from rounding up.
pub fn five_log_rule(lambda: f64, exponent: f64, base: f64) -> usize {
    let x = 5.0 * exponent * (1.0 / lambda).ln() / base.ln();
    let n = (x - 1e-12 * x.abs()).ceil();
    if n.is_finite() && n > 2.0 {
        n as usize
    } else {
        2
    }
}

/// Descending log-uniform grid from `10^hi` to `10^lo`.
pub fn log_grid(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![10f64.powf(hi)];
    }
    (0..points)
        .map(|i| {
            let e = if i + 1 == points {
                lo
            } else {
                hi + (lo - hi) * i as f64 / (points - 1) as f64
            };
            10f64.powf(e)
        })
        .collect()
}

/// Family label used in output files: `se`, `matern:nu=1.5`.
pub fn family_label(family: KernelFamily) -> String {
    match family {
        KernelFamily::SquaredExponential => "se".to_string(),
        KernelFamily::Matern { nu } => format!("matern:nu={nu}"),
    }
}

/// Parses a family label, reusing the kernel grammar with a placeholder lengthscale.
pub fn parse_family(spec: &str) -> std::result::Result<KernelFamily, String> {
    let spec = spec.trim();
    let full = if spec.contains(':') {
        format!("{spec},lambda=1")
    } else {
        format!("{spec}:lambda=1")
    };
    KernelModel::from_str(&full)
        .map(|k| k.family())
        .map_err(|e| e.to_string())
}

/// Settings before validation; the grid may still be given by its endpoints.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    cfg: ExperimentConfig,
    lambdas: Option<Vec<f64>>,
    grid: (f64, f64, usize),
    n_exponent: Option<f64>,
}

/// Keys accepted in config files and by `--set`.
pub const KEYS: &[&str] = &[
    "kernels",
    "d",
    "m",
    "lambdas",
    "log10_lambda_max",
    "log10_lambda_min",
    "lambda_points",
    "n",
    "log_base",
    "n_exponent",
    "c0",
    "form",
    "trials",
    "seed",
    "out",
    "plot",
    "threads",
    "memory_limit_gb",
    "dy",
    "noise_std",
    "observation",
    "obs_radius",
    "project_psd",
    "check_continuity",
    "q",
    "esup_samples",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse::<f64>)
        .collect()
}

impl ConfigBuilder {
    pub fn new(experiment: Experiment) -> Self {
        use Experiment::*;
        let se = KernelFamily::SquaredExponential;
        let matern = KernelFamily::Matern { nu: 1.5 };
        let (kernels, d, m, grid, trials) = match experiment {
            Fig1 => (vec![se, matern], 1, 1250, (-0.1, -3.0, 30), 100),
            Fig2 => (vec![se, matern], 2, 100, (-0.1, -2.3, 10), 30),
            EnkfDemo => (vec![se], 1, 1250, (-1.0, -3.0, 5), 20),
            Custom => (vec![se], 1, 200, (-1.0, -2.0, 2), 10),
            Theory => (vec![se], 1, 1250, (-1.0, -3.0, 5), 1),
        };
        Self {
            cfg: ExperimentConfig {
                experiment,
                kernels,
                d,
                m,
                lambdas: Vec::new(),
                n_rule: NRule::FiveLog,
                log_base: std::f64::consts::E,
                n_exponent: d as f64,
                c0: 5.0,
                form: ThresholdForm::Simplified,
                trials,
                seed: 20_240_601,
                out: PathBuf::from("out"),
                plot: false,
                threads: None,
                memory_limit_gb: 4.0,
                dy: 8,
                noise_std: opcov_core::enkf::DEFAULT_NOISE_STD,
                observation: ObservationKind::Pointwise,
                obs_radius: 0.01,
                project_psd: false,
                check_continuity: false,
                q: 0.5,
                esup_samples: 2000,
            },
            lambdas: (experiment == Custom).then(|| vec![0.05]),
            grid,
            n_exponent: None,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        let c = &mut self.cfg;
        match key {
            "kernels" => {
                c.kernels = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_family)
                    .collect::<std::result::Result<_, _>>()?
            }
            "d" => c.d = parse(value)?,
            "m" => c.m = parse(value)?,
            "lambdas" => self.lambdas = Some(parse_list(value)?),
            "log10_lambda_max" => self.grid.0 = parse(value)?,
            "log10_lambda_min" => self.grid.1 = parse(value)?,
            "lambda_points" => self.grid.2 = parse(value)?,
            "n" => {
                c.n_rule = match value {
                    "5log" => NRule::FiveLog,
                    v => NRule::Fixed(parse(v)?),
                }
            }
            "log_base" => {
                c.log_base = match value {
                    "e" => std::f64::consts::E,
                    v => parse(v)?,
                }
            }
            "n_exponent" => self.n_exponent = Some(parse(value)?),
            "c0" => c.c0 = parse(value)?,
            "form" => c.form = parse(value)?,
            "trials" => c.trials = parse(value)?,
            "seed" => c.seed = parse(value)?,
            "out" => c.out = PathBuf::from(value),
            "plot" => c.plot = parse_bool(value)?,
            "threads" => c.threads = Some(parse(value)?),
            "memory_limit_gb" => c.memory_limit_gb = parse(value)?,
            "dy" => c.dy = parse(value)?,
            "noise_std" => c.noise_std = parse(value)?,
            "observation" => {
                c.observation = match value {
                    "pointwise" => ObservationKind::Pointwise,
                    "local-average" => ObservationKind::LocalAverage,
                    other => return Err(format!("expected pointwise or local-average, got `{other}`")),
                }
            }
            "obs_radius" => c.obs_radius = parse(value)?,
            "project_psd" => c.project_psd = parse_bool(value)?,
            "check_continuity" => c.check_continuity = parse_bool(value)?,
            "q" => c.q = parse(value)?,
            "esup_samples" => c.esup_samples = parse(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parses config file text; errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::ConfigLine {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies a flag override.
    pub fn apply_flag(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value).map_err(|message| CliError::ConfigKey {
            key: key.to_string(),
            message,
        })
    }

    pub fn build(self) -> Result<ExperimentConfig> {
        let mut c = self.cfg;
        let bad = |key: &str, message: String| CliError::ConfigKey {
            key: key.to_string(),
            message,
        };
        c.n_exponent = self.n_exponent.unwrap_or(c.d as f64);
        c.lambdas = match self.lambdas {
            Some(l) => l,
            None => {
                let (hi, lo, p) = self.grid;
                if p == 0 {
                    return Err(bad("lambda_points", "must be at least 1".into()));
                }
                if lo > hi {
                    return Err(bad("log10_lambda_min", "must not exceed log10_lambda_max".into()));
                }
                log_grid(hi, lo, p)
            }
        };
        if c.lambdas.is_empty() {
            return Err(bad("lambdas", "empty grid".into()));
        }
        if c.lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(bad("lambdas", "lengthscales must be positive".into()));
        }
        if c.lambdas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(bad("lambdas", "grid must be strictly descending".into()));
        }
        if c.kernels.is_empty() {
            return Err(bad("kernels", "at least one kernel is required".into()));
        }
        if !(1..=3).contains(&c.d) {
            return Err(bad("d", format!("must be 1, 2 or 3, got {}", c.d)));
        }
        if c.m < 2 {
            return Err(bad("m", format!("must be at least 2, got {}", c.m)));
        }
        if c.trials == 0 {
            return Err(bad("trials", "must be at least 1".into()));
        }
        if !(c.log_base > 1.0 && c.log_base.is_finite()) {
            return Err(bad("log_base", format!("must exceed 1, got {}", c.log_base)));
        }
        if !(c.n_exponent > 0.0) {
            return Err(bad("n_exponent", "must be positive".into()));
        }
        if let NRule::Fixed(n) = c.n_rule {
            if n < 2 {
                return Err(bad("n", format!("fixed sample size must be at least 2, got {n}")));
            }
        }
        ThresholdRule::new(c.c0, c.form).map_err(|e| bad("c0", e.to_string()))?;
        if c.form == ThresholdForm::Full {
            for &lambda in &c.lambdas {
                let n = c.n_for(lambda);
                if c.c0 > (n as f64).sqrt() {
                    return Err(bad(
                        "c0",
                        format!("full form needs c0 <= sqrt(N); c0 = {} but N = {n} at lambda = {lambda}", c.c0),
                    ));
                }
            }
        }
        if c.threads == Some(0) {
            return Err(bad("threads", "must be at least 1".into()));
        }
        if !(c.memory_limit_gb > 0.0) {
            return Err(bad("memory_limit_gb", "must be positive".into()));
        }
        if !(c.noise_std > 0.0 && c.noise_std.is_finite()) {
            return Err(bad("noise_std", "must be positive".into()));
        }
        if c.dy == 0 || c.dy > c.mesh_len() {
            return Err(bad("dy", format!("must lie in 1..={}", c.mesh_len())));
        }
        if !(c.q > 0.0 && c.q <= 1.0) {
            return Err(bad("q", "must lie in (0, 1]".into()));
        }
        if c.esup_samples < 2 {
            return Err(bad("esup_samples", "must be at least 2".into()));
        }
        Ok(c)
    }
}
