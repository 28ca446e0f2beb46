//! Experiment description: command-line flags, config files and the
//! validated [`ExperimentConfig`] built from them.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qca_core::classical::DEFAULT_CHI;
use qca_core::correlations::LquConvention;
use qca_core::exact::MAX_EXACT_SITES;
use qca_core::tensor::MAX_DENSE_SITES;
use qca_core::{ModelParams, TruncationPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    Scan,
    Timeseries,
    Fss,
    Classical,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Scan => "scan",
            Mode::Timeseries => "timeseries",
            Mode::Fss => "fss",
            Mode::Classical => "classical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Exact,
    Mpo,
    ClassicalMpa,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Exact => "exact",
            Backend::Mpo => "mpo",
            Backend::ClassicalMpa => "classical-mpa",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    Profile,
    Negativity,
    Lqu,
    Coherence,
    Ppt,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::Profile => "profile",
            Observable::Negativity => "negativity",
            Observable::Lqu => "lqu",
            Observable::Coherence => "coherence",
            Observable::Ppt => "ppt",
        }
    }
}

/// What a finite-size-scaling cut tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    MeanDensity,
    /// Finite-difference derivative of the mean density along the cut.
    Derivative,
    Lqu,
    Coherence,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::MeanDensity => "mean_density",
            Quantity::Derivative => "derivative",
            Quantity::Lqu => "lqu",
            Quantity::Coherence => "coherence",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LquSide {
    Center,
    Partner,
}

impl From<LquSide> for LquConvention {
    fn from(side: LquSide) -> Self {
        match side {
            LquSide::Center => LquConvention::Center,
            LquSide::Partner => LquConvention::Partner,
        }
    }
}

/// Inclusive range `start:stop:step`; a bare number is a one-point range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub fn point(x: f64) -> Self {
        Self {
            start: x,
            stop: x,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // snap to 1e-12 so that 0.1 + 2·0.1 prints as 0.3
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.values().len()
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarnessError::Config(format!("cannot read range `{s}` (expected a0:a1:da)"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let axis = match parts[..] {
            [x] => Axis::point(x),
            [start, stop, step] => Axis { start, stop, step },
            _ => return Err(bad()),
        };
        if !(axis.step > 0.0) {
            return Err(HarnessError::Config(format!("range `{s}` needs a positive step")));
        }
        if axis.stop < axis.start {
            return Err(HarnessError::Config(format!("range `{s}` runs backwards")));
        }
        Ok(axis)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub alpha: Axis,
    pub beta: Axis,
}

impl Grid {
    /// All `(α, β)` pairs in lexicographic order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let betas = self.beta.values();
        self.alpha
            .values()
            .into_iter()
            .flat_map(|a| betas.iter().map(move |&b| (a, b)))
            .collect()
    }
}

impl FromStr for Grid {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| HarnessError::Config(format!("grid `{s}` needs two ranges: a0:a1:da,b0:b1:db")))?;
        Ok(Self {
            alpha: a.parse()?,
            beta: b.parse()?,
        })
    }
}

/// Fully resolved description of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub params: ModelParams,
    pub backend: Backend,
    pub policy: TruncationPolicy,
    pub tol: f64,
    pub max_sweeps: usize,
    pub grid: Option<Grid>,
    pub sizes: Option<Vec<usize>>,
    pub observables: Vec<Observable>,
    /// Initial occupation pattern (`empty`, `full`, or a ∘/• string).
    pub initial: String,
    /// Number of sweeps recorded by a time series.
    pub steps: usize,
    pub quantity: Quantity,
    /// Truncation of the classical matrix product ansatz.
    pub mpa_chi: usize,
    pub lqu_side: LquSide,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for `mode`; everything else is overridden field by field.
    pub fn defaults(mode: Mode) -> Self {
        let classical = mode == Mode::Classical;
        Self {
            mode,
            params: ModelParams {
                n_sites: if classical { 64 } else { 10 },
                alpha: 0.5,
                beta: 0.5,
                tau: 0.75,
                omega: if classical { 0.0 } else { FRAC_PI_4 },
            },
            backend: match mode {
                Mode::Classical => Backend::ClassicalMpa,
                Mode::Timeseries => Backend::Exact,
                _ => Backend::Mpo,
            },
            policy: TruncationPolicy::default(),
            tol: 1e-9,
            max_sweeps: 100_000,
            grid: None,
            sizes: None,
            observables: Vec::new(),
            initial: "empty".into(),
            steps: 40,
            quantity: Quantity::MeanDensity,
            mpa_chi: DEFAULT_CHI,
            lqu_side: LquSide::Center,
            output: PathBuf::from("qca-out"),
        }
    }

    /// Lattice sizes this run touches.
    pub fn all_sizes(&self) -> Vec<usize> {
        match (&self.sizes, self.mode) {
            (Some(s), Mode::Fss) => s.clone(),
            _ => vec![self.params.n_sites],
        }
    }

    pub fn wants(&self, obs: Observable) -> bool {
        self.observables.contains(&obs)
    }

    /// Observables requested when none were given explicitly.
    fn default_observables(&self) -> Vec<Observable> {
        use Observable::*;
        match (self.mode, self.backend) {
            (_, Backend::ClassicalMpa) => vec![Profile],
            (Mode::Timeseries, _) => vec![Negativity, Lqu, Coherence],
            (_, Backend::Exact) => vec![Profile, Negativity, Lqu, Coherence, Ppt],
            (_, Backend::Mpo) if self.params.n_sites <= MAX_DENSE_SITES => {
                vec![Profile, Negativity, Lqu, Coherence, Ppt]
            }
            (_, Backend::Mpo) => vec![Profile, Lqu, Coherence, Ppt],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        self.params.validate()?;
        self.policy.validate()?;
        if !(self.tol > 0.0) {
            return cfg(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_sweeps == 0 {
            return cfg("max-sweeps must be at least 1".into());
        }
        if self.mpa_chi < 2 {
            return cfg("the matrix product ansatz needs chi >= 2".into());
        }
        match self.mode {
            Mode::Scan if self.grid.is_none() => return cfg("scan needs --grid".into()),
            Mode::Fss => {
                let Some(grid) = &self.grid else {
                    return cfg("fss needs --grid describing a one-parameter cut".into());
                };
                if (grid.alpha.count() > 1) == (grid.beta.count() > 1) {
                    return cfg("fss needs exactly one grid axis with more than one point".into());
                }
                match &self.sizes {
                    Some(s) if s.len() >= 2 => {}
                    _ => return cfg("fss needs at least two --sizes (a crossing needs two curves)".into()),
                }
                if self.quantity == Quantity::Derivative && grid.alpha.count().max(grid.beta.count()) < 3 {
                    return cfg("the derivative needs at least three points on the cut".into());
                }
            }
            Mode::Timeseries => {
                if self.backend == Backend::ClassicalMpa {
                    return cfg("time series need the exact or mpo backend".into());
                }
                if self.steps == 0 {
                    return cfg("steps must be at least 1".into());
                }
            }
            _ => {}
        }
        for n in self.all_sizes() {
            ModelParams {
                n_sites: n,
                ..self.params
            }
            .validate()?;
            if self.backend == Backend::Exact && n > MAX_EXACT_SITES {
                return cfg(format!(
                    "the exact backend stops at N = {MAX_EXACT_SITES}; use --backend mpo for N = {n}"
                ));
            }
            if self.backend == Backend::Mpo && self.wants(Observable::Negativity) && n > MAX_DENSE_SITES {
                return cfg(format!(
                    "half-system negativity with the mpo backend needs N <= {MAX_DENSE_SITES} (got {n})"
                ));
            }
        }
        if self.backend == Backend::ClassicalMpa {
            if self.params.omega != 0.0 {
                return cfg("the classical-mpa backend describes omega = 0 only".into());
            }
            if let Some(o) = self.observables.iter().find(|&&o| o != Observable::Profile) {
                return cfg(format!(
                    "observable `{}` needs a quantum backend (classical-mpa gives profiles only)",
                    o.name()
                ));
            }
            if matches!(self.quantity, Quantity::Lqu | Quantity::Coherence) && self.mode == Mode::Fss {
                return cfg("classical-mpa cannot track quantum correlations".into());
            }
        }
        Ok(())
    }

    /// Stable identifier: hash of the configuration without its output path.
    pub fn run_id(&self) -> String {
        let mut echo = self.clone();
        echo.output = PathBuf::new();
        let json = serde_json::to_vec(&echo).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..6])
    }
}

#[derive(Debug, Parser)]
#[command(name = "qca", version, about = "Quantum cellular automaton TASEP experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one parameter point to its steady state.
    Run(Flags),
    /// Steady states over an (alpha, beta) grid.
    Scan(Flags),
    /// Observables after every sweep from the initial state.
    Timeseries(Flags),
    /// Curves along a one-parameter cut for several sizes, with crossings.
    Fss(Flags),
    /// Exact classical steady state from the matrix product ansatz.
    Classical(Flags),
}

impl Command {
    pub fn split(self) -> (Mode, Flags) {
        match self {
            Command::Run(f) => (Mode::Single, f),
            Command::Scan(f) => (Mode::Scan, f),
            Command::Timeseries(f) => (Mode::Timeseries, f),
            Command::Fss(f) => (Mode::Fss, f),
            Command::Classical(f) => (Mode::Classical, f),
        }
    }
}

/// Every knob, as a flag or as a key of the `--config` TOML file
/// (same names; flags win).
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Flags {
    /// TOML file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of sites.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Bulk hopping probability [default: 0.75].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Coherent hopping angle [default: pi/4; 0 for `classical`].
    #[arg(long, allow_negative_numbers = true)]
    pub omega: Option<f64>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub chi_max: Option<usize>,
    #[arg(long)]
    pub svd_cutoff: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// `a0:a1:da,b0:b1:db`; a bare number fixes that axis.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub observables: Option<Vec<Observable>>,
    /// Initial pattern: `empty`, `full`, or a string of ∘/• (or 0/1).
    #[arg(long)]
    pub initial: Option<String>,
    /// Sweeps recorded by `timeseries`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Quantity tracked by `fss`.
    #[arg(long, value_enum)]
    pub quantity: Option<Quantity>,
    /// Bond dimension of the classical matrix product ansatz.
    #[arg(long)]
    pub mpa_chi: Option<usize>,
    /// Which qubit of a pair the LQU measures.
    #[arg(long, value_enum)]
    pub lqu_side: Option<LquSide>,
    /// Keep trace renormalization of the MPO on (true) or off.
    #[arg(long)]
    pub renormalize_trace: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Flags {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::output(path, e))
    }

    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: Flags) -> Flags {
        Flags {
            config: self.config.or(base.config),
            n: self.n.or(base.n),
            alpha: self.alpha.or(base.alpha),
            beta: self.beta.or(base.beta),
            tau: self.tau.or(base.tau),
            omega: self.omega.or(base.omega),
            backend: self.backend.or(base.backend),
            chi_max: self.chi_max.or(base.chi_max),
            svd_cutoff: self.svd_cutoff.or(base.svd_cutoff),
            tol: self.tol.or(base.tol),
            max_sweeps: self.max_sweeps.or(base.max_sweeps),
            grid: self.grid.or(base.grid),
            sizes: self.sizes.or(base.sizes),
            observables: self.observables.or(base.observables),
            initial: self.initial.or(base.initial),
            steps: self.steps.or(base.steps),
            quantity: self.quantity.or(base.quantity),
            mpa_chi: self.mpa_chi.or(base.mpa_chi),
            lqu_side: self.lqu_side.or(base.lqu_side),
            renormalize_trace: self.renormalize_trace.or(base.renormalize_trace),
            out: self.out.or(base.out),
        }
    }

    /// Merges the config file (if any) under the flags and validates.
    pub fn resolve(self, mode: Mode) -> Result<ExperimentConfig> {
        let flags = match &self.config {
            Some(path) => self.clone().over(Flags::from_file(path)?),
            None => self,
        };
        let mut c = ExperimentConfig::defaults(mode);
        if let Some(b) = flags.backend {
            c.backend = b;
        }
        if c.backend == Backend::ClassicalMpa {
            c.params.omega = 0.0;
        }
        let p = &mut c.params;
        p.n_sites = flags.n.unwrap_or(p.n_sites);
        p.alpha = flags.alpha.unwrap_or(p.alpha);
        p.beta = flags.beta.unwrap_or(p.beta);
        p.tau = flags.tau.unwrap_or(p.tau);
        p.omega = flags.omega.unwrap_or(p.omega);
        c.policy.chi_max = flags.chi_max.unwrap_or(c.policy.chi_max);
        c.policy.svd_cutoff = flags.svd_cutoff.unwrap_or(c.policy.svd_cutoff);
        c.policy.renormalize_trace = flags.renormalize_trace.unwrap_or(c.policy.renormalize_trace);
        c.tol = flags.tol.unwrap_or(c.tol);
        c.max_sweeps = flags.max_sweeps.unwrap_or(c.max_sweeps);
        c.grid = flags.grid.as_deref().map(str::parse).transpose()?;
        c.sizes = flags.sizes.map(|mut s| {
            s.sort_unstable();
            s.dedup();
            s
        });
        c.initial = flags.initial.unwrap_or(c.initial);
        c.steps = flags.steps.unwrap_or(c.steps);
        c.quantity = flags.quantity.unwrap_or(c.quantity);
        c.mpa_chi = flags.mpa_chi.unwrap_or(c.mpa_chi);
        c.lqu_side = flags.lqu_side.unwrap_or(c.lqu_side);
        c.output = flags.out.unwrap_or(c.output);
        c.observables = match flags.observables {
            Some(mut o) => {
                o.sort_unstable();
                o.dedup();
                o
            }
            None => c.default_observables(),
        };
        if c.mode == Mode::Fss && c.quantity != Quantity::MeanDensity {
            let extra = match c.quantity {
                Quantity::Lqu => Some(Observable::Lqu),
                Quantity::Coherence => Some(Observable::Coherence),
                _ => None,
            };
            if let Some(o) = extra.filter(|o| !c.observables.contains(o)) {
                c.observables.push(o);
                c.observables.sort_unstable();
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values_are_snapped() {
        let a: Axis = "0.1:0.5:0.1".parse().unwrap();
        assert_eq!(a.values(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!("0.3".parse::<Axis>().unwrap().values(), vec![0.3]);
        assert!("0.1:0.5:0".parse::<Axis>().is_err());
        assert!("0.5:0.1:0.1".parse::<Axis>().is_err());
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let g: Grid = "0.3:0.7:0.4,0.3:0.7:0.4".parse().unwrap();
        assert_eq!(g.points(), vec![(0.3, 0.3), (0.3, 0.7), (0.7, 0.3), (0.7, 0.7)]);
    }

    #[test]
    fn flags_override_file() {
        let file = Flags {
            n: Some(6),
            alpha: Some(0.2),
            ..Default::default()
        };
        let cli = Flags {
            alpha: Some(0.4),
            ..Default::default()
        };
        let c = cli.over(file).resolve(Mode::Single).unwrap();
        assert_eq!(c.params.n_sites, 6);
        assert_eq!(c.params.alpha, 0.4);
    }

    #[test]
    fn toml_keys_mirror_flags() {
        let f: Flags = toml::from_str(
            "n = 6\nalpha = 0.3\nbackend = \"classical-mpa\"\nchi-max = 32\nsizes = [6, 8]\nobservables = [\"profile\"]\ngrid = \"0.1:0.9:0.1,0.3\"",
        )
        .unwrap();
        assert_eq!(f.chi_max, Some(32));
        assert_eq!(f.backend, Some(Backend::ClassicalMpa));
        assert!(toml::from_str::<Flags>("bogus = 1").is_err());
    }

    #[test]
    fn incompatible_requests_are_refused() {
        let neg_mpo = Flags {
            n: Some(10),
            backend: Some(Backend::Mpo),
            observables: Some(vec![Observable::Negativity]),
            ..Default::default()
        };
        assert!(neg_mpo.resolve(Mode::Single).is_err());
        let big_exact = Flags {
            n: Some(16),
            backend: Some(Backend::Exact),
            ..Default::default()
        };
        assert!(big_exact.resolve(Mode::Single).is_err());
        let one_size = Flags {
            sizes: Some(vec![8]),
            grid: Some("0.1:0.9:0.1,0.3".into()),
            ..Default::default()
        };
        assert!(one_size.resolve(Mode::Fss).is_err());
        let classical_lqu = Flags {
            observables: Some(vec![Observable::Lqu]),
            ..Default::default()
        };
        assert!(classical_lqu.resolve(Mode::Classical).is_err());
    }

    #[test]
    fn run_id_ignores_output_dir() {
        let mut a = ExperimentConfig::defaults(Mode::Single);
        let mut b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(a.run_id(), b.run_id());
        a.params.alpha = 0.25;
        assert_ne!(a.run_id(), b.run_id());
    }
}
