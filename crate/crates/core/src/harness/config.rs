//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::hierarchy::TriggerParams;
use crate::solver::ArmijoParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Deconv,
    Tomo,
    Ddesign,
    Selftest,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Deconv => "deconv",
            Experiment::Tomo => "tomo",
            Experiment::Ddesign => "ddesign",
            Experiment::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "deconv" => Ok(Experiment::Deconv),
            "tomo" => Ok(Experiment::Tomo),
            "ddesign" => Ok(Experiment::Ddesign),
            "selftest" => Ok(Experiment::Selftest),
            other => Err(HarnessError::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Fine side is `2^grid_exponent - 1`.
    pub grid_exponent: u32,
    pub levels: usize,
    /// Smoothing steps per level; entry 0 is unused by the V-cycle.
    pub smoothing: Vec<usize>,
    pub trigger: TriggerParams,
    pub armijo: ArmijoParams,
    pub psf_dim: usize,
    pub psf_sigma: f64,
    /// Poisson intensity; `inf` means noiseless data.
    pub lambda: f64,
    /// Projection angles per level.
    pub angles: Vec<usize>,
    /// Detector bins per level.
    pub detectors: Vec<usize>,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    /// Outer iterations of the multilevel run.
    pub iters: usize,
    /// Iterations of the single-level comparison run.
    pub sl_iters: usize,
    /// Gradient-descent budget of the least-squares reconstructions.
    pub lsq_iters: usize,
    /// Number of selected angles; `None` means `angles / 8`.
    pub top_k: Option<usize>,
    /// Write an image of the multilevel iterate every this many iterations.
    pub snapshot_every: usize,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            grid_exponent: 6,
            levels: 3,
            smoothing: vec![1, 10, 10],
            trigger: TriggerParams::default(),
            armijo: ArmijoParams::default(),
            psf_dim: 9,
            psf_sigma: 1.5,
            lambda: 1000.0,
            angles: vec![],
            detectors: vec![],
            seed: 0,
            input: None,
            output: PathBuf::from("out"),
            iters: 60,
            sl_iters: 60,
            lsq_iters: 300,
            top_k: None,
            snapshot_every: 10,
        };
        match experiment {
            Experiment::Deconv | Experiment::Selftest => ExperimentConfig {
                trigger: TriggerParams { kappa: 0.45, epsilon: 1e-3, epsilon_x: 1e-3 },
                ..base
            },
            Experiment::Tomo => ExperimentConfig {
                trigger: TriggerParams { kappa: 0.4, ..TriggerParams::default() },
                levels: 2,
                smoothing: vec![1, 10],
                angles: vec![40, 20],
                detectors: vec![63, 31],
                lambda: f64::INFINITY,
                iters: 50,
                sl_iters: 50,
                ..base
            },
            Experiment::Ddesign => ExperimentConfig {
                grid_exponent: 4,
                levels: 2,
                smoothing: vec![1, 3],
                angles: vec![60, 60],
                detectors: vec![15, 7],
                lambda: f64::INFINITY,
                iters: 30,
                sl_iters: 30,
                ..base
            },
        }
    }

    pub fn fine_side(&self) -> usize {
        (1usize << self.grid_exponent) - 1
    }

    /// Sides of all levels, finest first.
    pub fn sides(&self) -> Vec<usize> {
        (0..self.levels).map(|l| (1usize << (self.grid_exponent - l as u32)) - 1).collect()
    }

    pub fn top_k(&self) -> usize {
        self.top_k.unwrap_or_else(|| (self.angles.first().copied().unwrap_or(0) / 8).max(1))
    }

    /// Parses a config file on top of the experiment defaults.
    pub fn from_file(path: &Path, experiment: Option<Experiment>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, experiment)
    }

    /// Parses `key = value` lines. `#` starts a comment. The experiment is
    /// taken from `experiment`, else from the `experiment` key. The result is
    /// not validated, so that later overrides can still apply.
    pub fn parse(text: &str, experiment: Option<Experiment>) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            pairs.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let from_file = pairs
            .iter()
            .find(|(_, k, _)| k == "experiment")
            .map(|(_, _, v)| v.parse::<Experiment>())
            .transpose()?;
        let kind = match (experiment, from_file) {
            (Some(e), _) => e,
            (None, Some(e)) => e,
            (None, None) => return Err(HarnessError::Config("no experiment given".into())),
        };
        let mut cfg = Self::defaults(kind);
        for (n, k, v) in &pairs {
            cfg.set(k, v).map_err(|e| HarnessError::Config(format!("line {n}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "experiment" => {}
            "grid_exponent" => self.grid_exponent = num(key, value)?,
            "levels" => self.set_levels(num(key, value)?),
            "smoothing" => self.smoothing = list(key, value)?,
            "kappa" => self.trigger.kappa = num(key, value)?,
            "epsilon" => self.trigger.epsilon = num(key, value)?,
            "epsilon_x" => self.trigger.epsilon_x = num(key, value)?,
            "armijo_sigma" => self.armijo.sigma = num(key, value)?,
            "armijo_beta" => self.armijo.beta = num(key, value)?,
            "armijo_alpha_bar" => self.armijo.alpha_bar = num(key, value)?,
            "psf_dim" => self.psf_dim = num(key, value)?,
            "psf_sigma" => self.psf_sigma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "angles" => self.angles = list(key, value)?,
            "detectors" => self.detectors = list(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "input" => self.input = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "output" => self.output = PathBuf::from(value),
            "iters" => self.iters = num(key, value)?,
            "sl_iters" => self.sl_iters = num(key, value)?,
            "lsq_iters" => self.lsq_iters = num(key, value)?,
            "top_k" => self.top_k = Some(num(key, value)?),
            "snapshot_every" => self.snapshot_every = num(key, value)?,
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Overrides the level count, trimming or extending per-level lists.
    pub fn set_levels(&mut self, levels: usize) {
        self.levels = levels;
        let last = self.smoothing.last().copied().unwrap_or(1);
        self.smoothing.resize(levels, last);
        if !self.angles.is_empty() {
            let mut angles = self.angles.clone();
            while angles.len() < levels {
                let a = *angles.last().expect("nonempty");
                angles.push(if a % 2 == 0 { a / 2 } else { a });
            }
            angles.truncate(levels);
            self.angles = angles;
        }
        if !self.detectors.is_empty() {
            let mut det = self.detectors.clone();
            while det.len() < levels {
                let d = *det.last().expect("nonempty");
                det.push((d.max(3) - 1) / 2);
            }
            det.truncate(levels);
            self.detectors = det;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.levels < 1 {
            return bad("levels must be at least 1".into());
        }
        if self.grid_exponent < 2 || self.grid_exponent > 12 {
            return bad(format!("grid_exponent {} outside 2..=12", self.grid_exponent));
        }
        if self.experiment != Experiment::Selftest && self.levels as u32 + 2 > self.grid_exponent {
            return bad(format!(
                "{} levels need grid_exponent at least {}",
                self.levels,
                self.levels + 2
            ));
        }
        if self.smoothing.len() != self.levels {
            return bad(format!("smoothing lists {} entries for {} levels", self.smoothing.len(), self.levels));
        }
        if self.smoothing.iter().skip(1).any(|&m| m == 0) {
            return bad("coarse smoothing counts must be positive".into());
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.psf_dim % 2 == 0 || self.psf_dim == 0 || !(self.psf_sigma > 0.0) {
            return bad("psf_dim must be odd and psf_sigma positive".into());
        }
        self.trigger.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.armijo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if matches!(self.experiment, Experiment::Tomo | Experiment::Ddesign) {
            if self.angles.len() != self.levels || self.detectors.len() != self.levels {
                return bad("angles and detectors need one entry per level".into());
            }
            if self.angles.iter().any(|&a| a == 0) || self.detectors.iter().any(|&d| d == 0) {
                return bad("angle and detector counts must be positive".into());
            }
            for w in self.angles.windows(2) {
                if w[0] % w[1] != 0 {
                    return bad(format!("coarse angle count {} does not divide {}", w[1], w[0]));
                }
            }
        }
        if self.experiment == Experiment::Tomo && self.detectors != self.sides() {
            return bad(format!("tomo detectors must equal the level sides {:?}", self.sides()));
        }
        if self.experiment == Experiment::Ddesign {
            if self.angles.windows(2).any(|w| w[0] != w[1]) {
                return bad("ddesign keeps the angle set on every level".into());
            }
            for w in self.detectors.windows(2) {
                if w[0] != 2 * w[1] + 1 {
                    return bad(format!("detectors {} cannot coarsen to {}", w[0], w[1]));
                }
            }
            if self.top_k() > self.angles[0] {
                return bad("top_k exceeds the angle count".into());
            }
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be positive".into());
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}
