//! Strict JSON run configuration.
//!
//! Parsing is strict: unknown keys are rejected at every nesting level, with
//! a nearest-key suggestion appended to the error. Missing keys fall back to
//! documented defaults, so the minimal useful config is just
//! `{"command": "...", "divergence": "..."}`.

use std::fmt;
use std::path::Path;

use distill_engine::TrainConfig;
use fdivergence::DivergenceKind;
use sde_teacher::{Component, GaussianMixtureDensity, SdeSchedule};
use serde::{Deserialize, Serialize};
use theory_verify::QuadratureGrid;

use crate::error::RunnerError;

/// Which experiment an invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Divergence-expansion identity battery.
    VerifyExpansion,
    /// Expanded-objective vs. surrogate gradient battery.
    VerifyGradient,
    /// Weighted-trajectory equivalence for two time weights.
    VerifyWeighting,
    /// Discriminator-based density-ratio recovery probe.
    VerifyRatio,
    /// One-step generator distillation run.
    Distill,
    /// Re-read an existing report and summarize it.
    Report,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::VerifyExpansion,
        Command::VerifyGradient,
        Command::VerifyWeighting,
        Command::VerifyRatio,
        Command::Distill,
        Command::Report,
    ];

    /// Canonical hyphenated name (matches the JSON form).
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyExpansion => "verify-expansion",
            Command::VerifyGradient => "verify-gradient",
            Command::VerifyWeighting => "verify-weighting",
            Command::VerifyRatio => "verify-ratio",
            Command::Distill => "distill",
            Command::Report => "report",
        }
    }

    /// Parse a command name, suggesting the nearest one on failure.
    pub fn parse_name(s: &str) -> Result<Command, RunnerError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let nearest = Command::ALL
                    .into_iter()
                    .min_by_key(|c| strsim::levenshtein(s, c.name()))
                    .expect("non-empty command list");
                RunnerError::Validation(format!(
                    "unknown command `{s}`; did you mean `{}`?",
                    nearest.name()
                ))
            })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Variance-preserving noise schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Smallest resolved time `t_min`.
    pub t_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0, horizon: 1.0, t_min: 1e-3 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<SdeSchedule, RunnerError> {
        SdeSchedule::vp(self.beta_min, self.beta_max, self.horizon, self.t_min)
            .map_err(|e| RunnerError::Validation(format!("schedule: {e}")))
    }
}

/// One diagonal-Gaussian mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    #[serde(default = "one")]
    pub weight: f64,
    pub mean: Vec<f64>,
    pub diag_cov: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// A mixture density given as an explicit component list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub components: Vec<ComponentConfig>,
}

impl GmmConfig {
    /// Single standard Gaussian at `mean` (all variances 1).
    pub fn gaussian_1d(mean: f64) -> Self {
        GmmConfig {
            components: vec![ComponentConfig { weight: 1.0, mean: vec![mean], diag_cov: vec![1.0] }],
        }
    }

    /// Capture an existing density (used to echo programmatic teachers).
    pub fn from_density(density: &GaussianMixtureDensity) -> Self {
        GmmConfig {
            components: density
                .components()
                .iter()
                .map(|c| ComponentConfig {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    diag_cov: c.diag_cov.clone(),
                })
                .collect(),
        }
    }

    /// Build the density, naming `field` in any validation error.
    pub fn build(&self, field: &str) -> Result<GaussianMixtureDensity, RunnerError> {
        if self.components.is_empty() {
            return Err(RunnerError::Validation(format!(
                "{field}.components: need at least one component"
            )));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(RunnerError::Validation(format!(
                "{field}.components.weight: weights sum to {total}, expected 1"
            )));
        }
        let comps: Vec<Component> = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.clone(),
                diag_cov: c.diag_cov.clone(),
            })
            .collect();
        GaussianMixtureDensity::new(comps)
            .map_err(|e| RunnerError::Validation(format!("{field}.components: {e}")))
    }
}

/// The pair of clean densities an experiment works with.
///
/// `q` is the data (teacher) density: verification commands compare `q`
/// against `p`, the distillation command fits a generator to `q`, and the
/// ratio probe trains a discriminator between `q` (real) and `p` (fake).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub q: GmmConfig,
    pub p: GmmConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { q: GmmConfig::gaussian_1d(0.0), p: GmmConfig::gaussian_1d(1.0) }
    }
}

/// Quadrature resolution for the verification commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub space_points: usize,
    /// Half-width of the space window, in combined standard deviations.
    pub space_extent: f64,
    pub time_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { space_points: 2048, space_extent: 10.0, time_points: 64 }
    }
}

impl GridConfig {
    pub fn build(&self, schedule: &SdeSchedule) -> Result<QuadratureGrid, RunnerError> {
        QuadratureGrid::new(
            self.space_points,
            self.space_extent,
            self.time_points,
            schedule.t_min(),
            schedule.horizon_t(),
        )
        .map_err(|e| RunnerError::Validation(format!("grid: {e}")))
    }
}

/// Full run specification.
///
/// The top-level `divergence` and `seed` are authoritative: they overwrite
/// `train.divergence` and `train.seed` when the config is resolved, so a
/// single switch selects the divergence for every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// May be omitted in the file when given on the command line.
    pub command: Option<Command>,
    pub divergence: DivergenceKind,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub teacher: TeacherConfig,
    pub grid: GridConfig,
    pub train: TrainConfig,
    /// Where artifacts go. Overridden by `UNI_DISTILL_OUT` and `--out`.
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            divergence: DivergenceKind::default(),
            seed: 0,
            schedule: ScheduleConfig::default(),
            teacher: TeacherConfig::default(),
            grid: GridConfig::default(),
            train: TrainConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Semantic validation of every nested object. Field-naming errors come
    /// from here; strictness errors come from parsing.
    pub fn validate(&self) -> Result<(), RunnerError> {
        let schedule = self.schedule.build()?;
        let q = self.teacher.q.build("teacher.q")?;
        let p = self.teacher.p.build("teacher.p")?;
        if q.dim() != p.dim() {
            return Err(RunnerError::Validation(format!(
                "teacher: q is {}-dimensional but p is {}-dimensional",
                q.dim(),
                p.dim()
            )));
        }
        self.grid.build(&schedule)?;
        self.train_resolved()
            .validate()
            .map_err(|e| RunnerError::Validation(format!("train: {e}")))?;
        Ok(())
    }

    /// The engine configuration with the authoritative divergence and seed
    /// substituted in.
    pub fn train_resolved(&self) -> TrainConfig {
        let mut train = self.train.clone();
        train.divergence = self.divergence;
        train.seed = self.seed;
        train
    }

    /// Copy of the config with the overrides applied, as echoed in reports.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.train = self.train_resolved();
        cfg
    }
}

/// Read and strictly parse a config file, then validate it.
pub fn load_config(path: &Path) -> Result<RunConfig, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Strictly parse config JSON; unknown-key errors carry a suggestion.
pub fn parse_config(text: &str) -> Result<RunConfig, RunnerError> {
    serde_json::from_str::<RunConfig>(text).map_err(|e| RunnerError::Parse(suggest(&e.to_string())))
}

/// If a strict-parse message names an unknown field, append the nearest
/// known key as a suggestion. serde's message already carries the line and
/// column of the offending key.
fn suggest(message: &str) -> String {
    let Some(rest) = message.strip_prefix("unknown ") else {
        return message.to_string();
    };
    let is_key = rest.starts_with("field") || rest.starts_with("variant");
    let ticked: Vec<&str> = message
        .split('`')
        .skip(1)
        .step_by(2)
        .collect();
    if !is_key || ticked.len() < 2 {
        return message.to_string();
    }
    let unknown = ticked[0];
    let nearest = ticked[1..]
        .iter()
        .min_by_key(|cand| strsim::levenshtein(unknown, cand))
        .expect("at least one candidate");
    format!("{message}; did you mean `{nearest}`?")
}
