//! Experiment configuration files.
//!
//! A config is a TOML document with a few top-level keys and exactly one
//! parameter table named after the experiment:
//!
//! ```toml
//! experiment = "renewal"
//! seed = 0
//! criterion = 1
//!
//! [tolerances]
//! lambda = 1e-8
//!
//! [renewal]
//! rate = { kind = "constant", value = 1.0 }
//! spacing = 0.00390625
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::PathBuf;

use doeblin_core::diffusion::{GrowthSpec, SigmaSpec, VarianceConvention};
use doeblin_core::maxage::MaxAgeSchedule;
use doeblin_core::periodic::{Harmonic, PeriodicRate, PeriodicRateSpec};
use doeblin_core::renewal::{DivisionRate, RateProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: `{key}`: {message}")]
    Invalid { origin: String, key: String, message: String },
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("unknown preset `{0}` (see `doeblin presets list`)")]
    UnknownPreset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Renewal,
    Diffusion,
    Periodic,
    Maxage,
    Branching,
    VerifyCore,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Renewal => "renewal",
            Self::Diffusion => "diffusion",
            Self::Periodic => "periodic",
            Self::Maxage => "maxage",
            Self::Branching => "branching",
            Self::VerifyCore => "verify-core",
        }
    }

    /// Tolerance names that may be overridden in `[tolerances]`.
    pub fn tolerance_keys(self) -> &'static [&'static str] {
        match self {
            Self::Renewal => &["lambda", "h", "gamma", "slope_rel", "runtime"],
            Self::Diffusion => &["row_sum", "runtime"],
            Self::Periodic => &["lambda", "slope", "residual_factor", "runtime"],
            Self::Maxage => &["gap_floor", "mass_ratio", "runtime"],
            Self::Branching => &["z", "runtime"],
            Self::VerifyCore => &["min_informative", "runtime"],
        }
    }
}

/// Age-dependent division rate with the crenel bound it satisfies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    Constant {
        value: f64,
    },
    Crenel {
        on: f64,
        #[serde(default)]
        off: f64,
        a0: f64,
        p: f64,
        l: f64,
        b_lower: f64,
    },
    /// Piecewise linear through `[age, rate]` points.
    Tabulated {
        points: Vec<(f64, f64)>,
        a0: f64,
        p: f64,
        l: f64,
        b_lower: f64,
    },
}

impl RateConfig {
    pub fn build(&self) -> doeblin_core::Result<DivisionRate> {
        match self {
            Self::Constant { value } => DivisionRate::constant(*value),
            Self::Crenel { on, off, a0, p, l, b_lower } => {
                DivisionRate::new(RateProfile::Crenel { on: *on, off: *off }, *a0, *p, *l, *b_lower)
            }
            Self::Tabulated { points, a0, p, l, b_lower } => {
                DivisionRate::new(RateProfile::Tabulated(points.clone()), *a0, *p, *l, *b_lower)
            }
        }
    }
}

/// Evenly spaced times `start, start + step, ..., end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl TimeRange {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.step > 0.0 && self.end >= self.start && self.start >= 0.0) {
            return Err(format!("need 0 <= start <= end and step > 0, got {self:?}"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalParams {
    pub rate: RateConfig,
    pub spacing: f64,
    /// Defaults to the truncation rule of the rate.
    pub a_max: Option<f64>,
    /// Age of the initial Dirac mass.
    #[serde(default)]
    pub x0: f64,
    pub decay: TimeRange,
    /// Fits the envelope constant here and checks the spectral-gap rate afterwards.
    pub envelope_t0: Option<f64>,
    /// Runs the lattice mass checks up to this time.
    pub structural_horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaConfig {
    Constant { value: f64 },
    Step { times: Vec<f64>, values: Vec<f64> },
    /// Draws from the run seed unless `seed` is given.
    OnOff { on_value: f64, mean_on: f64, mean_off: f64, horizon: f64, seed: Option<u64> },
}

impl SigmaConfig {
    pub fn build(&self, run_seed: u64) -> SigmaSpec {
        match self {
            Self::Constant { value } => SigmaSpec::Constant(*value),
            Self::Step { times, values } => SigmaSpec::Step { times: times.clone(), values: values.clone() },
            Self::OnOff { on_value, mean_on, mean_off, horizon, seed } => SigmaSpec::OnOff {
                on_value: *on_value,
                mean_on: *mean_on,
                mean_off: *mean_off,
                horizon: *horizon,
                seed: seed.unwrap_or(run_seed),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthConfig {
    Constant { value: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

impl GrowthConfig {
    pub fn build(&self) -> GrowthSpec {
        match self {
            Self::Constant { value } => GrowthSpec::Constant(*value),
            Self::Tabulated { points } => GrowthSpec::Tabulated(points.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionParams {
    pub sigma: SigmaConfig,
    pub growth: GrowthConfig,
    #[serde(default)]
    pub convention: VarianceConvention,
    pub n_cells: usize,
    pub dt: f64,
    pub tau: f64,
    pub horizon: f64,
    /// Location of the initial Dirac mass in `[0, 1]`.
    pub x0: f64,
    /// Harmonic function horizon; defaults to `horizon`.
    pub h_horizon: Option<f64>,
    /// Window sizes `σ_{0,t}` at which the density sandwich is checked.
    #[serde(default)]
    pub sandwich_sigmas: Vec<f64>,
    #[serde(default = "default_sandwich_cells")]
    pub sandwich_cells: usize,
}

fn default_sandwich_cells() -> usize {
    256
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub mean: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl From<HarmonicConfig> for Harmonic {
    fn from(h: HarmonicConfig) -> Self {
        Harmonic { mean: h.mean, amplitude: h.amplitude, phase: h.phase }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeriodicRateConfig {
    /// `mean + amplitude · sin(2πt/T + phase)`.
    TimeOnly {
        mean: f64,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Separable {
        time: HarmonicConfig,
        age: RateConfig,
        threshold_age: f64,
        b_lower: f64,
        b_upper: f64,
    },
}

impl PeriodicRateConfig {
    pub fn build(&self, period: f64) -> doeblin_core::Result<PeriodicRate> {
        match self {
            Self::TimeOnly { mean, amplitude, phase } => {
                PeriodicRate::time_only(Harmonic { mean: *mean, amplitude: *amplitude, phase: *phase }, period)
            }
            Self::Separable { time, age, threshold_age, b_lower, b_upper } => PeriodicRate::new(
                PeriodicRateSpec::Separable { time: (*time).into(), age: age.build()? },
                period,
                *threshold_age,
                *b_lower,
                *b_upper,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicParams {
    pub rate: PeriodicRateConfig,
    pub period: f64,
    pub a_max: f64,
    pub spacing: f64,
    #[serde(default)]
    pub x0: f64,
    pub decay: TimeRange,
    /// Start offsets, in steps, for the periodicity residual of the profile family.
    #[serde(default)]
    pub offsets: Vec<usize>,
    /// Horizon of the mass monotonicity checks.
    pub mass_horizon: Option<f64>,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_power_tol")]
    pub power_tol: f64,
}

fn default_iterations() -> usize {
    2000
}

fn default_power_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallConfig {
    pub samples: usize,
    /// `[s, t]` windows.
    pub windows: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H0Config {
    pub r: f64,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub s: f64,
    pub horizons: Vec<f64>,
    pub h_horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxAgeParams {
    pub schedule: MaxAgeSchedule,
    pub rate: RateConfig,
    pub spacing: f64,
    pub gronwall: GronwallConfig,
    pub h0: H0Config,
    pub profile: ProfileConfig,
    /// `[s, t]` windows for the mass ratio bound.
    #[serde(default)]
    pub mass_windows: Vec<(f64, f64)>,
}

/// Test function `f` applied to the final ages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FConfig {
    One,
    /// `1` on `[lo, hi)`.
    Indicator { lo: f64, hi: f64 },
}

impl FConfig {
    pub fn eval(self, a: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Indicator { lo, hi } => (lo <= a && a < hi) as u8 as f64,
        }
    }
}

/// Deterministic value the Monte Carlo ratio is compared to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `δ_x M_t f / m_t(x)` from the renewal semigroup.
    #[default]
    Semigroup,
    /// `γ(f)` for the stationary profile.
    Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingCase {
    /// File stem of the per-run CSV.
    pub label: String,
    pub rate: RateConfig,
    #[serde(default)]
    pub x0: f64,
    pub t: f64,
    pub n_runs: u64,
    /// Absent: mean population against `m_t(x0)`. Present: many-to-one ratio.
    pub f: Option<FConfig>,
    #[serde(default)]
    pub reference: Reference,
    /// Offset added to the run seed.
    #[serde(default)]
    pub seed_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingParams {
    /// Spacing of the deterministic comparator.
    pub spacing: f64,
    pub cases: Vec<BranchingCase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    pub trials: u64,
    pub max_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Acceptance criterion summarized by this run, if any.
    pub criterion: Option<u8>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub renewal: Option<RenewalParams>,
    pub diffusion: Option<DiffusionParams>,
    pub periodic: Option<PeriodicParams>,
    pub maxage: Option<MaxAgeParams>,
    pub branching: Option<BranchingParams>,
    #[serde(rename = "verify-core")]
    pub verify_core: Option<VerifyParams>,
}

fn positive(origin: &str, key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(origin, key, format!("must be positive and finite, got {v}")))
    }
}

fn invalid(origin: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { origin: origin.into(), key: key.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document; `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { origin: origin.into(), message: e.to_string() })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    pub fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let kind = self.experiment;
        let blocks: [(&str, bool); 6] = [
            ("renewal", self.renewal.is_some()),
            ("diffusion", self.diffusion.is_some()),
            ("periodic", self.periodic.is_some()),
            ("maxage", self.maxage.is_some()),
            ("branching", self.branching.is_some()),
            ("verify-core", self.verify_core.is_some()),
        ];
        for (name, present) in blocks {
            if present && name != kind.name() {
                return Err(invalid(origin, name, format!("table does not belong to a `{}` experiment", kind.name())));
            }
            if !present && name == kind.name() {
                return Err(invalid(origin, name, "missing parameter table"));
            }
        }
        for (key, v) in &self.tolerances {
            if !kind.tolerance_keys().contains(&key.as_str()) {
                return Err(invalid(
                    origin,
                    &format!("tolerances.{key}"),
                    format!("unknown tolerance; expected one of {:?}", kind.tolerance_keys()),
                ));
            }
            positive(origin, &format!("tolerances.{key}"), *v)?;
        }
        if let Some(c) = self.criterion {
            if !(1..=8).contains(&c) {
                return Err(invalid(origin, "criterion", format!("must be in 1..=8, got {c}")));
            }
        }
        let core = |key: &str, e: doeblin_core::Error| invalid(origin, key, e.to_string());
        match kind {
            ExperimentKind::Renewal => {
                let p = self.renewal.as_ref().expect("checked above");
                p.rate.build().map_err(|e| core("renewal.rate", e))?;
                positive(origin, "renewal.spacing", p.spacing)?;
                if let Some(a) = p.a_max {
                    positive(origin, "renewal.a_max", a)?;
                }
                p.decay.validate().map_err(|m| invalid(origin, "renewal.decay", m))?;
                if p.decay.points().len() < 5 {
                    return Err(invalid(origin, "renewal.decay", "at least 5 times are needed for the rate fit"));
                }
            }
            ExperimentKind::Diffusion => {
                let p = self.diffusion.as_ref().expect("checked above");
                p.sigma.build(self.seed).to_steps().map_err(|e| core("diffusion.sigma", e))?;
                if p.n_cells < 2 {
                    return Err(invalid(origin, "diffusion.n_cells", "need at least 2 cells"));
                }
                positive(origin, "diffusion.dt", p.dt)?;
                positive(origin, "diffusion.tau", p.tau)?;
                positive(origin, "diffusion.horizon", p.horizon)?;
                if !(0.0..=1.0).contains(&p.x0) {
                    return Err(invalid(origin, "diffusion.x0", "must lie in [0, 1]"));
                }
                for (i, s) in p.sandwich_sigmas.iter().enumerate() {
                    positive(origin, &format!("diffusion.sandwich_sigmas[{i}]"), *s)?;
                }
            }
            ExperimentKind::Periodic => {
                let p = self.periodic.as_ref().expect("checked above");
                positive(origin, "periodic.period", p.period)?;
                p.rate.build(p.period).map_err(|e| core("periodic.rate", e))?;
                positive(origin, "periodic.a_max", p.a_max)?;
                positive(origin, "periodic.spacing", p.spacing)?;
                p.decay.validate().map_err(|m| invalid(origin, "periodic.decay", m))?;
                if p.decay.points().len() < 5 {
                    return Err(invalid(origin, "periodic.decay", "at least 5 times are needed for the rate fit"));
                }
            }
            ExperimentKind::Maxage => {
                let p = self.maxage.as_ref().expect("checked above");
                p.rate.build().map_err(|e| core("maxage.rate", e))?;
                positive(origin, "maxage.spacing", p.spacing)?;
                if p.gronwall.samples == 0 {
                    return Err(invalid(origin, "maxage.gronwall.samples", "must be at least 1"));
                }
                if p.profile.horizons.len() < 2 {
                    return Err(invalid(origin, "maxage.profile.horizons", "need at least two horizons"));
                }
            }
            ExperimentKind::Branching => {
                let p = self.branching.as_ref().expect("checked above");
                positive(origin, "branching.spacing", p.spacing)?;
                if p.cases.is_empty() {
                    return Err(invalid(origin, "branching.cases", "need at least one case"));
                }
                for (i, c) in p.cases.iter().enumerate() {
                    let key = |k: &str| format!("branching.cases[{i}].{k}");
                    c.rate.build().map_err(|e| core(&key("rate"), e))?;
                    if c.n_runs == 0 {
                        return Err(invalid(origin, &key("n_runs"), "must be positive"));
                    }
                    let min = if c.f.is_some() { 100 } else { 2 };
                    if c.n_runs < min {
                        return Err(invalid(origin, &key("n_runs"), format!("need at least {min} runs, got {}", c.n_runs)));
                    }
                    positive(origin, &key("t"), c.t)?;
                    if c.x0 < 0.0 {
                        return Err(invalid(origin, &key("x0"), "must be nonnegative"));
                    }
                    if c.label.is_empty() || !c.label.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                        return Err(invalid(origin, &key("label"), "must be a nonempty [A-Za-z0-9_-] name"));
                    }
                    if c.reference == Reference::Profile && c.f.is_none() {
                        return Err(invalid(origin, &key("reference"), "profile reference needs an `f`"));
                    }
                }
                let mut labels: Vec<&str> = p.cases.iter().map(|c| c.label.as_str()).collect();
                labels.sort_unstable();
                if labels.windows(2).any(|w| w[0] == w[1]) {
                    return Err(invalid(origin, "branching.cases", "labels must be unique"));
                }
            }
            ExperimentKind::VerifyCore => {
                let p = self.verify_core.as_ref().expect("checked above");
                if p.trials == 0 {
                    return Err(invalid(origin, "verify-core.trials", "must be positive"));
                }
                if p.max_cells < 2 {
                    return Err(invalid(origin, "verify-core.max_cells", "need at least 2 cells"));
                }
            }
        }
        Ok(())
    }
}
