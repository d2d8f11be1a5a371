//! Experiment configuration files.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use quasidyn::arithmetic::{build_test_frequency, DiophantineCondition, FrequencyProfile, FrequencySpec, TestFrequencyKind};
use quasidyn::dynamics::{BoundParams, BoxPolicy, EnergyGrid, InitialState, ScaleKind};
use quasidyn::green::{DecayForm, PsiSpec, SearchMode};
use quasidyn::operator::{Hopping, OperatorSpec, PotentialSpec};
use quasidyn::spectral::ThetaGrid;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Frequency,
    Discrepancy,
    Lyapunov,
    Ldt,
    Greenbox,
    Moments,
    VerifyBounds,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Frequency => "frequency",
            Command::Discrepancy => "discrepancy",
            Command::Lyapunov => "lyapunov",
            Command::Ldt => "ldt",
            Command::Greenbox => "greenbox",
            Command::Moments => "moments",
            Command::VerifyBounds => "verify-bounds",
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Top level of a config file. `params` is checked against the schema of
/// the selected command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds every Monte-Carlo phase grid.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    pub params: serde_json::Value,
}

/// Deserialize with the JSON path of the offending field in the message.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{what}: at `{path}`: {}", e.into_inner()))
    })
}

pub fn parse_params<T: DeserializeOwned>(v: &serde_json::Value) -> Result<T, CliError> {
    parse_json(&v.to_string(), "params")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyChoice {
    /// Continued fraction or float value, optionally with a condition.
    Spec(FrequencySpec),
    /// Constructed frequency with a certified condition.
    Test(TestFrequencyKind),
}

impl FrequencyChoice {
    pub fn resolve(&self) -> quasidyn::Result<FrequencyProfile> {
        match self {
            FrequencyChoice::Spec(s) => s.resolve(),
            FrequencyChoice::Test(kind) => {
                let t = build_test_frequency(*kind)?;
                Ok(t.profile.with_condition(t.condition))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub potential: PotentialSpec,
    #[serde(default)]
    pub hopping: Hopping,
    pub frequency: FrequencyChoice,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub window: Option<(i64, i64)>,
    #[serde(default)]
    pub spectrum_radius: Option<f64>,
}

impl OperatorConfig {
    pub fn build(&self) -> Result<(OperatorSpec, FrequencyProfile), CliError> {
        let profile = self.frequency.resolve()?;
        let window = self.window.unwrap_or((0, 0));
        let mut spec = OperatorSpec::new(self.potential.clone(), profile.alpha(), self.theta, window, self.hopping.clone())?;
        if let Some(k) = self.spectrum_radius {
            spec = spec.with_spectrum_radius(k)?;
        }
        Ok((spec, profile))
    }

    pub fn build_windowed(&self) -> Result<(OperatorSpec, FrequencyProfile), CliError> {
        if self.window.is_none() {
            return Err(CliError::Config("params: at `operator.window`: a window is required".into()));
        }
        self.build()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    Uniform {
        n: usize,
        #[serde(default = "yes")]
        golden_offset: bool,
    },
    LowDiscrepancy {
        n: usize,
    },
    /// Uses the top-level seed.
    Random {
        n: usize,
    },
}

fn yes() -> bool {
    true
}

impl GridConfig {
    pub fn grid(&self, seed: u64) -> ThetaGrid {
        match *self {
            GridConfig::Uniform { n, golden_offset } => ThetaGrid::Uniform { n, golden_offset },
            GridConfig::LowDiscrepancy { n } => ThetaGrid::LowDiscrepancy { n },
            GridConfig::Random { n } => ThetaGrid::Random { n, seed },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyParams {
    pub frequency: FrequencyChoice,
    /// Condition to verify; defaults to the one attached to the frequency.
    #[serde(default)]
    pub condition: Option<DiophantineCondition>,
    #[serde(default = "default_n_max")]
    pub n_max: u64,
}

fn default_n_max() -> u64 {
    1_000_000
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyParams {
    pub frequency: FrequencyChoice,
    #[serde(default)]
    pub theta: f64,
    pub n_values: Vec<u64>,
    pub m_values: Vec<u64>,
    /// Constant `C` in the dks bound.
    #[serde(default = "one")]
    pub dks_constant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub operator: OperatorConfig,
    pub energies: Vec<f64>,
    #[serde(default)]
    pub eta: f64,
    pub n_values: Vec<u64>,
    pub theta_grid: GridConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdtParams {
    pub operator: OperatorConfig,
    pub energy: f64,
    #[serde(default)]
    pub eta: f64,
    pub scales: Vec<u64>,
    pub theta_grid: GridConfig,
    pub kappa: f64,
}

fn default_n_e() -> usize {
    16
}

fn default_t() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenboxParams {
    pub operator: OperatorConfig,
    pub n: u64,
    pub psi: PsiSpec,
    pub c2: f64,
    /// Explicit `[re, im]` energies; otherwise `n_e` points on `[−K, K]`
    /// at height `1/T`.
    #[serde(default)]
    pub z_grid: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub search: SearchMode,
    #[serde(default)]
    pub decay: DecayForm,
    #[serde(default)]
    pub log_power_floor: Option<f64>,
    pub thetas: GridConfig,
    /// Write the Green's function of the first good interval found.
    #[serde(default)]
    pub dump_green: bool,
}

impl GreenboxParams {
    pub fn z_grid(&self, k: f64) -> Vec<Complex64> {
        match &self.z_grid {
            Some(z) => z.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
            None => quasidyn::green::default_z_grid(k, self.n_e, self.t),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsParams {
    pub operator: OperatorConfig,
    pub phi: InitialState,
    pub p: f64,
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub parseval: bool,
    #[serde(default)]
    pub energy_grid: EnergyGrid,
    #[serde(default)]
    pub policy: BoxPolicy,
    #[serde(default)]
    pub bounds: Vec<BoundParams>,
    #[serde(default)]
    pub fit_scale: Option<ScaleKind>,
}

fn default_limit() -> f64 {
    1e3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBoundsParams {
    pub operator: OperatorConfig,
    pub phi: InitialState,
    pub p: f64,
    pub t_grid: Vec<f64>,
    /// Phases over which the moment is maximized.
    pub thetas: GridConfig,
    pub bound: BoundParams,
    #[serde(default)]
    pub policy: BoxPolicy,
    #[serde(default = "default_limit")]
    pub calibration_limit: f64,
}
