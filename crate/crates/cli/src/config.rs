//! Experiment configuration files.
//!
//! ```toml
//! h = 0.03
//! protocol = "full"
//! e_st = 0.15
//! x0 = [0.0, 0.0, 0.1, 0.0]
//! levels = { n = 151, n1 = 301, n2 = 1601 }
//! rho = "sweep"
//!
//! [plant]
//! catalog = "inverted_pendulum_two_output"
//!
//! [design.k.lqr]
//! q = [100.0, 0.0, 300.0, 0.0]
//! r = [1.0]
//! time = "continuous"
//!
//! [design.l.kalman]
//! w = 1e-3
//! v = [1e-5, 1e-5]
//! ```

use std::path::{Path, PathBuf};

use qobs::design::{self, GainPair};
use qobs::numerics::{self, Matrix, Vector};
use qobs::plant::{self, ContinuousPlant, DiscretePlant, PlantFile};
use qobs::schedule::{Levels, RhoChoice};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Sampling period in seconds.
    pub h: f64,
    pub protocol: Protocol,
    pub e_st: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub levels: LevelsConfig,
    #[serde(default = "default_rho")]
    pub rho: RhoChoice,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub plant: PlantSource,
    pub design: DesignConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_rho() -> RhoChoice {
    RhoChoice::Midpoint
}

fn default_k_max() -> usize {
    200
}

fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    OutputOnlyGeneral,
    OutputOnlyDeadbeat,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelsKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedLevels {
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelsConfig {
    Keyword(LevelsKeyword),
    Fixed(FixedLevels),
}

impl Default for LevelsConfig {
    fn default() -> Self {
        LevelsConfig::Keyword(LevelsKeyword::Auto)
    }
}

impl LevelsConfig {
    pub fn fixed(&self, protocol: Protocol) -> Result<Option<Levels>, CliError> {
        match self {
            LevelsConfig::Keyword(LevelsKeyword::Auto) => Ok(None),
            LevelsConfig::Fixed(f) => match protocol {
                Protocol::Full => match (f.n1, f.n2) {
                    (Some(n1), Some(n2)) => Ok(Some(Levels::full(f.n, n1, n2))),
                    _ => Err(CliError::Config("the full protocol needs n, n1 and n2".into())),
                },
                _ => Ok(Some(Levels::output_only(f.n))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    Catalog(String),
    /// Plant file, relative to the config file.
    File(PathBuf),
    Inline(PlantFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub k: FeedbackDesign,
    pub l: ObserverDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackDesign {
    Lqr {
        /// Diagonal of the state weight.
        q: Vec<f64>,
        /// Diagonal of the input weight.
        r: Vec<f64>,
        #[serde(default)]
        time: LqrTime,
    },
    /// Row-major rows of K.
    Literal(Vec<Vec<f64>>),
}

/// Whether the regulator is designed on the continuous plant or on its
/// discretization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LqrTime {
    Continuous,
    #[default]
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverDesign {
    Kalman {
        /// Process noise covariance.
        w: f64,
        /// Diagonal of the measurement noise covariance.
        v: Vec<f64>,
        #[serde(default)]
        noise: NoiseModel,
    },
    Deadbeat,
    Literal(Vec<Vec<f64>>),
}

/// Where the process noise enters: through the input matrix
/// (`W = w B_d B_d^T`) or on every state (`W = w I`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Input,
    State,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trace: String,
    pub schedule: String,
    pub plot: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trace: "trace.csv".into(),
            schedule: "schedule.csv".into(),
            plot: "response.svg".into(),
        }
    }
}

/// Plant, its discretization and the designed gains.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cp: ContinuousPlant,
    pub dp: DiscretePlant,
    pub gains: GainPair,
}

fn rows_to_matrix(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<Matrix, CliError> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(CliError::Config(format!(
            "{what} must be {}x{}",
            shape.0, shape.1
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(numerics::from_row_major(shape.0, shape.1, &flat)?)
}

fn diagonal(d: &[f64], len: usize, what: &str) -> Result<Matrix, CliError> {
    if d.len() != len {
        return Err(CliError::Config(format!(
            "{what} needs {len} diagonal entries, got {}",
            d.len()
        )));
    }
    Ok(Matrix::from_diagonal(&Vector::from_column_slice(d)))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(CliError::Config(format!("h must be positive, got {}", self.h)));
        }
        if !(self.e_st > 0.0 && self.e_st.is_finite()) {
            return Err(CliError::Config(format!("e_st must be positive, got {}", self.e_st)));
        }
        if self.substeps == 0 {
            return Err(CliError::Config("substeps must be at least 1".into()));
        }
        self.levels.fixed(self.protocol)?;
        Ok(())
    }

    pub fn plant(&self, base: &Path) -> Result<ContinuousPlant, CliError> {
        match &self.plant {
            PlantSource::Catalog(name) => Ok(plant::benchmark(name)?),
            PlantSource::File(path) => Ok(PlantFile::load(&base.join(path))?.to_plant()?),
            PlantSource::Inline(file) => Ok(file.to_plant()?),
        }
    }

    /// Resolves the plant and designs `K` and `L`.
    pub fn build(&self, base: &Path) -> Result<Experiment, CliError> {
        let cp = self.plant(base)?;
        let dp = plant::discretize(&cp, self.h)?;
        let (n, m, p) = (dp.n(), dp.m(), dp.p());
        if self.x0.len() != n {
            return Err(CliError::Config(format!(
                "x0 has {} entries, plant has {n} states",
                self.x0.len()
            )));
        }
        let k = match &self.design.k {
            FeedbackDesign::Lqr { q, r, time } => {
                let qx = diagonal(q, n, "lqr q")?;
                let ru = diagonal(r, m, "lqr r")?;
                match time {
                    LqrTime::Continuous => design::lqr_gain_continuous(&cp, &qx, &ru)?,
                    LqrTime::Discrete => design::lqr_gain(&dp, &qx, &ru)?,
                }
            }
            FeedbackDesign::Literal(rows) => rows_to_matrix(rows, (m, n), "K")?,
        };
        let l = match &self.design.l {
            ObserverDesign::Kalman { w, v, noise } => {
                let wm = match noise {
                    NoiseModel::Input => design::input_process_noise(&dp, *w),
                    NoiseModel::State => Matrix::identity(n, n) * *w,
                };
                design::kalman_gain(&dp, &wm, &diagonal(v, p, "kalman v")?)?
            }
            ObserverDesign::Deadbeat => design::deadbeat_observer_gain(&dp)?,
            ObserverDesign::Literal(rows) => rows_to_matrix(rows, (n, p), "L")?,
        };
        let gains = GainPair::new(&dp, k, l)?;
        Ok(Experiment { cp, dp, gains })
    }
}
