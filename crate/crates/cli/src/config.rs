//! Run configuration: a TOML file, with command-line flags layered on top.

use std::path::{Path, PathBuf};

use chaintube::controllers::{InitialConstraint, DEFAULT_HORIZON};
use chaintube::model::{build_truck_chain, CoupledSystem, TruckChainParams};
use chaintube::runtime::{ControllerKind, RunOptions};
use chaintube::synthesis::{content_hash, SynthesisOptions, TEMPLATE_DIRECTIONS};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Errors in the configuration itself; reported as usage errors.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// Diagonal of every `Q_i`.
    pub q: Vec<f64>,
    /// Diagonal of every `R_i`.
    pub r: Vec<f64>,
}

impl Default for Weights {
    fn default() -> Self {
        Self { q: vec![1.0, 1.0], r: vec![1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub eps: f64,
    /// Contraction `θ` of the inner tightened sets.
    pub inner_scale: f64,
    pub template_directions: usize,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self { eps: 1e-4, inner_scale: 1.0, template_directions: TEMPLATE_DIRECTIONS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialForm {
    #[default]
    Nested,
    Tube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub horizon: usize,
    pub period: usize,
    pub steps: usize,
    pub x0: Vec<f64>,
    pub controller: String,
    /// Initial constraint of the inner problem.
    pub initial: InitialForm,
    /// Not part of the config hash: moving the output changes no result.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            period: 1,
            steps: 50,
            x0: vec![1.8, -2.0, 0.5, 7.1, -0.9, -7.0, -1.8, 2.0],
            controller: ControllerKind::Chain.name().to_string(),
            initial: InitialForm::Nested,
            out: PathBuf::from("out"),
        }
    }
}

/// File layout. `model_file` (relative to the config file) replaces an
/// inline `[model]` table.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<TruckChainParams>,
    model_file: Option<PathBuf>,
    #[serde(default)]
    weights: Weights,
    #[serde(default)]
    synthesis: SynthesisSection,
    #[serde(default)]
    run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: TruckChainParams,
    pub weights: Weights,
    pub synthesis: SynthesisSection,
    pub run: RunSection,
}

/// Flag values; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub controller: Option<String>,
    pub steps: Option<usize>,
    pub horizon: Option<usize>,
    pub period: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: TruckChainParams::default(),
            weights: Weights::default(),
            synthesis: SynthesisSection::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let raw: RawConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let model = match (raw.model, raw.model_file) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("give either [model] or model_file, not both".into())),
            (Some(m), None) => m,
            (None, Some(f)) => {
                let f = path.parent().unwrap_or(Path::new(".")).join(f);
                let text = std::fs::read_to_string(&f).map_err(|source| ConfigError::Io { path: f.clone(), source })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse { path: f, message: e.to_string() })?
            }
            (None, None) => TruckChainParams::default(),
        };
        Ok(Self { model, weights: raw.weights, synthesis: raw.synthesis, run: raw.run })
    }

    /// Flags win over the file.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(c) = &o.controller {
            self.run.controller = c.clone();
        }
        if let Some(v) = o.steps {
            self.run.steps = v;
        }
        if let Some(v) = o.horizon {
            self.run.horizon = v;
        }
        if let Some(v) = o.period {
            self.run.period = v;
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = self.model.trucks();
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if self.weights.q.len() != 2 || !self.weights.q.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(ConfigError::Invalid("weights.q needs two non-negative entries".into()));
        }
        if self.weights.r.len() != 1 || !positive(&self.weights.r) {
            return Err(ConfigError::Invalid("weights.r needs one positive entry".into()));
        }
        let s = &self.synthesis;
        if !(s.eps > 0.0 && s.eps.is_finite()) {
            return Err(ConfigError::Invalid(format!("synthesis.eps must be positive, got {}", s.eps)));
        }
        if !(s.inner_scale > 0.0 && s.inner_scale <= 1.0) {
            return Err(ConfigError::Invalid(format!("synthesis.inner_scale must lie in (0, 1], got {}", s.inner_scale)));
        }
        let r = &self.run;
        if r.horizon == 0 || r.period == 0 || r.steps == 0 {
            return Err(ConfigError::Invalid("run.horizon, run.period and run.steps must be positive".into()));
        }
        if r.x0.len() != 2 * n {
            return Err(ConfigError::Invalid(format!("run.x0 has {} entries, the model has {} states", r.x0.len(), 2 * n)));
        }
        if !r.x0.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::Invalid("run.x0 must be finite".into()));
        }
        self.controller()?;
        Ok(())
    }

    pub fn controller(&self) -> Result<ControllerKind, ConfigError> {
        self.run.controller.parse().map_err(ConfigError::Invalid)
    }

    pub fn system(&self) -> Result<CoupledSystem, ConfigError> {
        build_truck_chain(&self.model).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn synthesis_options(&self, sys: &CoupledSystem) -> SynthesisOptions {
        let mut opts = SynthesisOptions::for_system(sys);
        opts.q = vec![DMatrix::from_diagonal(&DVector::from_row_slice(&self.weights.q)); sys.len()];
        opts.r = vec![DMatrix::from_diagonal(&DVector::from_row_slice(&self.weights.r)); sys.len()];
        opts.eps = self.synthesis.eps;
        opts.inner_scale = self.synthesis.inner_scale;
        opts.template_directions = self.synthesis.template_directions;
        opts
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            steps: self.run.steps,
            horizon: self.run.horizon,
            period: self.run.period,
            initial: match self.run.initial {
                InitialForm::Nested => InitialConstraint::Nested,
                InitialForm::Tube => InitialConstraint::Tube,
            },
            ..RunOptions::default()
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.run.x0)
    }

    /// Key of the design cache: model, weights and synthesis settings.
    pub fn design_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            model: &'a TruckChainParams,
            weights: &'a Weights,
            synthesis: &'a SynthesisSection,
        }
        let text = toml::to_string(&Key { model: &self.model, weights: &self.weights, synthesis: &self.synthesis })
            .expect("config serializes");
        content_hash(&[text.as_bytes()])
    }

    /// Hash of the whole effective configuration.
    pub fn hash(&self) -> String {
        content_hash(&[toml::to_string(self).expect("config serializes").as_bytes()])
    }
}
