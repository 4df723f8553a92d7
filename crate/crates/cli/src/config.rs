//! Experiment configuration: a TOML document with `model`, `run`,
//! `pipeline`, `output` and `verify` tables.

use std::fmt;
use std::sync::Arc;

use cocycle_core::noise::CovarianceSpec;
use cocycle_core::semiflow::{
    LinearField, NoiseCoupling, Nonlinearity, NonlinearitySpec, QuadraticCoupling, SemiflowModel, SigmoidCoupling,
    SineFn, Stepper, TanhFn,
};
use cocycle_core::spectral_space::OperatorSpec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A configuration problem, located by its dotted field path or by the line
/// and column of a syntax error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collocation: Option<usize>,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Eigenvalues { values: Vec<f64> },
    DirichletInterval { modes: usize, viscosity: f64 },
    DirichletBox { modes: usize, viscosity: f64, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    #[default]
    Zero,
    /// `L (R tanh(u) + b)`, globally bounded and Lipschitz.
    Sigmoid { lipschitz: f64, angle: f64, offset: Vec<f64> },
    /// `coefficient * u[source]^2` added to mode `target`.
    Quadratic { source: usize, target: usize, coefficient: f64 },
    /// A linear drift given by its rows.
    Linear { rows: Vec<Vec<f64>> },
    Burgers,
    DissipativeReaction { alpha: f64 },
    Sine { amplitude: f64 },
    Tanh { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    Additive { sigma: Vec<f64> },
    /// `sigma_n = amplitude * n^-decay` for `n = 1..=modes`.
    AdditivePowerLaw { amplitude: f64, decay: f64, modes: usize },
    Multiplicative { sigma: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Step of the noise grid; must equal `model.h` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_h: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    Stationary,
    Spectrum,
    Manifolds,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Stationary => "stationary",
            Stage::Spectrum => "spectrum",
            Stage::Manifolds => "manifolds",
        }
    }

    fn requires(self) -> Option<Stage> {
        match self {
            Stage::Spectrum => Some(Stage::Stationary),
            Stage::Manifolds => Some(Stage::Spectrum),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub stationary: StationaryConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub manifolds: ManifoldsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub duration: f64,
    pub record_every: usize,
    /// Initial mode coordinates; zeros when empty.
    pub initial: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { duration: 10.0, record_every: 10, initial: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationaryChoice {
    /// A rest point when no additive forcing is present, otherwise the
    /// contraction solver when its condition holds, otherwise pullback.
    Auto,
    Equilibrium,
    Contraction,
    Pullback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub method: StationaryChoice,
    pub tol: f64,
    pub tail_tol: f64,
    pub max_iter: usize,
    pub t_pull: f64,
    pub pull_tol: f64,
    /// Horizon of the reported stationarity residual.
    pub residual_horizon: f64,
    /// Extra window on top of what later stages need.
    pub window_back: f64,
    pub window_fwd: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            method: StationaryChoice::Auto,
            tol: 1e-10,
            tail_tol: 1e-10,
            max_iter: 500,
            t_pull: 20.0,
            pull_tol: 1e-9,
            residual_horizon: 10.0,
            window_back: 0.0,
            window_fwd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub horizon: f64,
    pub reorth_every: f64,
    /// Number of exponents; all modes when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponents: Option<usize>,
    pub batches: usize,
    pub zero_band: f64,
    /// Random initial frame; the coordinate frame when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_seed: Option<u64>,
    /// Whether to estimate the stable/unstable splitting.
    pub split: bool,
    pub split_horizon: f64,
    pub split_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dichotomy: Option<DichotomyConfig>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            reorth_every: 1.0,
            exponents: None,
            batches: 20,
            zero_band: 0.01,
            frame_seed: None,
            split: true,
            split_horizon: 32.0,
            split_tol: 1e-8,
            dichotomy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DichotomyConfig {
    pub delta1: f64,
    pub delta2: f64,
    pub horizon: f64,
    #[serde(default)]
    pub extra_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldsConfig {
    pub n_max: usize,
    pub t_back: usize,
    pub points: usize,
    /// Stands in for an infinite gap edge.
    pub fallback_rate: f64,
    pub angle_floor: f64,
    pub invariance_times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Default for ManifoldsConfig {
    fn default() -> Self {
        Self {
            n_max: 10,
            t_back: 20,
            points: 10,
            fallback_rate: 1.0,
            angle_floor: 1e-3,
            invariance_times: vec![1.0, 2.0, 4.0],
            rho: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "artifacts".into(), formats: vec![Format::Json, Format::Csv, Format::Bin] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Thresholds of the invariant battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub cases: usize,
    pub cocycle_tol: f64,
    pub jacobian_tol: f64,
    pub finite_difference_tol: f64,
    pub shift_tol: f64,
    /// Largest admissible iterate ratio; the condition constant plus 0.05
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction_ratio: Option<f64>,
    pub sum_rule_tol: f64,
    pub sum_rule_horizon: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cases: 20,
            cocycle_tol: 1e-9,
            jacobian_tol: 1e-8,
            finite_difference_tol: 1e-5,
            shift_tol: 1e-12,
            contraction_ratio: None,
            sum_rule_tol: 1e-6,
            sum_rule_horizon: 10.0,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "config".into(),
            };
            ConfigError::new(field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        positive("model.h", m.h)?;
        if let Some(noise_h) = self.run.noise_h {
            if (noise_h - m.h).abs() > 1e-12 * m.h {
                return Err(ConfigError::new(
                    "run.noise_h",
                    format!("noise grid step {noise_h} does not match model.h = {}", m.h),
                ));
            }
        }
        let n = self.mode_count()?;
        if let Some(c) = m.collocation {
            if c == 0 {
                return Err(ConfigError::new("model.collocation", "must be at least 1"));
            }
        }
        match &m.nonlinearity {
            NonlinearityConfig::Sigmoid { lipschitz, offset, .. } => {
                nonnegative("model.nonlinearity.lipschitz", *lipschitz)?;
                if offset.len() != n {
                    return Err(ConfigError::new(
                        "model.nonlinearity.offset",
                        format!("has {} entries for {n} modes", offset.len()),
                    ));
                }
            }
            NonlinearityConfig::Quadratic { source, target, .. } if *source >= n || *target >= n => {
                return Err(ConfigError::new("model.nonlinearity", format!("mode index out of range 0..{n}")));
            }
            NonlinearityConfig::Linear { rows } if rows.len() != n || rows.iter().any(|r| r.len() != n) => {
                return Err(ConfigError::new("model.nonlinearity.rows", format!("must be {n} x {n}")));
            }
            _ => {}
        }
        match &m.noise {
            NoiseConfig::Additive { sigma } | NoiseConfig::Multiplicative { sigma } => {
                if sigma.is_empty() {
                    return Err(ConfigError::new("model.noise.sigma", "must not be empty"));
                }
            }
            NoiseConfig::AdditivePowerLaw { modes, .. } => {
                if *modes == 0 {
                    return Err(ConfigError::new("model.noise.modes", "must be at least 1"));
                }
            }
            NoiseConfig::None => {}
        }

        let p = &self.pipeline;
        if p.stages.is_empty() {
            return Err(ConfigError::new("pipeline.stages", "no stages requested"));
        }
        for (i, s) in p.stages.iter().enumerate() {
            if p.stages[..i].contains(s) {
                return Err(ConfigError::new("pipeline.stages", format!("{} listed twice", s.name())));
            }
            if let Some(dep) = s.requires() {
                if !p.stages[..i].contains(&dep) {
                    return Err(ConfigError::new(
                        "pipeline.stages",
                        format!("{} requires {} earlier in the list", s.name(), dep.name()),
                    ));
                }
            }
        }
        let sim = &p.simulate;
        positive("pipeline.simulate.duration", sim.duration)?;
        if sim.record_every == 0 {
            return Err(ConfigError::new("pipeline.simulate.record_every", "must be at least 1"));
        }
        if !sim.initial.is_empty() && sim.initial.len() != n {
            return Err(ConfigError::new(
                "pipeline.simulate.initial",
                format!("has {} entries for {n} modes", sim.initial.len()),
            ));
        }
        let st = &p.stationary;
        positive("pipeline.stationary.tol", st.tol)?;
        positive("pipeline.stationary.tail_tol", st.tail_tol)?;
        if st.tail_tol >= 1.0 {
            return Err(ConfigError::new("pipeline.stationary.tail_tol", "must be below 1"));
        }
        positive("pipeline.stationary.t_pull", st.t_pull)?;
        positive("pipeline.stationary.pull_tol", st.pull_tol)?;
        positive("pipeline.stationary.residual_horizon", st.residual_horizon)?;
        nonnegative("pipeline.stationary.window_back", st.window_back)?;
        nonnegative("pipeline.stationary.window_fwd", st.window_fwd)?;
        if st.max_iter == 0 {
            return Err(ConfigError::new("pipeline.stationary.max_iter", "must be at least 1"));
        }
        let sp = &p.spectrum;
        positive("pipeline.spectrum.horizon", sp.horizon)?;
        positive("pipeline.spectrum.reorth_every", sp.reorth_every)?;
        positive("pipeline.spectrum.zero_band", sp.zero_band)?;
        positive("pipeline.spectrum.split_horizon", sp.split_horizon)?;
        positive("pipeline.spectrum.split_tol", sp.split_tol)?;
        if sp.batches < 10 {
            return Err(ConfigError::new("pipeline.spectrum.batches", "need at least 10 batches"));
        }
        if let Some(q) = sp.exponents {
            if q == 0 || q > n {
                return Err(ConfigError::new("pipeline.spectrum.exponents", format!("must lie in 1..={n}")));
            }
        }
        if let Some(d) = &sp.dichotomy {
            positive("pipeline.spectrum.dichotomy.delta1", d.delta1)?;
            positive("pipeline.spectrum.dichotomy.delta2", d.delta2)?;
            positive("pipeline.spectrum.dichotomy.horizon", d.horizon)?;
            if !sp.split {
                return Err(ConfigError::new("pipeline.spectrum.dichotomy", "needs split = true"));
            }
        }
        let mf = &p.manifolds;
        if p.stages.contains(&Stage::Manifolds) {
            if !sp.split {
                return Err(ConfigError::new("pipeline.spectrum.split", "the manifolds stage needs the splitting"));
            }
            if sp.exponents.is_some_and(|q| q < n) {
                return Err(ConfigError::new(
                    "pipeline.spectrum.exponents",
                    "the manifolds stage needs the full spectrum",
                ));
            }
        }
        if mf.n_max == 0 || mf.t_back == 0 || mf.points == 0 {
            return Err(ConfigError::new("pipeline.manifolds", "n_max, t_back and points must be at least 1"));
        }
        positive("pipeline.manifolds.fallback_rate", mf.fallback_rate)?;
        positive("pipeline.manifolds.angle_floor", mf.angle_floor)?;
        if let Some(rho) = mf.rho {
            positive("pipeline.manifolds.rho", rho)?;
            if rho >= 0.5 {
                return Err(ConfigError::new("pipeline.manifolds.rho", "must be below 1/2"));
            }
        }
        for t in &mf.invariance_times {
            positive("pipeline.manifolds.invariance_times", *t)?;
        }
        if self.output.formats.is_empty() {
            return Err(ConfigError::new("output.formats", "no output formats"));
        }
        if self.output.dir.is_empty() {
            return Err(ConfigError::new("output.dir", "must not be empty"));
        }
        let v = &self.verify;
        if v.cases == 0 {
            return Err(ConfigError::new("verify.cases", "must be at least 1"));
        }
        positive("verify.cocycle_tol", v.cocycle_tol)?;
        positive("verify.jacobian_tol", v.jacobian_tol)?;
        positive("verify.finite_difference_tol", v.finite_difference_tol)?;
        positive("verify.shift_tol", v.shift_tol)?;
        positive("verify.sum_rule_tol", v.sum_rule_tol)?;
        positive("verify.sum_rule_horizon", v.sum_rule_horizon)?;
        if let Some(r) = v.contraction_ratio {
            positive("verify.contraction_ratio", r)?;
        }
        Ok(())
    }

    pub fn mode_count(&self) -> Result<usize, ConfigError> {
        let n = match &self.model.operator {
            OperatorConfig::Eigenvalues { values } => values.len(),
            OperatorConfig::DirichletInterval { modes, .. } | OperatorConfig::DirichletBox { modes, .. } => *modes,
        };
        if n == 0 {
            return Err(ConfigError::new("model.operator", "needs at least one mode"));
        }
        Ok(n)
    }

    /// Builds the model; any rejection by the core library is a
    /// configuration error.
    pub fn build_model(&self) -> Result<SemiflowModel, ConfigError> {
        let m = &self.model;
        let op = match &m.operator {
            OperatorConfig::Eigenvalues { values } => OperatorSpec::from_eigenvalues(values.clone()),
            OperatorConfig::DirichletInterval { modes, viscosity } => {
                OperatorSpec::dirichlet_interval(*modes, *viscosity)
            }
            OperatorConfig::DirichletBox { modes, viscosity, dim } => {
                OperatorSpec::dirichlet_box(*modes, *viscosity, *dim)
            }
        }
        .map_err(|e| ConfigError::new("model.operator", e.to_string()))?;
        let n = op.mode_count();
        let f = match &m.nonlinearity {
            NonlinearityConfig::Zero => NonlinearitySpec::zero(),
            NonlinearityConfig::Sigmoid { lipschitz, angle, offset } => {
                SigmoidCoupling::new(*lipschitz, *angle, DVector::from_column_slice(offset)).into_spec()
            }
            NonlinearityConfig::Quadratic { source, target, coefficient } => {
                NonlinearitySpec::new(Nonlinearity::Field(Arc::new(QuadraticCoupling {
                    source: *source,
                    target: *target,
                    coefficient: *coefficient,
                })))
            }
            NonlinearityConfig::Linear { rows } => {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                NonlinearitySpec::new(Nonlinearity::Field(Arc::new(LinearField(DMatrix::from_row_slice(n, n, &flat)))))
            }
            NonlinearityConfig::Burgers => NonlinearitySpec::new(Nonlinearity::BurgersAdvection),
            NonlinearityConfig::DissipativeReaction { alpha } => {
                NonlinearitySpec::new(Nonlinearity::DissipativeReaction { alpha: *alpha })
            }
            NonlinearityConfig::Sine { amplitude } => {
                NonlinearitySpec::new(Nonlinearity::Pointwise(Arc::new(SineFn { amplitude: *amplitude })))
            }
            NonlinearityConfig::Tanh { amplitude } => {
                NonlinearitySpec::new(Nonlinearity::Pointwise(Arc::new(TanhFn { amplitude: *amplitude })))
            }
        };
        let noise_err = |e: cocycle_core::noise::NoiseError| ConfigError::new("model.noise", e.to_string());
        let coupling = match &m.noise {
            NoiseConfig::None => NoiseCoupling::None,
            NoiseConfig::Additive { sigma } => {
                NoiseCoupling::Additive(CovarianceSpec::cylindrical(sigma.clone()).map_err(noise_err)?)
            }
            NoiseConfig::AdditivePowerLaw { amplitude, decay, modes } => {
                NoiseCoupling::Additive(CovarianceSpec::power_law(*amplitude, *decay, *modes).map_err(noise_err)?)
            }
            NoiseConfig::Multiplicative { sigma } => {
                NoiseCoupling::DiagonalMultiplicative(CovarianceSpec::cylindrical(sigma.clone()).map_err(noise_err)?)
            }
        };
        let mut stepper = Stepper::new(m.h);
        if let Some(c) = m.collocation {
            stepper = stepper.with_collocation(c);
        }
        SemiflowModel::new(op, f, coupling, stepper).map_err(|e| ConfigError::new("model", e.to_string()))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be non-negative and finite, got {v}")))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn presets_round_trip() {
        for p in presets::ALL {
            let c = presets::load(p.name).unwrap();
            let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
            assert_eq!(c, again, "{}", p.name);
        }
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let text = "[model]\nh = 0.01\noperator = { kind = \"eigenvalues\", values = [1.0] }\n[run]\nseed = 1\nbogus = 3\n[pipeline]\nstages = [\"stationary\"]\n";
        let e = ExperimentConfig::parse(text).unwrap_err();
        assert!(e.field.starts_with("line 6"), "{e}");
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut c = presets::load("ou-linear").unwrap();
        c.run.noise_h = Some(0.02);
        assert_eq!(c.validate().unwrap_err().field, "run.noise_h");

        let mut c = presets::load("ou-linear").unwrap();
        c.pipeline.stages = vec![Stage::Spectrum];
        assert_eq!(c.validate().unwrap_err().field, "pipeline.stages");

        let mut c = presets::load("ou-linear").unwrap();
        c.pipeline.stationary.tol = 0.0;
        assert_eq!(c.validate().unwrap_err().field, "pipeline.stationary.tol");

        let mut c = presets::load("ou-linear").unwrap();
        c.verify.cocycle_tol = -1.0;
        assert_eq!(c.validate().unwrap_err().field, "verify.cocycle_tol");
    }

    #[test]
    fn model_errors_are_config_errors() {
        let mut c = presets::load("burgers-highnu").unwrap();
        c.model.collocation = Some(40);
        let e = c.build_model().unwrap_err();
        assert_eq!(e.field, "model");
        assert!(e.message.contains("alias"), "{e}");
    }
}
