//! Built-in experiment configurations.

use crate::config::{ConfigError, ExperimentConfig};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

/// Used by `run` and `verify` when no configuration is given.
pub const DEFAULT: &str = "contraction";

pub const ALL: &[Preset] = &[
    Preset {
        name: "ou-linear",
        description: "three stable Ornstein-Uhlenbeck modes, F = 0, additive noise",
        toml: r#"
[model]
h = 0.01
operator = { kind = "eigenvalues", values = [1.0, 2.0, 3.0] }
nonlinearity = { kind = "zero" }
noise = { kind = "additive", sigma = [1.0, 1.0, 1.0] }

[run]
seed = 1

[pipeline]
stages = ["simulate", "stationary", "spectrum", "manifolds"]

[pipeline.simulate]
duration = 10.0
record_every = 10

[pipeline.spectrum]
horizon = 40.0
reorth_every = 0.5
split_horizon = 8.0

[pipeline.manifolds]
n_max = 8
t_back = 10
points = 8

[output]
dir = "artifacts/ou-linear"
"#,
    },
    Preset {
        name: "saddle-oracle",
        description: "deterministic saddle x1' = -x1, x2' = x2 + x1^2 with stable graph x2 = -x1^2/3",
        toml: r#"
[model]
h = 0.001
operator = { kind = "eigenvalues", values = [-1.0, 1.0] }
nonlinearity = { kind = "quadratic", source = 1, target = 0, coefficient = 1.0 }
noise = { kind = "none" }

[run]
seed = 7

[pipeline]
stages = ["stationary", "spectrum", "manifolds"]

[pipeline.spectrum]
horizon = 20.0
reorth_every = 1.0
split_horizon = 16.0

[pipeline.manifolds]
n_max = 10
t_back = 10
points = 10

[output]
dir = "artifacts/saddle-oracle"
"#,
    },
    Preset {
        name: "burgers-highnu",
        description: "viscous stochastic Burgers, nu = 1, 32 modes, pullback stationary state",
        toml: r#"
[model]
h = 0.001
operator = { kind = "dirichlet-interval", modes = 32, viscosity = 1.0 }
nonlinearity = { kind = "burgers" }
noise = { kind = "additive-power-law", amplitude = 0.5, decay = 1.0, modes = 32 }

[run]
seed = 3

[pipeline]
stages = ["simulate", "stationary", "spectrum"]

[pipeline.simulate]
duration = 2.0
record_every = 10
initial = [1.0, 0.5, 0.25, 0.125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]

[pipeline.stationary]
method = "pullback"
t_pull = 5.0
residual_horizon = 2.0

[pipeline.spectrum]
horizon = 10.0
reorth_every = 0.5
exponents = 2
split = false

[output]
dir = "artifacts/burgers-highnu"
"#,
    },
    Preset {
        name: "contraction",
        description: "saddle with bounded Lipschitz sigmoid drift (L = 0.2) and additive noise",
        toml: r#"
[model]
h = 0.01
operator = { kind = "eigenvalues", values = [-1.0, 1.0] }
nonlinearity = { kind = "sigmoid", lipschitz = 0.2, angle = 0.6, offset = [0.3, -0.1] }
noise = { kind = "additive", sigma = [0.3, 0.3] }

[run]
seed = 12

[pipeline]
stages = ["stationary", "spectrum", "manifolds"]

[pipeline.stationary]
method = "contraction"

[pipeline.spectrum]
horizon = 40.0
reorth_every = 0.5
split_horizon = 32.0

[pipeline.spectrum.dichotomy]
delta1 = 0.3
delta2 = 0.3
horizon = 10.0

[pipeline.manifolds]
n_max = 10
t_back = 20
points = 10

[output]
dir = "artifacts/contraction"
"#,
    },
    Preset {
        name: "gbm",
        description: "two geometric Brownian motion modes, exponents -mu - sigma^2/2",
        toml: r#"
[model]
h = 0.01
operator = { kind = "eigenvalues", values = [1.0, 2.0] }
nonlinearity = { kind = "zero" }
noise = { kind = "multiplicative", sigma = [0.5, 1.0] }

[run]
seed = 5

[pipeline]
stages = ["simulate", "stationary", "spectrum"]

[pipeline.simulate]
duration = 5.0
record_every = 10
initial = [1.0, 1.0]

[pipeline.spectrum]
horizon = 200.0
reorth_every = 1.0
split_horizon = 4.0

[pipeline.spectrum.dichotomy]
delta1 = 0.5
delta2 = 0.9
horizon = 50.0

[output]
dir = "artifacts/gbm"
"#,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    ALL.iter().find(|p| p.name == name)
}

pub fn load(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let preset = find(name).ok_or_else(|| {
        let names: Vec<&str> = ALL.iter().map(|p| p.name).collect();
        ConfigError::new("--preset", format!("unknown preset {name}; available: {}", names.join(", ")))
    })?;
    ExperimentConfig::parse(preset.toml)
}
