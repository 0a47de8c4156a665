//! Configs shipped with the binary.

use crate::config::{ConfigError, ExperimentConfig};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "renewal-constant",
        description: "constant division rate: closed-form triplet and decay slope",
        text: include_str!("../presets/renewal-constant.toml"),
    },
    Preset {
        name: "renewal-crenel",
        description: "crenel division rate: spectral-gap envelope and mass structure",
        text: include_str!("../presets/renewal-crenel.toml"),
    },
    Preset {
        name: "verify-core",
        description: "contraction inequalities on 1000 random kernels",
        text: include_str!("../presets/verify-core.toml"),
    },
    Preset {
        name: "diffusion",
        description: "reflected heat kernel sandwich and capacity bound",
        text: include_str!("../presets/diffusion.toml"),
    },
    Preset {
        name: "diffusion-onoff",
        description: "random on/off diffusivity with position-dependent growth",
        text: include_str!("../presets/diffusion-onoff.toml"),
    },
    Preset {
        name: "periodic-sine",
        description: "time-periodic rate 1 + sin(2πt): Floquet exponent and sharp decay",
        text: include_str!("../presets/periodic-sine.toml"),
    },
    Preset {
        name: "periodic-separable",
        description: "periodic-in-time crenel-in-age rate: general rate and mass structure",
        text: include_str!("../presets/periodic-separable.toml"),
    },
    Preset {
        name: "maxage",
        description: "growing maximal age: Grönwall, limit distance and profile gap",
        text: include_str!("../presets/maxage.toml"),
    },
    Preset {
        name: "branching",
        description: "Monte Carlo population and many-to-one ratio against the semigroup",
        text: include_str!("../presets/branching.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn load(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let p = find(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    ExperimentConfig::parse(p.text, &format!("preset:{name}"))
}
