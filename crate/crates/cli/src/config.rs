//! Experiment configuration file (JSON).

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Schema version, currently 1.
    #[serde(default = "default_version")]
    pub version: u32,
    pub graph: GraphSpec,
    pub ansatz: Ansatz,
    /// `"half"`, `"mis"` or an explicit bitstring (most significant vertex first).
    pub targets: Vec<String>,
    /// Product depths p. Required non-empty for the product ansatz.
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_backends")]
    pub backends: Vec<Backend>,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub shots: ShotSpec,
    #[serde(default)]
    pub bracelet: BraceletSpec,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides.
    #[serde(default)]
    pub out: Option<String>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_depths() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_backends() -> Vec<Backend> {
    vec![Backend::Ctqw]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Rings of each listed size.
    Ring { sizes: Vec<usize> },
    /// One explicit graph.
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ansatz {
    Product,
    Bracelet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Ctqw,
    Rydberg,
    Shots,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Ctqw => "ctqw",
            Backend::Rydberg => "rydberg",
            Backend::Shots => "shots",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub p00: f64,
    pub p11: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self { p00: 0.99, p11: 0.93 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShotSpec {
    pub count: usize,
    pub resamples: usize,
    pub level: f64,
}

impl Default for ShotSpec {
    fn default() -> Self {
        Self { count: 1000, resamples: 1000, level: 0.95 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BraceletSpec {
    pub tau_max: f64,
    pub dtau: f64,
    pub stop_at: Option<f64>,
}

impl Default for BraceletSpec {
    fn default() -> Self {
        Self { tau_max: 20.0, dtau: 0.02, stop_at: None }
    }
}

/// Largest register the dense emulator handles.
pub const MAX_RYDBERG_N: usize = 14;
/// Largest register sampled over the full bitstring space.
pub const MAX_SHOTS_N: usize = 24;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Validation(format!("config field `{field}`: {msg}")));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        match &self.graph {
            GraphSpec::Ring { sizes } => {
                if sizes.is_empty() {
                    return bad("graph.sizes", "must not be empty".into());
                }
                if let Some(&n) = sizes.iter().find(|&&n| !(3..=63).contains(&n)) {
                    return bad("graph.sizes", format!("ring size {n} outside 3..=63"));
                }
            }
            GraphSpec::Edges { n, edges } => {
                if !(1..=63).contains(n) {
                    return bad("graph.n", format!("{n} outside 1..=63"));
                }
                if let Some(e) = edges.iter().find(|e| e.0 >= *n || e.1 >= *n || e.0 == e.1) {
                    return bad("graph.edges", format!("invalid edge {e:?}"));
                }
                if self.ansatz == Ansatz::Bracelet {
                    return bad("ansatz", "bracelet states need a ring graph".into());
                }
                if self.backends.contains(&Backend::Rydberg) {
                    return bad("backends", "the rydberg backend compiles ring layouts only".into());
                }
            }
        }
        if self.targets.is_empty() {
            return bad("targets", "must not be empty".into());
        }
        for t in &self.targets {
            let named = t == "half" || t == "mis";
            if !named && (t.is_empty() || !t.chars().all(|c| c == '0' || c == '1')) {
                return bad("targets", format!("`{t}` is neither `half`, `mis` nor a bitstring"));
            }
            if t == "half" && self.ansatz == Ansatz::Bracelet {
                return bad("targets", "`half` is a product target".into());
            }
        }
        if self.depths.is_empty() {
            return bad("depths", "must not be empty".into());
        }
        if self.depths.contains(&0) {
            return bad("depths", "depths start at 1".into());
        }
        if self.backends.is_empty() {
            return bad("backends", "must not be empty".into());
        }
        let c = self.channel;
        if !(0.0..=1.0).contains(&c.p00) || !(0.0..=1.0).contains(&c.p11) {
            return bad("channel", format!("fidelities ({}, {}) outside [0, 1]", c.p00, c.p11));
        }
        if self.backends.contains(&Backend::Shots) {
            if self.shots.count == 0 {
                return bad("shots.count", "must be positive".into());
            }
            if self.shots.resamples == 0 {
                return bad("shots.resamples", "must be positive".into());
            }
            if !(self.shots.level > 0.0 && self.shots.level < 1.0) {
                return bad("shots.level", format!("{} outside (0, 1)", self.shots.level));
            }
        }
        let b = self.bracelet;
        if !(b.dtau > 0.0 && b.tau_max > b.dtau) {
            return bad("bracelet", "need 0 < dtau < tau_max".into());
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.graph {
            GraphSpec::Ring { sizes } => sizes.clone(),
            GraphSpec::Edges { n, .. } => vec![*n],
        }
    }
}
