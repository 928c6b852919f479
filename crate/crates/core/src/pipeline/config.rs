//! Pipeline configuration, per-stage hashing and seed derivation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{IdenticonSpec, SplitProportions};
use crate::error::{Error, Result};
use crate::eval::{DownstreamConfig, MiaConfig};
use crate::models::{ClassifierConfig, GanConfig, ProjectionConfig, DEFAULT_PROJECTIONS_PER_IDENTITY};
use crate::plan::PlanConfig;

/// Bumped whenever a stage's outputs change for the same config.
pub const STAGE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SynthData,
    TrainGan,
    Project,
    TrainClassifiers,
    Ksame,
    Plan,
    GenDataset,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::SynthData,
        Stage::TrainGan,
        Stage::Project,
        Stage::TrainClassifiers,
        Stage::Ksame,
        Stage::Plan,
        Stage::GenDataset,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::TrainGan => "train-gan",
            Stage::Project => "project",
            Stage::TrainClassifiers => "train-classifiers",
            Stage::Ksame => "ksame",
            Stage::Plan => "plan",
            Stage::GenDataset => "gen-dataset",
            Stage::Eval => "eval",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::SynthData => &[],
            Stage::TrainGan => &[Stage::SynthData],
            Stage::Project => &[Stage::SynthData, Stage::TrainGan],
            Stage::TrainClassifiers => &[Stage::SynthData, Stage::TrainGan, Stage::Project],
            Stage::Ksame => &[Stage::Project],
            Stage::Plan => &[Stage::TrainGan, Stage::TrainClassifiers, Stage::Ksame],
            Stage::GenDataset => &[Stage::TrainGan, Stage::Ksame, Stage::Plan],
            Stage::Eval => &[Stage::SynthData, Stage::TrainClassifiers, Stage::GenDataset],
        }
    }

    /// Whether the stage's work is split by arm.
    pub fn per_arm(self) -> bool {
        matches!(self, Stage::Plan | Stage::GenDataset | Stage::Eval)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {:?}", s)))
    }
}

/// Which synthetic (or real) training set an evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Real training split.
    Real,
    /// Linear interpolation between k = 2 centroid pairs.
    Linear,
    /// Optimized trajectories between k = 2 centroid pairs.
    Plan,
    /// k-same centroids alone, one image each.
    Ksame,
    /// Optimized trajectories between k-same centroid pairs.
    KsamePlan,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Real, Arm::Linear, Arm::Plan, Arm::Ksame, Arm::KsamePlan];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Real => "real",
            Arm::Linear => "linear",
            Arm::Plan => "plan",
            Arm::Ksame => "ksame",
            Arm::KsamePlan => "ksame-plan",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown arm {:?}", s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_identities: usize,
    pub n_classes: usize,
    pub splits: SplitProportions,
    pub identicon: IdenticonSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_identities: 400,
            n_classes: 4,
            splits: SplitProportions::default(),
            identicon: IdenticonSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifiersConfig {
    pub identity: ClassifierConfig,
    pub class: ClassifierConfig,
    /// Generated projections added per identity to the identity classifier's data.
    pub projections_per_identity: usize,
}

impl Default for ClassifiersConfig {
    fn default() -> Self {
        Self {
            identity: ClassifierConfig {
                hidden: vec![128, 64],
                epochs: 40,
                ..ClassifierConfig::default()
            },
            class: ClassifierConfig {
                hidden: vec![256],
                epochs: 40,
                ..ClassifierConfig::default()
            },
            projections_per_identity: DEFAULT_PROJECTIONS_PER_IDENTITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsameConfig {
    /// Group sizes for the k-same arms.
    pub ks: Vec<usize>,
    /// Group size of the endpoints used by the linear and plan arms.
    pub pair_k: usize,
}

impl Default for KsameConfig {
    fn default() -> Self {
        Self { ks: vec![5, 10], pair_k: 2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Also write one PGM per exported image.
    pub pgm: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub downstream: DownstreamConfig,
    pub mia: MiaConfig,
}

/// Whole-pipeline configuration; one TOML table per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub workers: usize,
    pub data: DataConfig,
    pub gan: GanConfig,
    pub projection: ProjectionConfig,
    pub classifiers: ClassifiersConfig,
    pub ksame: KsameConfig,
    pub plan: PlanConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            workers: 1,
            data: DataConfig::default(),
            gan: GanConfig::default(),
            projection: ProjectionConfig::default(),
            classifiers: ClassifiersConfig::default(),
            ksame: KsameConfig::default(),
            plan: PlanConfig::default(),
            dataset: DatasetConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { what, detail } => Error::Format {
                what,
                detail: format!("{}: {}", path.display(), detail),
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.splits.validate()?;
        self.plan.weights.validate()?;
        if self.plan.trajectory_len < 3 {
            return Err(Error::invalid("plan.trajectory_len must be at least 3"));
        }
        if self.ksame.pair_k < 2 || self.ksame.ks.iter().any(|&k| k < 2) {
            return Err(Error::invalid("k-same group sizes must be at least 2"));
        }
        if self.eval.downstream.runs == 0 {
            return Err(Error::invalid("eval.downstream.runs must be at least 1"));
        }
        Ok(())
    }

    /// The config values a stage's outputs depend on (upstream excluded).
    pub fn section(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::SynthData => json(&(&self.data, self.seed)),
            Stage::TrainGan => json(&self.gan),
            Stage::Project => json(&self.projection),
            Stage::TrainClassifiers => json(&self.classifiers),
            Stage::Ksame => json(&self.ksame),
            Stage::Plan => json(&self.plan),
            Stage::GenDataset => json(&self.dataset),
            Stage::Eval => json(&self.eval),
        }
    }

    /// SHA-256 over the stage name and version, its config section and the
    /// hashes of every upstream stage.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(STAGE_VERSION.to_le_bytes());
        h.update(self.section(stage).to_string().as_bytes());
        for &up in stage.upstream() {
            h.update(self.stage_hash(up).as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.name())
    }
}

/// First 8 bytes (little-endian) of SHA-256 over `(seed, label)`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
