use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pmsm::dataset::{SynthConfig, CANONICAL_SIZE};
use pmsm::features::{HogConfig, PatchGridConfig};
use pmsm::mining::MiningConfig;
use pmsm::trainer::{Profile, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetSection {
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
    },
    Manifest {
        path: PathBuf,
        #[serde(default = "canonical_size")]
        canonical_size: usize,
    },
}

fn canonical_size() -> usize {
    CANONICAL_SIZE
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningSection {
    pub mining: MiningConfig,
    pub hog: HogConfig,
    pub grid: PatchGridConfig,
    /// Directory for cached HOG fields.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Identity count of each probe/gallery split.
    pub split_identities: Vec<usize>,
    pub ks: Vec<usize>,
    pub repeats: usize,
    /// Share of each model's identities held out of training for evaluation.
    pub holdout_fraction: f64,
    /// Separate evaluation manifest; when set, all of `dataset` is used for training.
    pub test_manifest: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split_identities: vec![10, 20, 30],
            ks: vec![1, 5],
            repeats: 1,
            holdout_fraction: 0.375,
            test_manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub mining: MiningSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub out: PathBuf,
    /// Drives every seeded stage: generation, mining, initialization, sampling, splits.
    pub seed: u64,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self {
            dataset: DatasetSection::Synthetic {
                synth: SynthConfig {
                    identities_per_model: 8,
                    noise_sigma: 0.08,
                    jitter_px: 4,
                    ..SynthConfig::default()
                },
            },
            mining: MiningSection::default(),
            train: TrainConfig::for_profile(profile),
            eval: EvalSection::default(),
            out: PathBuf::from("pmsm-out"),
            seed: 0,
        };
        if profile == Profile::Paper {
            cfg.eval.split_identities = vec![800, 1600, 2400];
        }
        cfg
    }

    /// Profile defaults, overlaid with the JSON file (if any), then the flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let file: Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Value::Object(Default::default()),
        };
        let profile = match overrides.profile {
            Some(p) => p,
            None => match file.pointer("/train/profile") {
                Some(v) => serde_json::from_value(v.clone()).context("train.profile")?,
                None => Profile::Desk,
            },
        };
        let mut merged = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut merged, file);
        if let Some(p) = overrides.profile {
            merged["train"]["profile"] = serde_json::to_value(p)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(merged).context("invalid run config")?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        cfg.train.rng_seed = cfg.seed;
        if let DatasetSection::Synthetic { synth } = &mut cfg.dataset {
            synth.rng_seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match &self.dataset {
            DatasetSection::Synthetic { synth } => synth.validate()?,
            DatasetSection::Manifest { path, .. } => {
                if !path.exists() {
                    bail!("manifest {} does not exist", path.display());
                }
            }
        }
        if let Some(p) = &self.eval.test_manifest {
            if !p.exists() {
                bail!("test manifest {} does not exist", p.display());
            }
        }
        self.mining.hog.validate()?;
        self.mining.mining.validate()?;
        self.train.validate()?;
        if self.eval.repeats == 0 || self.eval.ks.is_empty() || self.eval.split_identities.is_empty() {
            bail!("eval needs repeats >= 1, at least one k and at least one split size");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn parts_path(&self) -> PathBuf {
        self.out.join("parts.json")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("train")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.train_dir().join("checkpoint.ckpt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub profile: Option<Profile>,
}

/// Recursive object merge; `patch` wins on conflicts.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
