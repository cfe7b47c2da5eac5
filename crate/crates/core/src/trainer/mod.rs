//! SGD with momentum and weight decay, and the seeded training loop.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embedding::{
    arch_hash, backward_pmsm, forward_pmsm_cached, interleaved_triplets, save_checkpoint, ModelArch, PmsmParams, Views,
};
use crate::error::{Error, Result};
use crate::loss::{
    batch_all_triplets, batch_hard_mine_counted, make_batch, make_pk_batch, triplet_loss_with_grad, DistanceKind, Schedules,
};
use crate::mining::Rect;
use crate::util::{config_hash, rng_for};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

/// How triplets are formed from a batch's embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletMining {
    /// Hardest positive and negative per anchor.
    #[default]
    BatchHard,
    /// Every valid triplet in the batch.
    BatchAll,
    /// The sampled `(a, p, n)` groups as drawn. Needs interleaved batches.
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchSampling {
    /// `batch_triplets` sampled triplets, `3 · batch_triplets` images.
    #[default]
    Interleaved,
    /// `p` identities with `k` images each.
    Pk { p: usize, k: usize },
}

/// Scaling of the summed triplet loss before differentiation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Sum,
    /// Divide by the number of triplets in the batch.
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedules: Schedules,
    pub batch_triplets: usize,
    pub max_iter: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub rng_seed: u64,
    pub profile: Profile,
    pub arch: ModelArch,
    pub mining: TripletMining,
    pub sampling: BatchSampling,
    pub distance: DistanceKind,
    pub reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 2e-4,
            schedules: Schedules::desk(),
            batch_triplets: 6,
            max_iter: 2000,
            checkpoint_every: 500,
            rng_seed: 0,
            profile: Profile::Desk,
            arch: ModelArch::desk(),
            mining: TripletMining::BatchHard,
            sampling: BatchSampling::Interleaved,
            distance: DistanceKind::Euclidean,
            reduction: LossReduction::Mean,
        }
    }

    /// Batch 180 (60 triplets), 100k iterations, 1024-d embedding.
    pub fn paper() -> Self {
        Self {
            schedules: Schedules::paper(),
            batch_triplets: 60,
            max_iter: 100_000,
            checkpoint_every: 10_000,
            profile: Profile::Paper,
            arch: ModelArch::paper(),
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn batch_size(&self) -> usize {
        match self.sampling {
            BatchSampling::Interleaved => 3 * self.batch_triplets,
            BatchSampling::Pk { p, k } => p * k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(
                "need 0 <= momentum < 1, weight_decay >= 0 and max_iter >= 1".into(),
            ));
        }
        if self.batch_triplets == 0 && self.sampling == BatchSampling::Interleaved {
            return Err(Error::InvalidConfig("batch_triplets must be >= 1".into()));
        }
        if self.mining == TripletMining::Sampled && self.sampling != BatchSampling::Interleaved {
            return Err(Error::InvalidConfig("sampled triplets need interleaved batches".into()));
        }
        self.schedules.validate()?;
        self.arch.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: PmsmParams,
    /// Completed steps.
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(params: &PmsmParams) -> Self {
        Self {
            velocity: params.zeros_like(),
            iteration: 0,
        }
    }
}

/// `g' = g + λw` (weights only), `v ← μv − η(n)g'`, `w ← w + v`, `n ← n + 1`.
/// Nothing is modified if any updated value would be non-finite.
pub fn sgd_step(params: &mut PmsmParams, grads: &PmsmParams, state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if grads.arch != params.arch || state.velocity.arch != params.arch {
        return Err(Error::Shape("gradient or velocity architecture differs from parameters".into()));
    }
    let lr = cfg.schedules.lr_at(state.iteration);
    let names = params.tensor_names();
    let decays: Vec<bool> = names.iter().map(|n| n.ends_with(".w")).collect();
    let mut new_v = state.velocity.clone();
    for (k, ((v, w), g)) in new_v
        .tensors_mut()
        .zip(params.tensors())
        .zip(grads.tensors())
        .enumerate()
    {
        let lambda = if decays[k] { cfg.weight_decay } else { 0.0 };
        for ((vi, &wi), &gi) in v.data.iter_mut().zip(&w.data).zip(&g.data) {
            *vi = cfg.momentum * *vi - lr * (gi + lambda * wi);
            if !(*vi + wi).is_finite() {
                return Err(Error::NonFinite {
                    layer: k,
                    what: format!("update of {} at iteration {}", names[k], state.iteration),
                });
            }
        }
    }
    params.add_scaled(&new_v, 1.0);
    state.velocity = new_v;
    state.iteration += 1;
    Ok(())
}

/// One iteration; `loss` is the reduced objective that was differentiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: PmsmParams,
    pub trace: Vec<TraceRow>,
    /// Final checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Metadata stored in checkpoints and `run_meta.json`.
pub fn run_metadata(cfg: &TrainConfig, parts: (&Rect, &Rect), dataset: &Dataset, iteration: u64) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "config_hash": config_hash(cfg),
        "arch_hash": arch_hash(&cfg.arch),
        "parts": {"part_m": parts.0, "part_i": parts.1},
        "dataset": {"images": dataset.len(), "identities": dataset.identities().len()},
        "iteration": iteration,
    })
}

fn labels(dataset: &Dataset, ids: &[u64]) -> Result<Vec<u64>> {
    ids.iter().map(|&id| Ok(dataset.get(id)?.identity_id)).collect()
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `cfg.max_iter` iterations from a fresh seeded initialization.
///
/// With `out_dir`, writes `checkpoint_NNNNNN.ckpt` every `checkpoint_every`
/// iterations, then `checkpoint.ckpt`, `loss_trace.csv` and `run_meta.json`.
pub fn train(dataset: &Dataset, parts: (&Rect, &Rect), cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainResult> {
    cfg.validate()?;
    let mut params = PmsmParams::init(&cfg.arch, cfg.rng_seed)?;
    let mut state = OptimizerState::new(&params);
    let mut rng = rng_for(cfg.rng_seed, 0x7a11);
    let px = cfg.arch.stream.input_px;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut trace = Vec::with_capacity(cfg.max_iter as usize);
    let mut skipped_anchors = 0usize;
    while state.iteration < cfg.max_iter {
        let n = state.iteration;
        let ids = match cfg.sampling {
            BatchSampling::Interleaved => make_batch(dataset, cfg.batch_triplets, &mut rng)?,
            BatchSampling::Pk { p, k } => make_pk_batch(dataset, p, k, &mut rng)?,
        };
        let mut embeddings = Vec::with_capacity(ids.len());
        let mut caches = Vec::with_capacity(ids.len());
        for &id in &ids {
            let views = Views::prepare(&dataset.get(id)?.pixels, parts.0, parts.1, px);
            let (e, c) = forward_pmsm_cached(&params, &views)?;
            embeddings.push(e);
            caches.push(c);
        }
        let triplets = match cfg.mining {
            TripletMining::BatchHard => {
                let (t, skipped) = batch_hard_mine_counted(&embeddings, &labels(dataset, &ids)?, cfg.distance);
                skipped_anchors += skipped;
                t
            }
            TripletMining::BatchAll => batch_all_triplets(&labels(dataset, &ids)?),
            TripletMining::Sampled => interleaved_triplets(cfg.batch_triplets),
        };
        let margin = cfg.schedules.margin_at(n);
        let mut out = triplet_loss_with_grad(&embeddings, &triplets, margin, cfg.distance)?;
        if cfg.reduction == LossReduction::Mean && !triplets.is_empty() {
            let scale = 1.0 / triplets.len() as f64;
            out.loss *= scale;
            out.grads.iter_mut().flatten().for_each(|g| *g *= scale);
        }
        let mut grads = params.zeros_like();
        for (c, d) in caches.iter().zip(&out.grads) {
            if d.iter().any(|&g| g != 0.0) {
                backward_pmsm(&params, c, d, &mut grads);
            }
        }
        if !out.loss.is_finite() {
            return Err(Error::NonFinite {
                layer: 0,
                what: format!("loss at iteration {n}"),
            });
        }
        trace.push(TraceRow {
            iteration: n + 1,
            loss: out.loss,
            lr: cfg.schedules.lr_at(n),
            margin,
        });
        sgd_step(&mut params, &grads, &mut state, cfg)?;
        params.round_to_f32();
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 && state.iteration < cfg.max_iter {
                let path = dir.join(format!("checkpoint_{:06}.ckpt", state.iteration));
                save_checkpoint(&path, &params, &run_metadata(cfg, parts, dataset, state.iteration))?;
            }
        }
        if state.iteration % 100 == 0 {
            log::info!("iteration {}: loss {:.4}", state.iteration, out.loss);
        }
    }
    if skipped_anchors > 0 {
        log::warn!("batch-hard mining skipped {skipped_anchors} anchors without an in-batch positive over the run");
    }
    let checkpoint = match out_dir {
        Some(dir) => {
            let meta = run_metadata(cfg, parts, dataset, state.iteration);
            let path = dir.join("checkpoint.ckpt");
            save_checkpoint(&path, &params, &meta)?;
            write_trace(&dir.join("loss_trace.csv"), &trace)?;
            let meta_path = dir.join("run_meta.json");
            let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
            std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainResult {
        params,
        trace,
        checkpoint,
    })
}
