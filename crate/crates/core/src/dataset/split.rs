//! Probe/gallery splits. Retrieval: one random probe per identity, the rest in
//! the gallery. Re-identification: the exact exchange of the two sets.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Retrieval,
    Reid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub mode: SplitMode,
    pub probe: Vec<u64>,
    pub gallery: Vec<u64>,
    pub identities: BTreeSet<u64>,
}

impl EvalSplit {
    pub fn exchange(&self) -> EvalSplit {
        EvalSplit {
            mode: match self.mode {
                SplitMode::Retrieval => SplitMode::Reid,
                SplitMode::Reid => SplitMode::Retrieval,
            },
            probe: self.gallery.clone(),
            gallery: self.probe.clone(),
            identities: self.identities.clone(),
        }
    }
}

pub fn build_retrieval_split(dataset: &Dataset, num_identities: usize, rng_seed: u64) -> Result<EvalSplit> {
    let identities = dataset.identities();
    let mut eligible = Vec::with_capacity(identities.len());
    let mut dropped = 0usize;
    for (&id, imgs) in &identities {
        if imgs.len() >= 2 {
            eligible.push(id);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} identities with fewer than 2 images excluded from the split");
    }
    if num_identities == 0 || eligible.len() < num_identities {
        return Err(Error::InsufficientData(format!(
            "split needs {num_identities} identities with >= 2 images, dataset has {}",
            eligible.len()
        )));
    }

    let mut rng = rng_for(rng_seed, 0x5b17);
    eligible.shuffle(&mut rng);
    let mut selected: Vec<u64> = eligible[..num_identities].to_vec();
    selected.sort_unstable();

    let mut probe = Vec::with_capacity(num_identities);
    let mut gallery = Vec::new();
    for id in &selected {
        let imgs = &identities[id];
        let chosen = *imgs.choose(&mut rng).expect("identity has >= 2 images");
        probe.push(chosen);
        gallery.extend(imgs.iter().copied().filter(|&i| i != chosen));
    }
    gallery.sort_unstable();
    Ok(EvalSplit {
        mode: SplitMode::Retrieval,
        probe,
        gallery,
        identities: selected.into_iter().collect(),
    })
}

/// Same identity and image draw as [`build_retrieval_split`] for the same seed,
/// with probe and gallery exchanged.
pub fn build_reid_split(dataset: &Dataset, num_identities: usize, rng_seed: u64) -> Result<EvalSplit> {
    Ok(build_retrieval_split(dataset, num_identities, rng_seed)?.exchange())
}

/// Splits identities into training and held-out sets within every model: the
/// highest `round(fraction · n)` identity ids of each model are held out,
/// keeping at least one identity per model on each side when the model has two.
pub fn holdout_by_identity(dataset: &Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig("holdout fraction must be in [0, 1)".into()));
    }
    let mut per_model: std::collections::BTreeMap<u64, BTreeSet<u64>> = Default::default();
    for (identity, model) in dataset.hierarchy() {
        per_model.entry(model).or_default().insert(identity);
    }
    let mut held: BTreeSet<u64> = BTreeSet::new();
    for ids in per_model.values() {
        let n = ids.len();
        let mut k = (fraction * n as f64).round() as usize;
        if fraction > 0.0 && n >= 2 {
            k = k.clamp(1, n - 1);
        }
        held.extend(ids.iter().rev().take(k.min(n)));
    }
    let train = dataset.filter(|img| !held.contains(&img.identity_id));
    let test = dataset.filter(|img| held.contains(&img.identity_id));
    Ok((train, test))
}
