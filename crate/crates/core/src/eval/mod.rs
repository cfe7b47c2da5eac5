//! Euclidean ranking, average precision and CMC over probe/gallery splits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EvalSplit, SplitMode};
use crate::embedding::{forward_pmsm, PmsmParams, Views};
use crate::error::{Error, Result};
use crate::features::euclidean;
use crate::mining::Rect;

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub probe_id: u64,
    pub gallery_ids: Vec<u64>,
    pub distances: Vec<f64>,
}

/// Gallery sorted by ascending distance to the probe, ties by gallery id.
pub fn rank(probe_id: u64, probe: &[f64], gallery: &[(u64, &[f64])]) -> Result<Ranking> {
    let mut scored = gallery
        .iter()
        .map(|&(id, g)| Ok((euclidean(probe, g)?, id)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (distances, gallery_ids) = scored.into_iter().unzip();
    Ok(Ranking {
        probe_id,
        gallery_ids,
        distances,
    })
}

/// Mean of precision@k over the ranks `k` holding relevant items.
pub fn average_precision(ranking: &Ranking, relevant: &BTreeSet<u64>) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, id) in ranking.gallery_ids.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::InsufficientData(format!(
            "probe {} has no relevant gallery item",
            ranking.probe_id
        )));
    }
    Ok(sum / hits as f64)
}

/// 1-based rank of the first relevant item.
pub fn first_hit(ranking: &Ranking, relevant: &BTreeSet<u64>) -> Option<usize> {
    ranking.gallery_ids.iter().position(|id| relevant.contains(id)).map(|p| p + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Retrieval,
    Reid,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Retrieval => "retrieval",
            Task::Reid => "reid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub task: Task,
    pub repeat: usize,
    pub seed: u64,
    pub num_probe: usize,
    pub num_gallery: usize,
    pub map: f64,
    /// Match rate within the top `k`, keyed by `k`.
    pub cmc: BTreeMap<usize, f64>,
    pub per_probe_ap: Vec<(u64, f64)>,
    pub config_hash: String,
}

pub const CSV_HEADER: [&str; 8] = ["split", "task", "repeat", "map", "cmc1", "cmc5", "seed", "config_hash"];

impl EvalReport {
    pub fn cmc_at(&self, k: usize) -> Option<f64> {
        self.cmc.get(&k).copied()
    }

    pub fn csv_row(&self) -> [String; 8] {
        let cmc = |k| self.cmc_at(k).map_or(String::new(), |v| format!("{v:.6}"));
        [
            self.split.clone(),
            self.task.name().into(),
            self.repeat.to_string(),
            format!("{:.6}", self.map),
            cmc(1),
            cmc(5),
            self.seed.to_string(),
            self.config_hash.clone(),
        ]
    }
}

/// Identifies the run in the report.
#[derive(Clone, Debug, Default)]
pub struct ReportLabel {
    pub split: String,
    pub repeat: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Scores a split from precomputed embeddings. Relevance is a shared identity.
///
/// `Reid` splits require every probe identity to be present in the gallery.
pub fn evaluate_embeddings(
    dataset: &Dataset,
    split: &EvalSplit,
    embeddings: &BTreeMap<u64, Vec<f64>>,
    ks: &[usize],
    label: &ReportLabel,
) -> Result<EvalReport> {
    let lookup = |id: u64| {
        embeddings
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownImage(id))
    };
    let gallery = split
        .gallery
        .iter()
        .map(|&id| Ok((id, lookup(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut by_identity: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for &id in &split.gallery {
        by_identity.entry(dataset.get(id)?.identity_id).or_default().insert(id);
    }
    let empty = BTreeSet::new();
    let mut per_probe_ap = Vec::with_capacity(split.probe.len());
    let mut hit_ranks = Vec::with_capacity(split.probe.len());
    for &pid in &split.probe {
        let identity = dataset.get(pid)?.identity_id;
        let relevant = by_identity.get(&identity).unwrap_or(&empty);
        if relevant.is_empty() {
            return Err(Error::InsufficientData(format!(
                "identity {identity} of probe {pid} is absent from the gallery"
            )));
        }
        let ranking = rank(pid, lookup(pid)?, &gallery)?;
        per_probe_ap.push((pid, average_precision(&ranking, relevant)?));
        hit_ranks.push(first_hit(&ranking, relevant).expect("relevant set is non-empty"));
    }
    let n = split.probe.len().max(1) as f64;
    let cmc = ks
        .iter()
        .map(|&k| (k, hit_ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(EvalReport {
        split: label.split.clone(),
        task: match split.mode {
            SplitMode::Retrieval => Task::Retrieval,
            SplitMode::Reid => Task::Reid,
        },
        repeat: label.repeat,
        seed: label.seed,
        num_probe: split.probe.len(),
        num_gallery: split.gallery.len(),
        map: per_probe_ap.iter().map(|(_, ap)| ap).sum::<f64>() / n,
        cmc,
        per_probe_ap,
        config_hash: label.config_hash.clone(),
    })
}

/// Embeddings of `ids` with the whole image and the canonical part crops,
/// computed on up to `threads` workers. Results do not depend on `threads`.
pub fn embed_images(
    params: &PmsmParams,
    dataset: &Dataset,
    ids: &[u64],
    parts: (&Rect, &Rect),
    threads: usize,
) -> Result<BTreeMap<u64, Vec<f64>>> {
    let px = params.arch.stream.input_px;
    let embed_chunk = |chunk: &[u64]| -> Result<Vec<(u64, Vec<f64>)>> {
        chunk
            .iter()
            .map(|&id| {
                let views = Views::prepare(&dataset.get(id)?.pixels, parts.0, parts.1, px);
                Ok((id, forward_pmsm(params, &views)?))
            })
            .collect()
    };
    let threads = threads.clamp(1, ids.len().max(1));
    if threads == 1 {
        return Ok(embed_chunk(ids)?.into_iter().collect());
    }
    let chunk = ids.len().div_ceil(threads);
    let results: Vec<Result<Vec<(u64, Vec<f64>)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = ids.chunks(chunk).map(|c| s.spawn(move || embed_chunk(c))).collect();
        handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
    });
    let mut out = BTreeMap::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn evaluate_mode(
    params: &PmsmParams,
    dataset: &Dataset,
    split: &EvalSplit,
    parts: (&Rect, &Rect),
    ks: &[usize],
    label: &ReportLabel,
    threads: usize,
    mode: SplitMode,
) -> Result<EvalReport> {
    if split.mode != mode {
        return Err(Error::InvalidConfig(format!("expected a {mode:?} split, got {:?}", split.mode)));
    }
    let ids: Vec<u64> = split.probe.iter().chain(&split.gallery).copied().collect();
    let embeddings = embed_images(params, dataset, &ids, parts, threads)?;
    evaluate_embeddings(dataset, split, &embeddings, ks, label)
}

pub fn evaluate_retrieval(
    params: &PmsmParams,
    dataset: &Dataset,
    split: &EvalSplit,
    parts: (&Rect, &Rect),
    ks: &[usize],
    label: &ReportLabel,
    threads: usize,
) -> Result<EvalReport> {
    evaluate_mode(params, dataset, split, parts, ks, label, threads, SplitMode::Retrieval)
}

pub fn evaluate_reid(
    params: &PmsmParams,
    dataset: &Dataset,
    split: &EvalSplit,
    parts: (&Rect, &Rect),
    ks: &[usize],
    label: &ReportLabel,
    threads: usize,
) -> Result<EvalReport> {
    evaluate_mode(params, dataset, split, parts, ks, label, threads, SplitMode::Reid)
}

pub const DEFAULT_KS: [usize; 2] = [1, 5];

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
