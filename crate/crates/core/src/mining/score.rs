//! Discriminative scores of one patch position over a seed and its neighbours.
//!
//! All three variants are ratios of an inter-class distance to an intra-class
//! spread. Denominators below `epsilon` are replaced by `epsilon` and the score
//! is flagged as saturated.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::sq_dist;

/// The feature of one image at one position, with that image's labels.
#[derive(Clone, Copy, Debug)]
pub struct PatchSample<'a> {
    pub feature: &'a [f64],
    pub model_id: u64,
    pub identity_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// Sum of class-mean offsets from the global mean over summed within-class spread.
    Eq1,
    /// Seed model versus its nearest other model, over the seed's farthest same-model neighbour.
    Eq2,
    /// Eq2 one level down: identities inside the seed's model.
    Eq3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub numerator: f64,
    /// Raw denominator, before the epsilon floor.
    pub denominator: f64,
    pub saturated: bool,
}

impl Score {
    fn ratio(numerator: f64, denominator: f64, epsilon: f64) -> Self {
        let saturated = denominator < epsilon;
        Score {
            value: numerator / denominator.max(epsilon),
            numerator,
            denominator,
            saturated,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Groups features by `key`, each group sorted so sums do not depend on input order.
fn group<'a>(samples: impl Iterator<Item = (u64, &'a [f64])>) -> BTreeMap<u64, Vec<&'a [f64]>> {
    let mut groups: BTreeMap<u64, Vec<&[f64]>> = BTreeMap::new();
    for (k, f) in samples {
        groups.entry(k).or_default().push(f);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| lexicographic(a, b));
    }
    groups
}

fn mean(members: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for f in members {
        for (acc, v) in m.iter_mut().zip(f.iter()) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn check_dims(seed: &PatchSample, neighbors: &[PatchSample]) -> Result<usize> {
    let dim = seed.feature.len();
    if let Some(bad) = neighbors.iter().find(|n| n.feature.len() != dim) {
        return Err(Error::Shape(format!(
            "patch feature length {} differs from the seed's {dim}",
            bad.feature.len()
        )));
    }
    Ok(dim)
}

/// Classes are model ids; the seed joins its class.
pub fn score_eq1(seed: &PatchSample, neighbors: &[PatchSample], epsilon: f64) -> Result<Score> {
    let dim = check_dims(seed, neighbors)?;
    let groups = group(
        std::iter::once(seed)
            .chain(neighbors)
            .map(|s| (s.model_id, s.feature)),
    );
    if groups.len() < 2 {
        return Err(Error::NoInterClassContrast);
    }
    let all: Vec<&[f64]> = groups.values().flatten().copied().collect();
    let global = mean(&all, dim);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for members in groups.values() {
        let class_mean = mean(members, dim);
        numerator += dist(&class_mean, &global);
        denominator += members.iter().map(|f| dist(f, &class_mean)).sum::<f64>();
    }
    Ok(Score::ratio(numerator, denominator, epsilon))
}

/// Shared by the `Eq2` and `Eq3` variants: `key` labels the classes, `own` is the seed's class.
fn nearest_class_ratio(
    seed: &PatchSample,
    neighbors: &[PatchSample],
    key: impl Fn(&PatchSample) -> u64,
    epsilon: f64,
) -> Result<Score> {
    let dim = check_dims(seed, neighbors)?;
    let own = key(seed);
    let groups = group(
        std::iter::once(seed)
            .chain(neighbors)
            .map(|s| (key(s), s.feature)),
    );
    let same = &groups[&own];
    if same.len() < 2 {
        return Err(Error::InsufficientIntraClass);
    }
    if groups.len() < 2 {
        return Err(Error::NoInterClassContrast);
    }
    let own_mean = mean(same, dim);
    let numerator = groups
        .iter()
        .filter(|(&c, _)| c != own)
        .map(|(_, members)| dist(&mean(members, dim), &own_mean))
        .fold(f64::INFINITY, f64::min);
    let denominator = neighbors
        .iter()
        .filter(|n| key(n) == own)
        .map(|n| dist(n.feature, seed.feature))
        .fold(0.0, f64::max);
    Ok(Score::ratio(numerator, denominator, epsilon))
}

pub fn score_eq2(seed: &PatchSample, neighbors: &[PatchSample], epsilon: f64) -> Result<Score> {
    nearest_class_ratio(seed, neighbors, |s| s.model_id, epsilon)
}

/// Every neighbour must share the seed's model; classes are identities.
pub fn score_eq3(seed: &PatchSample, neighbors: &[PatchSample], epsilon: f64) -> Result<Score> {
    if let Some(out) = neighbors.iter().find(|n| n.model_id != seed.model_id) {
        return Err(Error::OutOfModelNeighbor(out.model_id));
    }
    nearest_class_ratio(seed, neighbors, |s| s.identity_id, epsilon)
}

pub fn score(variant: ScoreVariant, seed: &PatchSample, neighbors: &[PatchSample], epsilon: f64) -> Result<Score> {
    match variant {
        ScoreVariant::Eq1 => score_eq1(seed, neighbors, epsilon),
        ScoreVariant::Eq2 => score_eq2(seed, neighbors, epsilon),
        ScoreVariant::Eq3 => score_eq3(seed, neighbors, epsilon),
    }
}
