//! Triplet loss, batch sampling, batch-hard mining and the training schedules.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

impl Triplet {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let a = dataset.get(self.anchor)?.identity_id;
        let p = dataset.get(self.positive)?.identity_id;
        let n = dataset.get(self.negative)?.identity_id;
        if a != p || a == n || self.anchor == self.positive {
            return Err(Error::InvalidConfig(format!("invalid triplet {self:?}")));
        }
        Ok(())
    }
}

/// Batch positions of one triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IndexTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Squared,
}

impl DistanceKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            DistanceKind::Euclidean => sq.sqrt(),
            DistanceKind::Squared => sq,
        }
    }
}

/// `Σ [d_ap − d_an + α]₊`.
pub fn triplet_loss(d_ap: &[f64], d_an: &[f64], margin: f64) -> Result<f64> {
    if d_ap.len() != d_an.len() || d_ap.is_empty() {
        return Err(Error::Shape(format!(
            "need matching non-empty distance lists, got {} and {}",
            d_ap.len(),
            d_an.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &n) in d_ap.iter().zip(d_an) {
        for d in [p, n] {
            if d < 0.0 || d.is_nan() {
                return Err(Error::NegativeDistance(d));
            }
        }
        total += (p - n + margin).max(0.0);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletLossOutput {
    pub loss: f64,
    /// `∂loss/∂embedding` for every batch entry.
    pub grads: Vec<Vec<f64>>,
    pub active: Vec<bool>,
    pub d_ap: Vec<f64>,
    pub d_an: Vec<f64>,
}

/// Below this the Euclidean distance is treated as zero in the derivative.
const DIST_FLOOR: f64 = 1e-12;

fn add_distance_grad(kind: DistanceKind, x: &[f64], y: &[f64], d: f64, scale: f64, gx: &mut [f64]) {
    let coef = match kind {
        DistanceKind::Euclidean if d <= DIST_FLOOR => return,
        DistanceKind::Euclidean => scale / d,
        DistanceKind::Squared => 2.0 * scale,
    };
    for ((g, a), b) in gx.iter_mut().zip(x).zip(y) {
        *g += coef * (a - b);
    }
}

/// Loss over index triplets of `embeddings` and its embedding gradient. The
/// hinge is active only for a strictly positive argument.
pub fn triplet_loss_with_grad(
    embeddings: &[Vec<f64>],
    triplets: &[IndexTriplet],
    margin: f64,
    kind: DistanceKind,
) -> Result<TripletLossOutput> {
    let dim = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut out = TripletLossOutput {
        loss: 0.0,
        grads: Vec::new(),
        active: Vec::with_capacity(triplets.len()),
        d_ap: Vec::with_capacity(triplets.len()),
        d_an: Vec::with_capacity(triplets.len()),
    };
    for t in triplets {
        if [t.anchor, t.positive, t.negative].iter().any(|&i| i >= embeddings.len()) {
            return Err(Error::Shape(format!("triplet {t:?} outside batch of {}", embeddings.len())));
        }
        let (a, p, n) = (&embeddings[t.anchor], &embeddings[t.positive], &embeddings[t.negative]);
        let d_ap = kind.distance(a, p);
        let d_an = kind.distance(a, n);
        let h = d_ap - d_an + margin;
        let active = h > 0.0;
        if active {
            out.loss += h;
            add_distance_grad(kind, a, p, d_ap, 1.0, &mut grads[t.anchor]);
            add_distance_grad(kind, p, a, d_ap, 1.0, &mut grads[t.positive]);
            add_distance_grad(kind, a, n, d_an, -1.0, &mut grads[t.anchor]);
            add_distance_grad(kind, n, a, d_an, -1.0, &mut grads[t.negative]);
        }
        out.active.push(active);
        out.d_ap.push(d_ap);
        out.d_an.push(d_an);
    }
    out.grads = grads;
    Ok(out)
}

/// Identities with at least two images, and every identity.
fn sampling_pools(dataset: &Dataset) -> (BTreeMap<u64, Vec<u64>>, Vec<u64>) {
    let ids = dataset.identities();
    let all: Vec<u64> = ids.keys().copied().collect();
    let multi = ids.into_iter().filter(|(_, v)| v.len() >= 2).collect();
    (multi, all)
}

/// `n` triplets drawn uniformly and serialized `a, p, n, a, p, n, ...`.
pub fn make_batch(dataset: &Dataset, n: usize, rng: &mut Rng) -> Result<Vec<u64>> {
    let (multi, all) = sampling_pools(dataset);
    if multi.is_empty() || all.len() < 2 {
        return Err(Error::InsufficientData(
            "triplets need an identity with >= 2 images and >= 2 identities".into(),
        ));
    }
    let anchors: Vec<u64> = multi.keys().copied().collect();
    let identities = dataset.identities();
    let mut batch = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let ident = *anchors.choose(rng).unwrap();
        let members = &multi[&ident];
        let ai = rng.random_range(0..members.len());
        let mut pi = rng.random_range(0..members.len() - 1);
        if pi >= ai {
            pi += 1;
        }
        let mut ni = rng.random_range(0..all.len() - 1);
        if all[ni] >= ident {
            ni += 1;
        }
        let negative = *identities[&all[ni]].choose(rng).unwrap();
        batch.extend([members[ai], members[pi], negative]);
    }
    Ok(batch)
}

/// `p` distinct identities with `k` distinct images each (identity-major order).
pub fn make_pk_batch(dataset: &Dataset, p: usize, k: usize, rng: &mut Rng) -> Result<Vec<u64>> {
    let eligible: Vec<(u64, Vec<u64>)> = dataset.identities().into_iter().filter(|(_, v)| v.len() >= k).collect();
    if p < 2 || k < 2 || eligible.len() < p {
        return Err(Error::InsufficientData(format!(
            "PK batch needs >= 2 identities and >= 2 images each; {} identities have {k} images, {p} requested",
            eligible.len()
        )));
    }
    let mut batch = Vec::with_capacity(p * k);
    for (_, members) in eligible.choose_multiple(rng, p) {
        batch.extend(members.choose_multiple(rng, k).copied());
    }
    Ok(batch)
}

/// Hardest positive (farthest, lowest index on ties) and hardest negative
/// (nearest, lowest index on ties) for every anchor that has a positive.
/// Skipped anchors are reported with a warning.
pub fn batch_hard_mine(embeddings: &[Vec<f64>], labels: &[u64], kind: DistanceKind) -> Vec<IndexTriplet> {
    let (out, skipped) = batch_hard_mine_counted(embeddings, labels, kind);
    if skipped > 0 {
        log::warn!("batch-hard mining skipped {skipped} anchors without a positive or negative in the batch");
    }
    out
}

/// [`batch_hard_mine`] without logging; also returns the number of skipped anchors.
pub fn batch_hard_mine_counted(embeddings: &[Vec<f64>], labels: &[u64], kind: DistanceKind) -> (Vec<IndexTriplet>, usize) {
    let n = embeddings.len();
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0;
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = kind.distance(&embeddings[a], &embeddings[j]);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        match (pos, neg) {
            (Some((p, _)), Some((ng, _))) => out.push(IndexTriplet {
                anchor: a,
                positive: p,
                negative: ng,
            }),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

/// Every valid `(a, p, n)` in the batch.
pub fn batch_all_triplets(labels: &[u64]) -> Vec<IndexTriplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for ng in 0..n {
                if labels[ng] != labels[a] {
                    out.push(IndexTriplet {
                        anchor: a,
                        positive: p,
                        negative: ng,
                    });
                }
            }
        }
    }
    out
}

/// Rounds to 12 significant digits, so products of decimal constants land on
/// their literal (0.05 · 0.9 gives 0.045, not 0.045000000000000005).
fn decimal(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedules {
    pub base_lr: f64,
    pub lr_decay: f64,
    pub margin_base: f64,
    pub period: u64,
    /// Keep the margin at `margin_base` instead of growing it every period.
    pub constant_margin: bool,
}

impl Default for Schedules {
    fn default() -> Self {
        Self::desk()
    }
}

impl Schedules {
    pub fn paper() -> Self {
        Self {
            base_lr: 0.05,
            lr_decay: 0.9,
            margin_base: 0.1,
            period: 10_000,
            constant_margin: false,
        }
    }

    /// Paper constants with a 100-iteration period.
    pub fn desk() -> Self {
        Self {
            period: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.period == 0 {
            return Err(Error::InvalidConfig(
                "schedules need base_lr > 0, 0 < lr_decay <= 1 and period >= 1".into(),
            ));
        }
        if !(self.margin_base >= 0.0) {
            return Err(Error::InvalidConfig("margin_base must be >= 0".into()));
        }
        Ok(())
    }

    /// `base_lr · lr_decay^⌊n / period⌋`.
    pub fn lr_at(&self, n: u64) -> f64 {
        decimal(self.base_lr * self.lr_decay.powi((n / self.period) as i32))
    }

    /// `margin_base · ⌈n / period⌉`, with iteration 0 mapped to `margin_base`.
    pub fn margin_at(&self, n: u64) -> f64 {
        if self.constant_margin {
            return self.margin_base;
        }
        decimal(self.margin_base * n.div_ceil(self.period).max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(triplet_loss(&[0.0], &[1.0], 0.1).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[0.0, 0.0], &[0.0, 0.0], 0.1).unwrap(), 0.2);
        assert!((triplet_loss(&[0.5], &[0.4], 0.1).unwrap() - 0.2).abs() < 1e-12);
        assert!(matches!(triplet_loss(&[-0.1], &[0.0], 0.1), Err(Error::NegativeDistance(_))));
        assert!(triplet_loss(&[], &[], 0.1).is_err());
    }

    #[test]
    fn collapsed_embeddings_have_zero_gradient() {
        let e = vec![vec![1.0, 2.0]; 3];
        let t = [IndexTriplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        let out = triplet_loss_with_grad(&e, &t, 0.1, DistanceKind::Euclidean).unwrap();
        assert_eq!(out.loss, 0.1);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
        assert_eq!(out.active, vec![true]);
    }

    #[test]
    fn hinge_boundary_is_inactive() {
        let e = vec![vec![0.0], vec![0.5], vec![0.75]];
        let t = [IndexTriplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        let out = triplet_loss_with_grad(&e, &t, 0.25, DistanceKind::Euclidean).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.active, vec![false]);
    }

    #[test]
    fn batch_hard_hand_example() {
        let e: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
        let m = batch_hard_mine(&e, &[0, 0, 1, 1], DistanceKind::Euclidean);
        assert_eq!(
            m[0],
            IndexTriplet {
                anchor: 0,
                positive: 1,
                negative: 2
            }
        );
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn batch_hard_skips_singletons() {
        let e: Vec<Vec<f64>> = [0.0, 1.0, 5.0].iter().map(|&v| vec![v]).collect();
        let m = batch_hard_mine(&e, &[0, 0, 1], DistanceKind::Euclidean);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|t| t.anchor != 2));
    }

    #[test]
    fn schedule_values() {
        let s = Schedules::paper();
        assert_eq!(s.lr_at(0), 0.05);
        assert_eq!(s.lr_at(9999), 0.05);
        assert_eq!(s.lr_at(10_000), 0.045);
        assert_eq!(s.lr_at(20_000), 0.0405);
        assert_eq!(s.margin_at(20_001), 0.3);
        assert_eq!(s.margin_at(0), 0.1);
        assert_eq!(s.margin_at(1), 0.1);
        assert_eq!(s.margin_at(10_000), 0.1);
        assert_eq!(s.margin_at(10_001), 0.2);
        let c = Schedules {
            constant_margin: true,
            ..Schedules::paper()
        };
        assert_eq!(c.margin_at(50_000), 0.1);
    }

    #[test]
    fn batch_all_counts() {
        // 2 ids x 2 images: each of 4 anchors has 1 positive and 2 negatives
        assert_eq!(batch_all_triplets(&[0, 0, 1, 1]).len(), 8);
    }
}
