use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::region::{PartRegion, PartRole, Rect};
use super::score::{score, PatchSample, ScoreVariant};
use crate::error::{Error, Result};
use crate::features::{knn_within, FeatureBank};
use crate::util::{median, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// KNN neighbourhood size `M`.
    pub neighbors_m: usize,
    pub top_n: usize,
    pub epsilon: f64,
    /// Seeds drawn from each model class when aggregating canonical parts.
    pub seeds_per_class: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            neighbors_m: 50,
            top_n: 6,
            epsilon: 1e-6,
            seeds_per_class: 16,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 || self.neighbors_m == 0 || self.seeds_per_class == 0 {
            return Err(Error::InvalidConfig(
                "top_n, neighbors_m and seeds_per_class must be >= 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// `d(x, y)` over the patch grid for one seed and neighbourhood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub variant: ScoreVariant,
    pub seed_id: u64,
    pub neighbor_ids: Vec<u64>,
    pub positions_x: usize,
    pub positions_y: usize,
    /// Row-major over `(x, y)`.
    pub scores: Vec<f64>,
    pub saturated: Vec<bool>,
}

impl ScoreMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.positions_x + x]
    }

    /// The `n` best positions: score descending, then `y` ascending, then `x` ascending.
    pub fn top_positions(&self, n: usize) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then((a / self.positions_x).cmp(&(b / self.positions_x)))
                .then((a % self.positions_x).cmp(&(b % self.positions_x)))
        });
        order
            .into_iter()
            .take(n)
            .map(|i| (i % self.positions_x, i / self.positions_x))
            .collect()
    }
}

pub fn score_map(bank: &FeatureBank, seed: u64, neighbors: &[u64], variant: ScoreVariant, epsilon: f64) -> Result<ScoreMap> {
    let seed_entry = bank.entry(seed)?;
    let seed_grid = bank.feature_grid(seed)?;
    let neighbor_entries = neighbors
        .iter()
        .map(|&id| bank.entry(id))
        .collect::<Result<Vec<_>>>()?;
    let grid = bank.grid;
    let mut seed_feat = Vec::new();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); neighbors.len()];
    let mut scores = Vec::with_capacity(grid.len());
    let mut saturated = Vec::with_capacity(grid.len());
    for pos in grid.positions() {
        seed_grid.patch_feature_into(pos, &mut seed_feat)?;
        for (buf, &id) in feats.iter_mut().zip(neighbors) {
            bank.feature_grid(id)?.patch_feature_into(pos, buf)?;
        }
        let samples: Vec<PatchSample> = feats
            .iter()
            .zip(&neighbor_entries)
            .map(|(f, e)| PatchSample {
                feature: f,
                model_id: e.model_id,
                identity_id: e.identity_id,
            })
            .collect();
        let s = score(
            variant,
            &PatchSample {
                feature: &seed_feat,
                model_id: seed_entry.model_id,
                identity_id: seed_entry.identity_id,
            },
            &samples,
            epsilon,
        )?;
        scores.push(s.value);
        saturated.push(s.saturated);
    }
    Ok(ScoreMap {
        variant,
        seed_id: seed,
        neighbor_ids: neighbors.to_vec(),
        positions_x: grid.positions_x,
        positions_y: grid.positions_y,
        scores,
        saturated,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedPart {
    pub region: PartRegion,
    pub map: ScoreMap,
    pub top: Vec<(usize, usize)>,
}

/// Minimum bounding rectangle of the given patch positions, normalized.
pub fn bounding_rect(bank: &FeatureBank, positions: &[(usize, usize)], width: usize, height: usize) -> Result<Rect> {
    let rects: Vec<_> = positions.iter().map(|&p| bank.grid.pixel_rect(p)).collect();
    let x0 = rects.iter().map(|r| r.0).min().ok_or(Error::InsufficientData("no positions".into()))?;
    let y0 = rects.iter().map(|r| r.1).min().unwrap();
    let x1 = rects.iter().map(|r| r.2).max().unwrap();
    let y1 = rects.iter().map(|r| r.3).max().unwrap();
    Rect::from_pixels(x0, y0, x1, y1, width, height)
}

/// KNN neighbourhood for `variant`. Eq3 draws only from the seed's own model.
pub fn neighborhood(bank: &FeatureBank, seed: u64, cfg: &MiningConfig, variant: ScoreVariant) -> Result<Vec<u64>> {
    let seed_model = bank.entry(seed)?.model_id;
    let pool: Vec<u64> = bank
        .entries()
        .iter()
        .filter(|e| variant != ScoreVariant::Eq3 || e.model_id == seed_model)
        .map(|e| e.source_id)
        .collect();
    let k = cfg.neighbors_m.min(pool.len().saturating_sub(1));
    Ok(knn_within(bank, seed, k, &pool)?
        .into_iter()
        .map(|n| n.source_id)
        .collect())
}

pub fn mine_part(bank: &FeatureBank, seed: u64, cfg: &MiningConfig, variant: ScoreVariant) -> Result<MinedPart> {
    cfg.validate()?;
    let neighbors = neighborhood(bank, seed, cfg, variant)?;
    let map = score_map(bank, seed, &neighbors, variant, cfg.epsilon)?;
    let top = map.top_positions(cfg.top_n);
    let side_x = bank.entry(seed)?.field.cells_x * bank.grid.cell_px;
    let side_y = bank.entry(seed)?.field.cells_y * bank.grid.cell_px;
    let rect = bounding_rect(bank, &top, side_x, side_y)?;
    let role = match variant {
        ScoreVariant::Eq3 => PartRole::PartI,
        _ => PartRole::PartM,
    };
    Ok(MinedPart {
        region: PartRegion {
            rect,
            role,
            provenance: vec![seed],
        },
        map,
        top,
    })
}

/// Coordinate-wise median of rectangles.
pub fn median_rect(rects: &[Rect]) -> Result<Rect> {
    if rects.is_empty() {
        return Err(Error::InsufficientData("no rectangles to aggregate".into()));
    }
    let coord = |f: fn(&Rect) -> f64| median(&rects.iter().map(f).collect::<Vec<_>>());
    Rect::new(coord(|r| r.x0), coord(|r| r.y0), coord(|r| r.x1), coord(|r| r.y1))
}

#[derive(Clone, Debug)]
pub struct CanonicalParts {
    pub part_m: PartRegion,
    pub part_i: PartRegion,
    /// Successful per-seed results, part_m seeds first.
    pub mined: Vec<MinedPart>,
}

/// Seeds: up to `seeds_per_class` images per model, drawn with `rng_seed`.
pub fn sample_seeds(bank: &FeatureBank, cfg: &MiningConfig, rng_seed: u64) -> Vec<u64> {
    let mut by_model: std::collections::BTreeMap<u64, Vec<u64>> = Default::default();
    for e in bank.entries() {
        by_model.entry(e.model_id).or_default().push(e.source_id);
    }
    let mut rng = rng_for(rng_seed, 0x3ee0);
    let mut seeds = Vec::new();
    for ids in by_model.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        seeds.extend(ids.iter().take(cfg.seeds_per_class));
    }
    seeds
}

fn is_precondition(e: &Error) -> bool {
    matches!(
        e,
        Error::NoInterClassContrast
            | Error::InsufficientIntraClass
            | Error::OutOfModelNeighbor(_)
            | Error::InvalidConfig(_)
    )
}

fn aggregate(bank: &FeatureBank, seeds: &[u64], cfg: &MiningConfig, variant: ScoreVariant, mined: &mut Vec<MinedPart>) -> Result<PartRegion> {
    let mut rects = Vec::new();
    let mut provenance = Vec::new();
    let mut last_err = None;
    for &seed in seeds {
        match mine_part(bank, seed, cfg, variant) {
            Ok(part) => {
                rects.push(part.region.rect);
                provenance.push(seed);
                mined.push(part);
            }
            Err(e) if is_precondition(&e) => {
                log::debug!("seed {seed} skipped for {variant:?}: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    if rects.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::InsufficientData("no seeds".into())));
    }
    if rects.len() < seeds.len() {
        log::warn!(
            "{variant:?}: {} of {} seeds failed their preconditions",
            seeds.len() - rects.len(),
            seeds.len()
        );
    }
    Ok(PartRegion {
        rect: median_rect(&rects)?,
        role: if variant == ScoreVariant::Eq3 {
            PartRole::PartI
        } else {
            PartRole::PartM
        },
        provenance,
    })
}

pub fn canonical_parts(bank: &FeatureBank, cfg: &MiningConfig, rng_seed: u64) -> Result<CanonicalParts> {
    cfg.validate()?;
    let seeds = sample_seeds(bank, cfg, rng_seed);
    canonical_parts_from_seeds(bank, cfg, &seeds)
}

pub fn canonical_parts_from_seeds(bank: &FeatureBank, cfg: &MiningConfig, seeds: &[u64]) -> Result<CanonicalParts> {
    let mut mined = Vec::new();
    let part_m = aggregate(bank, seeds, cfg, ScoreVariant::Eq2, &mut mined)?;
    let part_i = aggregate(bank, seeds, cfg, ScoreVariant::Eq3, &mut mined)?;
    Ok(CanonicalParts {
        part_m,
        part_i,
        mined,
    })
}
