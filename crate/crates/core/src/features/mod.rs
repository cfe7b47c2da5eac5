//! HOG descriptors, the dense patch grid, Euclidean distance and HOG-based KNN.

pub mod cache;
mod hog;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hog::{hog, HogConfig, HogField};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGridConfig {
    pub patch_px: usize,
    pub stride_px: usize,
}

impl Default for PatchGridConfig {
    fn default() -> Self {
        Self {
            patch_px: 32,
            stride_px: 8,
        }
    }
}

/// Patch positions over a square canonical frame, expressed in HOG cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub positions_x: usize,
    pub positions_y: usize,
    pub patch_cells: usize,
    pub stride_cells: usize,
    pub cell_px: usize,
}

impl PatchGrid {
    /// Patches and strides must be whole cells so every patch is a cell-aligned window.
    pub fn new(cfg: &PatchGridConfig, hog: &HogConfig, width: usize, height: usize) -> Result<Self> {
        hog.validate()?;
        if cfg.patch_px == 0 || cfg.stride_px == 0 {
            return Err(Error::InvalidConfig("patch_px and stride_px must be >= 1".into()));
        }
        if cfg.patch_px % hog.cell_px != 0 || cfg.stride_px % hog.cell_px != 0 {
            return Err(Error::InvalidConfig(format!(
                "patch_px ({}) and stride_px ({}) must be multiples of cell_px ({})",
                cfg.patch_px, cfg.stride_px, hog.cell_px
            )));
        }
        if cfg.patch_px > width || cfg.patch_px > height {
            return Err(Error::InvalidConfig(format!(
                "patch_px {} exceeds the {width}x{height} frame",
                cfg.patch_px
            )));
        }
        Ok(Self {
            positions_x: (width - cfg.patch_px) / cfg.stride_px + 1,
            positions_y: (height - cfg.patch_px) / cfg.stride_px + 1,
            patch_cells: cfg.patch_px / hog.cell_px,
            stride_cells: cfg.stride_px / hog.cell_px,
            cell_px: hog.cell_px,
        })
    }

    pub fn len(&self) -> usize {
        self.positions_x * self.positions_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positions in row-major `(x, y)` order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.positions_y).flat_map(move |y| (0..self.positions_x).map(move |x| (x, y)))
    }

    pub fn feature_len(&self, bins: usize) -> usize {
        self.patch_cells * self.patch_cells * bins
    }

    /// Pixel extent `[x0, x1) × [y0, y1)` of the patch at `pos`.
    pub fn pixel_rect(&self, pos: (usize, usize)) -> (usize, usize, usize, usize) {
        let step = self.stride_cells * self.cell_px;
        let side = self.patch_cells * self.cell_px;
        let (x0, y0) = (pos.0 * step, pos.1 * step);
        (x0, y0, x0 + side, y0 + side)
    }
}

/// A HOG field viewed through the patch grid: `F(x, y)` per grid position.
#[derive(Clone, Debug)]
pub struct FeatureGrid<'a> {
    pub field: &'a HogField,
    pub grid: PatchGrid,
}

impl FeatureGrid<'_> {
    pub fn patch_feature(&self, pos: (usize, usize)) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.grid.feature_len(self.field.bins));
        self.patch_feature_into(pos, &mut out)?;
        Ok(out)
    }

    /// Concatenates the cell histograms under the patch window, row by row.
    pub fn patch_feature_into(&self, pos: (usize, usize), out: &mut Vec<f64>) -> Result<()> {
        if pos.0 >= self.grid.positions_x || pos.1 >= self.grid.positions_y {
            return Err(Error::Shape(format!(
                "position {pos:?} is off the {}x{} patch grid",
                self.grid.positions_x, self.grid.positions_y
            )));
        }
        let (cx0, cy0) = (pos.0 * self.grid.stride_cells, pos.1 * self.grid.stride_cells);
        if cx0 + self.grid.patch_cells > self.field.cells_x
            || cy0 + self.grid.patch_cells > self.field.cells_y
        {
            return Err(Error::Shape("patch window exceeds the HOG field".into()));
        }
        out.clear();
        for cy in cy0..cy0 + self.grid.patch_cells {
            for cx in cx0..cx0 + self.grid.patch_cells {
                out.extend(self.field.cell(cx, cy).iter().map(|&v| v as f64));
            }
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b).sqrt())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct BankEntry {
    pub source_id: u64,
    pub model_id: u64,
    pub identity_id: u64,
    pub field: HogField,
}

/// HOG fields for every image of a dataset, plus the shared patch grid.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    pub hog: HogConfig,
    pub grid: PatchGrid,
    entries: Vec<BankEntry>,
    index: HashMap<u64, usize>,
}

impl FeatureBank {
    pub fn build(dataset: &Dataset, hog_cfg: &HogConfig, grid_cfg: &PatchGridConfig) -> Result<Self> {
        Self::build_with_cache(dataset, hog_cfg, grid_cfg, None)
    }

    /// As [`FeatureBank::build`], reading and writing per-image blobs under `cache_dir`.
    pub fn build_with_cache(
        dataset: &Dataset,
        hog_cfg: &HogConfig,
        grid_cfg: &PatchGridConfig,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let first = dataset
            .images()
            .first()
            .ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
        let (w, h) = (first.pixels.width(), first.pixels.height());
        let grid = PatchGrid::new(grid_cfg, hog_cfg, w, h)?;
        let mut entries = Vec::with_capacity(dataset.len());
        let mut index = HashMap::with_capacity(dataset.len());
        for img in dataset.images() {
            if img.pixels.width() != w || img.pixels.height() != h {
                return Err(Error::Shape(format!(
                    "image {} is {}x{}, expected the canonical {w}x{h}",
                    img.source_id,
                    img.pixels.width(),
                    img.pixels.height()
                )));
            }
            let field = match cache_dir {
                Some(dir) => cache::load_or_compute(dir, img, hog_cfg)?,
                None => hog(&img.pixels, hog_cfg)?,
            };
            index.insert(img.source_id, entries.len());
            entries.push(BankEntry {
                source_id: img.source_id,
                model_id: img.model_id,
                identity_id: img.identity_id,
                field,
            });
        }
        Ok(Self {
            hog: hog_cfg.clone(),
            grid,
            entries,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn entry(&self, source_id: u64) -> Result<&BankEntry> {
        self.index
            .get(&source_id)
            .map(|&i| &self.entries[i])
            .ok_or(Error::UnknownImage(source_id))
    }

    pub fn feature_grid(&self, source_id: u64) -> Result<FeatureGrid<'_>> {
        Ok(FeatureGrid {
            field: &self.entry(source_id)?.field,
            grid: self.grid,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub source_id: u64,
    pub distance: f64,
}

/// The `k` images nearest to `seed` by whole-image HOG distance, seed excluded,
/// ascending by distance with ties broken by ascending source id.
pub fn knn(bank: &FeatureBank, seed: u64, k: usize) -> Result<Vec<Neighbor>> {
    let pool: Vec<u64> = bank.entries.iter().map(|e| e.source_id).collect();
    knn_within(bank, seed, k, &pool)
}

/// [`knn`] restricted to the candidate ids in `pool` (the seed may or may not be listed).
pub fn knn_within(bank: &FeatureBank, seed: u64, k: usize, pool: &[u64]) -> Result<Vec<Neighbor>> {
    let seed_desc = bank.entry(seed)?.field.descriptor();
    let mut scored = Vec::with_capacity(pool.len());
    for &id in pool {
        if id == seed {
            continue;
        }
        let d = sq_dist_f32(seed_desc, bank.entry(id)?.field.descriptor()).sqrt();
        scored.push(Neighbor {
            source_id: id,
            distance: d,
        });
    }
    if k > scored.len() || k >= bank.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} but only {} candidates besides the seed",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.source_id.cmp(&b.source_id))
    });
    scored.truncate(k);
    Ok(scored)
}
