//! Labelled image collections: synthetic generation, manifest ingestion and
//! probe/gallery split construction.

mod manifest;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap};

pub use manifest::{load_manifest, summarize_manifest, LoadReport, ManifestRow, ManifestSummary, SkippedRow};
pub use split::{build_reid_split, build_retrieval_split, holdout_by_identity, EvalSplit, SplitMode};
pub use synth::{export_synthetic, generate_synthetic, GroundTruth, IdentityTruth, ModelTruth, SynthConfig};

use crate::error::{Error, Result};
use crate::image::LabeledImage;

/// Default side of the square frame all images are resampled to.
pub const CANONICAL_SIZE: usize = 128;

/// Immutable set of labelled images. Every identity belongs to exactly one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<LabeledImage>,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>) -> Result<Self> {
        let mut index = HashMap::with_capacity(images.len());
        let mut hierarchy: HashMap<u64, u64> = HashMap::new();
        for (i, img) in images.iter().enumerate() {
            if index.insert(img.source_id, i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate source id {}",
                    img.source_id
                )));
            }
            match hierarchy.insert(img.identity_id, img.model_id) {
                Some(m) if m != img.model_id => {
                    return Err(Error::InconsistentHierarchy(img.identity_id))
                }
                _ => {}
            }
        }
        Ok(Self { images, index })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn get(&self, source_id: u64) -> Result<&LabeledImage> {
        self.index
            .get(&source_id)
            .map(|&i| &self.images[i])
            .ok_or(Error::UnknownImage(source_id))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.images.iter().map(|i| i.source_id)
    }

    /// identity → source ids, both in ascending order.
    pub fn identities(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for img in &self.images {
            out.entry(img.identity_id).or_default().push(img.source_id);
        }
        for ids in out.values_mut() {
            ids.sort_unstable();
        }
        out
    }

    /// model → source ids, both in ascending order.
    pub fn models(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for img in &self.images {
            out.entry(img.model_id).or_default().push(img.source_id);
        }
        for ids in out.values_mut() {
            ids.sort_unstable();
        }
        out
    }

    /// identity → model. A function by construction.
    pub fn hierarchy(&self) -> BTreeMap<u64, u64> {
        self.images
            .iter()
            .map(|i| (i.identity_id, i.model_id))
            .collect()
    }

    /// Keeps the images whose labels satisfy `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledImage) -> bool) -> Dataset {
        let images: Vec<_> = self.images.iter().filter(|i| keep(i)).cloned().collect();
        Dataset::new(images).expect("a subset of a valid dataset is valid")
    }
}
