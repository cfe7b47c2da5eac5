//! Discriminative part mining: score maps, top-patch bounding rectangles and the
//! canonical `part_m` / `part_i` regions used to crop stream inputs.

mod crop;
mod mine;
mod parts_file;
mod region;
mod render;
mod score;

pub use crop::crop_part;
pub use mine::{
    bounding_rect, canonical_parts, canonical_parts_from_seeds, median_rect, mine_part, neighborhood, sample_seeds,
    score_map, CanonicalParts, MinedPart, MiningConfig, ScoreMap,
};
pub use parts_file::{PartsFile, Provenance};
pub use region::{PartRegion, PartRole, Rect};
pub use render::{overlay_regions, render_heatmap};
pub use score::{score, score_eq1, score_eq2, score_eq3, PatchSample, Score, ScoreVariant};
