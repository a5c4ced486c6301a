//! Synthetic stand-in for the Adult census table.
//!
//! Cell counts follow the real table (group 0 = female, group 1 = male,
//! label 1 = income above 50K); features are Gaussian clusters in which
//! income is much harder to predict for group 1.

use super::scenario::{generate_cells, ClusterLayout, FeatureSpec};
use super::{CellCounts, Dataset};
use crate::error::Result;

/// `[label][group]` counts of the Adult table.
pub const ADULT_CELLS: CellCounts = CellCounts([[13026, 20988], [1669, 9539]]);

pub const ADULT_DIM: usize = 8;

impl ClusterLayout {
    pub fn adult_like() -> Self {
        Self {
            class_separation: 3.0,
            group_offset: 3.0,
            group1_shift: 0.0,
            group1_rotation_deg: 0.0,
            group1_signal: 0.4,
            noise_scale: 1.0,
        }
    }
}

/// Adult-proportioned data, optionally scaled down. Each cell keeps at
/// least one row.
pub fn generate_adult_like(scale: f64, seed: u64) -> Result<Dataset> {
    let cells = CellCounts(
        ADULT_CELLS
            .0
            .map(|row| row.map(|c| ((c as f64 * scale).round() as usize).max(1))),
    );
    generate_cells(
        &cells,
        &FeatureSpec::with_layout(ADULT_DIM, &ClusterLayout::adult_like()),
        seed,
    )
}
