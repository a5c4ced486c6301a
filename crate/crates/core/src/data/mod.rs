//! Datasets, CSV ingestion, bias scenarios and stratified splitting.

mod csv_io;
mod scenario;
mod split;
mod tabular;

pub use csv_io::{load_csv, load_csv_auto, write_csv, CsvSchema, FeatureColumns};
pub(crate) use scenario::sizes_equal;
pub use scenario::{
    generate_cells, generate_synthetic, validate_scenario, BiasKind, BiasScenario, ClusterLayout, FeatureSpec,
    ScenarioFile, RATE_TOLERANCE, SIZE_TOLERANCE,
};
pub use split::{split, subsample_validation, Subsample};
pub use tabular::{generate_adult_like, ADULT_CELLS, ADULT_DIM};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: u8) -> Self {
        Self { features, label }
    }
}

/// An ordered collection of samples sharing one feature dimension.
///
/// Group attributes are either present for every sample or for none.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
    groups: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>, groups: Option<Vec<u8>>) -> Result<Self> {
        for (row, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::Format(format!(
                    "sample {row} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label > 1 {
                return Err(Error::Parse {
                    row,
                    message: format!("label {} is not binary", s.label),
                });
            }
            if let Some(bad) = s.features.iter().position(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    row,
                    message: format!("feature {bad} is not finite"),
                });
            }
        }
        if let Some(g) = &groups {
            if g.len() != samples.len() {
                return Err(Error::Shape {
                    expected: samples.len(),
                    actual: g.len(),
                    context: "group attribute count",
                });
            }
            if let Some(row) = g.iter().position(|&v| v > 1) {
                return Err(Error::Parse {
                    row,
                    message: format!("group {} is not binary", g[row]),
                });
            }
        }
        Ok(Self { dim, samples, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn has_groups(&self) -> bool {
        self.groups.is_some()
    }

    pub fn groups(&self) -> Option<&[u8]> {
        self.groups.as_deref()
    }

    pub fn group(&self, i: usize) -> Option<u8> {
        self.groups.as_ref().map(|g| g[i])
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// Drops the group column, e.g. to mimic a training set without
    /// sensitive annotations.
    pub fn without_groups(&self) -> Dataset {
        Dataset {
            dim: self.dim,
            samples: self.samples.clone(),
            groups: None,
        }
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Row indices with the given label and group.
    pub fn cell_indices(&self, label: u8, group: u8) -> Vec<usize> {
        match &self.groups {
            None => Vec::new(),
            Some(g) => (0..self.len())
                .filter(|&i| self.samples[i].label == label && g[i] == group)
                .collect(),
        }
    }

    /// Row indices belonging to a sensitive group.
    pub fn group_indices(&self, group: u8) -> Vec<usize> {
        match &self.groups {
            None => Vec::new(),
            Some(g) => (0..self.len()).filter(|&i| g[i] == group).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut out = [0, 0];
        for s in &self.samples {
            out[s.label as usize] += 1;
        }
        out
    }

    /// Counts per (label, group) cell; `None` without group attributes.
    pub fn cell_counts(&self) -> Option<CellCounts> {
        let g = self.groups.as_ref()?;
        let mut cells = [[0usize; 2]; 2];
        for (s, &grp) in self.samples.iter().zip(g) {
            cells[s.label as usize][grp as usize] += 1;
        }
        Some(CellCounts(cells))
    }
}

/// Sample counts indexed by `[label][group]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts(pub [[usize; 2]; 2]);

impl CellCounts {
    pub fn get(&self, label: u8, group: u8) -> usize {
        self.0[label as usize][group as usize]
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn class_sizes(&self) -> [usize; 2] {
        [self.0[0][0] + self.0[0][1], self.0[1][0] + self.0[1][1]]
    }

    pub fn group_sizes(&self) -> [usize; 2] {
        [self.0[0][0] + self.0[1][0], self.0[0][1] + self.0[1][1]]
    }
}

/// Class-conditional statistics of a two-group, two-class table.
///
/// `alpha = P(y=1 | s=0)` and `beta = P(y=1 | s=1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupClassStats {
    pub alpha: f64,
    pub beta: f64,
    pub group_sizes: [usize; 2],
    pub class_sizes: [usize; 2],
}

impl GroupClassStats {
    pub fn from_cells(cells: &CellCounts) -> Result<Self> {
        let group_sizes = cells.group_sizes();
        if group_sizes.contains(&0) {
            return Err(Error::UndefinedMetric(
                "class-conditional rates need both groups nonempty".into(),
            ));
        }
        Ok(Self {
            alpha: cells.get(1, 0) as f64 / group_sizes[0] as f64,
            beta: cells.get(1, 1) as f64 / group_sizes[1] as f64,
            group_sizes,
            class_sizes: cells.class_sizes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let samples = vec![
            Sample::new(vec![0.0], 0),
            Sample::new(vec![1.0], 1),
            Sample::new(vec![2.0], 1),
            Sample::new(vec![3.0], 0),
        ];
        Dataset::new(1, samples, Some(vec![0, 0, 1, 1])).unwrap()
    }

    #[test]
    fn cells_and_stats() {
        let d = toy();
        let cells = d.cell_counts().unwrap();
        assert_eq!(cells.0, [[1, 1], [1, 1]]);
        let stats = GroupClassStats::from_cells(&cells).unwrap();
        assert_eq!(stats.alpha, 0.5);
        assert_eq!(stats.beta, 0.5);
        assert_eq!(d.cell_indices(1, 1), vec![2]);
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = vec![Sample::new(vec![f64::NAN], 0)];
        assert!(matches!(Dataset::new(1, bad, None), Err(Error::Parse { row: 0, .. })));
        let ragged = vec![Sample::new(vec![1.0, 2.0], 0)];
        assert!(matches!(Dataset::new(1, ragged, None), Err(Error::Format(_))));
        let groups = vec![Sample::new(vec![1.0], 0)];
        assert!(Dataset::new(1, groups, Some(vec![2])).is_err());
    }

    #[test]
    fn subset_keeps_groups() {
        let d = toy().subset(&[3, 1]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.groups(), Some(&[1u8, 0][..]));
        assert_eq!(d.sample(0).features, vec![3.0]);
    }
}
