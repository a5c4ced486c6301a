//! Group fairness metrics and their differentiable surrogates.
//!
//! Group 0 and group 1 are the two values of the sensitive attribute. All
//! hard metrics come from [`Model::classify`]; a rate whose denominator is
//! zero is undefined, and any metric that needs it fails with
//! [`Error::UndefinedMetric`].

mod soft;

pub use soft::{
    discrepancy_and_grad, metric_discrepancy, soft_metric, soft_metric_grad, soft_tnr, soft_tpr, RateKind,
    SoftMetricConfig, SoftNoise,
};

use crate::data::{CellCounts, Dataset, GroupClassStats};
use crate::error::{Error, Result};
use crate::model::Model;
use serde::{Deserialize, Serialize};

/// Per-group true positive and true negative rates with their denominators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    tpr: [Option<f64>; 2],
    tnr: [Option<f64>; 2],
    /// Denominators, indexed `[label][group]`.
    pub counts: CellCounts,
}

impl GroupRates {
    /// Rates from hard predictions. All slices are aligned by row.
    pub fn from_predictions(labels: &[u8], groups: &[u8], predictions: &[u8]) -> Result<Self> {
        if labels.len() != groups.len() || labels.len() != predictions.len() {
            return Err(Error::Shape {
                expected: labels.len(),
                actual: groups.len().min(predictions.len()),
                context: "labels, groups and predictions",
            });
        }
        let mut counts = [[0usize; 2]; 2];
        let mut hits = [[0usize; 2]; 2];
        for ((&y, &g), &h) in labels.iter().zip(groups).zip(predictions) {
            counts[y as usize][g as usize] += 1;
            if h == y {
                hits[y as usize][g as usize] += 1;
            }
        }
        let rate = |y: usize, g: usize| (counts[y][g] > 0).then(|| hits[y][g] as f64 / counts[y][g] as f64);
        Ok(Self {
            tpr: [rate(1, 0), rate(1, 1)],
            tnr: [rate(0, 0), rate(0, 1)],
            counts: CellCounts(counts),
        })
    }

    /// Rates given directly, indexed by group. `counts` supplies the
    /// class-conditional statistics used by the accuracy rewriting.
    pub fn from_values(tpr: [f64; 2], tnr: [f64; 2], counts: CellCounts) -> Result<Self> {
        if tpr.iter().chain(&tnr).any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!(
                "rates must lie in [0, 1], got tpr={tpr:?} tnr={tnr:?}"
            )));
        }
        Ok(Self {
            tpr: tpr.map(Some),
            tnr: tnr.map(Some),
            counts,
        })
    }

    pub fn tpr(&self, group: u8) -> Result<f64> {
        self.tpr[group as usize].ok_or_else(|| undefined("TPR", group))
    }

    pub fn tnr(&self, group: u8) -> Result<f64> {
        self.tnr[group as usize].ok_or_else(|| undefined("TNR", group))
    }

    pub fn is_defined(&self) -> bool {
        self.tpr.iter().chain(&self.tnr).all(Option::is_some)
    }
}

fn undefined(what: &str, group: u8) -> Error {
    Error::UndefinedMetric(format!("{what} of group {group} has an empty denominator"))
}

fn require_groups(data: &Dataset) -> Result<&[u8]> {
    data.groups()
        .ok_or_else(|| Error::Config("fairness metrics need a dataset with group attributes".into()))
}

fn predictions(model: &Model, data: &Dataset) -> Result<Vec<u8>> {
    model.check_data(data)?;
    Ok(data
        .samples()
        .iter()
        .map(|z| model.classify_unchecked(&z.features))
        .collect())
}

pub fn group_rates(model: &Model, data: &Dataset) -> Result<GroupRates> {
    let groups = require_groups(data)?;
    let labels: Vec<u8> = data.labels().collect();
    GroupRates::from_predictions(&labels, groups, &predictions(model, data)?)
}

/// `½(|TPR₁ − TPR₀| + |TNR₁ − TNR₀|)`.
pub fn average_odds_difference(rates: &GroupRates) -> Result<f64> {
    Ok(0.5 * ((rates.tpr(1)? - rates.tpr(0)?).abs() + (rates.tnr(1)? - rates.tnr(0)?).abs()))
}

/// `|TPR₁ − TPR₀|`.
pub fn equal_opportunity_difference(rates: &GroupRates) -> Result<f64> {
    Ok((rates.tpr(1)? - rates.tpr(0)?).abs())
}

/// Fraction of correct predictions within each group.
pub fn group_accuracies(model: &Model, data: &Dataset) -> Result<[f64; 2]> {
    let groups = require_groups(data)?;
    let preds = predictions(model, data)?;
    let mut hits = [0usize; 2];
    let mut sizes = [0usize; 2];
    for ((z, &g), h) in data.samples().iter().zip(groups).zip(preds) {
        sizes[g as usize] += 1;
        hits[g as usize] += usize::from(h == z.label);
    }
    if sizes.contains(&0) {
        return Err(Error::UndefinedMetric(
            "accuracy difference needs both groups nonempty".into(),
        ));
    }
    Ok([hits[0] as f64 / sizes[0] as f64, hits[1] as f64 / sizes[1] as f64])
}

/// `|P(h = y | s = 0) − P(h = y | s = 1)|`.
pub fn accuracy_difference(model: &Model, data: &Dataset) -> Result<f64> {
    let [a0, a1] = group_accuracies(model, data)?;
    Ok((a0 - a1).abs())
}

/// Accuracy difference written through the group rates,
/// `|α·TPR₀ + (1−α)·TNR₀ − β·TPR₁ − (1−β)·TNR₁|`, with `α = P(y=1 | s=0)`
/// and `β = P(y=1 | s=1)` taken from the denominators.
pub fn accuracy_difference_from_rates(rates: &GroupRates) -> Result<f64> {
    let stats = GroupClassStats::from_cells(&rates.counts)?;
    let (a, b) = (stats.alpha, stats.beta);
    let acc0 = a * rates.tpr(0)? + (1.0 - a) * rates.tnr(0)?;
    let acc1 = b * rates.tpr(1)? + (1.0 - b) * rates.tnr(1)?;
    Ok((acc0 - acc1).abs())
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty dataset".into()));
    }
    let preds = predictions(model, data)?;
    let hits = data.labels().zip(preds).filter(|(y, h)| y == h).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Denominators of the four group rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denominators {
    pub positives_group0: usize,
    pub positives_group1: usize,
    pub negatives_group0: usize,
    pub negatives_group1: usize,
}

impl From<CellCounts> for Denominators {
    fn from(c: CellCounts) -> Self {
        Self {
            positives_group0: c.get(1, 0),
            positives_group1: c.get(1, 1),
            negatives_group0: c.get(0, 0),
            negatives_group1: c.get(0, 1),
        }
    }
}

/// Accuracy and fairness of a classifier on one annotated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub acc_group0: f64,
    pub acc_group1: f64,
    pub ad: f64,
    pub aod: f64,
    pub eod: f64,
    pub tpr0: f64,
    pub tpr1: f64,
    pub tnr0: f64,
    pub tnr1: f64,
    pub denominators: Denominators,
}

impl FairnessReport {
    pub fn evaluate(model: &Model, data: &Dataset) -> Result<Self> {
        let rates = group_rates(model, data)?;
        let [acc_group0, acc_group1] = group_accuracies(model, data)?;
        Ok(Self {
            accuracy: accuracy(model, data)?,
            acc_group0,
            acc_group1,
            ad: (acc_group0 - acc_group1).abs(),
            aod: average_odds_difference(&rates)?,
            eod: equal_opportunity_difference(&rates)?,
            tpr0: rates.tpr(0)?,
            tpr1: rates.tpr(1)?,
            tnr0: rates.tnr(0)?,
            tnr1: rates.tnr(1)?,
            denominators: rates.counts.into(),
        })
    }
}
