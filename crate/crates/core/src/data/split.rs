use super::Dataset;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strata: (label, group) cells when groups are present, labels otherwise.
fn strata(data: &Dataset) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); 4];
    for i in 0..data.len() {
        let label = data.sample(i).label as usize;
        let group = data.group(i).unwrap_or(0) as usize;
        out[label * 2 + group].push(i);
    }
    out
}

/// Largest-remainder apportionment of `total` into parts proportional to
/// `fractions`.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut out: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[k] += 1;
        left -= 1;
    }
    out
}

/// Per-stratum quotas whose split totals equal the global apportionment and
/// whose per-stratum counts stay within one sample of proportional.
fn stratified_quotas(sizes: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    let targets = apportion(total, fractions);
    let parts = fractions.len();
    let mut quotas: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&n| fractions.iter().map(|f| (f * n as f64).floor() as usize).collect())
        .collect();

    let mut cell_left: Vec<usize> = sizes
        .iter()
        .zip(&quotas)
        .map(|(&n, q)| n - q.iter().sum::<usize>())
        .collect();
    let mut split_left: Vec<usize> = (0..parts)
        .map(|p| targets[p] - quotas.iter().map(|q| q[p]).sum::<usize>())
        .collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for (p, f) in fractions.iter().enumerate() {
            let ideal = f * n as f64;
            candidates.push((ideal - ideal.floor(), c, p));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, p) in &candidates {
        if cell_left[c] > 0 && split_left[p] > 0 {
            quotas[c][p] += 1;
            cell_left[c] -= 1;
            split_left[p] -= 1;
        }
    }
    // Leftovers only occur when the greedy pass paints itself into a corner.
    for c in 0..sizes.len() {
        while cell_left[c] > 0 {
            let p = (0..parts).find(|&p| split_left[p] > 0).expect("totals agree");
            quotas[c][p] += 1;
            cell_left[c] -= 1;
            split_left[p] -= 1;
        }
    }
    quotas
}

/// Stratified train/validation/test partition. Each output keeps the input
/// row order.
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata = strata(data);
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, &fractions);

    let mut assigned: [Vec<usize>; 3] = Default::default();
    for (members, quota) in strata.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        let mut start = 0;
        for (p, &q) in quota.iter().enumerate() {
            assigned[p].extend_from_slice(&members[start..start + q]);
            start += q;
        }
    }
    Ok(assigned.map(|mut idx| {
        idx.sort_unstable();
        data.subset(&idx)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub data: Dataset,
    /// Human-readable notes, e.g. cells that were emptied.
    pub warnings: Vec<String>,
}

impl Subsample {
    pub fn emptied_cell(&self) -> bool {
        !self.warnings.is_empty()
    }
}

/// Keeps `round(fraction * |cell|)` randomly chosen rows of every
/// (label, group) cell.
pub fn subsample_validation(val: &Dataset, fraction: f64, seed: u64) -> Result<Subsample> {
    if !val.has_groups() {
        return Err(Error::Config("validation subsampling needs group attributes".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut warnings = Vec::new();
    for (k, mut members) in strata(val).into_iter().enumerate() {
        let target = (fraction * members.len() as f64).round() as usize;
        if target == 0 && !members.is_empty() {
            warnings.push(format!(
                "cell (label={}, group={}) emptied: {} rows at fraction {fraction}",
                k / 2,
                k % 2,
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..target]);
    }
    keep.sort_unstable();
    Ok(Subsample {
        data: val.subset(&keep),
        warnings,
    })
}
