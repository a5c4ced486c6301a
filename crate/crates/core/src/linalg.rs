//! Dense vector helpers shared by the model, solvers and reweighting code.
//!
//! Everything works on plain `f64` slices. Reductions run in index order so
//! results are bitwise reproducible.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `‖a − b‖ / ‖b‖`, falling back to the absolute error when `b` is zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(&sub(a, b));
    let denom = norm(b);
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Pairwise (tree) summation of equally sized vectors.
///
/// Used where per-sample contributions are computed independently and need a
/// reduction whose rounding does not depend on thread scheduling.
pub fn pairwise_sum(parts: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; dim],
        1 => parts[0].clone(),
        len => {
            let (left, right) = parts.split_at(len / 2);
            let mut out = pairwise_sum(left, dim);
            let r = pairwise_sum(right, dim);
            axpy(1.0, &r, &mut out);
            out
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
