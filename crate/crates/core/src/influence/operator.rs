use crate::data::Dataset;
use crate::model::{Curvature, Model};
use nalgebra::{DMatrix, DVector};

/// Symmetric curvature operator `H` of a mean training loss, accessed only
/// through matrix-vector products.
pub trait HessianOperator: Sync {
    fn dim(&self) -> usize;

    /// Number of terms `H` averages over; mini-batches index into `0..n`.
    fn num_samples(&self) -> usize;

    /// `H v`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// Unbiased estimate of `H v` from the listed terms (repeats allowed).
    fn apply_batch(&self, batch: &[usize], v: &[f64]) -> Vec<f64>;
}

/// Hessian (or Gauss-Newton matrix) of the mean loss `(1/n) Σ ℓ(zᵢ; θ)` at
/// the model's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelHessian<'a> {
    model: &'a Model,
    data: &'a Dataset,
    curvature: Curvature,
}

impl<'a> ModelHessian<'a> {
    /// Panics if the dataset is empty or its dimension does not match the
    /// model; callers validate shapes first.
    pub fn new(model: &'a Model, data: &'a Dataset, curvature: Curvature) -> Self {
        assert!(!data.is_empty(), "Hessian of an empty dataset");
        assert_eq!(model.input_dim(), data.dim(), "model and data dimensions differ");
        Self { model, data, curvature }
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }
}

impl HessianOperator for ModelHessian<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let w = 1.0 / self.data.len() as f64;
        let mut out = vec![0.0; self.dim()];
        for z in self.data.samples() {
            self.model.accumulate_sample_hvp(z, v, w, self.curvature, &mut out);
        }
        out
    }

    fn apply_batch(&self, batch: &[usize], v: &[f64]) -> Vec<f64> {
        let w = 1.0 / batch.len() as f64;
        let mut out = vec![0.0; self.dim()];
        for &i in batch {
            self.model
                .accumulate_sample_hvp(self.data.sample(i), v, w, self.curvature, &mut out);
        }
        out
    }
}

/// A fixed dense symmetric matrix as a single-term operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator(pub DMatrix<f64>);

impl DenseOperator {
    pub fn identity_scaled(dim: usize, scale: f64) -> Self {
        Self(DMatrix::identity(dim, dim) * scale)
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }
}

impl HessianOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    fn apply_batch(&self, _batch: &[usize], v: &[f64]) -> Vec<f64> {
        self.apply(v)
    }
}

/// Materialises `H + damping·I` column by column, symmetrised.
pub fn dense_matrix(op: &dyn HessianOperator, damping: f64) -> DMatrix<f64> {
    let p = op.dim();
    let mut m = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = op.apply(&e);
        m.set_column(j, &DVector::from_vec(col));
        e[j] = 0.0;
    }
    let mut sym = (&m + m.transpose()) * 0.5;
    for i in 0..p {
        sym[(i, i)] += damping;
    }
    sym
}
