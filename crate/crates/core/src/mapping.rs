//! Linear maps between embedding spaces.
//!
//! A [`LinearMapping`] holds a square matrix `W` and maps row vectors as
//! `x ↦ x·W`. The adversarial trainer keeps both directions close to the
//! orthogonal group with [`LinearMapping::orthogonalize_step`]; refinement
//! replaces them wholesale with [`procrustes_solve`].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{haar_orthogonal, orthogonality_defect, svd_jacobi};
use crate::textmat;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMapping {
    weights: Array2<f64>,
}

impl LinearMapping {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(Error::Shape(format!(
                "mapping must be square and non-empty, got {:?}",
                weights.dim()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mapping weight".into()));
        }
        Ok(LinearMapping { weights })
    }

    pub fn identity(d: usize) -> Self {
        LinearMapping {
            weights: Array2::eye(d),
        }
    }

    /// A Haar-random orthogonal map.
    pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        LinearMapping {
            weights: haar_orthogonal(d, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    /// The transpose, which is the inverse when the map is orthogonal.
    pub fn transpose(&self) -> Self {
        LinearMapping {
            weights: self.weights.t().to_owned(),
        }
    }

    /// `rows · W`.
    pub fn apply(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "rows have {} columns, mapping is {}x{}",
                rows.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(rows.dot(&self.weights))
    }

    /// One step of `W ← (1+β)W − β(WWᵀ)W`, which pulls the singular values of
    /// `W` toward 1 and leaves orthogonal matrices fixed.
    pub fn orthogonalize_step(&mut self, beta: f64) {
        let w = &self.weights;
        let wwt_w = w.dot(&w.t()).dot(w);
        self.weights = w * (1.0 + beta) - wwt_w * beta;
    }

    /// ‖WᵀW − I‖_F.
    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(self.weights.view())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        textmat::write_square(BufWriter::new(file), self.weights.view())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(textmat::read_square(BufReader::new(file), path)?)
    }
}

/// Orthogonal Procrustes: the orthogonal `W` minimizing ‖source·W − target‖_F,
/// `W = UVᵀ` for `UΣVᵀ = SVD(sourceᵀ·target)`.
///
/// A rank-deficient cross-covariance still yields an orthogonal `W` (the
/// null-space block is completed arbitrarily) and logs a warning.
pub fn procrustes_solve(
    source_rows: ArrayView2<f64>,
    target_rows: ArrayView2<f64>,
) -> Result<LinearMapping> {
    if source_rows.dim() != target_rows.dim() {
        return Err(Error::Shape(format!(
            "paired rows differ in shape: {:?} vs {:?}",
            source_rows.dim(),
            target_rows.dim()
        )));
    }
    let d = source_rows.ncols();
    if d == 0 {
        return Err(Error::Shape("zero-dimensional rows".into()));
    }
    let cross = source_rows.t().dot(&target_rows);
    let svd = svd_jacobi(cross.view());
    if svd.rank < d {
        warn!(
            "procrustes: cross-covariance has rank {} < {d} ({} pairs); solution is not unique",
            svd.rank,
            source_rows.nrows()
        );
    }
    LinearMapping::new(svd.u.dot(&svd.v.t()))
}
