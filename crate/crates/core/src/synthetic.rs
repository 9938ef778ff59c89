//! Synthetic language pairs with a known answer.
//!
//! The target language is a noisy, rotated and shuffled copy of the source
//! language, so the true mapping and the gold dictionary are both known.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::evaluation::BilingualLexicon;
use crate::linalg::{determinant, haar_orthogonal, normalize_rows};
use crate::mapping::LinearMapping;

pub const SOURCE_FILE: &str = "src.vec";
pub const TARGET_FILE: &str = "tgt.vec";
pub const GOLD_FILE: &str = "gold.dict";

/// Shape of the source distribution before unit normalization. Each row is
/// `μ + z·diag(s)` expressed in a random orthonormal basis, where
/// - `s` decays geometrically from 1 to `1/anisotropy`,
/// - ‖μ‖ is `mean_offset` times the RMS axis scale, scaled by `√d`,
/// - the components of `z` are standard normal when `gamma_shape` is 0 and
///   standardized Gamma draws `(g − κ)/√κ` otherwise (skewness `2/√κ`).
///
/// An isotropic Gaussian cloud is invariant under every rotation, so no
/// distribution-matching method can recover the map from it. A Gaussian with
/// distinct axis scales still leaves every axis sign ambiguous; skewed
/// components remove that ambiguity as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceShape {
    pub anisotropy: f64,
    pub mean_offset: f64,
    pub gamma_shape: f64,
}

impl Default for SourceShape {
    fn default() -> Self {
        SourceShape {
            anisotropy: 30.0,
            mean_offset: 1.0,
            gamma_shape: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: EmbeddingSpace,
    pub target: EmbeddingSpace,
    pub gold: BilingualLexicon,
    /// The true map `Q`: gold target vectors are source vectors times `Q`.
    pub rotation: LinearMapping,
    pub noise_sigma: f64,
    /// `permutation[i]` is the target row holding source word `i`.
    pub permutation: Vec<usize>,
}

pub fn source_token(i: usize) -> String {
    format!("s{i}")
}

pub fn target_token(j: usize) -> String {
    format!("t{j}")
}

/// Generates a pair with the default [`SourceShape`].
pub fn generate(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticPair> {
    generate_with_shape(n, d, noise_sigma, seed, SourceShape::default())
}

pub fn generate_with_shape(
    n: usize,
    d: usize,
    noise_sigma: f64,
    seed: u64,
    shape: SourceShape,
) -> Result<SyntheticPair> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic pair needs n >= 2 and d >= 2, got n={n}, d={d}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    if !(shape.anisotropy >= 1.0 && shape.mean_offset >= 0.0 && shape.gamma_shape >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid source shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Restricted to det = +1 so the map is reachable from the identity by a
    // continuous path through near-orthogonal matrices.
    let mut q = haar_orthogonal(d, &mut rng);
    if determinant(q.view()) < 0.0 {
        q.column_mut(0).mapv_inplace(|v| -v);
    }

    let basis = haar_orthogonal(d, &mut rng);
    let scales = Array1::from_shape_fn(d, |k| {
        shape.anisotropy.powf(-(k as f64) / (d - 1) as f64)
    });
    let rms = (scales.dot(&scales) / d as f64).sqrt();
    let mut mean: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(&mut rng));
    let mean_norm = mean.dot(&mean).sqrt();
    mean *= shape.mean_offset * rms * (d as f64).sqrt() / mean_norm;

    let z = if shape.gamma_shape > 0.0 {
        let k = shape.gamma_shape;
        let gamma = rand_distr::Gamma::new(k, 1.0).unwrap();
        Array2::<f64>::from_shape_simple_fn((n, d), || (gamma.sample(&mut rng) - k) / k.sqrt())
    } else {
        Array2::<f64>::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    };
    let mut source = (z * &scales + &mean).dot(&basis.t());
    normalize_rows(&mut source)
        .map_err(|i| Error::InvalidArgument(format!("degenerate synthetic row {i}")))?;

    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng);

    let mapped = source.dot(&q);
    let mut target = Array2::<f64>::zeros((n, d));
    for (i, &j) in permutation.iter().enumerate() {
        target.row_mut(j).assign(&mapped.row(i));
    }
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).unwrap();
        target.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    normalize_rows(&mut target)
        .map_err(|i| Error::InvalidArgument(format!("degenerate synthetic row {i}")))?;

    let src_vocab: Vec<String> = (0..n).map(source_token).collect();
    let tgt_vocab: Vec<String> = (0..n).map(target_token).collect();
    let gold = BilingualLexicon::from_pairs(
        permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| (src_vocab[i].clone(), tgt_vocab[j].clone())),
    );

    Ok(SyntheticPair {
        source: EmbeddingSpace::new("src", src_vocab, source)?,
        target: EmbeddingSpace::new("tgt", tgt_vocab, target)?,
        gold,
        rotation: LinearMapping::new(q)?,
        noise_sigma,
        permutation,
    })
}

impl SyntheticPair {
    /// Writes `src.vec`, `tgt.vec` and `gold.dict` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.source.save_text(dir.join(SOURCE_FILE))?;
        self.target.save_text(dir.join(TARGET_FILE))?;
        self.gold.save(dir.join(GOLD_FILE))
    }
}
