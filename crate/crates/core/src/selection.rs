//! Unsupervised model selection.
//!
//! `S(W, X, Y)` translates the most frequent source words with CSLS under `W`
//! and averages the cosine between each mapped word and its translation.
//! `S_a` weights the two directions: `λ·S(F, X, Y) + (1−λ)·S(G, Y, X)`.

use log::warn;

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::mapping::LinearMapping;
use crate::retrieval::{CslsIndex, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub lambda: f64,
    pub eval_vocab: usize,
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            lambda: 0.5,
            eval_vocab: 10_000,
            k: DEFAULT_K,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "selection lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.eval_vocab == 0 {
            return Err(Error::InvalidArgument("eval_vocab must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScore {
    pub forward: f64,
    pub backward: f64,
    pub combined: f64,
}

/// Mean cosine between mapped source words and their CSLS translations, over
/// the `eval_vocab` most frequent words of each side.
pub fn criterion_s(
    map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &SelectionConfig,
) -> Result<f64> {
    cfg.validate()?;
    if cfg.eval_vocab > src.len() || cfg.eval_vocab > tgt.len() {
        warn!(
            "selection: eval_vocab {} clamped to vocabulary sizes ({}, {})",
            cfg.eval_vocab,
            src.len(),
            tgt.len()
        );
    }
    let mapped = map.apply(src.prefix(cfg.eval_vocab))?;
    let index = CslsIndex::build(mapped.view(), tgt.prefix(cfg.eval_vocab), cfg.k)?;
    let queries: Vec<usize> = (0..index.source_len()).collect();
    let hits = index.translate(&queries)?;
    let total: f64 = hits
        .iter()
        .enumerate()
        .map(|(i, &j)| index.cosine(i, j))
        .sum();
    Ok(total / queries.len() as f64)
}

/// `λ·S(F, src, tgt) + (1−λ)·S(G, tgt, src)`.
pub fn criterion_sa(
    f_map: &LinearMapping,
    g_map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &SelectionConfig,
) -> Result<SelectionScore> {
    let forward = criterion_s(f_map, src, tgt, cfg)?;
    let backward = criterion_s(g_map, tgt, src, cfg)?;
    Ok(SelectionScore {
        forward,
        backward,
        combined: combine(cfg.lambda, forward, backward),
    })
}

pub fn combine(lambda: f64, forward: f64, backward: f64) -> f64 {
    lambda * forward + (1.0 - lambda) * backward
}
