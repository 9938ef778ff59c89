//! Cross-domain similarity local scaling (CSLS) retrieval.
//!
//! `CSLS(i, j) = 2·cos(s_i, t_j) − r_source[i] − r_target[j]`, where
//! `r_source[i]` is the mean cosine between mapped source row `i` and its `k`
//! nearest target rows, and `r_target[j]` the same for target row `j` against
//! the mapped source rows. Hub vectors with dense neighborhoods get penalized.
//!
//! Everything is exact: similarities are computed as dense blocked products
//! and ties go to the lowest id.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::normalize_rows;

pub const DEFAULT_K: usize = 10;

const BLOCK_ROWS: usize = 256;

#[derive(Debug, Clone)]
pub struct CslsIndex {
    mapped_source: Array2<f64>,
    target: Array2<f64>,
    k: usize,
    r_source: Array1<f64>,
    r_target: Array1<f64>,
}

/// Runs `f(i, a_i·Bᵀ)` for every row `i` of `a`, in parallel over row blocks,
/// returning results in row order.
pub(crate) fn map_similarity_rows<T, F>(a: ArrayView2<f64>, b: ArrayView2<f64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, ArrayView1<f64>) -> T + Sync,
{
    let n = a.nrows();
    let starts: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
    let bt = b.t();
    let blocks: Vec<Vec<T>> = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + BLOCK_ROWS).min(n);
            let sims = a.slice(s![start..end, ..]).dot(&bt);
            (start..end)
                .map(|i| f(i, sims.row(i - start)))
                .collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

/// Mean of the `k` largest entries (all of them if fewer), summed in
/// descending order so the result does not depend on input order.
pub(crate) fn mean_top_k(values: ArrayView1<f64>, k: usize) -> f64 {
    let k = k.min(values.len());
    if k == 0 {
        return 0.0;
    }
    let mut buf: Vec<f64> = values.iter().copied().collect();
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        buf.truncate(k);
    }
    buf.sort_unstable_by(|a, b| b.total_cmp(a));
    buf.iter().sum::<f64>() / k as f64
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    best
}

fn unit_rows(m: ArrayView2<f64>, what: &str) -> Result<Array2<f64>> {
    let mut m = m.to_owned();
    normalize_rows(&mut m)
        .map_err(|i| Error::InvalidArgument(format!("zero or non-finite {what} row {i}")))?;
    Ok(m)
}

impl CslsIndex {
    /// Builds the index. Rows are unit-normalized internally; `k = 0` turns
    /// CSLS into plain cosine retrieval.
    pub fn build(mapped_source: ArrayView2<f64>, target: ArrayView2<f64>, k: usize) -> Result<Self> {
        if mapped_source.ncols() != target.ncols() {
            return Err(Error::Shape(format!(
                "source rows have dimension {}, target rows {}",
                mapped_source.ncols(),
                target.ncols()
            )));
        }
        if mapped_source.nrows() == 0 || target.nrows() == 0 {
            return Err(Error::InvalidArgument("CSLS index needs non-empty sides".into()));
        }
        let mapped_source = unit_rows(mapped_source, "mapped source")?;
        let target = unit_rows(target, "target")?;

        let (r_source, r_target) = if k == 0 {
            (
                Array1::zeros(mapped_source.nrows()),
                Array1::zeros(target.nrows()),
            )
        } else {
            let rs = map_similarity_rows(mapped_source.view(), target.view(), |_, row| {
                mean_top_k(row, k)
            });
            let rt = map_similarity_rows(target.view(), mapped_source.view(), |_, row| {
                mean_top_k(row, k)
            });
            (Array1::from(rs), Array1::from(rt))
        };
        Ok(CslsIndex {
            mapped_source,
            target,
            k,
            r_source,
            r_target,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r_source(&self) -> ArrayView1<'_, f64> {
        self.r_source.view()
    }

    pub fn r_target(&self) -> ArrayView1<'_, f64> {
        self.r_target.view()
    }

    pub fn mapped_source(&self) -> ArrayView2<'_, f64> {
        self.mapped_source.view()
    }

    pub fn target(&self) -> ArrayView2<'_, f64> {
        self.target.view()
    }

    pub fn source_len(&self) -> usize {
        self.mapped_source.nrows()
    }

    pub fn target_len(&self) -> usize {
        self.target.nrows()
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        self.mapped_source.row(i).dot(&self.target.row(j))
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        2.0 * self.cosine(i, j) - self.r_source[i] - self.r_target[j]
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.source_len()) {
            Some(bad) => Err(Error::InvalidArgument(format!(
                "source id {bad} out of range ({} rows)",
                self.source_len()
            ))),
            None => Ok(()),
        }
    }

    /// CSLS-best target for each source id, with its score.
    pub fn translate_scored(&self, source_ids: &[usize]) -> Result<Vec<(usize, f64)>> {
        self.check_ids(source_ids)?;
        let queries = self.mapped_source.select(ndarray::Axis(0), source_ids);
        let out = map_similarity_rows(queries.view(), self.target.view(), |q, cos| {
            let rs = self.r_source[source_ids[q]];
            argmax(
                cos.iter()
                    .zip(self.r_target.iter())
                    .map(|(c, rt)| 2.0 * c - rs - rt),
            )
            .expect("target side is non-empty")
        });
        Ok(out)
    }

    pub fn translate(&self, source_ids: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .translate_scored(source_ids)?
            .into_iter()
            .map(|(j, _)| j)
            .collect())
    }

    /// Pairs `(i, j)` with `i, j < max_rank` that are each other's CSLS
    /// argmax within that prefix, sorted by `i`.
    pub fn mutual_dictionary(&self, max_rank: usize) -> Vec<(usize, usize)> {
        let ns = max_rank.min(self.source_len());
        let nt = max_rank.min(self.target_len());
        if ns == 0 || nt == 0 {
            return Vec::new();
        }
        let src = self.mapped_source.slice(s![..ns, ..]);
        let tgt = self.target.slice(s![..nt, ..]);
        let forward = map_similarity_rows(src, tgt, |i, cos| {
            let rs = self.r_source[i];
            argmax(
                cos.iter()
                    .zip(self.r_target.iter())
                    .map(|(c, rt)| 2.0 * c - rs - rt),
            )
            .unwrap()
            .0
        });
        let backward = map_similarity_rows(tgt, src, |j, cos| {
            let rt = self.r_target[j];
            argmax(
                cos.iter()
                    .zip(self.r_source.iter())
                    .map(|(c, rs)| 2.0 * c - rs - rt),
            )
            .unwrap()
            .0
        });
        forward
            .into_iter()
            .enumerate()
            .filter(|&(i, j)| backward[j] == i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn self_pair_has_unit_r() {
        let u = array![[0.6, 0.8]];
        let idx = CslsIndex::build(u.view(), u.view(), 10).unwrap();
        assert!((idx.r_source()[0] - 1.0).abs() < 1e-15);
        assert!((idx.r_target()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn basis_neighborhood() {
        let target = Array2::<f64>::eye(4);
        let source = array![[1.0, 0.0, 0.0, 0.0]];
        let idx = CslsIndex::build(source.view(), target.view(), 2).unwrap();
        assert!((idx.r_source()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_targets_tie_to_lowest_id() {
        let target = array![[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]];
        let source = array![[1.0, 0.1]];
        for k in [0, 1, 3] {
            let idx = CslsIndex::build(source.view(), target.view(), k).unwrap();
            assert_eq!(idx.translate(&[0]).unwrap(), vec![1]);
        }
    }

    #[test]
    fn rejects_dimension_mismatch_and_bad_ids() {
        let a = Array2::<f64>::eye(2);
        let b = Array2::<f64>::eye(3);
        assert!(matches!(CslsIndex::build(a.view(), b.view(), 1), Err(Error::Shape(_))));
        let idx = CslsIndex::build(a.view(), a.view(), 1).unwrap();
        assert!(idx.translate(&[2]).is_err());
    }

    #[test]
    fn normalizes_rows() {
        let a = array![[3.0, 4.0]];
        let idx = CslsIndex::build(a.view(), a.view(), 1).unwrap();
        assert!((idx.cosine(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mutual_dictionary_prefix_bound() {
        let a = Array2::<f64>::eye(5);
        let idx = CslsIndex::build(a.view(), a.view(), 2).unwrap();
        assert_eq!(idx.mutual_dictionary(5), (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(idx.mutual_dictionary(1), vec![(0, 0)]);
        assert!(idx.mutual_dictionary(0).is_empty());
    }

    #[test]
    fn mean_top_k_clamps() {
        let v = array![0.1, 0.9, 0.5];
        assert!((mean_top_k(v.view(), 2) - 0.7).abs() < 1e-15);
        assert!((mean_top_k(v.view(), 10) - 0.5).abs() < 1e-15);
        assert_eq!(mean_top_k(v.view(), 0), 0.0);
    }
}
