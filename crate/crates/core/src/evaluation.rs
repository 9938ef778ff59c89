//! Gold-dictionary scoring: precision at 1 and back-translation
//! inconsistency.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::mapping::LinearMapping;
use crate::retrieval::CslsIndex;

/// Source words with their acceptable translations, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BilingualLexicon {
    entries: Vec<(String, Vec<String>)>,
}

impl BilingualLexicon {
    /// Groups `(source, target)` pairs by source, dropping repeated pairs.
    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut slot: HashMap<String, usize> = HashMap::new();
        let mut entries: Vec<(String, Vec<String>)> = Vec::new();
        for (s, t) in pairs {
            let (s, t) = (s.into(), t.into());
            let i = *slot.entry(s.clone()).or_insert_with(|| {
                entries.push((s, Vec::new()));
                entries.len() - 1
            });
            if !entries[i].1.contains(&t) {
                entries[i].1.push(t);
            }
        }
        BilingualLexicon { entries }
    }

    /// Parses `src tgt` lines separated by a tab or spaces.
    pub fn read<R: BufRead>(reader: R, source: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            match (f.next(), f.next(), f.next()) {
                (Some(s), Some(t), None) => pairs.push((s.to_string(), t.to_string())),
                _ => {
                    return Err(Error::parse(
                        source,
                        n + 1,
                        format!("expected \"src tgt\", got {line:?}"),
                    ))
                }
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path)
    }

    /// Writes one tab-separated pair per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        (|| {
            for (s, ts) in &self.entries {
                for t in ts {
                    writeln!(out, "{s}\t{t}")?;
                }
            }
            out.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The target→source lexicon.
    pub fn inverted(&self) -> Self {
        Self::from_pairs(
            self.entries
                .iter()
                .flat_map(|(s, ts)| ts.iter().map(move |t| (t.clone(), s.clone()))),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionReport {
    pub p_at_1: f64,
    pub hits: usize,
    pub evaluated: usize,
    pub skipped_oov: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub p_at_1: f64,
    pub evaluated: usize,
    pub skipped_oov: usize,
    pub inconsistency_rate: f64,
}

fn mapped_rows(map: &LinearMapping, space: &EmbeddingSpace) -> Result<ndarray::Array2<f64>> {
    map.apply(space.vectors())
}

/// CSLS precision at 1 of `map` against `lexicon`. Entries whose source word
/// is missing from `src`, or none of whose targets appear in `tgt`, are
/// skipped and counted rather than scored as misses.
pub fn precision_at_1(
    map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    lexicon: &BilingualLexicon,
    k: usize,
) -> Result<PrecisionReport> {
    let mut queries = Vec::new();
    let mut gold_ids: Vec<Vec<usize>> = Vec::new();
    let mut skipped = 0;
    for (s, ts) in lexicon.entries() {
        let targets: Vec<usize> = ts.iter().filter_map(|t| tgt.id(t)).collect();
        match src.id(s) {
            Some(i) if !targets.is_empty() => {
                queries.push(i);
                gold_ids.push(targets);
            }
            _ => skipped += 1,
        }
    }
    if queries.is_empty() {
        return Ok(PrecisionReport {
            p_at_1: 0.0,
            hits: 0,
            evaluated: 0,
            skipped_oov: skipped,
        });
    }
    let index = CslsIndex::build(mapped_rows(map, src)?.view(), tgt.vectors(), k)?;
    let predicted = index.translate(&queries)?;
    let hits = predicted
        .iter()
        .zip(&gold_ids)
        .filter(|(p, gold)| gold.contains(p))
        .count();
    Ok(PrecisionReport {
        p_at_1: hits as f64 / queries.len() as f64,
        hits,
        evaluated: queries.len(),
        skipped_oov: skipped,
    })
}

/// Fraction of the `eval_vocab` most frequent source words that do not come
/// back to themselves under forward (`f_map`) then backward (`g_map`) CSLS
/// word translation.
pub fn inconsistency_rate(
    f_map: &LinearMapping,
    g_map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    eval_vocab: usize,
    k: usize,
) -> Result<f64> {
    let n = eval_vocab.min(src.len());
    if n == 0 {
        return Ok(0.0);
    }
    let queries: Vec<usize> = (0..n).collect();
    let forward = CslsIndex::build(mapped_rows(f_map, src)?.view(), tgt.vectors(), k)?;
    let hop = forward.translate(&queries)?;
    let backward = CslsIndex::build(mapped_rows(g_map, tgt)?.view(), src.vectors(), k)?;
    let back = backward.translate(&hop)?;
    let bad = back.iter().enumerate().filter(|&(i, &b)| i != b).count();
    Ok(bad as f64 / n as f64)
}

/// Forward P@1 plus inconsistency over the whole source vocabulary.
pub fn evaluate(
    f_map: &LinearMapping,
    g_map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    lexicon: &BilingualLexicon,
    k: usize,
) -> Result<EvalReport> {
    let p = precision_at_1(f_map, src, tgt, lexicon, k)?;
    let rate = inconsistency_rate(f_map, g_map, src, tgt, src.len(), k)?;
    Ok(EvalReport {
        p_at_1: p.p_at_1,
        evaluated: p.evaluated,
        skipped_oov: p.skipped_oov,
        inconsistency_rate: rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<BilingualLexicon> {
        BilingualLexicon::read(text.as_bytes(), &PathBuf::from("d.txt"))
    }

    fn space(tag: &str, names: &[&str], m: Array2<f64>) -> EmbeddingSpace {
        EmbeddingSpace::new(tag, names.iter().map(|s| s.to_string()).collect(), m).unwrap()
    }

    #[test]
    fn groups_targets_by_source() {
        let lex = parse("cat gatto\ncat\tmicio\n").unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.entries()[0].1, vec!["gatto", "micio"]);
    }

    #[test]
    fn empty_file_is_empty_lexicon() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn fixture_counts_sources() {
        let lex = parse("a x\nb y\na z\nc w\nb y2\n").unwrap();
        assert_eq!(lex.len(), 3);
        let srcs: Vec<&str> = lex.entries().iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(srcs, ["a", "b", "c"]);
    }

    #[test]
    fn malformed_line_reports_number() {
        match parse("a x\nlonely\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse("a b c\n").is_err());
    }

    #[test]
    fn identity_setup_scores_one() {
        let s = space("x", &["a", "b", "c"], Array2::eye(3));
        let lex = BilingualLexicon::from_pairs([("a", "a"), ("b", "b"), ("c", "c")]);
        let r = precision_at_1(&LinearMapping::identity(3), &s, &s, &lex, 10).unwrap();
        assert_eq!(r.p_at_1, 1.0);
        assert_eq!(r.evaluated, 3);
    }

    #[test]
    fn never_in_gold_scores_zero() {
        let src = space("x", &["a", "b"], Array2::eye(2));
        let tgt = space("y", &["p", "q"], Array2::eye(2));
        let lex = BilingualLexicon::from_pairs([("a", "q"), ("b", "p")]);
        let r = precision_at_1(&LinearMapping::identity(2), &src, &tgt, &lex, 1).unwrap();
        assert_eq!(r.p_at_1, 0.0);
        assert_eq!(r.evaluated, 2);
    }

    #[test]
    fn half_hits_and_oov_accounting() {
        let src = space("x", &["a", "b"], Array2::eye(2));
        let tgt = space("y", &["p", "q"], Array2::eye(2));
        let lex = BilingualLexicon::from_pairs([("a", "p"), ("b", "p"), ("zz", "p"), ("a", "nope"), ("b", "gone")]);
        // "b" has gold {p, gone}: only p is in vocab, prediction is q.
        let r = precision_at_1(&LinearMapping::identity(2), &src, &tgt, &lex, 1).unwrap();
        assert_eq!(r.evaluated, 2);
        assert_eq!(r.skipped_oov, 1);
        assert_eq!(r.p_at_1, 0.5);
        assert_eq!(r.evaluated + r.skipped_oov, lex.len());
    }

    #[test]
    fn lexicon_line_order_does_not_matter() {
        let src = space("x", &["a", "b", "c"], array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]);
        let tgt = space("y", &["p", "q", "r"], array![[0.0, 1.0], [1.0, 0.0], [0.8, 0.6]]);
        let a = BilingualLexicon::from_pairs([("a", "q"), ("b", "r"), ("c", "p"), ("b", "q")]);
        let b = BilingualLexicon::from_pairs([("b", "q"), ("c", "p"), ("b", "r"), ("a", "q")]);
        let map = LinearMapping::identity(2);
        let ra = precision_at_1(&map, &src, &tgt, &a, 1).unwrap();
        let rb = precision_at_1(&map, &src, &tgt, &b, 1).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn inverted_lexicon() {
        let lex = BilingualLexicon::from_pairs([("a", "x"), ("b", "x"), ("a", "y")]);
        let inv = lex.inverted();
        assert_eq!(inv.entries()[0], ("x".to_string(), vec!["a".to_string(), "b".to_string()]));
        assert_eq!(inv.entries()[1], ("y".to_string(), vec!["a".to_string()]));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lex = BilingualLexicon::from_pairs([("a", "x"), ("b", "y"), ("a", "z")]);
        let p = dir.path().join("g.dict");
        lex.save(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a\tx\na\tz\nb\ty\n");
        assert_eq!(BilingualLexicon::load(&p).unwrap(), lex);
    }
}
