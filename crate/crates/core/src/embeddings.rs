//! Monolingual embedding spaces in word2vec text format.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{fmt_sig, normalize_rows};

/// Significant digits used when writing vectors.
pub const TEXT_DIGITS: usize = 6;

/// A vocabulary and one row vector per token. Row `i` belongs to `vocab[i]`;
/// file order is frequency order, so prefixes are the most frequent words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    lang_tag: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    Unit,
    CenterThenUnit,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Normalization::Unit),
            "center_then_unit" => Ok(Normalization::CenterThenUnit),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization {other:?} (expected unit or center_then_unit)"
            ))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Unit => "unit",
            Normalization::CenterThenUnit => "center_then_unit",
        })
    }
}

impl EmbeddingSpace {
    pub fn new(
        lang_tag: impl Into<String>,
        vocab: Vec<String>,
        vectors: Array2<f64>,
    ) -> Result<Self> {
        if vocab.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} tokens but {} vector rows",
                vocab.len(),
                vectors.nrows()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding value".into()));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid token {tok:?}")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        Ok(EmbeddingSpace {
            lang_tag: lang_tag.into(),
            vocab,
            index,
            vectors,
        })
    }

    pub fn lang_tag(&self) -> &str {
        &self.lang_tag
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.vocab[id]
    }

    /// The `n` most frequent rows (clamped to the vocabulary size).
    pub fn prefix(&self, n: usize) -> ArrayView2<'_, f64> {
        self.vectors.slice(s![..n.min(self.len()), ..])
    }

    /// Copies the rows for `ids` into a new matrix.
    pub fn rows(&self, ids: &[usize]) -> Array2<f64> {
        self.vectors.select(Axis(0), ids)
    }

    pub fn with_lang_tag(mut self, tag: impl Into<String>) -> Self {
        self.lang_tag = tag.into();
        self
    }

    pub fn normalize(mut self, scheme: Normalization) -> Result<Self> {
        if scheme == Normalization::CenterThenUnit && !self.is_empty() {
            let mean: Array1<f64> = self.vectors.mean_axis(Axis(0)).unwrap();
            self.vectors -= &mean;
        }
        normalize_rows(&mut self.vectors).map_err(|i| Error::ZeroNorm(self.vocab[i].clone()))?;
        Ok(self)
    }

    /// Reads the word2vec text format: a `<count> <dim>` header followed by
    /// one `<token> <dim floats>` line per word.
    pub fn read_text<R: BufRead>(
        reader: R,
        source: &Path,
        max_vocab: Option<usize>,
    ) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(source, e))?,
            None => return Err(Error::parse(source, 1, "missing header")),
        };
        let mut fields = header.split_ascii_whitespace();
        let (count, dim) = match (
            fields.next().and_then(|f| f.parse::<usize>().ok()),
            fields.next().and_then(|f| f.parse::<usize>().ok()),
            fields.next(),
        ) {
            (Some(c), Some(d), None) if d > 0 => (c, d),
            _ => {
                return Err(Error::parse(
                    source,
                    1,
                    format!("malformed header {header:?}, expected \"<count> <dim>\""),
                ))
            }
        };
        let wanted = max_vocab.map_or(count, |m| m.min(count));

        let mut vocab = Vec::with_capacity(wanted);
        let mut seen = HashMap::with_capacity(wanted);
        let mut data = Vec::with_capacity(wanted * dim);
        let mut rows_read = 0;

        for (offset, line) in lines.enumerate() {
            let lineno = offset + 2;
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if vocab.len() == wanted && wanted < count {
                break;
            }
            if rows_read == count {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("more rows than the {count} announced in the header"),
                ));
            }
            rows_read += 1;
            let mut fields = line.split_ascii_whitespace();
            let token = fields.next().unwrap();
            let start = data.len();
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(source, lineno, format!("bad number {field:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(source, lineno, format!("non-finite value {field:?}")));
                }
                data.push(v);
            }
            let got = data.len() - start;
            if got != dim {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("expected {dim} values for {token:?}, found {got}"),
                ));
            }
            if seen.contains_key(token) {
                warn!(
                    "{}:{lineno}: duplicate token {token:?} skipped",
                    source.display()
                );
                data.truncate(start);
                continue;
            }
            seen.insert(token.to_string(), vocab.len());
            vocab.push(token.to_string());
        }
        if vocab.len() < wanted && rows_read < count {
            return Err(Error::parse(
                source,
                rows_read + 2,
                format!("header announces {count} rows, file has {rows_read}"),
            ));
        }

        let vectors = Array2::from_shape_vec((vocab.len(), dim), data)
            .expect("row lengths validated above");
        let lang_tag = source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(EmbeddingSpace {
            lang_tag,
            vocab,
            index: seen,
            vectors,
        })
    }

    pub fn load_text(path: impl AsRef<Path>, max_vocab: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(BufReader::new(file), path, max_vocab)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim())?;
        for (tok, row) in self.vocab.iter().zip(self.vectors.rows()) {
            out.write_all(tok.as_bytes())?;
            for v in row {
                write!(out, " {}", fmt_sig(*v, TEXT_DIGITS))?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "refusing to write empty embedding space to {}",
                path.display()
            )));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}
