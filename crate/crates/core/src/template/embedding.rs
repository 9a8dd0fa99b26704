use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

/// Word vectors keyed by lowercase word.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Inserts or replaces a vector; returns whether a previous entry existed.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                left: self.dim,
                right: vector.len(),
            });
        }
        Ok(self.vectors.insert(word.to_lowercase(), vector).is_some())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Parses `word v1 ... vd` lines. A leading `count dim` header line
    /// (word2vec / Numberbatch text format) is accepted, and ConceptNet
    /// `/c/en/` prefixes are stripped.
    pub fn parse(contents: &str, origin: &Path) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        let mut first = true;
        for (i, line) in contents.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if std::mem::take(&mut first)
                && fields.len() == 2
                && fields.iter().all(|f| f.parse::<usize>().is_ok())
            {
                continue;
            }
            let word = fields[0].strip_prefix("/c/en/").unwrap_or(fields[0]);
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| {
                    CoreError::malformed(origin, i + 1, format!("bad vector value: {e}"))
                })?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            if values.len() != t.dim || values.is_empty() {
                return Err(CoreError::malformed(
                    origin,
                    i + 1,
                    format!("expected {} values, found {}", t.dim, values.len()),
                ));
            }
            if t.insert(word, values)? {
                log::warn!(
                    "{}:{}: duplicate embedding for `{word}`, keeping the later one",
                    origin.display(),
                    i + 1
                );
            }
        }
        Ok(table.unwrap_or_default())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    EmbeddingTable::parse(&raw, path)
}

/// `u·v / (|u||v|)`, defined as 0 when either norm is 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CoreError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.8);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn header_and_prefix_handling() {
        let t =
            EmbeddingTable::parse("2 3\n/c/en/gang 1 0 0\nTeen 0 1 0\n", Path::new("x")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim, 3);
        assert_eq!(t.get("GANG").unwrap(), &[1.0, 0.0, 0.0]);
        assert!(t.get("teen").is_some());
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let err = EmbeddingTable::parse("a 1 2\nb 1\n", Path::new("emb.txt")).unwrap_err();
        assert!(err.to_string().contains("emb.txt:2"), "{err}");
    }
}
