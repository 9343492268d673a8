//! Word embeddings: word2vec-style text files plus a seeded random fallback
//! for out-of-vocabulary tokens and embedding-free test runs.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub vectors: HashMap<String, Vec<f64>>,
    pub oov_policy: String,
    seed: u64,
}

impl EmbeddingTable {
    /// Vector for a token. Unknown tokens get a deterministic seeded uniform
    /// vector in [-0.1, 0.1]; the vector depends only on (seed, token), not
    /// on lookup order.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        oov_vector(self.seed, token, self.dimension)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }
}

fn oov_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut r = rng::token_stream(seed, token);
    (0..dim).map(|_| r.gen_range(-0.1..0.1)).collect()
}

/// Load embeddings for a vocabulary. `path` of "random" fills every token
/// from the seeded uniform fallback; otherwise the file must be word2vec
/// text format: a "count dim" header, then "token v1 .. vdim" lines.
pub fn load_word_embeddings(
    path: &str,
    dim: usize,
    vocab: &BTreeSet<String>,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut vectors = HashMap::new();
    if path != "random" {
        let p = Path::new(path);
        let file = File::open(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("embedding file is empty"))?
            .map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
        let mut parts = header.split_whitespace();
        let _count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid("embedding header must be `count dim`"))?;
        let file_dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid("embedding header must be `count dim`"))?;
        if file_dim != dim {
            return Err(Error::EmbeddingDim {
                found: file_dim,
                expected: dim,
            });
        }
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_string();
            let vals: Vec<f64> = parts.map(|s| s.parse().unwrap_or(f64::NAN)).collect();
            if vals.len() != dim || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: p.to_path_buf(),
                    line: lineno + 2,
                    msg: format!("expected {dim} finite values after token"),
                });
            }
            if vocab.contains(&token) {
                vectors.insert(token, vals);
            }
        }
    }
    for token in vocab {
        if !vectors.contains_key(token) {
            vectors.insert(token.clone(), oov_vector(seed, token, dim));
        }
    }
    Ok(EmbeddingTable {
        dimension: dim,
        vectors,
        oov_policy: "seeded-uniform[-0.1,0.1]".to_string(),
        seed,
    })
}
