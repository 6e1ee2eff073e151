//! Fixed audio embeddings and the cosine retrieval baseline.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{AriaError, Result};
use crate::io::csv_reader;
use crate::matrix::ScoreMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != ids.len() * dim {
            return Err(AriaError::DimensionMismatch(format!(
                "{} ids with dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                vectors.len()
            )));
        }
        crate::matrix::check_unique(&ids, "embedding")?;
        for (i, v) in vectors.chunks_exact(dim).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(AriaError::InvalidInput(format!("embedding `{}` has a non-finite entry", ids[i])));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(AriaError::InvalidInput(format!("embedding `{}` has zero norm", ids[i])));
            }
        }
        Ok(EmbeddingTable { ids, dim, vectors })
    }

    /// CSV `id,d0,…,dk`; the header row is optional.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        for (line, rec) in csv_reader(path)?.records().enumerate() {
            let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
            if line == 0 && rec.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
                dim = Some(rec.len() - 1);
                continue;
            }
            let d = rec.len().saturating_sub(1);
            if *dim.get_or_insert(d) != d {
                return Err(AriaError::DimensionMismatch(format!(
                    "{name}: line {line} has dimension {d}, expected {}",
                    dim.unwrap_or(0)
                )));
            }
            ids.push(rec[0].to_string());
            for f in rec.iter().skip(1) {
                vectors.push(
                    f.parse::<f64>()
                        .map_err(|_| AriaError::parse(&name, format!("line {line}: bad number `{f}`")))?,
                );
            }
        }
        Self::new(ids, dim.unwrap_or(0), vectors)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Track × query matrix of cosine similarities between fixed embeddings.
pub fn cosine_embedding_scores(queries: &EmbeddingTable, tracks: &EmbeddingTable) -> Result<ScoreMatrix> {
    if queries.dim != tracks.dim {
        return Err(AriaError::DimensionMismatch(format!(
            "query embeddings have dimension {}, track embeddings {}",
            queries.dim, tracks.dim
        )));
    }
    let unit = |t: &EmbeddingTable| -> Vec<f64> {
        t.vectors
            .chunks_exact(t.dim)
            .flat_map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(move |x| x / norm)
            })
            .collect()
    };
    let (uq, ut) = (unit(queries), unit(tracks));
    let (n, t, d) = (tracks.ids.len(), queries.ids.len(), tracks.dim);
    let mut values = vec![0.0; n * t];
    values.par_chunks_mut(t).enumerate().for_each(|(i, row)| {
        let a = &ut[i * d..(i + 1) * d];
        for (j, out) in row.iter_mut().enumerate() {
            let b = &uq[j * d..(j + 1) * d];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            *out = dot.clamp(-1.0, 1.0);
        }
    });
    ScoreMatrix::from_f64(n, t, values, tracks.ids.clone(), queries.ids.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(ids: &[&str], dim: usize, v: Vec<f64>) -> EmbeddingTable {
        EmbeddingTable::new(ids.iter().map(|s| s.to_string()).collect(), dim, v).unwrap()
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let tracks = table(&["a", "b"], 2, vec![3.0, 4.0, 0.0, 1.0]);
        let queries = table(&["q"], 2, vec![3.0, 4.0]);
        let s = cosine_embedding_scores(&queries, &tracks).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        let q2 = table(&["q"], 2, vec![-4.0, 3.0]);
        let s2 = cosine_embedding_scores(&q2, &table(&["a"], 2, vec![3.0, 4.0])).unwrap();
        assert!(s2.get(0, 0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_norm_and_dim_mismatch() {
        assert!(EmbeddingTable::new(vec!["a".into()], 2, vec![0.0, 0.0]).is_err());
        let a = table(&["a"], 2, vec![1.0, 0.0]);
        let b = table(&["b"], 3, vec![1.0, 0.0, 0.0]);
        assert!(cosine_embedding_scores(&a, &b).is_err());
    }
}
