use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

/// Exact dense index over unit-norm document embeddings.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    rows: Vec<EmbeddingVector>,
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: impl Into<String>, embedding: EmbeddingVector) -> Result<()> {
        if let Some(first) = self.rows.first() {
            if first.dim() != embedding.dim() {
                return Err(Error::Dimension(format!(
                    "index holds {}-d vectors, got {}",
                    first.dim(),
                    embedding.dim()
                )));
            }
        }
        let n = norm(embedding.as_slice());
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Dimension(format!("index rows must be unit norm, got {n}")));
        }
        self.ids.push(id.into());
        self.rows.push(embedding);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Top-`k` ids by descending dot product; ties go to the smaller id.
pub fn search(index: &EmbeddingIndex, query: &EmbeddingVector, k: usize) -> Result<Vec<String>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut scored: Vec<(f64, &String)> = index
        .rows
        .iter()
        .zip(&index.ids)
        .map(|(r, id)| (dot(r.as_slice(), query.as_slice()), id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.clone()).collect())
}
