use crate::encoder::EmbeddingVector;
use crate::error::{config_err, Result};

/// InfoNCE over one query, its positive and its negatives:
/// `−log softmax(cos/τ)[positive]`.
pub fn contrastive_loss(
    query: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> Result<f64> {
    Ok(contrastive_loss_grad(query, positive, negatives, temperature)?.loss)
}

/// Loss plus its gradients with respect to every (unit) embedding, treating
/// the cosine as a plain dot product.
#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub query: Vec<f64>,
    /// Positive first, then negatives in input order.
    pub documents: Vec<Vec<f64>>,
}

pub fn contrastive_loss_grad(
    query: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> Result<ContrastiveGrad> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(config_err(format!("temperature must be > 0, got {temperature}")));
    }
    let docs: Vec<&EmbeddingVector> = std::iter::once(positive).chain(negatives).collect();
    let logits: Vec<f64> = docs.iter().map(|d| query.dot(d) / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[0];

    let dim = query.dim();
    let mut dq = vec![0.0; dim];
    let mut documents = Vec::with_capacity(docs.len());
    for (i, (doc, logit)) in docs.iter().zip(&logits).enumerate() {
        let p = (logit - log_z).exp();
        let dl = if i == 0 { p - 1.0 } else { p } / temperature;
        for (g, v) in dq.iter_mut().zip(doc.as_slice()) {
            *g += dl * v;
        }
        documents.push(query.as_slice().iter().map(|v| dl * v).collect());
    }
    Ok(ContrastiveGrad {
        loss,
        query: dq,
        documents,
    })
}

/// Batched InfoNCE: query `i` is scored against every document, with
/// `positives[i]` as its target. Returns the mean loss and gradients with
/// respect to every query and document embedding.
#[derive(Debug, Clone)]
pub struct BatchContrastiveGrad {
    pub loss: f64,
    pub queries: Vec<Vec<f64>>,
    pub documents: Vec<Vec<f64>>,
}

pub fn batch_contrastive_grad(
    queries: &[EmbeddingVector],
    documents: &[EmbeddingVector],
    positives: &[usize],
    temperature: f64,
) -> Result<BatchContrastiveGrad> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(config_err(format!("temperature must be > 0, got {temperature}")));
    }
    assert_eq!(queries.len(), positives.len(), "one positive per query");
    let dim = documents.first().map_or(0, EmbeddingVector::dim);
    let inv_n = 1.0 / queries.len().max(1) as f64;
    let mut loss = 0.0;
    let mut dq = vec![vec![0.0; dim]; queries.len()];
    let mut dd = vec![vec![0.0; dim]; documents.len()];
    for (i, (q, &pos)) in queries.iter().zip(positives).enumerate() {
        let logits: Vec<f64> = documents.iter().map(|d| q.dot(d) / temperature).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += (log_z - logits[pos]) * inv_n;
        for (j, (doc, logit)) in documents.iter().zip(&logits).enumerate() {
            let p = (logit - log_z).exp();
            let dl = (if j == pos { p - 1.0 } else { p }) * inv_n / temperature;
            for k in 0..dim {
                dq[i][k] += dl * doc.as_slice()[k];
                dd[j][k] += dl * q.as_slice()[k];
            }
        }
    }
    Ok(BatchContrastiveGrad {
        loss,
        queries: dq,
        documents: dd,
    })
}
