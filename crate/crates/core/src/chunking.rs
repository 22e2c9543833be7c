//! Parallel context windows: split a long input into `L_o`-token chunks,
//! encode each chunk with the unextended model and average the results.

use serde::Serialize;

use crate::encoder::{pool_and_normalize, EmbeddingVector, Model, PositionAssignment};
use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

/// Ordered `[start, end)` token ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ChunkPlan {
    chunks: Vec<(usize, usize)>,
}

impl ChunkPlan {
    pub fn chunks(&self) -> &[(usize, usize)] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Non-overlapping `L_o` chunks; the last chunk is pulled back to end at
/// `input_len` so that it still holds `L_o` tokens.
pub fn plan_chunks(input_len: usize, original_context: usize) -> ChunkPlan {
    let l_o = original_context.max(1);
    if input_len <= l_o {
        return ChunkPlan {
            chunks: vec![(0, input_len)],
        };
    }
    let count = input_len.div_ceil(l_o);
    let mut chunks: Vec<(usize, usize)> = (0..count - 1).map(|c| (c * l_o, (c + 1) * l_o)).collect();
    chunks.push((input_len - l_o, input_len));
    ChunkPlan { chunks }
}

/// Encodes each chunk with identity positions and unit attention scale, then
/// re-normalizes the mean of the unit chunk embeddings.
pub fn pcw_encode(model: &Model, tokens: &TokenSequence, original_context: usize) -> Result<EmbeddingVector> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("nothing to encode".into()));
    }
    let plan = plan_chunks(tokens.len(), original_context);
    let embeddings = plan
        .chunks()
        .iter()
        .map(|&(start, end)| {
            let chunk = tokens.slice(start, end);
            let positions = PositionAssignment::identity(model.position_mode(), chunk.len());
            let hidden = model.forward(&chunk, &positions, 1.0)?;
            pool_and_normalize(&hidden, &vec![true; chunk.len()])
        })
        .collect::<Result<Vec<_>>>()?;
    if embeddings.len() == 1 {
        return Ok(embeddings.into_iter().next().expect("one chunk"));
    }
    let dim = embeddings[0].dim();
    let mut mean = vec![0.0; dim];
    for e in &embeddings {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    let inv = 1.0 / embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    EmbeddingVector::normalized(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, ModelConfig, PositionMode};
    use crate::tensor::norm;

    #[test]
    fn plan_examples() {
        assert_eq!(plan_chunks(512, 512).chunks(), &[(0, 512)]);
        assert_eq!(plan_chunks(1000, 512).chunks(), &[(0, 512), (488, 1000)]);
        assert_eq!(plan_chunks(1024, 512).chunks(), &[(0, 512), (512, 1024)]);
        assert_eq!(plan_chunks(3, 512).chunks(), &[(0, 3)]);
    }

    #[test]
    fn plan_invariants_exhaustive() {
        for len in 513..=4096usize {
            let plan = plan_chunks(len, 512);
            assert_eq!(plan.len(), len.div_ceil(512));
            let chunks = plan.chunks();
            assert!(chunks.iter().all(|(s, e)| e - s == 512));
            assert!(chunks.windows(2).all(|w| w[0].0 < w[1].0));
            // non-final chunks disjoint and contiguous from 0
            for (c, &(s, _)) in chunks[..chunks.len() - 1].iter().enumerate() {
                assert_eq!(s, c * 512);
            }
            assert_eq!(chunks.last().unwrap().1, len);
            // coverage: the last chunk starts no later than the end of the previous one
            let prev_end = chunks[chunks.len() - 2].1;
            assert!(chunks.last().unwrap().0 <= prev_end);
        }
    }

    #[test]
    fn repeated_halves_match_one_half() {
        let cfg = ModelConfig::new(16, 1, 2, 6, PositionMode::Absolute)
            .with_seed(5)
            .with_vocab_size(40);
        let model = init_model(&cfg).unwrap();
        let half = vec![3, 14, 15, 9, 2, 6];
        let doubled: Vec<usize> = half.iter().chain(half.iter()).copied().collect();
        let one = pcw_encode(&model, &TokenSequence::new(half).unwrap(), 6).unwrap();
        let two = pcw_encode(&model, &TokenSequence::new(doubled).unwrap(), 6).unwrap();
        for (a, b) in one.as_slice().iter().zip(two.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((norm(two.as_slice()) - 1.0).abs() < 1e-12);
    }
}
