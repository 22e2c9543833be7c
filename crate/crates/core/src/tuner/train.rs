use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_contrastive_grad, batch_schedule, contrastive_loss_grad, AdaptiveOptimizer, LogEntry, TrainingLog, TrainingPair};
use crate::encoder::{
    backward, pool_and_normalize, pool_backward, GradientRequest, LayerWeights, Model, ModelGrads,
    PositionAssignment,
};
use crate::error::{config_err, Error, Result};

/// Contrastive training of every weight at native positions. Used to give
/// toy models a retrieval signal before any context extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Score each query against every document in its batch, not only its
    /// own positive and negatives.
    #[serde(default)]
    pub in_batch_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 1,
            warmup_steps: 10,
            temperature: 0.05,
            seed: 42,
            max_steps: None,
            in_batch_negatives: false,
        }
    }
}

fn example_grads(model: &Model, pair: &TrainingPair, temperature: f64) -> Result<(f64, ModelGrads)> {
    let seqs: Vec<_> = std::iter::once(&pair.query).chain(pair.documents()).collect();
    let mut traces = Vec::with_capacity(seqs.len());
    let mut embs = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let pos = PositionAssignment::identity(model.position_mode(), s.len());
        let trace = model.forward_traced(s, &pos, 1.0)?;
        embs.push(pool_and_normalize(trace.hidden(), &vec![true; s.len()])?);
        traces.push(trace);
    }
    let cg = contrastive_loss_grad(&embs[0], &embs[1], &embs[2..], temperature)?;
    let mut grads = ModelGrads::zeros(model, GradientRequest::ALL);
    let d_embs = std::iter::once(&cg.query).chain(&cg.documents);
    for (trace, d_emb) in traces.iter().zip(d_embs) {
        let dh = pool_backward(trace.hidden(), d_emb);
        backward(model, trace, &dh, &mut grads)?;
    }
    Ok((cg.loss, grads))
}

fn batch_grads(model: &Model, pairs: &[&TrainingPair], temperature: f64) -> Result<(f64, ModelGrads)> {
    let run = |s: &crate::tokenizer::TokenSequence| -> Result<_> {
        let pos = PositionAssignment::identity(model.position_mode(), s.len());
        let trace = model.forward_traced(s, &pos, 1.0)?;
        let emb = pool_and_normalize(trace.hidden(), &vec![true; s.len()])?;
        Ok((trace, emb))
    };
    let (mut q_traces, mut q_embs) = (Vec::new(), Vec::new());
    let (mut d_traces, mut d_embs) = (Vec::new(), Vec::new());
    let mut positives = Vec::new();
    for p in pairs {
        let (t, e) = run(&p.query)?;
        q_traces.push(t);
        q_embs.push(e);
        positives.push(d_embs.len());
        for d in p.documents() {
            let (t, e) = run(d)?;
            d_traces.push(t);
            d_embs.push(e);
        }
    }
    let g = batch_contrastive_grad(&q_embs, &d_embs, &positives, temperature)?;
    let mut grads = ModelGrads::zeros(model, GradientRequest::ALL);
    let all = q_traces.iter().zip(&g.queries).chain(d_traces.iter().zip(&g.documents));
    for (trace, d_emb) in all {
        let dh = pool_backward(trace.hidden(), d_emb);
        backward(model, trace, &dh, &mut grads)?;
    }
    Ok((g.loss, grads))
}

fn apply(model: &mut Model, grads: &ModelGrads, opt: &mut AdaptiveOptimizer, lr: f64) {
    let total = model.token_embedding.data().len();
    for (&row, g) in &grads.token_embedding {
        opt.update_row("token_embedding", total, row, model.token_embedding.row_mut(row), g, lr);
    }
    if let (Some(t), Some(g)) = (model.position_table.as_mut(), grads.position_table.as_ref()) {
        opt.update("position_table", t.matrix_mut().data_mut(), g.data(), lr);
    }
    for (l, (layer, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
        for ((name, p), gd) in LayerWeights::TENSOR_NAMES
            .iter()
            .zip(layer.tensors_mut())
            .zip(g.tensors())
        {
            opt.update(&format!("layers.{l}.{name}"), p, gd, lr);
        }
    }
    opt.update("final_gain", &mut model.final_gain, &grads.final_gain, lr);
    opt.update("final_bias", &mut model.final_bias, &grads.final_bias, lr);
}

/// Trains all weights with the contrastive loss. Sequences must fit the
/// original context. Any installed extended table is left as is.
pub fn train_contrastive(model: &Model, pairs: &[TrainingPair], config: &TrainConfig) -> Result<(Model, TrainingLog)> {
    if !(config.temperature > 0.0) {
        return Err(config_err(format!("temperature must be > 0, got {}", config.temperature)));
    }
    if config.batch_size == 0 {
        return Err(config_err("batch_size must be at least 1"));
    }
    for p in pairs {
        p.validate(model.original_context())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = batch_schedule(pairs.len(), config.batch_size, config.epochs, config.max_steps, &mut rng);
    let mut model = model.clone();
    let mut opt = AdaptiveOptimizer::new(config.learning_rate, config.warmup_steps);
    let mut log = TrainingLog::default();
    for (step, (epoch, batch)) in schedule.into_iter().enumerate() {
        let (loss, acc) = if config.in_batch_negatives {
            let members: Vec<&TrainingPair> = batch.iter().map(|&i| &pairs[i]).collect();
            batch_grads(&model, &members, config.temperature)?
        } else {
            let mut acc = ModelGrads::zeros(&model, GradientRequest::ALL);
            let inv = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &idx in &batch {
                let (l, g) = example_grads(&model, &pairs[idx], config.temperature)?;
                loss += l * inv;
                acc.add_scaled(&g, inv);
            }
            (loss, acc)
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became non-finite at step {step}")));
        }
        let lr = opt.begin_step();
        apply(&mut model, &acc, &mut opt, lr);
        log.entries.push(LogEntry {
            step,
            epoch,
            loss,
            learning_rate: lr,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, ModelConfig, PositionMode};
    use crate::tokenizer::TokenSequence;

    #[test]
    fn loss_decreases_on_a_tiny_task() {
        let cfg = ModelConfig::new(16, 1, 2, 8, PositionMode::Absolute)
            .with_seed(3)
            .with_vocab_size(50);
        let model = init_model(&cfg).unwrap();
        let seq = |v: Vec<usize>| TokenSequence::new(v).unwrap();
        let pairs: Vec<TrainingPair> = (0..6)
            .map(|i| TrainingPair {
                query: seq(vec![i, i + 10]),
                positive: seq(vec![i, i + 10, 30, 31, 32]),
                negatives: vec![seq(vec![(i + 1) % 6, (i + 1) % 6 + 10, 30, 31, 32])],
            })
            .collect();
        let config = TrainConfig {
            batch_size: 6,
            epochs: 40,
            temperature: 0.1,
            learning_rate: 1e-2,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        let (trained, log) = train_contrastive(&model, &pairs, &config).unwrap();
        let losses = log.losses();
        assert_eq!(losses.len(), 40);
        assert!(losses[39] < losses[0] * 0.5, "{losses:?}");
        assert_ne!(trained.weights_checksum(), model.weights_checksum());
    }
}
