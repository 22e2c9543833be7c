//! Further tuning of absolute-position models.
//!
//! The position table is extended from `L_o` to `L_t` rows (by linear
//! interpolation or by recurrence), the original rows are frozen and only the
//! new rows are trained with a contrastive objective. Long inputs are
//! simulated PoSE-style: each training document keeps its short length but
//! its position ids are shifted by a random skip `u ∈ {0, …, L_t − L_o}`.
//!
//! Every transformer weight, the token embeddings and every frozen row are
//! left bit-identical; [`tune`] only ever writes to learnable rows.

mod gradcheck;
mod loss;
mod optim;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    backward, pool_and_normalize, pool_backward, EmbeddingVector, ExtendedTable, GradientRequest,
    Model, ModelGrads, PositionAssignment, PositionEmbeddingMatrix, PositionMode, TableRef,
};
use crate::error::{config_err, Error, Result};
use crate::position::{build_interpolated_matrix, recurrent_positions};
use crate::tensor::Matrix;
use crate::tokenizer::TokenSequence;

pub use gradcheck::{grad_check, GradCheckSample};
pub use loss::{batch_contrastive_grad, contrastive_loss, contrastive_loss_grad, BatchContrastiveGrad, ContrastiveGrad};
pub use optim::AdaptiveOptimizer;
pub use train::{train_contrastive, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    /// Interpolated table; rows `i·s` are frozen anchors.
    PiAnchored,
    /// Recurrent table; rows `0..L_o` frozen, the suffix learnable.
    RpSuffix,
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneMode::PiAnchored => "pi_anchored",
            TuneMode::RpSuffix => "rp_suffix",
        })
    }
}

impl FromStr for TuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pi_anchored" | "pi" => Ok(TuneMode::PiAnchored),
            "rp_suffix" | "rp" => Ok(TuneMode::RpSuffix),
            other => Err(config_err(format!("unknown tuning mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub mode: TuneMode,
    pub original_context: usize,
    pub target_context: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub temperature: f64,
    pub negatives: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps, applied after `epochs`.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TuneConfig {
    pub fn new(mode: TuneMode, original_context: usize, target_context: usize) -> Self {
        Self {
            mode,
            original_context,
            target_context,
            learning_rate: 5e-4,
            batch_size: 512,
            epochs: 3,
            warmup_steps: 100,
            temperature: 0.01,
            negatives: 7,
            seed: 42,
            max_steps: None,
        }
    }

    pub fn scale(&self) -> usize {
        self.target_context.div_ceil(self.original_context.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.original_context == 0 {
            return Err(config_err("original context must be at least 1"));
        }
        if self.target_context <= self.original_context {
            return Err(config_err(format!(
                "tuning needs target_context ({}) > original_context ({})",
                self.target_context, self.original_context
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(config_err(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(config_err("at least one negative per example is required"));
        }
        Ok(())
    }
}

/// A query with one positive and at least one negative document.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub query: TokenSequence,
    pub positive: TokenSequence,
    pub negatives: Vec<TokenSequence>,
}

impl TrainingPair {
    pub fn documents(&self) -> impl Iterator<Item = &TokenSequence> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }

    pub(crate) fn validate(&self, max_len: usize) -> Result<()> {
        if self.negatives.is_empty() {
            return Err(Error::Validation("training pair without negatives".into()));
        }
        let longest = std::iter::once(&self.query)
            .chain(self.documents())
            .map(TokenSequence::len)
            .max()
            .unwrap_or(0);
        if longest > max_len {
            return Err(Error::Validation(format!(
                "training sequence of {longest} tokens exceeds the original context {max_len}"
            )));
        }
        Ok(())
    }
}

/// Frozen flags over the `L_t`-row extended table.
pub fn freeze_mask(mode: TuneMode, original_context: usize, target_context: usize, s: usize) -> Vec<bool> {
    match mode {
        TuneMode::PiAnchored => {
            let s = s.max(1);
            (0..original_context * s).map(|r| r % s == 0).collect()
        }
        TuneMode::RpSuffix => (0..target_context).map(|r| r < original_context).collect(),
    }
}

/// PoSE skip `u ~ U{0, …, L_t − L_o}`.
pub fn sample_skip_bias<R: Rng + ?Sized>(target_context: usize, original_context: usize, rng: &mut R) -> usize {
    let span = target_context.saturating_sub(original_context);
    if span == 0 {
        0
    } else {
        rng.gen_range(0..=span)
    }
}

/// Builds the extended table that tuning starts from.
pub fn extend_table(model: &Model, mode: TuneMode, target_context: usize) -> Result<ExtendedTable> {
    let original = model.position_table().ok_or_else(|| {
        Error::Mode("further tuning requires absolute-position mode".into())
    })?;
    let l_o = original.len();
    let s = target_context.div_ceil(l_o).max(1);
    let table = match mode {
        TuneMode::PiAnchored => build_interpolated_matrix(original, s),
        TuneMode::RpSuffix => {
            let d = original.dim();
            let mut rows = Matrix::zeros(target_context, d);
            for r in 0..target_context {
                rows.row_mut(r)
                    .copy_from_slice(original.row(recurrent_positions(r, l_o)));
            }
            PositionEmbeddingMatrix::with_flags(rows, freeze_mask(mode, l_o, target_context, s))?
        }
    };
    Ok(ExtendedTable {
        mode,
        target_context,
        table,
    })
}

/// Extended-table rows read by a short query under the inference mapping:
/// anchors for PI, the original prefix for RP.
fn query_rows(mode: TuneMode, s: usize, len: usize) -> Vec<usize> {
    match mode {
        TuneMode::PiAnchored => (0..len).map(|i| i * s).collect(),
        TuneMode::RpSuffix => (0..len).collect(),
    }
}

fn ext_positions(rows: Vec<usize>) -> PositionAssignment<'static> {
    PositionAssignment::Absolute {
        table: TableRef::Extended,
        rows,
    }
}

fn embed(model: &Model, tokens: &TokenSequence, rows: Vec<usize>) -> Result<EmbeddingVector> {
    let h = model.forward(tokens, &ext_positions(rows), 1.0)?;
    pool_and_normalize(&h, &vec![true; tokens.len()])
}

/// Contrastive loss of one training pair with documents shifted by
/// `offsets` (positive first, then negatives). Attention scaling is off.
pub fn tuning_loss(model: &Model, pair: &TrainingPair, offsets: &[usize], temperature: f64) -> Result<f64> {
    let (mode, s) = tuned_layout(model)?;
    let q = embed(model, &pair.query, query_rows(mode, s, pair.query.len()))?;
    let docs = pair
        .documents()
        .zip(offsets)
        .map(|(d, &u)| embed(model, d, (u..u + d.len()).collect()))
        .collect::<Result<Vec<_>>>()?;
    contrastive_loss(&q, &docs[0], &docs[1..], temperature)
}

/// Loss and its (unmasked) gradient over every row of the extended table.
pub fn tuning_loss_and_grad(
    model: &Model,
    pair: &TrainingPair,
    offsets: &[usize],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let (mode, s) = tuned_layout(model)?;
    if offsets.len() != pair.negatives.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} offsets for {} documents",
            offsets.len(),
            pair.negatives.len() + 1
        )));
    }
    let table = &model.extended_table().expect("checked by tuned_layout").table;
    let q_rows = query_rows(mode, s, pair.query.len());
    let query_touches_learnable = q_rows.iter().any(|&r| !table.is_frozen(r));
    let q_trace = model.forward_traced(&pair.query, &ext_positions(q_rows), 1.0)?;
    let q = pool_and_normalize(q_trace.hidden(), &vec![true; pair.query.len()])?;

    let mut traces = Vec::with_capacity(offsets.len());
    let mut docs = Vec::with_capacity(offsets.len());
    for (doc, &u) in pair.documents().zip(offsets) {
        let trace = model.forward_traced(doc, &ext_positions((u..u + doc.len()).collect()), 1.0)?;
        docs.push(pool_and_normalize(trace.hidden(), &vec![true; doc.len()])?);
        traces.push(trace);
    }
    let cg = contrastive_loss_grad(&q, &docs[0], &docs[1..], temperature)?;

    let mut grads = ModelGrads::zeros(model, GradientRequest::POSITIONS_ONLY);
    for (trace, d_emb) in traces.iter().zip(&cg.documents) {
        let dh = pool_backward(trace.hidden(), d_emb);
        backward(model, trace, &dh, &mut grads)?;
    }
    if query_touches_learnable {
        let dh = pool_backward(q_trace.hidden(), &cg.query);
        backward(model, &q_trace, &dh, &mut grads)?;
    }
    let grad = grads
        .extended_table
        .expect("extended table gradients requested");
    Ok((cg.loss, grad))
}

/// Zeroes the rows of `grad` that are frozen in `table`.
pub fn mask_gradient(grad: &mut Matrix, table: &PositionEmbeddingMatrix) {
    for r in 0..table.len() {
        if table.is_frozen(r) {
            grad.row_mut(r).iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

fn tuned_layout(model: &Model) -> Result<(TuneMode, usize)> {
    let ext = model
        .extended_table()
        .ok_or_else(|| Error::Mode("model has no extended position table".into()))?;
    let s = ext.target_context.div_ceil(model.original_context()).max(1);
    Ok((ext.mode, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Tab-separated `step  epoch  loss  learning_rate` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tepoch\tloss\tlearning_rate\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.step, e.epoch, e.loss, e.learning_rate));
        }
        out
    }
}

#[derive(Debug)]
pub enum TuneError {
    Invalid(Error),
    /// The loss became non-finite; `last_good` is the model before the
    /// failing step.
    Diverged {
        step: usize,
        last_good: Box<Model>,
        log: TrainingLog,
    },
}

impl fmt::Display for TuneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TuneError::Invalid(e) => write!(f, "{e}"),
            TuneError::Diverged { step, .. } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl std::error::Error for TuneError {}

impl From<Error> for TuneError {
    fn from(e: Error) -> Self {
        TuneError::Invalid(e)
    }
}

impl From<TuneError> for Error {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::Invalid(e) => e,
            TuneError::Diverged { step, .. } => {
                Error::Numeric(format!("training loss became non-finite at step {step}"))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub model: Model,
    pub log: TrainingLog,
}

/// Shuffled batches of pair indices for every epoch, capped at `max_steps`.
pub(crate) fn batch_schedule(
    n_pairs: usize,
    batch_size: usize,
    epochs: usize,
    max_steps: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    if n_pairs == 0 {
        return out;
    }
    'outer: for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n_pairs).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            if max_steps.is_some_and(|m| out.len() >= m) {
                break 'outer;
            }
            out.push((epoch, chunk.to_vec()));
        }
    }
    out
}

/// Trains the learnable rows of an extended position table.
///
/// If `model` has no extended table (or one with a different layout) it is
/// extended first. With zero scheduled steps the input model is returned
/// untouched.
pub fn tune(model: &Model, pairs: &[TrainingPair], config: &TuneConfig) -> Result<TuneOutcome, TuneError> {
    config.validate()?;
    if model.position_mode() != PositionMode::Absolute {
        return Err(Error::Mode("further tuning requires absolute-position mode".into()).into());
    }
    if model.original_context() != config.original_context {
        return Err(config_err(format!(
            "tune config original context {} differs from the model's {}",
            config.original_context,
            model.original_context()
        ))
        .into());
    }
    for p in pairs {
        p.validate(config.original_context)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = batch_schedule(pairs.len(), config.batch_size, config.epochs, config.max_steps, &mut rng);
    if schedule.is_empty() {
        return Ok(TuneOutcome {
            model: model.clone(),
            log: TrainingLog::default(),
        });
    }

    let mut model = model.clone();
    let reuse = model
        .extended_table()
        .is_some_and(|e| e.mode == config.mode && e.target_context == config.target_context);
    if !reuse {
        let ext = extend_table(&model, config.mode, config.target_context)?;
        model.install_extended_table(ext);
    }

    let mut opt = AdaptiveOptimizer::new(config.learning_rate, config.warmup_steps);
    let mut log = TrainingLog::default();
    for (step, (epoch, batch)) in schedule.into_iter().enumerate() {
        let table_rows = model.extended_table().expect("installed").table.len();
        let mut grad = Matrix::zeros(table_rows, model.config().hidden_size);
        let mut loss = 0.0;
        for &idx in &batch {
            let pair = &pairs[idx];
            let offsets: Vec<usize> = pair
                .documents()
                .map(|_| sample_skip_bias(config.target_context, config.original_context, &mut rng))
                .collect();
            let (l, g) = tuning_loss_and_grad(&model, pair, &offsets, config.temperature)?;
            loss += l;
            grad.add_assign(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        grad.scale(inv);
        if !loss.is_finite() || grad.data().iter().any(|g| !g.is_finite()) {
            return Err(TuneError::Diverged {
                step,
                last_good: Box::new(model),
                log,
            });
        }

        let lr = opt.begin_step();
        let ext = model.extended.as_mut().expect("installed");
        mask_gradient(&mut grad, &ext.table);
        let total = ext.table.len() * ext.table.dim();
        let learnable: Vec<usize> = ext.table.learnable_rows().collect();
        for r in learnable {
            let params = ext.table.matrix_mut().row_mut(r);
            opt.update_row("extended_table", total, r, params, grad.row(r), lr);
        }
        log.entries.push(LogEntry {
            step,
            epoch,
            loss,
            learning_rate: lr,
        });
    }
    Ok(TuneOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, ModelConfig};
    use std::collections::BTreeSet;

    #[test]
    fn freeze_mask_examples() {
        let pi = freeze_mask(TuneMode::PiAnchored, 4, 8, 2);
        let frozen: BTreeSet<usize> = (0..8).filter(|&i| pi[i]).collect();
        assert_eq!(frozen, BTreeSet::from([0, 2, 4, 6]));
        let rp = freeze_mask(TuneMode::RpSuffix, 4, 8, 2);
        assert_eq!(rp, vec![true, true, true, true, false, false, false, false]);
        for (l_o, s) in [(3, 5), (16, 4), (128, 8)] {
            let m = freeze_mask(TuneMode::PiAnchored, l_o, l_o * s, s);
            assert_eq!(m.iter().filter(|f| **f).count(), l_o);
        }
    }

    #[test]
    fn skip_bias_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_skip_bias(64, 64, &mut rng), 0);
            let u = sample_skip_bias(100, 30, &mut rng);
            assert!(u + 30 - 1 <= 100 - 1);
        }
    }

    #[test]
    fn tuning_requires_absolute_mode() {
        let cfg = ModelConfig::new(8, 1, 2, 4, PositionMode::Rotary).with_vocab_size(10);
        let m = init_model(&cfg).unwrap();
        let err = tune(&m, &[], &TuneConfig::new(TuneMode::PiAnchored, 4, 8)).unwrap_err();
        match err {
            TuneError::Invalid(Error::Mode(msg)) => assert!(msg.contains("absolute-position")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extended_tables_keep_original_rows() {
        let cfg = ModelConfig::new(8, 1, 2, 4, PositionMode::Absolute).with_vocab_size(10);
        let m = init_model(&cfg).unwrap();
        let e_o = m.position_table().unwrap();
        let rp = extend_table(&m, TuneMode::RpSuffix, 10).unwrap();
        assert_eq!(rp.table.len(), 10);
        assert_eq!(rp.table.row(9), e_o.row(1));
        assert_eq!(rp.table.frozen_count(), 4);
        let pi = extend_table(&m, TuneMode::PiAnchored, 10).unwrap();
        assert_eq!(pi.table.len(), 12);
        assert_eq!(pi.table.row(6), e_o.row(2));
        assert_eq!(pi.table.frozen_count(), 4);
    }

    #[test]
    fn diverged_error_maps_to_numeric() {
        let cfg = ModelConfig::new(8, 1, 2, 4, PositionMode::Absolute).with_vocab_size(10);
        let m = init_model(&cfg).unwrap();
        let e: Error = TuneError::Diverged {
            step: 3,
            last_good: Box::new(m),
            log: TrainingLog::default(),
        }
        .into();
        assert!(matches!(e, Error::Numeric(_)));
    }
}
