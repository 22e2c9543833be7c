use serde::{Deserialize, Serialize};

use super::rope::{rotate_in_place, RoPEFrequencies};
use super::{LayerWeights, Model, PositionEmbeddingMatrix, PositionMode, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::position::self_extend_relpos;
use crate::tensor::{dot, norm, Matrix};
use crate::tokenizer::TokenSequence;

/// A unit-norm document or query embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = norm(&values);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numeric(format!("cannot normalize vector with norm {n}")));
        }
        Ok(Self(values.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Which absolute table a position assignment indexes.
#[derive(Debug, Clone, Copy)]
pub enum TableRef<'a> {
    /// The model's original table `E_o`.
    Original,
    /// The model's installed extended (tuned) table.
    Extended,
    /// A table built on the fly, e.g. a plug-and-play interpolated table.
    Custom(&'a PositionEmbeddingMatrix),
}

/// Effective per-token positions fed to [`Model::forward`].
#[derive(Debug, Clone)]
pub enum PositionAssignment<'a> {
    /// Row indices into an absolute position table.
    Absolute { table: TableRef<'a>, rows: Vec<usize> },
    /// Real-valued rotary phases `m`. `freqs: None` uses the model's own.
    Rotary {
        phases: Vec<f64>,
        freqs: Option<&'a RoPEFrequencies>,
    },
    /// Pairwise SelfExtend relative positions over token indices.
    SelfExtend {
        group: usize,
        window: usize,
        freqs: Option<&'a RoPEFrequencies>,
    },
}

impl<'a> PositionAssignment<'a> {
    /// `0, 1, …, len − 1` in the model's native mode.
    pub fn identity(mode: PositionMode, len: usize) -> Self {
        match mode {
            PositionMode::Absolute => PositionAssignment::Absolute {
                table: TableRef::Original,
                rows: (0..len).collect(),
            },
            PositionMode::Rotary => PositionAssignment::Rotary {
                phases: (0..len).map(|i| i as f64).collect(),
                freqs: None,
            },
        }
    }

    pub fn len(&self) -> Option<usize> {
        match self {
            PositionAssignment::Absolute { rows, .. } => Some(rows.len()),
            PositionAssignment::Rotary { phases, .. } => Some(phases.len()),
            PositionAssignment::SelfExtend { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub a: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub probs: Vec<Matrix>,
    pub attn: Matrix,
    pub ln2: LnCache,
    pub b: Matrix,
    pub hpre: Matrix,
    pub hact: Matrix,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) token_ids: Vec<usize>,
    pub(crate) abs_rows: Option<(AbsTable, Vec<usize>)>,
    pub(crate) phases: Option<Vec<f64>>,
    pub(crate) freqs: Option<RoPEFrequencies>,
    pub(crate) logit_scale: f64,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) final_ln: LnCache,
    hidden: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AbsTable {
    Original,
    Extended,
    Custom,
}

impl ForwardTrace {
    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }
}

impl Model {
    /// Per-token hidden states (`n × d`).
    ///
    /// `attn_scale` multiplies every pre-softmax attention logit.
    pub fn forward(
        &self,
        tokens: &TokenSequence,
        positions: &PositionAssignment<'_>,
        attn_scale: f64,
    ) -> Result<Matrix> {
        Ok(self.forward_traced(tokens, positions, attn_scale)?.hidden)
    }

    pub fn forward_traced(
        &self,
        tokens: &TokenSequence,
        positions: &PositionAssignment<'_>,
        attn_scale: f64,
    ) -> Result<ForwardTrace> {
        let n = tokens.len();
        let cfg = &self.config;
        let d = cfg.hidden_size;
        if let Some(&bad) = tokens.ids().iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Position(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(len) = positions.len() {
            if len != n {
                return Err(Error::Dimension(format!(
                    "{len} positions for {n} tokens"
                )));
            }
        }
        if !(attn_scale > 0.0) || !attn_scale.is_finite() {
            return Err(Error::Config(format!("attention scale must be positive, got {attn_scale}")));
        }

        let mut x = Matrix::zeros(n, d);
        for (i, &t) in tokens.ids().iter().enumerate() {
            x.row_mut(i).copy_from_slice(self.token_embedding.row(t));
        }

        let mut abs_rows = None;
        let mut phases = None;
        let mut freqs: Option<RoPEFrequencies> = None;
        let mut self_extend = None;
        match (cfg.position_mode, positions) {
            (PositionMode::Absolute, PositionAssignment::Absolute { table, rows }) => {
                let (kind, tbl) = self.resolve_table(*table)?;
                if let Some(&bad) = rows.iter().find(|&&r| r >= tbl.len()) {
                    return Err(Error::Position(format!(
                        "absolute position {bad} outside table of {} rows",
                        tbl.len()
                    )));
                }
                for (i, &r) in rows.iter().enumerate() {
                    for (xv, pv) in x.row_mut(i).iter_mut().zip(tbl.row(r)) {
                        *xv += pv;
                    }
                }
                abs_rows = Some((kind, rows.clone()));
            }
            (PositionMode::Rotary, PositionAssignment::Rotary { phases: p, freqs: f }) => {
                freqs = Some(self.resolve_freqs(*f)?);
                phases = Some(p.clone());
            }
            (PositionMode::Rotary, PositionAssignment::SelfExtend { group, window, freqs: f }) => {
                if *group == 0 {
                    return Err(Error::Config("SelfExtend group size must be ≥ 1".into()));
                }
                freqs = Some(self.resolve_freqs(*f)?);
                self_extend = Some((*group, *window));
            }
            (mode, _) => {
                return Err(Error::Mode(format!(
                    "position assignment does not match {mode} position mode"
                )))
            }
        }

        let logit_scale = attn_scale / (cfg.head_dim() as f64).sqrt();
        let se_table = match (self_extend, &freqs) {
            (Some((g, w)), Some(f)) => Some(SelfExtendTable::new(n, g, w, f)),
            _ => None,
        };

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for layer in &self.layers {
            let (x_next, cache) = layer_forward(
                layer,
                &x,
                cfg.n_heads,
                logit_scale,
                phases.as_deref().zip(freqs.as_ref()),
                se_table.as_ref(),
            );
            layers.push(cache);
            x = x_next;
        }
        let (hidden, final_ln) = layer_norm(&x, &self.final_gain, &self.final_bias);

        Ok(ForwardTrace {
            token_ids: tokens.ids().to_vec(),
            abs_rows,
            phases,
            freqs: if se_table.is_some() { None } else { freqs },
            logit_scale,
            layers,
            final_ln,
            hidden,
        })
    }

    fn resolve_table<'a>(
        &'a self,
        table: TableRef<'a>,
    ) -> Result<(AbsTable, &'a PositionEmbeddingMatrix)> {
        match table {
            TableRef::Original => self
                .position_table
                .as_ref()
                .map(|t| (AbsTable::Original, t))
                .ok_or_else(|| Error::Mode("model has no absolute position table".into())),
            TableRef::Extended => self
                .extended
                .as_ref()
                .map(|e| (AbsTable::Extended, &e.table))
                .ok_or_else(|| Error::Mode("model has no extended position table installed".into())),
            TableRef::Custom(t) => {
                if t.dim() != self.config.hidden_size {
                    return Err(Error::Dimension(format!(
                        "position table width {} differs from hidden size {}",
                        t.dim(),
                        self.config.hidden_size
                    )));
                }
                Ok((AbsTable::Custom, t))
            }
        }
    }

    fn resolve_freqs(&self, freqs: Option<&RoPEFrequencies>) -> Result<RoPEFrequencies> {
        let f = match freqs {
            Some(f) => f.clone(),
            None => self
                .rope
                .clone()
                .ok_or_else(|| Error::Mode("model has no rotary frequencies".into()))?,
        };
        if f.dim() != self.config.head_dim() {
            return Err(Error::Dimension(format!(
                "rotary frequencies cover {} dims, head dim is {}",
                f.dim(),
                self.config.head_dim()
            )));
        }
        Ok(f)
    }
}

/// Arithmetic mean over active rows followed by L2 normalization.
pub fn pool_and_normalize(hidden: &Matrix, mask: &[bool]) -> Result<EmbeddingVector> {
    if mask.len() != hidden.rows() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} rows",
            mask.len(),
            hidden.rows()
        )));
    }
    let active = mask.iter().filter(|m| **m).count();
    if active == 0 {
        return Err(Error::EmptyInput("pooling mask selects no tokens".into()));
    }
    let mut mean = vec![0.0; hidden.cols()];
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (acc, v) in mean.iter_mut().zip(hidden.row(i)) {
            *acc += v;
        }
    }
    let inv = 1.0 / active as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    EmbeddingVector::normalized(mean)
}

pub(crate) fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LnCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(r);
        let xh = xhat.row_mut(i);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = gain[j] * xhat.get(i, j) + bias[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Cosine/sine lookup for SelfExtend's integer relative positions.
pub(crate) struct SelfExtendTable {
    group: usize,
    window: usize,
    max_rel: i64,
    pairs: usize,
    cos_sin: Vec<(f64, f64)>,
}

impl SelfExtendTable {
    fn new(n: usize, group: usize, window: usize, freqs: &RoPEFrequencies) -> Self {
        let max_rel = self_extend_relpos(n.saturating_sub(1) as i64, 0, group, window).abs();
        let pairs = freqs.pairs();
        let mut cos_sin = Vec::with_capacity((2 * max_rel as usize + 1) * pairs);
        for rel in -max_rel..=max_rel {
            for &t in freqs.thetas() {
                let (s, c) = (rel as f64 * t).sin_cos();
                cos_sin.push((c, s));
            }
        }
        Self {
            group,
            window,
            max_rel,
            pairs,
            cos_sin,
        }
    }

    #[inline]
    fn score(&self, q: &[f64], k: &[f64], i: usize, j: usize) -> f64 {
        let rel = self_extend_relpos(i as i64, j as i64, self.group, self.window);
        let base = ((rel + self.max_rel) as usize) * self.pairs;
        let table = &self.cos_sin[base..base + self.pairs];
        q.chunks_exact(2)
            .zip(k.chunks_exact(2))
            .zip(table)
            .map(|((qp, kp), &(c, s))| {
                let re = qp[0] * kp[0] + qp[1] * kp[1];
                let im = qp[1] * kp[0] - qp[0] * kp[1];
                re * c - im * s
            })
            .sum()
    }
}

fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = x.matmul(w);
    y.add_row_vector(b);
    y
}

fn layer_forward(
    layer: &LayerWeights,
    x: &Matrix,
    n_heads: usize,
    logit_scale: f64,
    rotary: Option<(&[f64], &RoPEFrequencies)>,
    se: Option<&SelfExtendTable>,
) -> (Matrix, LayerCache) {
    let (n, d) = (x.rows(), x.cols());
    let dh = d / n_heads;

    let (a, ln1) = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias);
    let mut q = linear(&a, &layer.wq, &layer.bq);
    let mut k = linear(&a, &layer.wk, &layer.bk);
    let v = linear(&a, &layer.wv, &layer.bv);

    if let Some((phases, freqs)) = rotary {
        for i in 0..n {
            for h in 0..n_heads {
                rotate_in_place(&mut q.row_mut(i)[h * dh..(h + 1) * dh], phases[i], freqs);
                rotate_in_place(&mut k.row_mut(i)[h * dh..(h + 1) * dh], phases[i], freqs);
            }
        }
    }

    let mut attn = Matrix::zeros(n, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = p.row_mut(i);
            for (j, slot) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                let s = match se {
                    Some(t) => t.score(qi, kj, i, j),
                    None => dot(qi, kj),
                };
                *slot = s * logit_scale;
            }
            softmax_in_place(row);
        }
        for i in 0..n {
            let out = &mut attn.row_mut(i)[cols.clone()];
            for j in 0..n {
                let w = p.get(i, j);
                for (o, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += w * vv;
                }
            }
        }
        probs.push(p);
    }

    let mut x_mid = linear(&attn, &layer.wo, &layer.bo);
    x_mid.add_assign(x);

    let (b, ln2) = layer_norm(&x_mid, &layer.ln2_gain, &layer.ln2_bias);
    let hpre = linear(&b, &layer.w1, &layer.b1);
    let mut hact = hpre.clone();
    hact.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    let mut out = linear(&hact, &layer.w2, &layer.b2);
    out.add_assign(&x_mid);

    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            b,
            hpre,
            hact,
        },
    )
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}
