//! Reverse-mode gradients of the encoder.
//!
//! The backward pass mirrors `layer_forward` step by step. It can produce
//! gradients for the transformer weights, for the absolute position rows
//! that were read, or both; further tuning only asks for the latter.

use std::collections::BTreeMap;

use super::forward::{gelu_grad, AbsTable, ForwardTrace, LnCache};
use super::rope::rotate_in_place;
use super::{LayerWeights, Model};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientRequest {
    /// Token embeddings, every block weight and the final layer norm.
    pub weights: bool,
    /// The absolute position rows read by the forward pass.
    pub positions: bool,
}

impl GradientRequest {
    pub const POSITIONS_ONLY: Self = Self {
        weights: false,
        positions: true,
    };
    pub const ALL: Self = Self {
        weights: true,
        positions: true,
    };
}

/// Gradient accumulator shaped like a [`Model`]. Token-embedding gradients
/// are kept sparse (only rows that were read).
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub token_embedding: BTreeMap<usize, Vec<f64>>,
    pub position_table: Option<Matrix>,
    pub extended_table: Option<Matrix>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
    request: GradientRequest,
}

impl ModelGrads {
    pub fn zeros(model: &Model, request: GradientRequest) -> Self {
        let cfg = model.config();
        let d = cfg.hidden_size;
        let (layers, fg, fb) = if request.weights {
            (
                (0..cfg.n_layers)
                    .map(|_| LayerWeights::zeros(d, cfg.ffn_size()))
                    .collect(),
                vec![0.0; d],
                vec![0.0; d],
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        Self {
            token_embedding: BTreeMap::new(),
            position_table: request
                .positions
                .then(|| model.position_table().map(|t| Matrix::zeros(t.len(), d)))
                .flatten(),
            extended_table: request
                .positions
                .then(|| model.extended_table().map(|t| Matrix::zeros(t.table.len(), d)))
                .flatten(),
            layers,
            final_gain: fg,
            final_bias: fb,
            request,
        }
    }

    pub fn request(&self) -> GradientRequest {
        self.request
    }

    /// `self += factor · other`. Both must come from the same model/request.
    pub fn add_scaled(&mut self, other: &ModelGrads, factor: f64) {
        for (row, g) in &other.token_embedding {
            let dst = self
                .token_embedding
                .entry(*row)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in dst.iter_mut().zip(g) {
                *a += factor * b;
            }
        }
        add_opt(&mut self.position_table, &other.position_table, factor);
        add_opt(&mut self.extended_table, &other.extended_table, factor);
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine.tensors_mut().into_iter().zip(theirs.tensors()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += factor * y;
                }
            }
        }
        for (a, b) in self.final_gain.iter_mut().zip(&other.final_gain) {
            *a += factor * b;
        }
        for (a, b) in self.final_bias.iter_mut().zip(&other.final_bias) {
            *a += factor * b;
        }
    }
}

fn add_opt(dst: &mut Option<Matrix>, src: &Option<Matrix>, factor: f64) {
    if let (Some(d), Some(s)) = (dst.as_mut(), src.as_ref()) {
        for (a, b) in d.data_mut().iter_mut().zip(s.data()) {
            *a += factor * b;
        }
    }
}

/// Gradient of the mean-pooled, L2-normalized embedding with respect to the
/// per-token hidden states (all tokens active).
pub(crate) fn pool_backward(hidden: &Matrix, d_embedding: &[f64]) -> Matrix {
    let n = hidden.rows();
    let d = hidden.cols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, h) in mean.iter_mut().zip(hidden.row(i)) {
            *m += h;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let len = norm(&mean);
    let e: Vec<f64> = mean.iter().map(|m| m / len).collect();
    let proj = dot(&e, d_embedding);
    let dm: Vec<f64> = d_embedding
        .iter()
        .zip(&e)
        .map(|(g, ei)| (g - ei * proj) / len / n as f64)
        .collect();
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(&dm);
    }
    out
}

fn ln_backward(
    dy: &Matrix,
    cache: &LnCache,
    gain: &[f64],
    dgain: Option<&mut Vec<f64>>,
    dbias: Option<&mut Vec<f64>>,
) -> Matrix {
    let (n, d) = (dy.rows(), dy.cols());
    if let Some(dg) = dgain {
        for i in 0..n {
            for j in 0..d {
                dg[j] += dy.get(i, j) * cache.xhat.get(i, j);
            }
        }
    }
    if let Some(db) = dbias {
        dy.sum_rows_acc(db);
    }
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dxhat[j] = dy.get(i, j) * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        let r = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Accumulates into `grads` the gradient of a scalar loss whose derivative
/// with respect to the final hidden states is `d_hidden`.
pub fn backward(
    model: &Model,
    trace: &ForwardTrace,
    d_hidden: &Matrix,
    grads: &mut ModelGrads,
) -> Result<()> {
    let cfg = model.config();
    let n_heads = cfg.n_heads;
    let d = cfg.hidden_size;
    let dh = cfg.head_dim();
    let want_w = grads.request.weights;
    if trace.abs_rows.is_none() && trace.phases.is_none() {
        return Err(Error::Mode(
            "backward is not available for SelfExtend attention".into(),
        ));
    }

    let mut dx = if want_w {
        ln_backward(
            d_hidden,
            &trace.final_ln,
            &model.final_gain,
            Some(&mut grads.final_gain),
            Some(&mut grads.final_bias),
        )
    } else {
        ln_backward(d_hidden, &trace.final_ln, &model.final_gain, None, None)
    };
    let n = dx.rows();

    for (l, (layer, cache)) in model.layers.iter().zip(&trace.layers).enumerate().rev() {
        let mut g = if want_w { Some(&mut grads.layers[l]) } else { None };

        // feed-forward
        let mut dx_mid = dx.clone();
        let dhact = dx.matmul_t(&layer.w2);
        if let Some(g) = g.as_deref_mut() {
            cache.hact.t_matmul_acc(&dx, &mut g.w2);
            dx.sum_rows_acc(&mut g.b2);
        }
        let mut dhpre = dhact;
        for (dv, pre) in dhpre.data_mut().iter_mut().zip(cache.hpre.data()) {
            *dv *= gelu_grad(*pre);
        }
        if let Some(g) = g.as_deref_mut() {
            cache.b.t_matmul_acc(&dhpre, &mut g.w1);
            dhpre.sum_rows_acc(&mut g.b1);
        }
        let db = dhpre.matmul_t(&layer.w1);
        let dln2 = match g.as_deref_mut() {
            Some(g) => ln_backward(
                &db,
                &cache.ln2,
                &layer.ln2_gain,
                Some(&mut g.ln2_gain),
                Some(&mut g.ln2_bias),
            ),
            None => ln_backward(&db, &cache.ln2, &layer.ln2_gain, None, None),
        };
        dx_mid.add_assign(&dln2);

        // attention
        let mut dx_in = dx_mid.clone();
        let dattn = dx_mid.matmul_t(&layer.wo);
        if let Some(g) = g.as_deref_mut() {
            cache.attn.t_matmul_acc(&dx_mid, &mut g.wo);
            dx_mid.sum_rows_acc(&mut g.bo);
        }
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        let mut dp = vec![0.0; n];
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[h];
            for i in 0..n {
                let dai = &dattn.row(i)[cols.clone()];
                let prow = p.row(i);
                for j in 0..n {
                    dp[j] = dot(dai, &cache.v.row(j)[cols.clone()]);
                    let w = prow[j];
                    for (o, a) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dai) {
                        *o += w * a;
                    }
                }
                let inner = dot(prow, &dp);
                for j in 0..n {
                    let ds = prow[j] * (dp[j] - inner) * trace.logit_scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[cols.clone()];
                    for (o, kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *o += ds * kv;
                    }
                    let qi = &cache.q.row(i)[cols.clone()];
                    for (o, qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *o += ds * qv;
                    }
                }
            }
        }
        if let (Some(phases), Some(freqs)) = (&trace.phases, &trace.freqs) {
            for i in 0..n {
                for h in 0..n_heads {
                    rotate_in_place(&mut dq.row_mut(i)[h * dh..(h + 1) * dh], -phases[i], freqs);
                    rotate_in_place(&mut dk.row_mut(i)[h * dh..(h + 1) * dh], -phases[i], freqs);
                }
            }
        }
        if let Some(g) = g.as_deref_mut() {
            cache.a.t_matmul_acc(&dq, &mut g.wq);
            dq.sum_rows_acc(&mut g.bq);
            cache.a.t_matmul_acc(&dk, &mut g.wk);
            dk.sum_rows_acc(&mut g.bk);
            cache.a.t_matmul_acc(&dv, &mut g.wv);
            dv.sum_rows_acc(&mut g.bv);
        }
        let mut da = dq.matmul_t(&layer.wq);
        da.add_assign(&dk.matmul_t(&layer.wk));
        da.add_assign(&dv.matmul_t(&layer.wv));
        let dln1 = match g {
            Some(g) => ln_backward(
                &da,
                &cache.ln1,
                &layer.ln1_gain,
                Some(&mut g.ln1_gain),
                Some(&mut g.ln1_bias),
            ),
            None => ln_backward(&da, &cache.ln1, &layer.ln1_gain, None, None),
        };
        dx_in.add_assign(&dln1);
        dx = dx_in;
    }

    if want_w {
        for (i, &t) in trace.token_ids.iter().enumerate() {
            let dst = grads
                .token_embedding
                .entry(t)
                .or_insert_with(|| vec![0.0; d]);
            for (a, b) in dst.iter_mut().zip(dx.row(i)) {
                *a += b;
            }
        }
    }
    if grads.request.positions {
        if let Some((kind, rows)) = &trace.abs_rows {
            let target = match kind {
                AbsTable::Original => grads.position_table.as_mut(),
                AbsTable::Extended => grads.extended_table.as_mut(),
                AbsTable::Custom => None,
            };
            if let Some(t) = target {
                for (i, &r) in rows.iter().enumerate() {
                    for (a, b) in t.row_mut(r).iter_mut().zip(dx.row(i)) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok(())
}
