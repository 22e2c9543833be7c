use super::{mask_gradient, tuning_loss, tuning_loss_and_grad, TrainingPair};
use crate::encoder::Model;
use crate::error::{Error, Result};

/// One training pair plus the fixed skip offsets of its documents.
#[derive(Debug, Clone)]
pub struct GradCheckSample {
    pub pair: TrainingPair,
    /// Positive first, then negatives.
    pub offsets: Vec<usize>,
    pub temperature: f64,
}

/// Largest relative error between the analytic gradient over learnable rows
/// and central finite differences with step `epsilon`.
///
/// Only rows read by the sample are probed; every other learnable entry has
/// an exact zero gradient. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &Model, sample: &GradCheckSample, epsilon: f64) -> Result<f64> {
    let ext = model
        .extended_table()
        .ok_or_else(|| Error::Mode("gradient check needs an extended position table".into()))?;
    let (_, mut analytic) = tuning_loss_and_grad(model, &sample.pair, &sample.offsets, sample.temperature)?;
    mask_gradient(&mut analytic, &ext.table);

    let mut rows: Vec<usize> = sample
        .pair
        .documents()
        .zip(&sample.offsets)
        .flat_map(|(d, &u)| u..u + d.len())
        .filter(|&r| !ext.table.is_frozen(r))
        .collect();
    rows.sort_unstable();
    rows.dedup();

    let dim = ext.table.dim();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for r in rows {
        for c in 0..dim {
            let base = probe.extended.as_ref().expect("present").table.row(r)[c];
            let set = |m: &mut Model, v: f64| {
                m.extended.as_mut().expect("present").table.matrix_mut().row_mut(r)[c] = v;
            };
            set(&mut probe, base + epsilon);
            let up = tuning_loss(&probe, &sample.pair, &sample.offsets, sample.temperature)?;
            set(&mut probe, base - epsilon);
            let down = tuning_loss(&probe, &sample.pair, &sample.offsets, sample.temperature)?;
            set(&mut probe, base);
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.row(r)[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
