//! Rotary position embedding.
//!
//! Dimension pairs `(h[2j], h[2j+1])` are treated as complex numbers
//! `h[2j] + i·h[2j+1]` and rotated by the angle `m·θ_j`, where
//! `θ_j = base^(-2j/d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Per-pair rotation frequencies `θ_j = base^(-2j/d)` for `j < d/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoPEFrequencies {
    base: f64,
    dim: usize,
    theta: Vec<f64>,
}

impl RoPEFrequencies {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Dimension(format!(
                "rotary dimension must be positive and even, got {dim}"
            )));
        }
        if !(base > 1.0) || !base.is_finite() {
            return Err(Error::Config(format!(
                "rotary base must be a finite value > 1, got {base}"
            )));
        }
        let theta = (0..dim / 2)
            .map(|j| base.powf(-2.0 * j as f64 / dim as f64))
            .collect();
        Ok(Self { base, dim, theta })
    }

    /// Frequencies with an explicit table, used by tests that pin `θ` by hand.
    pub fn from_thetas(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Dimension("empty frequency table".into()));
        }
        Ok(Self {
            base: f64::NAN,
            dim: theta.len() * 2,
            theta,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn pairs(&self) -> usize {
        self.theta.len()
    }
}

/// Rotates `h` in place by position `m`.
pub fn rotate_in_place(h: &mut [f64], m: f64, freqs: &RoPEFrequencies) {
    debug_assert_eq!(h.len(), freqs.dim);
    for (pair, &theta) in h.chunks_exact_mut(2).zip(&freqs.theta) {
        let (sin, cos) = (m * theta).sin_cos();
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * cos - b * sin;
        pair[1] = a * sin + b * cos;
    }
}

/// Returns `f(h, m)`: `h` with every dimension pair rotated by `m·θ_j`.
pub fn apply_rope(h: &[f64], m: f64, freqs: &RoPEFrequencies) -> Result<Vec<f64>> {
    if h.len() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "rotary input must have even length, got {}",
            h.len()
        )));
    }
    if h.len() != freqs.dim {
        return Err(Error::Dimension(format!(
            "vector length {} does not match {} frequency pairs",
            h.len(),
            freqs.pairs()
        )));
    }
    let mut out = h.to_vec();
    rotate_in_place(&mut out, m, freqs);
    Ok(out)
}

/// `Re⟨f(q, m), f(k, n)⟩`, evaluated from the relative angle `(m − n)·θ_j`.
pub fn attention_score(
    q: &[f64],
    k: &[f64],
    m: f64,
    n: f64,
    freqs: &RoPEFrequencies,
) -> Result<f64> {
    if q.len() != k.len() {
        return Err(Error::Dimension(format!(
            "query length {} differs from key length {}",
            q.len(),
            k.len()
        )));
    }
    if q.len() % 2 != 0 || q.len() != freqs.dim {
        return Err(Error::Dimension(format!(
            "attention vectors need {} (even) entries, got {}",
            freqs.dim,
            q.len()
        )));
    }
    Ok(relative_score(q, k, m - n, freqs.thetas()))
}

/// `Σ_j Re[(q_{2j} + i q_{2j+1})(k_{2j} − i k_{2j+1}) e^{i·rel·θ_j}]`.
#[inline]
pub(crate) fn relative_score(q: &[f64], k: &[f64], rel: f64, theta: &[f64]) -> f64 {
    q.chunks_exact(2)
        .zip(k.chunks_exact(2))
        .zip(theta)
        .map(|((qp, kp), &t)| {
            let re = qp[0] * kp[0] + qp[1] * kp[1];
            let im = qp[1] * kp[0] - qp[0] * kp[1];
            let (sin, cos) = (rel * t).sin_cos();
            re * cos - im * sin
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, norm};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn standard_frequencies() {
        let f = RoPEFrequencies::new(8, DEFAULT_ROPE_BASE).unwrap();
        assert_eq!(f.thetas()[0], 1.0);
        assert!(f.thetas().windows(2).all(|w| w[1] < w[0]));
        assert!((f.thetas()[1] - 10_000f64.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_position_is_identity() {
        let f = RoPEFrequencies::new(6, DEFAULT_ROPE_BASE).unwrap();
        let h = [0.3, -1.2, 2.0, 0.5, -0.7, 0.1];
        assert_eq!(apply_rope(&h, 0.0, &f).unwrap(), h.to_vec());
    }

    #[test]
    fn quarter_turn_in_two_dimensions() {
        let f = RoPEFrequencies::from_thetas(vec![1.0]).unwrap();
        let out = apply_rope(&[1.0, 0.0], FRAC_PI_2, &f).unwrap();
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn odd_length_is_a_dimension_error() {
        let f = RoPEFrequencies::from_thetas(vec![1.0]).unwrap();
        assert!(matches!(apply_rope(&[1.0, 2.0, 3.0], 1.0, &f), Err(Error::Dimension(_))));
        assert!(RoPEFrequencies::new(5, DEFAULT_ROPE_BASE).is_err());
    }

    #[test]
    fn score_worked_example() {
        // (1 + 0i)(1 - 0i) e^{i·2} → Re = cos 2
        let f = RoPEFrequencies::from_thetas(vec![1.0]).unwrap();
        let s = attention_score(&[1.0, 0.0], &[1.0, 0.0], 3.0, 1.0, &f).unwrap();
        assert!((s - (-0.416_146_836_547_142_4)).abs() < 1e-12);
        assert!((s - 2f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn equal_positions_give_dot_product() {
        let f = RoPEFrequencies::new(4, DEFAULT_ROPE_BASE).unwrap();
        let q = [0.5, -1.0, 2.0, 0.25];
        let k = [1.5, 0.5, -0.5, 3.0];
        let s = attention_score(&q, &k, 7.0, 7.0, &f).unwrap();
        assert!((s - dot(&q, &k)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_error() {
        let f = RoPEFrequencies::new(4, DEFAULT_ROPE_BASE).unwrap();
        assert!(attention_score(&[1.0; 4], &[1.0; 2], 0.0, 0.0, &f).is_err());
    }

    proptest! {
        #[test]
        fn rotation_is_isometry(h in prop::collection::vec(-10.0f64..10.0, 16), m in -5000.0f64..5000.0) {
            let f = RoPEFrequencies::new(16, DEFAULT_ROPE_BASE).unwrap();
            let r = apply_rope(&h, m, &f).unwrap();
            prop_assert!((norm(&r) - norm(&h)).abs() < 1e-9);
        }

        #[test]
        fn score_matches_rotated_dot(
            q in prop::collection::vec(-2.0f64..2.0, 8),
            k in prop::collection::vec(-2.0f64..2.0, 8),
            m in -300.0f64..300.0,
            n in -300.0f64..300.0,
        ) {
            let f = RoPEFrequencies::new(8, DEFAULT_ROPE_BASE).unwrap();
            let direct = dot(&apply_rope(&q, m, &f).unwrap(), &apply_rope(&k, n, &f).unwrap());
            let rel = attention_score(&q, &k, m, n, &f).unwrap();
            prop_assert!((direct - rel).abs() < 1e-9);
        }
    }
}
