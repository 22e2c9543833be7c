use std::collections::HashMap;

/// Momentum-free adaptive optimizer (Adam with `β1 = 0`) with linear
/// learning-rate warmup. Second-moment state is kept per named tensor and
/// only touched where a gradient is applied.
#[derive(Debug, Clone)]
pub struct AdaptiveOptimizer {
    learning_rate: f64,
    warmup_steps: usize,
    beta2: f64,
    eps: f64,
    step: usize,
    second_moment: HashMap<String, Vec<f64>>,
}

impl AdaptiveOptimizer {
    pub fn new(learning_rate: f64, warmup_steps: usize) -> Self {
        Self {
            learning_rate,
            warmup_steps,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second_moment: HashMap::new(),
        }
    }

    /// Advances the step counter and returns the learning rate for it.
    pub fn begin_step(&mut self) -> f64 {
        self.step += 1;
        self.current_lr()
    }

    pub fn current_lr(&self) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (self.step as f64 / self.warmup_steps as f64).min(1.0)
    }

    fn apply(&mut self, name: &str, total: usize, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let v = self
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; total]);
        let correction = 1.0 - self.beta2.powi(self.step.max(1) as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let vi = &mut v[offset + i];
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let vhat = *vi / correction;
            *p -= lr * g / (vhat.sqrt() + self.eps);
        }
    }

    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        let total = params.len();
        self.apply(name, total, 0, params, grads, lr);
    }

    /// Updates one row of a row-major tensor with `total` entries.
    pub fn update_row(
        &mut self,
        name: &str,
        total: usize,
        row: usize,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
    ) {
        let offset = row * params.len();
        self.apply(name, total, offset, params, grads, lr);
    }
}
