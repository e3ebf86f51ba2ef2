use super::{ModelParams, TensorError};

/// Adam hyperparameters. The default learning rate follows the training
/// protocol this pipeline targets (3e-5); moment decay and epsilon are the
/// usual Adam defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state over a [`ModelParams`] store.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One bias-corrected Adam update. `grads` must align 1:1 with the
    /// entries of `params`. A non-finite gradient aborts the step before any
    /// parameter or state mutation.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                details: format!("{} grads for {} params", grads.len(), params.len()),
            });
        }
        for (entry, g) in params.entries().iter().zip(grads) {
            if g.len() != entry.values.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    details: format!(
                        "grad len {} vs param `{}` len {}",
                        g.len(),
                        entry.name,
                        entry.values.len()
                    ),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite("adam_step gradient"));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for (pi, g) in grads.iter().enumerate() {
            let p = &mut params.entries_mut()[pi].values;
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                p[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.register("x", &[1], vec![v]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(0.7);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut params, &[vec![0.0]]).unwrap();
        }
        assert_eq!(params.entries()[0].values[0], 0.7);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut params = single_param(0.0);
        let mut adam = Adam::new(cfg);
        adam.step(&mut params, &[vec![1.0]]).unwrap();
        let moved = params.entries()[0].values[0].abs();
        assert!((moved - 1e-3).abs() < 1e-6, "first step was {moved}");
    }

    #[test]
    fn ten_steps_on_quadratic_strictly_decrease_loss() {
        // f(x) = (x - 3)^2, gradient 2(x - 3)
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = single_param(0.0);
        let mut adam = Adam::new(cfg);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let x = params.entries()[0].values[0];
            let loss = (x - 3.0) * (x - 3.0);
            assert!(loss < last);
            last = loss;
            adam.step(&mut params, &[vec![2.0 * (x - 3.0)]]).unwrap();
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut params = single_param(0.5);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &[vec![1.0]]).unwrap();
        let before = params.entries()[0].values[0];
        let err = adam.step(&mut params, &[vec![f64::NAN]]);
        assert!(matches!(err, Err(TensorError::NonFinite(_))));
        assert_eq!(params.entries()[0].values[0], before);
    }
}
