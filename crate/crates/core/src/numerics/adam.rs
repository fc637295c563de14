use serde::{Deserialize, Serialize};

use super::{shape_err, NumericsError, ParamStore, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = params
            .tensors()
            .iter()
            .map(|t| vec![S::zero(); t.numel()])
            .collect();
        Adam {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update of every parameter from `grads` (same order as the store).
    ///
    /// Every gradient is checked before any parameter is touched, so a
    /// non-finite gradient leaves both parameters and state unchanged.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Vec<S>]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NumericsError::Contract(format!(
                "adam: {} grads / {} moment buffers for {} parameters",
                grads.len(),
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.get(i).numel() || self.first_moment[i].len() != g.len() {
                return shape_err("adam_step", params.get(i).shape(), &[g.len()]);
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite(params.name(i).to_string()));
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let b1 = S::from_f64_lossy(c.beta1);
        let b2 = S::from_f64_lossy(c.beta2);
        let one = S::one();
        let bc1 = S::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = S::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = S::from_f64_lossy(c.learning_rate);
        let eps = S::from_f64_lossy(c.epsilon);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let p = params.get_mut(i).data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
