use super::{ParamStore, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

/// Adam with bias-corrected moments.
///
/// Moment buffers are created lazily per parameter; a parameter that has
/// received no gradient in a step is left untouched and its own step count
/// does not advance.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of completed `step` calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients held in `store`, then clears
    /// them. Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        for p in store.params() {
            if let Some(g) = &p.grad {
                if !g.is_finite() {
                    return Err(TensorError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;

        for (p, slot) in store.params_mut().iter_mut().zip(&mut self.moments) {
            let Some(grad) = p.grad.take() else {
                continue;
            };
            let m = slot.get_or_insert_with(|| Moments {
                first: vec![0.0; grad.len()],
                second: vec![0.0; grad.len()],
                steps: 0,
            });
            m.steps += 1;
            let t = m.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let values = p.value.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
                let m_hat = m.first[i] / c1;
                let v_hat = m.second[i] / c2;
                values[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
