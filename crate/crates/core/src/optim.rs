use crate::diffnet::{NetworkParams, ParamGradient};

/// Adaptive-moment (Adam) optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: NetworkParams,
    second: NetworkParams,
    steps: u64,
}

impl Adam {
    pub fn new(params: &NetworkParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first: NetworkParams::zeros(params.arch()),
            second: NetworkParams::zeros(params.arch()),
            steps: 0,
        }
    }

    /// Apply one bias-corrected descent step.
    pub fn step(&mut self, params: &mut NetworkParams, grad: &ParamGradient) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.first.values_mut())
            .zip(self.second.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
