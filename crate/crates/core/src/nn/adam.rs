use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam accumulators for one flattened parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. `params` and `grads` are matching
    /// sequences of slices whose concatenation has the group's length.
    pub fn step<'a, 'b>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: impl IntoIterator<Item = &'b [f64]>,
    ) -> Result<()> {
        let params: Vec<&mut [f64]> = params.into_iter().collect();
        let grads: Vec<&[f64]> = grads.into_iter().collect();
        let np: usize = params.iter().map(|p| p.len()).sum();
        let ng: usize = grads.iter().map(|g| g.len()).sum();
        if np != self.first_moment.len() {
            return Err(Error::dim("adam parameters", self.first_moment.len(), np));
        }
        if ng != np || params.len() != grads.len() {
            return Err(Error::dim("adam gradients", np, ng));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::dim("adam gradient slice", p.len(), g.len()));
            }
            for (w, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.first_moment[k];
                let v = &mut self.second_moment[k];
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                k += 1;
            }
        }
        Ok(())
    }
}
