use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam optimiser state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// In-place bias-corrected Adam update. `lr_scale` optionally rescales the step
    /// of individual coordinates.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr_scale: Option<&[f64]>) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(s) = lr_scale {
            if s.len() != params.len() {
                return Err(Error::invalid("lr_scale length mismatch"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let scale = lr_scale.map_or(1.0, |s| s[i]);
            params[i] -= self.lr * scale * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of one Adam step.
pub fn adam_step(params: &[f64], grads: &[f64], st: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut p = params.to_vec();
    let mut s = st.clone();
    s.update(&mut p, grads, None)?;
    Ok((p, s))
}
