//! Adam optimizer with bias-corrected moment estimates.

use super::model::{LayerDims, Params};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Params,
    v: Params,
    t: u64,
}

impl Adam {
    pub fn new(dims: LayerDims) -> Adam {
        Adam {
            m: Params::zeros(dims),
            v: Params::zeros(dims),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `r`:
    /// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
    /// p <- p - r * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
    pub fn step(&mut self, params: &mut Params, grads: &Params, r: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Train(
                "non-finite gradient: training diverged (check the learning rate)".into(),
            ));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Train(format!(
                "learning rate must be positive and finite, got {r}"
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut p_s = params.slices_mut();
        let mut m_s = self.m.slices_mut();
        let mut v_s = self.v.slices_mut();
        let g_s = grads.slices();
        if p_s.len() != g_s.len() || p_s.iter().zip(&g_s).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Shape(
                "gradient shapes do not match the parameters".into(),
            ));
        }
        for t in 0..p_s.len() {
            let (p, m, v, g) = (&mut p_s[t], &mut m_s[t], &mut v_s[t], g_s[t]);
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= r * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
