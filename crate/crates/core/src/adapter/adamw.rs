//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over parallel lists of parameter and gradient tensors.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimMismatch {
                context: "optimizer tensors",
                expected: params.len(),
                found: grads.len(),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::DimMismatch {
                    context: "optimizer tensor length",
                    expected: self.m[i].len(),
                    found: g.len(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut opt = AdamW::new(1e-3, (0.9, 0.999), 1e-8, 0.0);
        let mut a = vec![0.3, -1.7, 2.0];
        let orig = a.clone();
        let g = vec![0.0; 3];
        for _ in 0..5 {
            opt.step(&mut [&mut a], &[&g]).unwrap();
        }
        assert_eq!(a, orig);
    }

    #[test]
    fn zero_lr_is_identity_even_with_decay() {
        let mut opt = AdamW::new(0.0, (0.9, 0.999), 1e-8, 0.01);
        let mut a = vec![0.3, -1.7];
        let orig = a.clone();
        opt.step(&mut [&mut a], &[&[0.5, -0.25]]).unwrap();
        assert_eq!(a, orig);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr · g/|g| (up to eps)
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.0);
        let mut a = vec![1.0, 1.0];
        opt.step(&mut [&mut a], &[&[2.0, -3.0]]).unwrap();
        assert!((a[0] - 0.9).abs() < 1e-6);
        assert!((a[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.5);
        let mut a = vec![2.0];
        opt.step(&mut [&mut a], &[&[0.0]]).unwrap();
        assert!((a[0] - 2.0 * 0.95).abs() < 1e-12);
    }
}
