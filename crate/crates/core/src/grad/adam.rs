//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::grad::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr: F::of(lr),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = F::one() - self.beta1.powi(t);
        let c2 = F::one() - self.beta2.powi(t);
        let one = F::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::<f64>::new(0.1, 3);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut opt = Adam::<f64>::new(0.0, 2);
        let mut p = vec![1.0, 2.0];
        opt.step(&mut p, &[5.0, -1.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn constant_gradient_steps_by_the_rate() {
        let mut opt = Adam::<f64>::new(0.01, 2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..1000 {
            let before = p.clone();
            opt.step(&mut p, &[3.0, -0.5]).unwrap();
            assert!(((before[0] - p[0]) - 0.01).abs() < 1e-8);
            assert!(((p[1] - before[1]) - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut opt = Adam::<f64>::new(0.01, 2);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
