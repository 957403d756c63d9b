use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one ordered list of parameter blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One bias-corrected Adam update. `names` label the blocks in errors.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} moment blocks, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(Error::Shape {
                    op: "adam_step",
                    shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
                });
            }
            if !g.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                let mhat = *mj / bc1;
                let vj = &mut v.data_mut()[j];
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let vhat = *vj / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = Tensor::row(vec![0.3, -1.2, 4.0]);
        let before = p.clone();
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[1, 3])], &["p".into()])
                .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(2.0);
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        adam.step(&mut [&mut p], &[Tensor::scalar(1.0)], &["p".into()]).unwrap();
        assert!((2.0 - p.data()[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn descends_on_quadratic() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        let mut prev = f64::INFINITY;
        for step in 0..100 {
            let g = Tensor::scalar(2.0 * p.data()[0]);
            adam.step(&mut [&mut p], &[g], &["x".into()]).unwrap();
            let x = p.data()[0].abs();
            if step >= 1 {
                assert!(x < prev, "step {step}: {x} !< {prev}");
            }
            prev = x;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut a = Tensor::scalar(0.0);
        let mut b = Tensor::scalar(0.0);
        let mut adam = AdamState::new(&[&a, &b], AdamConfig::default());
        let err = adam
            .step(
                &mut [&mut a, &mut b],
                &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
                &["weight".into(), "bias".into()],
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "bias"));
        assert_eq!(adam.step, 0);
        assert_eq!(a.data()[0], 0.0);
    }

    #[test]
    fn second_moments_stay_non_negative() {
        let mut p = Tensor::row(vec![1.0, 2.0]);
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        for i in 0..20 {
            let g = Tensor::row(vec![(i as f64).sin(), -(i as f64).cos()]);
            adam.step(&mut [&mut p], &[g], &["p".into()]).unwrap();
        }
        assert!(adam.second_moments()[0].data().iter().all(|v| *v >= 0.0));
    }
}
