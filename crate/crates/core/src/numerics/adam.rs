use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            config,
        }
    }

    /// Advances the moments by one step and returns the parameter update
    /// (to be added to the parameters). The state is left untouched when the
    /// gradient is rejected.
    pub fn delta(&mut self, grads: &Tensor) -> Result<Tensor> {
        if grads.shape() != self.m.shape() {
            return shape_err(
                "adam",
                format!("gradient {:?} vs state {:?}", grads.shape(), self.m.shape()),
            );
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut delta = Tensor::zeros(grads.shape());
        for (((d, m), v), &g) in delta
            .data_mut()
            .iter_mut()
            .zip(self.m.data_mut())
            .zip(self.v.data_mut())
            .zip(grads.data())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *d = -learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(delta)
    }
}

/// One Adam update applied in place: `params += delta`.
pub fn adam_step(params: &mut Tensor, grads: &Tensor, state: &mut AdamState) -> Result<()> {
    if params.shape() != grads.shape() {
        return shape_err(
            "adam",
            format!("params {:?} vs gradient {:?}", params.shape(), grads.shape()),
        );
    }
    let delta = state.delta(grads)?;
    params.add_assign(&delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_leaves_params() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&[3], AdamConfig::default());
        adam_step(&mut p, &Tensor::zeros(&[3]), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let lr = 1e-3;
        let mut p = Tensor::zeros(&[4]);
        let g = Tensor::from_vec(&[4], vec![0.3, -7.0, 1e-3, 50.0]).unwrap();
        let mut s = AdamState::new(&[4], AdamConfig::with_learning_rate(lr));
        let mut last = p.clone();
        for _ in 0..1000 {
            adam_step(&mut p, &g, &mut s).unwrap();
            for ((&a, &b), &gi) in p.data().iter().zip(last.data()).zip(g.data()) {
                let step = (a - b).abs();
                assert!((step - lr).abs() < 0.05 * lr, "step {step} for g {gi}");
                assert_eq!((a - b).signum(), -gi.signum());
            }
            last = p.clone();
        }
        assert_eq!(s.t, 1000);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let g = Tensor::from_vec(&[2], vec![0.25, -0.75]).unwrap();
        let mut s1 = AdamState::new(&[2], AdamConfig::default());
        s1.delta(&g).unwrap();
        let mut s2 = s1.clone();
        let (mut p1, mut p2) = (Tensor::full(&[2], 0.1), Tensor::full(&[2], 0.1));
        adam_step(&mut p1, &g, &mut s1).unwrap();
        adam_step(&mut p2, &g, &mut s2).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = Tensor::zeros(&[2]);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        let g = Tensor::from_vec(&[2], vec![f32::NAN, 1.0]).unwrap();
        assert!(matches!(adam_step(&mut p, &g, &mut s), Err(Error::NonFinite(_))));
        assert_eq!(s.t, 0);
        assert_eq!(p, Tensor::zeros(&[2]));
    }
}
