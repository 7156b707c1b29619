use super::{NumError, Tensor};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for a list of parameters, with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(learning_rate: f64, params: &[Tensor<T>]) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(BETA1),
            beta2: T::lit(BETA2),
            epsilon: T::lit(EPSILON),
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.v[i]
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), NumError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NumError::Invalid {
                op: "adam_step",
                msg: format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::vector(&[0.0f64])];
        let mut state = AdamState::new(1e-3, &p);
        state.step(&mut p, &[Tensor::vector(&[1.0])]).unwrap();
        let delta = p[0].data()[0];
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
        assert!((delta + 9.99999995e-4).abs() < 1e-11);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(&[3.0f64, -2.0])];
        let mut state = AdamState::new(1e-3, &p);
        state.step(&mut p, &[Tensor::vector(&[0.0, 0.0])]).unwrap();
        assert_eq!(p[0].data(), &[3.0, -2.0]);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = vec![Tensor::vector(&[1.0f64])];
        let mut state = AdamState::new(1e-3, &p);
        let before = p[0].data()[0];
        state.step(&mut p, &[Tensor::vector(&[1.0])]).unwrap();
        let mid = p[0].data()[0];
        state.step(&mut p, &[Tensor::vector(&[1.0])]).unwrap();
        let after = p[0].data()[0];
        assert!(before > mid && mid > after);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::vector(&[1.0f64, 2.0])];
        let mut state = AdamState::new(1e-3, &p);
        let err = state.step(&mut p, &[Tensor::vector(&[1.0])]).unwrap_err();
        assert!(matches!(err, NumError::ShapeMismatch { .. }));
    }

    #[test]
    fn works_in_single_precision() {
        let mut p = vec![Tensor::vector(&[0.0f32])];
        let mut state = AdamState::new(1e-3, &p);
        state.step(&mut p, &[Tensor::vector(&[1.0f32])]).unwrap();
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-6);
    }
}
