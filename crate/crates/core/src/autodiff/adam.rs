use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Moments are sized from `shapes`, one entry per parameter tensor.
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[Tensor]) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam_step: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of parameter {i}"),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lr: f64, grad: f64, steps: usize) -> Vec<f64> {
        let mut theta = Tensor::scalar(0.0);
        let mut adam = AdamState::new(lr, [theta.shape()]);
        let mut trace = Vec::new();
        for _ in 0..steps {
            adam.step([&mut theta], &[Tensor::scalar(grad)]).unwrap();
            trace.push(theta.item().unwrap());
        }
        trace
    }

    #[test]
    fn first_step_moves_by_lr() {
        let t = run(0.001, 1.0, 1);
        assert!((t[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        assert_eq!(run(0.001, 0.0, 3), vec![0.0; 3]);
    }

    #[test]
    fn repeated_positive_gradient_decreases_monotonically() {
        let t = run(0.001, 1.0, 2);
        assert!(t[1] < t[0] && t[0] < 0.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        assert_eq!(run(0.0, 5.0, 4), vec![0.0; 4]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut theta = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = AdamState::new(0.1, [theta.shape()]);
        let bad = Tensor::vector(vec![1.0, f64::NAN]);
        assert!(adam.step([&mut theta], &[bad]).is_err());
        assert_eq!(theta.data(), &[1.0, 2.0]);
        assert_eq!(adam.step_count(), 0);
    }
}
