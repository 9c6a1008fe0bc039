use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// State for parameters of the given shapes.
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One update with learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam: {} moments, {} parameters, {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape != g.shape || p.len() != self.m[i].len() {
                return Err(Error::Dimension(format!("adam: parameter {i} is {:?}, gradient {:?}", p.shape, g.shape)));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `base` for the first half of the epochs, then a per-step linear decay
/// that reaches zero at the end of the last epoch.
pub fn learning_rate(base: f64, epochs: usize, epoch: usize, step: usize, steps_per_epoch: usize) -> f64 {
    let hold = epochs / 2;
    if epoch < hold {
        return base;
    }
    let total = ((epochs - hold) * steps_per_epoch).max(1) as f64;
    let done = ((epoch - hold) * steps_per_epoch + step) as f64;
    (base * (1.0 - done / total)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::new(vec![3], vec![0.3, -4.0, 0.0]).unwrap()];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        let before = p[0].data.clone();
        adam.step(&mut p, &g, 0.01).unwrap();
        for j in 0..3 {
            let expect = before[j] - 0.01 * g[0].data[j] / (g[0].data[j].abs() + 1e-8);
            assert!((p[0].data[j] - expect).abs() < 1e-12);
        }
        assert_eq!(p[0].data[2], 0.5);
    }

    #[test]
    fn schedule_holds_then_decays() {
        assert_eq!(learning_rate(1.0, 20, 0, 0, 10), 1.0);
        assert_eq!(learning_rate(1.0, 20, 9, 9, 10), 1.0);
        assert_eq!(learning_rate(1.0, 20, 10, 0, 10), 1.0);
        assert!((learning_rate(1.0, 20, 15, 0, 10) - 0.5).abs() < 1e-15);
        assert!(learning_rate(1.0, 20, 19, 9, 10) > 0.0);
    }
}
