//! Adam with bias correction.

use super::{Scalar, Tensor, TensorError};

pub struct AdamState<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One update over all parameters; missing gradients count as zero.
    pub fn step(&mut self, params: &[Tensor<T>]) -> super::Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "adam: {} params, state has {}",
                params.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let t = T::from_f64(self.t as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        for (i, p) in params.iter().enumerate() {
            let g = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            if g.len() != self.m[i].len() {
                return Err(TensorError::ShapeMismatch("adam: grad/state size".into()));
            }
            let mut data = p.to_vec();
            for (j, &gj) in g.iter().enumerate() {
                let m = self.beta1 * self.m[i][j] + (T::one() - self.beta1) * gj;
                let v = self.beta2 * self.v[i][j] + (T::one() - self.beta2) * gj * gj;
                self.m[i][j] = m;
                self.v[i][j] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                data[j] = data[j] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    pub fn moment_buffers(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Rebuild from checkpointed buffers.
    pub fn from_buffers(
        lr: T,
        t: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t,
            m,
            v,
        }
    }
}
