//! Pointwise and dense-linear ops, all autodiff-capable.

use super::{Scalar, Tensor, TensorError};
use crate::par::par_fill;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> super::Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> super::Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); a.len()];
        par_fill(&mut out, |i| a[i] + b[i]);
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> super::Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); a.len()];
        par_fill(&mut out, |i| a[i] * b[i]);
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let ga: Vec<T> = g.iter().zip(&b).map(|(&g, &b)| g * b).collect();
                let gb: Vec<T> = g.iter().zip(&a).map(|(&g, &a)| g * a).collect();
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        ))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let ga: Vec<T> = g.iter().map(|&g| g * s).collect();
                parents[0].accumulate_grad(&ga);
            }),
        )
    }

    /// Elementwise add of a constant buffer (no gradient to the constant).
    pub fn add_const(&self, base: &[T]) -> super::Result<Tensor<T>> {
        if base.len() != self.numel() {
            return Err(TensorError::ShapeMismatch("add_const".into()));
        }
        let out: Vec<T> = self.data().iter().zip(base).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        par_fill(&mut out, |i| if d[i] > T::zero() { d[i] } else { T::zero() });
        drop(d);
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let ga: Vec<T> = g
                    .iter()
                    .zip(&saved)
                    .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                parents[0].accumulate_grad(&ga);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let d = self.data();
        let one = T::one();
        let mut out = vec![T::zero(); d.len()];
        par_fill(&mut out, |i| one / (one + (-d[i]).exp()));
        drop(d);
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let one = T::one();
                let ga: Vec<T> = g
                    .iter()
                    .zip(&saved)
                    .map(|(&g, &s)| g * s * (one - s))
                    .collect();
                parents[0].accumulate_grad(&ga);
            }),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::from_f64(n as f64))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> super::Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        ))
    }

    /// Concatenate along the first (channel) dimension; trailing dims must agree.
    pub fn concat_channels(parts: &[Tensor<T>]) -> super::Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of nothing".into()));
        }
        let tail = &parts[0].shape()[1..];
        let mut channels = 0usize;
        for p in parts {
            if &p.shape()[1..] != tail {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_channels: {:?} vs {:?}",
                    p.shape(),
                    parts[0].shape()
                )));
            }
            channels += p.shape()[0];
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, parents| {
                let mut off = 0;
                for (p, &n) in parents.iter().zip(&sizes) {
                    p.accumulate_grad(&g[off..off + n]);
                    off += n;
                }
            }),
        ))
    }

    /// Slice `len` channels starting at `start` along the first dimension.
    pub fn narrow_channels(&self, start: usize, len: usize) -> super::Result<Tensor<T>> {
        let c = self.shape()[0];
        if start + len > c {
            return Err(TensorError::Invalid(format!(
                "narrow_channels {start}+{len} > {c}"
            )));
        }
        let stride: usize = self.shape()[1..].iter().product();
        let mut shape = vec![len];
        shape.extend_from_slice(&self.shape()[1..]);
        let d = self.data();
        let out = d[start * stride..(start + len) * stride].to_vec();
        drop(d);
        let total = self.numel();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut full = vec![T::zero(); total];
                full[start * stride..(start + len) * stride].copy_from_slice(g);
                parents[0].accumulate_grad(&full);
            }),
        ))
    }

    /// Fully connected layer over columns: `weight [out,in] x self [in,cols] + bias`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> super::Result<Tensor<T>> {
        if self.shape().len() != 2 || weight.shape().len() != 2 {
            return Err(TensorError::Invalid("linear wants 2-D tensors".into()));
        }
        let (n_in, cols) = (self.shape()[0], self.shape()[1]);
        let (n_out, w_in) = (weight.shape()[0], weight.shape()[1]);
        if w_in != n_in {
            return Err(TensorError::ShapeMismatch(format!(
                "linear: weight {:?} vs input {:?}",
                weight.shape(),
                self.shape()
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [n_out] {
                return Err(TensorError::ShapeMismatch("linear bias".into()));
            }
        }
        let x = self.data();
        let w = weight.data();
        let b: Option<Vec<T>> = bias.map(|b| b.to_vec());
        let mut out = vec![T::zero(); n_out * cols];
        par_fill(&mut out, |idx| {
            let o = idx / cols;
            let c = idx % cols;
            let mut acc = match &b {
                Some(b) => b[o],
                None => T::zero(),
            };
            let wrow = &w[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                acc += wrow[i] * x[i * cols + c];
            }
            acc
        });
        drop(x);
        drop(w);
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![n_out, cols],
            out,
            parents,
            Box::new(move |g, parents| {
                let x = parents[0].to_vec();
                let w = parents[1].to_vec();
                // d x[i,c] = sum_o w[o,i] g[o,c]
                let mut gx = vec![T::zero(); n_in * cols];
                par_fill(&mut gx, |idx| {
                    let i = idx / cols;
                    let c = idx % cols;
                    let mut acc = T::zero();
                    for o in 0..n_out {
                        acc += w[o * n_in + i] * g[o * cols + c];
                    }
                    acc
                });
                parents[0].accumulate_grad(&gx);
                // d w[o,i] = sum_c g[o,c] x[i,c]
                let mut gw = vec![T::zero(); n_out * n_in];
                par_fill(&mut gw, |idx| {
                    let o = idx / n_in;
                    let i = idx % n_in;
                    let mut acc = T::zero();
                    for c in 0..cols {
                        acc += g[o * cols + c] * x[i * cols + c];
                    }
                    acc
                });
                parents[1].accumulate_grad(&gw);
                if parents.len() > 2 {
                    let gb: Vec<T> = (0..n_out)
                        .map(|o| g[o * cols..(o + 1) * cols].iter().fold(T::zero(), |a, &v| a + v))
                        .collect();
                    parents[2].accumulate_grad(&gb);
                }
            }),
        ))
    }

    /// Per-channel standardization over all non-channel dims, then affine γ,β.
    pub fn instance_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> super::Result<Tensor<T>> {
        let c = self.shape()[0];
        let m: usize = self.shape()[1..].iter().product();
        if m == 0 {
            return Err(TensorError::Invalid("instance_norm: empty spatial dims".into()));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch("instance_norm affine".into()));
        }
        let x = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mf = T::from_f64(m as f64);
        let mut means = vec![T::zero(); c];
        let mut ivars = vec![T::zero(); c];
        for ch in 0..c {
            let xs = &x[ch * m..(ch + 1) * m];
            let mu = xs.iter().fold(T::zero(), |a, &v| a + v) / mf;
            let var = xs
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mu) * (v - mu))
                / mf;
            means[ch] = mu;
            ivars[ch] = T::one() / (var + eps).sqrt();
        }
        let mut out = vec![T::zero(); c * m];
        par_fill(&mut out, |idx| {
            let ch = idx / m;
            gm[ch] * (x[idx] - means[ch]) * ivars[ch] + bt[ch]
        });
        drop(x);
        drop(gm);
        drop(bt);
        let saved_mu = means;
        let saved_iv = ivars;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].to_vec();
                let gm = parents[1].to_vec();
                let mf = T::from_f64(m as f64);
                let mut gx = vec![T::zero(); c * m];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for ch in 0..c {
                    let xs = &x[ch * m..(ch + 1) * m];
                    let gs = &g[ch * m..(ch + 1) * m];
                    let mu = saved_mu[ch];
                    let iv = saved_iv[ch];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for i in 0..m {
                        let xn = (xs[i] - mu) * iv;
                        ggamma[ch] += gs[i] * xn;
                        gbeta[ch] += gs[i];
                        sum_g += gs[i];
                        sum_gx += gs[i] * xn;
                    }
                    let gch = gm[ch];
                    for i in 0..m {
                        let xn = (xs[i] - mu) * iv;
                        gx[ch * m + i] =
                            gch * iv * (gs[i] - sum_g / mf - xn * sum_gx / mf);
                    }
                }
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&ggamma);
                parents[2].accumulate_grad(&gbeta);
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        assert_relative_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn concat_shape_contract() {
        let a = Tensor::<f64>::zeros(&[2, 4, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 4, 4, 4]);
        let c = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(c.shape(), &[3, 4, 4, 4]);
    }

    #[test]
    fn concat_shape_mismatch_errors() {
        let a = Tensor::<f64>::zeros(&[2, 4]);
        let b = Tensor::<f64>::zeros(&[1, 5]);
        assert!(Tensor::concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn linear_matches_matvec_oracle() {
        let mut rng = crate::rng::SeededRng::new(7);
        let w: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let wt = Tensor::from_vec(&[3, 4], w.clone()).unwrap();
        let xt = Tensor::from_vec(&[4, 1], x.clone()).unwrap();
        let bt = Tensor::from_vec(&[3], b.clone()).unwrap();
        let y = xt.linear(&wt, Some(&bt)).unwrap();
        for o in 0..3 {
            let mut expect = b[o];
            for i in 0..4 {
                expect += w[o * 4 + i] * x[i];
            }
            assert_relative_eq!(y.data()[o], expect, max_relative = 1e-7);
        }
    }

    #[test]
    fn instance_norm_constant_input_is_zero() {
        let x = Tensor::from_vec(&[2, 4], vec![3.0f64, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0])
            .unwrap();
        let g = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = x.instance_norm(&g, &b, 1e-5).unwrap();
        for &v in y.data().iter() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn instance_norm_moment_oracle() {
        let mut rng = crate::rng::SeededRng::new(11);
        let x: Vec<f64> = (0..3 * 64).map(|_| rng.normal() * 2.0 + 0.3).collect();
        let xt = Tensor::from_vec(&[3, 64], x).unwrap();
        let g = Tensor::from_vec(&[3], vec![1.0; 3]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        let y = x_norm_stats(&xt.instance_norm(&g, &b, 1e-9).unwrap());
        for (mu, var) in y {
            assert!(mu.abs() <= 1e-6, "mean {mu}");
            assert!(var >= 1.0 - 1e-3 && var <= 1.0, "var {var}");
        }
    }

    fn x_norm_stats(t: &Tensor<f64>) -> Vec<(f64, f64)> {
        let c = t.shape()[0];
        let m: usize = t.shape()[1..].iter().product();
        let d = t.data();
        (0..c)
            .map(|ch| {
                let xs = &d[ch * m..(ch + 1) * m];
                let mu = xs.iter().sum::<f64>() / m as f64;
                let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                (mu, var)
            })
            .collect()
    }
}
