//! Dense 2-D/3-D cross-correlation and its transpose.
//!
//! Weight layouts: `conv*` takes `[C_out, C_in, k, ...]`, `conv_transpose*`
//! takes `[C_in, C_out, k, ...]`. With that convention the same buffer serves
//! both directions and `<conv(a), b> == <a, conv_transpose(b)>` holds with
//! shared weights.
//!
//! Backward passes are written as gathers (one task per gradient element) so
//! they stay deterministic under the `parallel` feature.

use super::{Scalar, Tensor, TensorError};
use crate::par::par_fill;

fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> super::Result<usize> {
    let span = n + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(TensorError::Invalid(format!(
            "non-integral output extent: in={n} k={k} stride={stride} pad={pad}"
        )));
    }
    Ok((span - k) / stride + 1)
}

impl<T: Scalar> Tensor<T> {
    /// 3-D cross-correlation. `self: [C_in, D, H, W]`, `weight: [C_out, C_in, k, k, k]`.
    pub fn conv3d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> super::Result<Tensor<T>> {
        let (ci, d, h, w) = match *self.shape() {
            [ci, d, h, w] => (ci, d, h, w),
            _ => return Err(TensorError::Invalid("conv3d input must be rank 4".into())),
        };
        let (co, wci, k) = match *weight.shape() {
            [co, wci, k1, k2, k3] if k1 == k2 && k2 == k3 => (co, wci, k1),
            _ => return Err(TensorError::Invalid("conv3d weight must be [Co,Ci,k,k,k]".into())),
        };
        if wci != ci {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d: input {ci} channels, weight expects {wci}"
            )));
        }
        if k % 2 == 0 {
            return Err(TensorError::Invalid("conv3d kernel extent must be odd".into()));
        }
        let od = out_extent(d, k, stride, padding)?;
        let oh = out_extent(h, k, stride, padding)?;
        let ow = out_extent(w, k, stride, padding)?;

        let x = self.data();
        let wt = weight.data();
        let b: Option<Vec<T>> = bias.map(|b| b.to_vec());
        let mut out = vec![T::zero(); co * od * oh * ow];
        let ovol = od * oh * ow;
        par_fill(&mut out, |idx| {
            let c = idx / ovol;
            let rem = idx % ovol;
            let oz = rem / (oh * ow);
            let oy = (rem / ow) % oh;
            let ox = rem % ow;
            let mut acc = match &b {
                Some(b) => b[c],
                None => T::zero(),
            };
            for cin in 0..ci {
                let xin = &x[cin * d * h * w..(cin + 1) * d * h * w];
                let wk = &wt[(c * ci + cin) * k * k * k..(c * ci + cin + 1) * k * k * k];
                for kz in 0..k {
                    let iz = (oz * stride + kz).wrapping_sub(padding);
                    if iz >= d {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = (oy * stride + ky).wrapping_sub(padding);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx).wrapping_sub(padding);
                            if ix >= w {
                                continue;
                            }
                            acc += wk[(kz * k + ky) * k + kx] * xin[(iz * h + iy) * w + ix];
                        }
                    }
                }
            }
            acc
        });
        drop(x);
        drop(wt);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![co, od, oh, ow],
            out,
            parents,
            Box::new(move |g, parents| {
                conv3d_backward(
                    g,
                    parents,
                    [ci, d, h, w],
                    [co, od, oh, ow],
                    k,
                    stride,
                    padding,
                );
            }),
        ))
    }

    /// Transposed 3-D convolution (adjoint of `conv3d` under shared weights).
    /// `self: [C_in, D, H, W]`, `weight: [C_in, C_out, k, k, k]`.
    pub fn conv_transpose3d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> super::Result<Tensor<T>> {
        let (ci, d, h, w) = match *self.shape() {
            [ci, d, h, w] => (ci, d, h, w),
            _ => return Err(TensorError::Invalid("conv_transpose3d input must be rank 4".into())),
        };
        let (wci, co, k) = match *weight.shape() {
            [a, b, k1, k2, k3] if k1 == k2 && k2 == k3 => (a, b, k1),
            _ => {
                return Err(TensorError::Invalid(
                    "conv_transpose3d weight must be [Ci,Co,k,k,k]".into(),
                ))
            }
        };
        if wci != ci {
            return Err(TensorError::ShapeMismatch(format!(
                "conv_transpose3d: input {ci} channels, weight expects {wci}"
            )));
        }
        let odim = |n: usize| (n - 1) * stride + k - 2 * padding;
        let (od, oh, ow) = (odim(d), odim(h), odim(w));

        let x = self.data();
        let wt = weight.data();
        let b: Option<Vec<T>> = bias.map(|b| b.to_vec());
        let mut out = vec![T::zero(); co * od * oh * ow];
        let ovol = od * oh * ow;
        // Gather form: out[o] collects every (input, kernel) pair mapping onto it.
        par_fill(&mut out, |idx| {
            let c = idx / ovol;
            let rem = idx % ovol;
            let oz = rem / (oh * ow);
            let oy = (rem / ow) % oh;
            let ox = rem % ow;
            let mut acc = match &b {
                Some(b) => b[c],
                None => T::zero(),
            };
            for cin in 0..ci {
                let xin = &x[cin * d * h * w..(cin + 1) * d * h * w];
                let wk = &wt[(cin * co + c) * k * k * k..(cin * co + c + 1) * k * k * k];
                for kz in 0..k {
                    let nz = oz + padding;
                    if nz < kz || (nz - kz) % stride != 0 {
                        continue;
                    }
                    let iz = (nz - kz) / stride;
                    if iz >= d {
                        continue;
                    }
                    for ky in 0..k {
                        let ny = oy + padding;
                        if ny < ky || (ny - ky) % stride != 0 {
                            continue;
                        }
                        let iy = (ny - ky) / stride;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let nx = ox + padding;
                            if nx < kx || (nx - kx) % stride != 0 {
                                continue;
                            }
                            let ix = (nx - kx) / stride;
                            if ix >= w {
                                continue;
                            }
                            acc += wk[(kz * k + ky) * k + kx] * xin[(iz * h + iy) * w + ix];
                        }
                    }
                }
            }
            acc
        });
        drop(x);
        drop(wt);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![co, od, oh, ow],
            out,
            parents,
            Box::new(move |g, parents| {
                conv_transpose3d_backward(
                    g,
                    parents,
                    [ci, d, h, w],
                    [co, od, oh, ow],
                    k,
                    stride,
                    padding,
                );
            }),
        ))
    }

    /// 2-D cross-correlation. `self: [C_in, H, W]`, `weight: [C_out, C_in, k, k]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> super::Result<Tensor<T>> {
        let (ci, h, w) = match *self.shape() {
            [ci, h, w] => (ci, h, w),
            _ => return Err(TensorError::Invalid("conv2d input must be rank 3".into())),
        };
        let (co, wci, k) = match *weight.shape() {
            [co, wci, k1, k2] if k1 == k2 => (co, wci, k1),
            _ => return Err(TensorError::Invalid("conv2d weight must be [Co,Ci,k,k]".into())),
        };
        if wci != ci {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d: input {ci} channels, weight expects {wci}"
            )));
        }
        if k % 2 == 0 {
            return Err(TensorError::Invalid("conv2d kernel extent must be odd".into()));
        }
        let oh = out_extent(h, k, stride, padding)?;
        let ow = out_extent(w, k, stride, padding)?;

        let x = self.data();
        let wt = weight.data();
        let b: Option<Vec<T>> = bias.map(|b| b.to_vec());
        let mut out = vec![T::zero(); co * oh * ow];
        let ovol = oh * ow;
        par_fill(&mut out, |idx| {
            let c = idx / ovol;
            let oy = (idx % ovol) / ow;
            let ox = idx % ow;
            let mut acc = match &b {
                Some(b) => b[c],
                None => T::zero(),
            };
            for cin in 0..ci {
                let xin = &x[cin * h * w..(cin + 1) * h * w];
                let wk = &wt[(c * ci + cin) * k * k..(c * ci + cin + 1) * k * k];
                for ky in 0..k {
                    let iy = (oy * stride + ky).wrapping_sub(padding);
                    if iy >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx).wrapping_sub(padding);
                        if ix >= w {
                            continue;
                        }
                        acc += wk[ky * k + kx] * xin[iy * w + ix];
                    }
                }
            }
            acc
        });
        drop(x);
        drop(wt);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![co, oh, ow],
            out,
            parents,
            Box::new(move |g, parents| {
                conv2d_backward(g, parents, [ci, h, w], [co, oh, ow], k, stride, padding);
            }),
        ))
    }
}

fn conv3d_backward<T: Scalar>(
    g: &[T],
    parents: &[Tensor<T>],
    [ci, d, h, w]: [usize; 4],
    [co, od, oh, ow]: [usize; 4],
    k: usize,
    stride: usize,
    padding: usize,
) {
    let x = parents[0].to_vec();
    let wt = parents[1].to_vec();
    // grad input: gather over (co, kernel) pairs that read this element.
    let mut gx = vec![T::zero(); ci * d * h * w];
    let ivol = d * h * w;
    par_fill(&mut gx, |idx| {
        let cin = idx / ivol;
        let rem = idx % ivol;
        let iz = rem / (h * w);
        let iy = (rem / w) % h;
        let ix = rem % w;
        let mut acc = T::zero();
        for c in 0..co {
            let gout = &g[c * od * oh * ow..(c + 1) * od * oh * ow];
            let wk = &wt[(c * ci + cin) * k * k * k..(c * ci + cin + 1) * k * k * k];
            for kz in 0..k {
                let nz = iz + padding;
                if nz < kz || (nz - kz) % stride != 0 {
                    continue;
                }
                let oz = (nz - kz) / stride;
                if oz >= od {
                    continue;
                }
                for ky in 0..k {
                    let ny = iy + padding;
                    if ny < ky || (ny - ky) % stride != 0 {
                        continue;
                    }
                    let oy = (ny - ky) / stride;
                    if oy >= oh {
                        continue;
                    }
                    for kx in 0..k {
                        let nx = ix + padding;
                        if nx < kx || (nx - kx) % stride != 0 {
                            continue;
                        }
                        let ox = (nx - kx) / stride;
                        if ox >= ow {
                            continue;
                        }
                        acc += wk[(kz * k + ky) * k + kx] * gout[(oz * oh + oy) * ow + ox];
                    }
                }
            }
        }
        acc
    });
    parents[0].accumulate_grad(&gx);

    let mut gw = vec![T::zero(); co * ci * k * k * k];
    par_fill(&mut gw, |idx| {
        let kk = k * k * k;
        let c = idx / (ci * kk);
        let cin = (idx / kk) % ci;
        let kz = (idx % kk) / (k * k);
        let ky = (idx % (k * k)) / k;
        let kx = idx % k;
        let gout = &g[c * od * oh * ow..(c + 1) * od * oh * ow];
        let xin = &x[cin * d * h * w..(cin + 1) * d * h * w];
        let mut acc = T::zero();
        for oz in 0..od {
            let iz = (oz * stride + kz).wrapping_sub(padding);
            if iz >= d {
                continue;
            }
            for oy in 0..oh {
                let iy = (oy * stride + ky).wrapping_sub(padding);
                if iy >= h {
                    continue;
                }
                for ox in 0..ow {
                    let ix = (ox * stride + kx).wrapping_sub(padding);
                    if ix >= w {
                        continue;
                    }
                    acc += gout[(oz * oh + oy) * ow + ox] * xin[(iz * h + iy) * w + ix];
                }
            }
        }
        acc
    });
    parents[1].accumulate_grad(&gw);

    if parents.len() > 2 {
        let ovol = od * oh * ow;
        let gb: Vec<T> = (0..co)
            .map(|c| g[c * ovol..(c + 1) * ovol].iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        parents[2].accumulate_grad(&gb);
    }
}

fn conv_transpose3d_backward<T: Scalar>(
    g: &[T],
    parents: &[Tensor<T>],
    [ci, d, h, w]: [usize; 4],
    [co, od, oh, ow]: [usize; 4],
    k: usize,
    stride: usize,
    padding: usize,
) {
    let x = parents[0].to_vec();
    let wt = parents[1].to_vec();
    // grad input: exactly the forward conv pattern over g.
    let mut gx = vec![T::zero(); ci * d * h * w];
    let ivol = d * h * w;
    par_fill(&mut gx, |idx| {
        let cin = idx / ivol;
        let rem = idx % ivol;
        let iz = rem / (h * w);
        let iy = (rem / w) % h;
        let ix = rem % w;
        let mut acc = T::zero();
        for c in 0..co {
            let gout = &g[c * od * oh * ow..(c + 1) * od * oh * ow];
            let wk = &wt[(cin * co + c) * k * k * k..(cin * co + c + 1) * k * k * k];
            for kz in 0..k {
                let oz = (iz * stride + kz).wrapping_sub(padding);
                if oz >= od {
                    continue;
                }
                for ky in 0..k {
                    let oy = (iy * stride + ky).wrapping_sub(padding);
                    if oy >= oh {
                        continue;
                    }
                    for kx in 0..k {
                        let ox = (ix * stride + kx).wrapping_sub(padding);
                        if ox >= ow {
                            continue;
                        }
                        acc += wk[(kz * k + ky) * k + kx] * gout[(oz * oh + oy) * ow + ox];
                    }
                }
            }
        }
        acc
    });
    parents[0].accumulate_grad(&gx);

    let mut gw = vec![T::zero(); ci * co * k * k * k];
    par_fill(&mut gw, |idx| {
        let kk = k * k * k;
        let cin = idx / (co * kk);
        let c = (idx / kk) % co;
        let kz = (idx % kk) / (k * k);
        let ky = (idx % (k * k)) / k;
        let kx = idx % k;
        let gout = &g[c * od * oh * ow..(c + 1) * od * oh * ow];
        let xin = &x[cin * d * h * w..(cin + 1) * d * h * w];
        let mut acc = T::zero();
        for iz in 0..d {
            let oz = (iz * stride + kz).wrapping_sub(padding);
            if oz >= od {
                continue;
            }
            for iy in 0..h {
                let oy = (iy * stride + ky).wrapping_sub(padding);
                if oy >= oh {
                    continue;
                }
                for ix in 0..w {
                    let ox = (ix * stride + kx).wrapping_sub(padding);
                    if ox >= ow {
                        continue;
                    }
                    acc += xin[(iz * h + iy) * w + ix] * gout[(oz * oh + oy) * ow + ox];
                }
            }
        }
        acc
    });
    parents[1].accumulate_grad(&gw);

    if parents.len() > 2 {
        let ovol = od * oh * ow;
        let gb: Vec<T> = (0..co)
            .map(|c| g[c * ovol..(c + 1) * ovol].iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        parents[2].accumulate_grad(&gb);
    }
}

fn conv2d_backward<T: Scalar>(
    g: &[T],
    parents: &[Tensor<T>],
    [ci, h, w]: [usize; 3],
    [co, oh, ow]: [usize; 3],
    k: usize,
    stride: usize,
    padding: usize,
) {
    let x = parents[0].to_vec();
    let wt = parents[1].to_vec();
    let mut gx = vec![T::zero(); ci * h * w];
    let ivol = h * w;
    par_fill(&mut gx, |idx| {
        let cin = idx / ivol;
        let iy = (idx % ivol) / w;
        let ix = idx % w;
        let mut acc = T::zero();
        for c in 0..co {
            let gout = &g[c * oh * ow..(c + 1) * oh * ow];
            let wk = &wt[(c * ci + cin) * k * k..(c * ci + cin + 1) * k * k];
            for ky in 0..k {
                let ny = iy + padding;
                if ny < ky || (ny - ky) % stride != 0 {
                    continue;
                }
                let oy = (ny - ky) / stride;
                if oy >= oh {
                    continue;
                }
                for kx in 0..k {
                    let nx = ix + padding;
                    if nx < kx || (nx - kx) % stride != 0 {
                        continue;
                    }
                    let ox = (nx - kx) / stride;
                    if ox >= ow {
                        continue;
                    }
                    acc += wk[ky * k + kx] * gout[oy * ow + ox];
                }
            }
        }
        acc
    });
    parents[0].accumulate_grad(&gx);

    let mut gw = vec![T::zero(); co * ci * k * k];
    par_fill(&mut gw, |idx| {
        let kk = k * k;
        let c = idx / (ci * kk);
        let cin = (idx / kk) % ci;
        let ky = (idx % kk) / k;
        let kx = idx % k;
        let gout = &g[c * oh * ow..(c + 1) * oh * ow];
        let xin = &x[cin * h * w..(cin + 1) * h * w];
        let mut acc = T::zero();
        for oy in 0..oh {
            let iy = (oy * stride + ky).wrapping_sub(padding);
            if iy >= h {
                continue;
            }
            for ox in 0..ow {
                let ix = (ox * stride + kx).wrapping_sub(padding);
                if ix >= w {
                    continue;
                }
                acc += gout[oy * ow + ox] * xin[iy * w + ix];
            }
        }
        acc
    });
    parents[1].accumulate_grad(&gw);

    if parents.len() > 2 {
        let ovol = oh * ow;
        let gb: Vec<T> = (0..co)
            .map(|c| g[c * ovol..(c + 1) * ovol].iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        parents[2].accumulate_grad(&gb);
    }
}
