//! Bilinear sampling of a 2-D feature map at continuous pixel coordinates.
//!
//! Out-of-image samples use zero padding: a corner outside the map
//! contributes nothing, so a fully out-of-bounds coordinate yields a zero
//! feature vector. Coordinates are constants under differentiation; only the
//! feature map receives gradients.

use super::{Scalar, Tensor, TensorError};

impl<T: Scalar> Tensor<T> {
    /// `self: [f, H, W]`, integer coordinates address exact pixels
    /// (`u` = column, `v` = row). Returns `[f, coords.len()]`.
    pub fn bilinear_sample2d(&self, coords: &[(f64, f64)]) -> super::Result<Tensor<T>> {
        let (f, h, w) = match *self.shape() {
            [f, h, w] => (f, h, w),
            _ => return Err(TensorError::Invalid("bilinear_sample2d wants [f,H,W]".into())),
        };
        if coords.iter().any(|&(u, v)| !u.is_finite() || !v.is_finite()) {
            return Err(TensorError::NonFinite("bilinear_sample2d coords".into()));
        }
        let n = coords.len();
        // Per-coord corner indices and weights, shared by forward and backward.
        let mut taps: Vec<[(usize, f64); 4]> = Vec::with_capacity(n);
        for &(u, v) in coords {
            let x0 = u.floor();
            let y0 = v.floor();
            let fx = u - x0;
            let fy = v - y0;
            let mut tap = [(0usize, 0.0f64); 4];
            let mut i = 0;
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let x = x0 as i64 + dx;
                    let y = y0 as i64 + dy;
                    let wgt = wx * wy;
                    if x >= 0 && (x as usize) < w && y >= 0 && (y as usize) < h && wgt != 0.0 {
                        tap[i] = ((y as usize) * w + x as usize, wgt);
                    } else {
                        tap[i] = (0, 0.0);
                    }
                    i += 1;
                }
            }
            taps.push(tap);
        }
        let d = self.data();
        let mut out = vec![T::zero(); f * n];
        for c in 0..f {
            let plane = &d[c * h * w..(c + 1) * h * w];
            for (j, tap) in taps.iter().enumerate() {
                let mut acc = T::zero();
                for &(idx, wgt) in tap {
                    if wgt != 0.0 {
                        acc += plane[idx] * T::from_f64(wgt);
                    }
                }
                out[c * n + j] = acc;
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![f, n],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gf = vec![T::zero(); f * h * w];
                for c in 0..f {
                    let plane = &mut gf[c * h * w..(c + 1) * h * w];
                    for (j, tap) in taps.iter().enumerate() {
                        let go = g[c * n + j];
                        for &(idx, wgt) in tap {
                            if wgt != 0.0 {
                                plane[idx] += go * T::from_f64(wgt);
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gf);
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use approx::assert_relative_eq;

    fn map(h: usize, w: usize, f: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SeededRng::new(seed);
        Tensor::from_vec(&[f, h, w], (0..f * h * w).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn integer_coords_hit_exact_pixels() {
        let m = map(4, 5, 2, 1);
        let s = m.bilinear_sample2d(&[(3.0, 2.0)]).unwrap();
        let d = m.data();
        assert_relative_eq!(s.data()[0], d[2 * 5 + 3]);
        assert_relative_eq!(s.data()[1], d[4 * 5 + 2 * 5 + 3]);
    }

    #[test]
    fn midpoint_is_average_of_neighbours() {
        let m = map(4, 5, 1, 2);
        let s = m.bilinear_sample2d(&[(1.5, 2.0)]).unwrap();
        let d = m.data();
        assert_relative_eq!(s.data()[0], 0.5 * (d[2 * 5 + 1] + d[2 * 5 + 2]), epsilon = 1e-12);
    }

    #[test]
    fn matches_four_corner_weighting_oracle() {
        let m = map(6, 7, 3, 3);
        let mut rng = SeededRng::new(4);
        let coords: Vec<(f64, f64)> = (0..20)
            .map(|_| (rng.uniform(0.0, 6.0), rng.uniform(0.0, 5.0)))
            .collect();
        let s = m.bilinear_sample2d(&coords).unwrap();
        let d = m.data();
        for (j, &(u, v)) in coords.iter().enumerate() {
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            let (fx, fy) = (u - u.floor(), v - v.floor());
            for c in 0..3 {
                let at = |y: usize, x: usize| d[c * 42 + y * 7 + x];
                let expect = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + at(y0, x0 + 1) * fx * (1.0 - fy)
                    + at(y0 + 1, x0) * (1.0 - fx) * fy
                    + at(y0 + 1, x0 + 1) * fx * fy;
                assert_relative_eq!(s.data()[c * 20 + j], expect, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn out_of_bounds_is_zero() {
        let m = map(4, 4, 2, 5);
        let s = m.bilinear_sample2d(&[(-10.0, 1.0), (1.0, 40.0)]).unwrap();
        assert!(s.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_coords_rejected() {
        let m = map(4, 4, 1, 6);
        assert!(m.bilinear_sample2d(&[(f64::NAN, 0.0)]).is_err());
    }
}
