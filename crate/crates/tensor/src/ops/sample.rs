use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Pixel coordinate of a normalized coordinate under the align-corners
/// convention: -1 and +1 land on the centers of the first and last pixels.
///
/// Computed in f64. A coordinate within the storage type's resolution of a
/// pixel center is snapped onto it, so an identity grid stored in f32
/// reads pixels back exactly instead of blending in a neighbour.
#[inline]
fn unnormalize<T: Element>(coord: T, size: usize) -> f64 {
    let span = size.saturating_sub(1) as f64;
    let ix = (coord.as_f64() + 1.0) * 0.5 * span;
    let r = ix.round();
    if (ix - r).abs() <= 4.0 * T::epsilon().as_f64() * span.max(1.0) {
        r
    } else {
        ix
    }
}

/// Normalized coordinate of pixel `i` out of `size` (align-corners).
#[inline]
pub fn normalized_coord(i: usize, size: usize) -> f64 {
    if size > 1 {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    } else {
        0.0
    }
}

struct Tap<T> {
    x0: isize,
    y0: isize,
    wx1: T,
    wy1: T,
}

impl<T: Element> Tap<T> {
    fn new(gx: T, gy: T, h: usize, w: usize) -> Self {
        let (ix, iy) = (unnormalize(gx, w), unnormalize(gy, h));
        if ix.is_nan() || iy.is_nan() {
            let nan = T::nan();
            return Tap { x0: 0, y0: 0, wx1: nan, wy1: nan };
        }
        // far outside is the same as just outside: every tap reads zero
        let ix = ix.clamp(-2.0, w as f64 + 1.0);
        let iy = iy.clamp(-2.0, h as f64 + 1.0);
        let fx = ix.floor();
        let fy = iy.floor();
        Tap {
            x0: fx as isize,
            y0: fy as isize,
            wx1: T::from_f64(ix - fx),
            wy1: T::from_f64(iy - fy),
        }
    }

    /// The four corners as (flat index if in bounds, x weight, y weight).
    fn corners(&self, h: usize, w: usize) -> [(Option<usize>, T, T); 4] {
        let at = |x: isize, y: isize| {
            (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
        };
        let (wx0, wy0) = (T::one() - self.wx1, T::one() - self.wy1);
        [
            (at(self.x0, self.y0), wx0, wy0),
            (at(self.x0 + 1, self.y0), self.wx1, wy0),
            (at(self.x0, self.y0 + 1), wx0, self.wy1),
            (at(self.x0 + 1, self.y0 + 1), self.wx1, self.wy1),
        ]
    }
}

impl<T: Element> Tensor<T> {
    /// Bilinear sampling of an NCHW input at normalized `(x, y)` locations
    /// given by an `N×H'×W'×2` grid. Out-of-range taps read zero.
    pub fn grid_sample_bilinear(&self, grid: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = match self.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(TensorError::dim("grid_sample_bilinear", "rank", format!("expected NCHW input, got {s:?}"))),
        };
        let (oh, ow) = match grid.shape() {
            [gn, oh, ow, 2] if *gn == n => (*oh, *ow),
            s => {
                return Err(TensorError::dim(
                    "grid_sample_bilinear",
                    "grid",
                    format!("expected [{n}, H, W, 2], got {s:?}"),
                ))
            }
        };
        let x = self.data();
        let gr = grid.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for ni in 0..n {
            for p in 0..oh * ow {
                let gi = (ni * oh * ow + p) * 2;
                let tap = Tap::new(gr[gi], gr[gi + 1], h, w);
                let corners = tap.corners(h, w);
                for ci in 0..c {
                    let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    let mut v = T::zero();
                    for (idx, wx, wy) in corners {
                        if let Some(i) = idx {
                            v += plane[i] * wx * wy;
                        }
                    }
                    out[(ni * c + ci) * oh * ow + p] = v;
                }
            }
        }
        let (xt, gt) = (self.clone(), grid.clone());
        Tensor::from_op(
            "grid_sample_bilinear",
            out,
            vec![n, c, oh, ow],
            vec![self.clone(), grid.clone()],
            Box::new(move |_, g| {
                let x = xt.data();
                let gr = gt.data();
                let mut gx = vec![T::zero(); x.len()];
                let mut ggrid = vec![T::zero(); gr.len()];
                let sx = T::from_f64(0.5) * T::from_usize(w.saturating_sub(1));
                let sy = T::from_f64(0.5) * T::from_usize(h.saturating_sub(1));
                for ni in 0..n {
                    for p in 0..oh * ow {
                        let gi = (ni * oh * ow + p) * 2;
                        let tap = Tap::new(gr[gi], gr[gi + 1], h, w);
                        let [c00, c10, c01, c11] = tap.corners(h, w);
                        let (wx0, wy0) = (T::one() - tap.wx1, T::one() - tap.wy1);
                        let mut dix = T::zero();
                        let mut diy = T::zero();
                        for ci in 0..c {
                            let base = (ni * c + ci) * h * w;
                            let go = g[(ni * c + ci) * oh * ow + p];
                            let val = |corner: (Option<usize>, T, T)| corner.0.map_or(T::zero(), |i| x[base + i]);
                            let (v00, v10, v01, v11) = (val(c00), val(c10), val(c01), val(c11));
                            dix += go * (wy0 * (v10 - v00) + tap.wy1 * (v11 - v01));
                            diy += go * (wx0 * (v01 - v00) + tap.wx1 * (v11 - v10));
                            for (idx, wx, wy) in [c00, c10, c01, c11] {
                                if let Some(i) = idx {
                                    gx[base + i] += go * wx * wy;
                                }
                            }
                        }
                        ggrid[gi] = dix * sx;
                        ggrid[gi + 1] = diy * sy;
                    }
                }
                vec![Some(gx), Some(ggrid)]
            }),
        )
    }

    /// Sampling grid `N×H×W×2` from affine matrices `theta` of shape
    /// `[N, 2, 3]`: each target pixel's normalized `(x, y, 1)` is mapped
    /// through its batch element's matrix.
    pub fn affine_grid(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let n = match self.shape() {
            [n, 2, 3] => *n,
            s => return Err(TensorError::dim("affine_grid", "theta", format!("expected [N, 2, 3], got {s:?}"))),
        };
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::dim("affine_grid", "size", "output extents must be at least 1"));
        }
        let xs: Vec<T> = (0..out_w).map(|i| T::from_f64(normalized_coord(i, out_w))).collect();
        let ys: Vec<T> = (0..out_h).map(|i| T::from_f64(normalized_coord(i, out_h))).collect();
        let th = self.data();
        let mut out = Vec::with_capacity(n * out_h * out_w * 2);
        for ni in 0..n {
            let t = &th[ni * 6..ni * 6 + 6];
            for &y in &ys {
                for &x in &xs {
                    out.push(t[0] * x + t[1] * y + t[2]);
                    out.push(t[3] * x + t[4] * y + t[5]);
                }
            }
        }
        Tensor::from_op(
            "affine_grid",
            out,
            vec![n, out_h, out_w, 2],
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gt = vec![T::zero(); n * 6];
                for ni in 0..n {
                    let dst = &mut gt[ni * 6..ni * 6 + 6];
                    for (yi, &y) in ys.iter().enumerate() {
                        for (xi, &x) in xs.iter().enumerate() {
                            let gi = ((ni * out_h + yi) * out_w + xi) * 2;
                            let (gx, gy) = (g[gi], g[gi + 1]);
                            dst[0] += gx * x;
                            dst[1] += gx * y;
                            dst[2] += gx;
                            dst[3] += gy * x;
                            dst[4] += gy * y;
                            dst[5] += gy;
                        }
                    }
                }
                vec![Some(gt)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_theta(n: usize) -> Tensor<f64> {
        let mut v = Vec::new();
        for _ in 0..n {
            v.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        Tensor::from_f64(&v, &[n, 2, 3]).unwrap()
    }

    #[test]
    fn identity_grid_reproduces_input() {
        let data: Vec<f64> = (0..2 * 3 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::<f64>::from_f64(&data, &[2, 3, 5, 4]).unwrap();
        let grid = identity_theta(2).affine_grid(5, 4).unwrap();
        let y = x.grid_sample_bilinear(&grid).unwrap();
        for (a, b) in y.to_vec().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_center_hits_pixel() {
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[1, 1, 3, 3]).unwrap();
        // (0, 0) normalized is the center pixel; (1, -1) is top-right
        let grid = Tensor::<f64>::from_f64(&[0.0, 0.0, 1.0, -1.0], &[1, 1, 2, 2]).unwrap();
        assert_eq!(x.grid_sample_bilinear(&grid).unwrap().to_vec(), vec![5.0, 3.0]);
    }

    #[test]
    fn far_outside_is_zero() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 4], 3.0);
        let grid = Tensor::<f64>::full(&[1, 3, 3, 2], -2.0);
        assert!(x.grid_sample_bilinear(&grid).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_pixel_interpolates() {
        let x = Tensor::<f64>::from_f64(&[0.0, 10.0], &[1, 1, 1, 2]).unwrap();
        let grid = Tensor::<f64>::from_f64(&[0.0, 0.0], &[1, 1, 1, 2]).unwrap();
        assert_eq!(x.grid_sample_bilinear(&grid).unwrap().to_vec(), vec![5.0]);
    }

    #[test]
    fn affine_grid_maps_lattice() {
        let grid = identity_theta(1).affine_grid(3, 3).unwrap().to_vec();
        assert_eq!(&grid[..6], &[-1.0, -1.0, 0.0, -1.0, 1.0, -1.0]);
        let zoom = Tensor::<f64>::from_f64(&[0.5, 0.0, 0.0, 0.0, 0.5, 0.0], &[1, 2, 3]).unwrap();
        let z = zoom.affine_grid(3, 3).unwrap().to_vec();
        assert!(z.iter().zip(&grid).all(|(a, b)| *a == 0.5 * b));
        let shift = Tensor::<f64>::from_f64(&[1.0, 0.0, 0.5, 0.0, 1.0, 0.0], &[1, 2, 3]).unwrap();
        let s = shift.affine_grid(3, 3).unwrap().to_vec();
        for (i, (a, b)) in s.iter().zip(&grid).enumerate() {
            let want = if i % 2 == 0 { b + 0.5 } else { *b };
            assert_eq!(*a, want);
        }
    }

    #[test]
    fn single_pixel_axes_map_to_zero() {
        assert_eq!(normalized_coord(0, 1), 0.0);
        assert_eq!(normalized_coord(2, 3), 1.0);
    }

    #[test]
    fn f32_identity_grid_is_exact_at_large_sizes() {
        for side in [48usize, 224, 231] {
            let v: Vec<f32> = (0..side * side).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect();
            let x = Tensor::from_vec(v.clone(), &[1, 1, side, side]).unwrap();
            let theta = Tensor::<f32>::from_f64(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[1, 2, 3]).unwrap();
            let y = x.grid_sample_bilinear(&theta.affine_grid(side, side).unwrap()).unwrap();
            assert_eq!(y.to_vec(), v, "side {side}");
        }
    }

    #[test]
    fn wild_coordinates_read_padding_or_nan() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
        let grid = Tensor::<f32>::from_f64(&[1e30, 0.0, f64::NEG_INFINITY, 3.0, f64::NAN, 0.0], &[1, 1, 3, 2]).unwrap();
        let y = x.grid_sample_bilinear(&grid).unwrap().to_vec();
        assert_eq!(&y[..2], &[0.0, 0.0]);
        assert!(y[2].is_nan());
    }
}
