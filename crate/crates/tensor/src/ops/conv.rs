use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::fill_chunks;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

/// Output extent of a strided window along one axis.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cg_in: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    /// Input row/col for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < size).then_some(p)
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..size`.
    #[inline]
    fn valid(k: usize, stride: usize, pad: usize, size: usize, out: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if size + pad > k { ((size + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }
}

fn nchw(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match t {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        _ => Err(TensorError::dim(op, "rank", format!("expected NCHW, got {t:?}"))),
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation over NCHW input with `[out, in/groups, kh, kw]`
    /// weights. `groups == in_channels` gives a depthwise convolution.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, opts: Conv2dOptions) -> Result<Tensor<T>> {
        let [n, c_in, h, w] = nchw("conv2d", self.shape())?;
        let [c_out, cg_in, kh, kw] = match weight.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(TensorError::dim("conv2d", "weight", format!("expected rank 4, got {s:?}"))),
        };
        let groups = opts.groups;
        if groups == 0 || c_in % groups != 0 {
            return Err(TensorError::dim("conv2d", "axis 1", format!("{c_in} input channels not divisible by {groups} groups")));
        }
        if c_out % groups != 0 {
            return Err(TensorError::dim("conv2d", "weight axis 0", format!("{c_out} output channels not divisible by {groups} groups")));
        }
        if cg_in != c_in / groups {
            return Err(TensorError::dim(
                "conv2d",
                "axis 1",
                format!("input has {c_in} channels, weight expects {} ({cg_in} per group × {groups})", cg_in * groups),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::dim("conv2d", "bias", format!("expected [{c_out}], got {:?}", b.shape())));
            }
        }
        let (sh, sw) = opts.stride;
        let (ph, pw) = opts.padding;
        let oh = conv_out_size(h, kh, sh, ph)
            .ok_or_else(|| TensorError::dim("conv2d", "axis 2", format!("height {h} (+2·{ph}) smaller than kernel {kh}")))?;
        let ow = conv_out_size(w, kw, sw, pw)
            .ok_or_else(|| TensorError::dim("conv2d", "axis 3", format!("width {w} (+2·{pw}) smaller than kernel {kw}")))?;
        let g = Geometry {
            n,
            c_in,
            h,
            w,
            c_out,
            cg_in,
            cg_out: c_out / groups,
            kh,
            kw,
            oh,
            ow,
            sh,
            sw,
            ph,
            pw,
        };

        let x = self.data();
        let wt = weight.data();
        let b = bias.map(|b| b.data());
        let (k, p) = (cg_in * kh * kw, oh * ow);
        let mut out = vec![T::zero(); n * c_out * p];
        fill_chunks(&mut out, c_out * p, c_out * k, |ni, dst| {
            let mut col = vec![T::zero(); k * p];
            for grp in 0..groups {
                im2col(&g, &x[(ni * c_in + grp * cg_in) * h * w..], &mut col);
                let dg = &mut dst[grp * g.cg_out * p..(grp + 1) * g.cg_out * p];
                matmul_acc(dg, &wt[grp * g.cg_out * k..(grp + 1) * g.cg_out * k], &col, g.cg_out, k, p);
            }
            if let Some(b) = b {
                for (co, plane) in dst.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        });

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let has_bias = bias.is_some();
        let (xt, wtt) = (self.clone(), weight.clone());
        Tensor::from_op(
            "conv2d",
            out,
            vec![n, c_out, oh, ow],
            inputs,
            Box::new(move |_, gy| {
                // skip work for operands outside the graph, e.g. raw images
                let mut grads = vec![
                    xt.requires_grad().then(|| conv_grad_input(&g, wtt.data(), gy)),
                    wtt.requires_grad().then(|| conv_grad_weight(&g, xt.data(), gy)),
                ];
                if has_bias {
                    let mut gb = vec![T::zero(); g.c_out];
                    fill_chunks(&mut gb, 1, g.n * g.oh * g.ow, |co, dst| {
                        let mut acc = T::zero();
                        for ni in 0..g.n {
                            let p = (ni * g.c_out + co) * g.oh * g.ow;
                            acc += gy[p..p + g.oh * g.ow].iter().copied().sum();
                        }
                        dst[0] = acc;
                    });
                    grads.push(Some(gb));
                }
                grads
            }),
        )
    }

    /// Max pooling with a square `kernel` window and equal stride. Ties go to
    /// the first maximum in row-major window order.
    pub fn max_pool2d(&self, kernel: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = nchw("max_pool2d", self.shape())?;
        let oh = conv_out_size(h, kernel, kernel, 0)
            .ok_or_else(|| TensorError::dim("max_pool2d", "axis 2", format!("height {h} smaller than window {kernel}")))?;
        let ow = conv_out_size(w, kernel, kernel, 0)
            .ok_or_else(|| TensorError::dim("max_pool2d", "axis 3", format!("width {w} smaller than window {kernel}")))?;
        let x = self.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let src = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = src + oy * kernel * w + ox * kernel;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = src + (oy * kernel + ky) * w + ox * kernel + kx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let len = self.numel();
        Tensor::from_op(
            "max_pool2d",
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gx = vec![T::zero(); len];
                for (&i, &gv) in argmax.iter().zip(g) {
                    gx[i] += gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean over each channel's H×W plane, giving `[N, C, 1, 1]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = nchw("global_avg_pool", self.shape())?;
        let hw = h * w;
        let scale = T::one() / T::from_usize(hw);
        let data = self
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * scale)
            .collect();
        Tensor::from_op(
            "global_avg_pool",
            data,
            vec![n, c, 1, 1],
            vec![self.clone()],
            Box::new(move |_, g| {
                let gx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * scale, hw)).collect();
                vec![Some(gx)]
            }),
        )
    }
}

/// Unfolds one sample's group of `cg_in` planes (starting at `x[0]`) into a
/// `[cg_in·kh·kw, oh·ow]` patch matrix. Padding taps stay zero.
fn im2col<T: Element>(g: &Geometry, x: &[T], col: &mut [T]) {
    let Geometry { h, w, cg_in, kh, kw, oh, ow, sh, sw, ph, pw, .. } = *g;
    let p = oh * ow;
    col.iter_mut().for_each(|v| *v = T::zero());
    for cil in 0..cg_in {
        let src = &x[cil * h * w..(cil + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let (lo, hi) = Geometry::valid(kx, sw, pw, w, ow);
                if lo == hi {
                    continue;
                }
                let first = lo * sw + kx - pw;
                let r = &mut col[((cil * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..oh {
                    let Some(iy) = Geometry::src(oy, ky, sh, ph, h) else { continue };
                    let row = &src[iy * w..(iy + 1) * w];
                    let drow = &mut r[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        drow[lo..hi].copy_from_slice(&row[first..first + hi - lo]);
                    } else {
                        for (i, d) in drow[lo..hi].iter_mut().enumerate() {
                            *d = row[first + i * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: adds patch-matrix entries back onto their pixels.
fn col2im_acc<T: Element>(g: &Geometry, col: &[T], x: &mut [T]) {
    let Geometry { h, w, cg_in, kh, kw, oh, ow, sh, sw, ph, pw, .. } = *g;
    let p = oh * ow;
    for cil in 0..cg_in {
        let dst = &mut x[cil * h * w..(cil + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let (lo, hi) = Geometry::valid(kx, sw, pw, w, ow);
                if lo == hi {
                    continue;
                }
                let first = lo * sw + kx - pw;
                let r = &col[((cil * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..oh {
                    let Some(iy) = Geometry::src(oy, ky, sh, ph, h) else { continue };
                    let drow = &mut dst[iy * w..(iy + 1) * w];
                    axpy_strided_rev(drow, &r[oy * ow..(oy + 1) * ow], lo, hi, sw, first);
                }
            }
        }
    }
}

/// `dst[first + i·stride] += src[lo + i]` for `i` in `0..hi - lo`.
#[inline]
fn axpy_strided_rev<T: Element>(dst: &mut [T], src: &[T], lo: usize, hi: usize, stride: usize, first: usize) {
    if stride == 1 {
        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(&src[lo..hi]) {
            *d += v;
        }
    } else {
        for (i, &v) in src[lo..hi].iter().enumerate() {
            dst[first + i * stride] += v;
        }
    }
}

/// `c += a·b` for row-major `a: m×k`, `b: k×n`, accumulating over `k` in order.
fn matmul_acc<T: Element>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out = &mut c[i * n..(i + 1) * n];
        for (q, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &bv) in out.iter_mut().zip(&b[q * n..(q + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight fixed partial sums, so the result is independent
/// of scheduling but the loop still vectorizes.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let split = a.len() / 8 * 8;
    for (ca, cb) in a[..split].chunks_exact(8).zip(b[..split].chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail
}

fn conv_grad_input<T: Element>(g: &Geometry, wt: &[T], gy: &[T]) -> Vec<T> {
    let Geometry { c_in, h, w, c_out, cg_in, cg_out, kh, kw, oh, ow, .. } = *g;
    let (k, p, groups) = (cg_in * kh * kw, oh * ow, c_in / cg_in);
    // per-group transposed weights: [k, cg_out]
    let mut wtt = vec![T::zero(); c_out * k];
    for grp in 0..groups {
        let (src, dst) = (&wt[grp * cg_out * k..], &mut wtt[grp * cg_out * k..]);
        for co in 0..cg_out {
            for q in 0..k {
                dst[q * cg_out + co] = src[co * k + q];
            }
        }
    }
    let mut gx = vec![T::zero(); g.n * c_in * h * w];
    fill_chunks(&mut gx, c_in * h * w, c_out * k, |ni, dst| {
        let mut col = vec![T::zero(); k * p];
        for grp in 0..groups {
            col.iter_mut().for_each(|v| *v = T::zero());
            let gsrc = &gy[(ni * c_out + grp * cg_out) * p..][..cg_out * p];
            matmul_acc(&mut col, &wtt[grp * cg_out * k..][..cg_out * k], gsrc, k, cg_out, p);
            col2im_acc(g, &col, &mut dst[grp * cg_in * h * w..]);
        }
    });
    gx
}

fn conv_grad_weight<T: Element>(g: &Geometry, x: &[T], gy: &[T]) -> Vec<T> {
    let Geometry { n, c_in, h, w, c_out, cg_in, cg_out, kh, kw, oh, ow, .. } = *g;
    let (k, p) = (cg_in * kh * kw, oh * ow);
    let mut gw = vec![T::zero(); c_out * k];
    fill_chunks(&mut gw, cg_out * k, n * p * k, |grp, dst| {
        let mut col = vec![T::zero(); k * p];
        for ni in 0..n {
            im2col(g, &x[(ni * c_in + grp * cg_in) * h * w..], &mut col);
            for col_o in 0..cg_out {
                let grow = &gy[(ni * c_out + grp * cg_out + col_o) * p..][..p];
                for q in 0..k {
                    dst[col_o * k + q] += dot(grow, &col[q * p..(q + 1) * p]);
                }
            }
        }
    });
    gw
}
