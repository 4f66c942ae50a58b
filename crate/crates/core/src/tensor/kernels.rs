//! Forward and adjoint kernels. All loops are single-threaded and run in a
//! fixed order, so results are bit-reproducible.

use super::{Padding, Tensor};
use crate::error::{invalid, Result};

/// Source index for output position `o` and kernel tap `k`, or `None` when
/// the tap lands in zero padding.
#[inline]
fn source_index(o: usize, k: usize, pad: usize, stride: usize, n: usize, mode: Padding) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    if i >= 0 && (i as usize) < n {
        Some(i as usize)
    } else {
        match mode {
            Padding::Zero => None,
            Padding::Circular => Some(i.rem_euclid(n as isize) as usize),
        }
    }
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    /// Per (ki, oh): source row or usize::MAX.
    row_src: Vec<usize>,
    col_src: Vec<usize>,
}

impl ConvGeometry {
    fn new(x: [usize; 4], wshape: [usize; 4], padding: Padding, stride: usize) -> Result<Self> {
        let [_, cin, h, w] = x;
        let [cout, wcin, kh, kw] = wshape;
        if cin != wcin {
            return invalid(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return invalid(format!("conv2d: kernel {kh}x{kw} must have odd sides"));
        }
        if stride == 0 {
            return invalid("conv2d: stride must be at least 1");
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let ho = (h - 1) / stride + 1;
        let wo = (w - 1) / stride + 1;
        let mut row_src = vec![usize::MAX; kh * ho];
        for ki in 0..kh {
            for oh in 0..ho {
                if let Some(s) = source_index(oh, ki, ph, stride, h, padding) {
                    row_src[ki * ho + oh] = s;
                }
            }
        }
        let mut col_src = vec![usize::MAX; kw * wo];
        for kj in 0..kw {
            for ow in 0..wo {
                if let Some(s) = source_index(ow, kj, pw, stride, w, padding) {
                    col_src[kj * wo + ow] = s;
                }
            }
        }
        Ok(ConvGeometry {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho,
            wo,
            row_src,
            col_src,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one sample into a `K x P` matrix.
    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oh in 0..self.ho {
                        let sr = self.row_src[ki * self.ho + oh];
                        let d = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if sr == usize::MAX {
                            d.fill(0.0);
                            continue;
                        }
                        let src_row = &plane[sr * self.w..(sr + 1) * self.w];
                        for (ow, v) in d.iter_mut().enumerate() {
                            let sc = self.col_src[kj * self.wo + ow];
                            *v = if sc == usize::MAX { 0.0 } else { src_row[sc] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`]: scatter-add into `gx`.
    fn col2im(&self, cols: &[f32], gx: &mut [f32]) {
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oh in 0..self.ho {
                        let sr = self.row_src[ki * self.ho + oh];
                        if sr == usize::MAX {
                            continue;
                        }
                        for ow in 0..self.wo {
                            let sc = self.col_src[kj * self.wo + ow];
                            if sc != usize::MAX {
                                plane[sr * self.w + sc] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given shapes and
    // strides; callers construct them from tensors of exactly these sizes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    padding: Padding,
    stride: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), padding, stride)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return invalid(format!("conv2d: bias has {} entries for {} outputs", b.len(), g.cout));
        }
    }
    let n = x.shape()[0];
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros([n, g.cout, g.ho, g.wo]);
    let mut cols = vec![0f32; k * p];
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    for b in 0..n {
        g.im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &mut cols);
        let dst = &mut out.data_mut()[b * out_sz..(b + 1) * out_sz];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                dst[o * p..(o + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            g.cout,
            k,
            p,
            weight.data(),
            (k as isize, 1),
            &cols,
            (p as isize, 1),
            beta,
            dst,
        );
    }
    Ok(out)
}

pub struct ConvGrads {
    pub x: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    padding: Padding,
    stride: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), padding, stride)?;
    let n = x.shape()[0];
    let (k, p) = (g.k(), g.p());
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    let mut gx = need.0.then(|| Tensor::zeros(x.shape()));
    let mut gw = need.1.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need.2.then(|| Tensor::zeros([1, g.cout, 1, 1]));
    let mut cols = vec![0f32; k * p];
    let mut gcols = vec![0f32; k * p];
    for b in 0..n {
        let go = &grad_out.data()[b * out_sz..(b + 1) * out_sz];
        if let Some(gw) = gw.as_mut() {
            g.im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &mut cols);
            // gw[O x K] += go[O x P] * cols^T[P x K]
            gemm(
                g.cout,
                p,
                k,
                go,
                (p as isize, 1),
                &cols,
                (1, p as isize),
                1.0,
                gw.data_mut(),
            );
        }
        if let Some(gx) = gx.as_mut() {
            // gcols[K x P] = w^T[K x O] * go[O x P]
            gemm(
                k,
                g.cout,
                p,
                weight.data(),
                (1, k as isize),
                go,
                (p as isize, 1),
                0.0,
                &mut gcols,
            );
            g.col2im(&gcols, &mut gx.data_mut()[b * in_sz..(b + 1) * in_sz]);
        }
        if let Some(gb) = gb.as_mut() {
            for o in 0..g.cout {
                let s: f32 = go[o * p..(o + 1) * p].iter().sum();
                gb.data_mut()[o] += s;
            }
        }
    }
    Ok(ConvGrads {
        x: gx,
        weight: gw,
        bias: gb,
    })
}

pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let (ho, wo) = (2 * h, 2 * w);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for i in 0..ho {
            let s = &src[(plane * h + i / 2) * w..(plane * h + i / 2 + 1) * w];
            let d = &mut dst[(plane * ho + i) * wo..(plane * ho + i + 1) * wo];
            for j in 0..wo {
                d[j] = s[j / 2];
            }
        }
    }
    out
}

/// Adjoint of nearest 2x upsampling: 2x2 sum pooling.
pub fn sum_pool2x(g: &Tensor) -> Tensor {
    let [n, c, ho, wo] = g.shape();
    let (h, w) = (ho / 2, wo / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                dst[(plane * h + i / 2) * w + j / 2] += src[(plane * ho + i) * wo + j];
            }
        }
    }
    out
}

const BINOMIAL: [f32; 3] = [0.25, 0.5, 0.25];

/// Separable `[1,2,1] x [1,2,1] / 16` blur. The kernel is symmetric, so the
/// operator is self-adjoint under both padding rules.
pub fn blur3(x: &Tensor, padding: Padding) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut tmp = Tensor::zeros(x.shape());
    let src = x.data();
    {
        let dst = tmp.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..h {
                for (t, &kv) in BINOMIAL.iter().enumerate() {
                    let Some(si) = source_index(i, t, 1, 1, h, padding) else {
                        continue;
                    };
                    let s = &src[base + si * w..base + (si + 1) * w];
                    let d = &mut dst[base + i * w..base + (i + 1) * w];
                    for j in 0..w {
                        d[j] += kv * s[j];
                    }
                }
            }
        }
    }
    let mut out = Tensor::zeros(x.shape());
    let src = tmp.data();
    let dst = out.data_mut();
    let edge = |s: &[f32], j: usize| {
        let mut acc = 0.0;
        for (t, &kv) in BINOMIAL.iter().enumerate() {
            if let Some(sj) = source_index(j, t, 1, 1, w, padding) {
                acc += kv * s[sj];
            }
        }
        acc
    };
    for row in 0..n * c * h {
        let s = &src[row * w..(row + 1) * w];
        let d = &mut dst[row * w..(row + 1) * w];
        d[0] = edge(s, 0);
        if w > 1 {
            for j in 1..w - 1 {
                d[j] = BINOMIAL[0] * s[j - 1] + BINOMIAL[1] * s[j] + BINOMIAL[2] * s[j + 1];
            }
            d[w - 1] = edge(s, w - 1);
        }
    }
    out
}

pub fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return invalid(format!("avg_pool2x needs even spatial size, got {h}x{w}"));
    }
    let mut out = sum_pool2x(x);
    out.data_mut().iter_mut().for_each(|v| *v *= 0.25);
    Ok(out)
}

pub fn avg_pool2x_backward(g: &Tensor) -> Tensor {
    let mut up = upsample_nearest2x(g);
    up.data_mut().iter_mut().for_each(|v| *v *= 0.25);
    up
}

/// Per-axis bilinear taps with half-pixel centres and edge clamping.
fn bilinear_taps(n: usize, n2: usize) -> Vec<(usize, usize, f32)> {
    let scale = n as f64 / n2 as f64;
    (0..n2)
        .map(|i2| {
            let src = ((i2 as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

pub fn resize_bilinear(x: &Tensor, h2: usize, w2: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let rt = bilinear_taps(h, h2);
    let ct = bilinear_taps(w, w2);
    let mut out = Tensor::zeros([n, c, h2, w2]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for (i, &(r0, r1, fr)) in rt.iter().enumerate() {
            for (j, &(c0, c1, fc)) in ct.iter().enumerate() {
                let top = s[r0 * w + c0] * (1.0 - fc) + s[r0 * w + c1] * fc;
                let bot = s[r1 * w + c0] * (1.0 - fc) + s[r1 * w + c1] * fc;
                dst[(plane * h2 + i) * w2 + j] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(g: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, h2, w2] = g.shape();
    let rt = bilinear_taps(h, h2);
    let ct = bilinear_taps(w, w2);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for (i, &(r0, r1, fr)) in rt.iter().enumerate() {
            for (j, &(c0, c1, fc)) in ct.iter().enumerate() {
                let gv = src[(plane * h2 + i) * w2 + j];
                d[r0 * w + c0] += gv * (1.0 - fr) * (1.0 - fc);
                d[r0 * w + c1] += gv * (1.0 - fr) * fc;
                d[r1 * w + c0] += gv * fr * (1.0 - fc);
                d[r1 * w + c1] += gv * fr * fc;
            }
        }
    }
    out
}
