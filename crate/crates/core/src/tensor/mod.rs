//! Dense NCHW tensors and a small reverse-mode engine.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod rng;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use rng::SeededRng;
pub use tape::{Tape, Var};

use crate::error::{invalid, Error, Result};
use crate::pe::PeGrid;

/// Boundary rule for convolutions and blurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Zero,
    Circular,
}

pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f32) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Sum in f64.
    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Surface NaN/Inf as a numeric error naming `what`.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {pos}",
                self.data[pos]
            )));
        }
        Ok(())
    }

    /// Circular translation: output `(h, w)` reads input `(h - sh, w - sw)`.
    pub fn roll(&self, sh: isize, sw: isize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros(self.shape);
        for b in 0..n {
            for ch in 0..c {
                for i in 0..h {
                    let si = (i as isize - sh).rem_euclid(h as isize) as usize;
                    for j in 0..w {
                        let sj = (j as isize - sw).rem_euclid(w as isize) as usize;
                        let v = self.at(b, ch, si, sj);
                        out.set(b, ch, i, j, v);
                    }
                }
            }
        }
        out
    }

    /// Batch entry `n` as a `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let sz = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * sz..(n + 1) * sz].to_vec(),
        }
    }

    /// Concatenate along the batch axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return invalid("stack of zero tensors");
        };
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return invalid(format!(
                    "stack: shape {:?} does not match {:?}",
                    p.shape, first.shape
                ));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Tensor::new([n, c, h, w], data)
    }

    /// Spatial window `[h0, h0 + hh) x [w0, w0 + ww)`, wrapping circularly.
    pub fn crop_wrapped(&self, h0: isize, w0: isize, hh: usize, ww: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, hh, ww]);
        for b in 0..n {
            for ch in 0..c {
                for i in 0..hh {
                    let si = (h0 + i as isize).rem_euclid(h as isize) as usize;
                    for j in 0..ww {
                        let sj = (w0 + j as isize).rem_euclid(w as isize) as usize;
                        out.set(b, ch, i, j, self.at(b, ch, si, sj));
                    }
                }
            }
        }
        out
    }

    /// Replicate along the width axis following index segments `[start, end)`.
    pub fn gather_columns(&self, cols: &[usize]) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, h, cols.len()]);
        for b in 0..n {
            for ch in 0..c {
                for i in 0..h {
                    for (j, &src) in cols.iter().enumerate() {
                        debug_assert!(src < w);
                        out.set(b, ch, i, j, self.at(b, ch, i, src));
                    }
                }
            }
        }
        out
    }

    /// Same as [`Tensor::gather_columns`] along the height axis.
    pub fn gather_rows(&self, rows: &[usize]) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, rows.len(), w]);
        for b in 0..n {
            for ch in 0..c {
                for (i, &src) in rows.iter().enumerate() {
                    debug_assert!(src < h);
                    for j in 0..w {
                        out.set(b, ch, i, j, self.at(b, ch, src, j));
                    }
                }
            }
        }
        out
    }
}

/// Order-insensitive-enough summation for Monte-Carlo estimators: pairwise
/// reduction in f64.
pub fn pairwise_sum(xs: &[f32]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().map(|&v| v as f64).sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Convolution weights, `Cout x Cin x kh x kw`, with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
    pub stride: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Tensor, padding: Padding, stride: usize) -> Result<Self> {
        let [o, _, kh, kw] = weight.shape();
        if kh % 2 == 0 || kw % 2 == 0 {
            return invalid(format!("kernel {kh}x{kw} must have odd sides"));
        }
        if stride == 0 {
            return invalid("stride must be at least 1");
        }
        if bias.len() != o {
            return invalid(format!("bias has {} entries for {o} output channels", bias.len()));
        }
        Ok(ConvParams {
            weight,
            bias,
            padding,
            stride,
        })
    }
}

impl Tensor {
    /// A positional grid as a `[1, C, H, W]` tensor.
    pub fn from_pe(grid: &PeGrid) -> Tensor {
        Tensor {
            shape: [1, grid.channels(), grid.height(), grid.width()],
            data: grid.data().to_vec(),
        }
    }
}

/// `h + gamma * PE`, with the grid broadcast over the batch. `gamma` must be
/// a `[1, 1, 1, 1]` variable and takes part in differentiation.
pub fn add_scaled_pe(tape: &mut Tape, h: Var, gamma: Var, pe: &PeGrid) -> Result<Var> {
    let [_, c, hh, ww] = tape.shape(h);
    if (pe.channels(), pe.height(), pe.width()) != (c, hh, ww) {
        return invalid(format!(
            "positional grid {}x{}x{} does not match features {c}x{hh}x{ww}",
            pe.channels(),
            pe.height(),
            pe.width()
        ));
    }
    if tape.shape(gamma) != [1, 1, 1, 1] {
        return invalid("gamma must be a single scalar");
    }
    let p = tape.constant(Tensor::from_pe(pe));
    let scaled = tape.mul(p, gamma)?;
    tape.add(h, scaled)
}

/// Same-size (stride 1) cross-correlation with the selected boundary rule.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    kernels::conv2d_forward(x, &p.weight, Some(p.bias.data()), p.padding, p.stride)
}

/// Nearest-neighbour 2x upsampling followed by a normalized 3x3 binomial blur.
pub fn upsample2x_blur(x: &Tensor, padding: Padding) -> Tensor {
    kernels::blur3(&kernels::upsample_nearest2x(x), padding)
}
