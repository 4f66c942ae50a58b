//! Spatial-bias measurements: soft IoU similarity, shift-consistency curves,
//! fractional shifts of a constant input, and quadrant mass.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::generator::{shifted_generate, synth_forward, Generator, Mode, SynthInputs};
use crate::tensor::Tensor;

/// `[N, C, H, W]` in `[-1, 1]` to `[N, 1, H, W]` intensity in `[0, 1]`: the
/// channel mean of `(x + 1) / 2`, clamped.
pub fn to_grayscale(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let s: f64 = (0..c).map(|ch| (x.at(b, ch, i, j) as f64 + 1.0) / 2.0).sum();
                out.set(b, 0, i, j, (s / c as f64).clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// `sum(min(A, B)) / sum(max(A, B))` over values clamped to `[0, 1]`;
/// 1 when both are zero everywhere.
pub fn patch_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return invalid(format!(
            "similarity needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let x = x.clamp(0.0, 1.0) as f64;
        let y = y.clamp(0.0, 1.0) as f64;
        num += x.min(y);
        den += x.max(y);
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

/// Bilinear sample of `c` at coordinates shifted by `(dh, dw)`, wrapping
/// circularly: output `(i, j)` reads `c` at `(i - dh, j - dw)`.
pub fn const_fractional_shift(c: &Tensor, dh: f64, dw: f64) -> Result<Tensor> {
    if !dh.is_finite() || !dw.is_finite() {
        return invalid("shift must be finite");
    }
    let [n, ch, h, w] = c.shape();
    let taps = |len: usize, i: usize, d: f64| {
        let x = i as f64 - d;
        let f0 = x.floor();
        let frac = x - f0;
        let i0 = (f0 as i64).rem_euclid(len as i64) as usize;
        (i0, (i0 + 1) % len, frac)
    };
    let mut out = Tensor::zeros(c.shape());
    for b in 0..n {
        for k in 0..ch {
            for i in 0..h {
                let (r0, r1, fr) = taps(h, i, dh);
                for j in 0..w {
                    let (c0, c1, fc) = taps(w, j, dw);
                    let v = (1.0 - fr) * ((1.0 - fc) * c.at(b, k, r0, c0) as f64 + fc * c.at(b, k, r0, c1) as f64)
                        + fr * ((1.0 - fc) * c.at(b, k, r1, c0) as f64 + fc * c.at(b, k, r1, c1) as f64);
                    out.set(b, k, i, j, v as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Fraction of intensity in the upper-left, upper-right, bottom-left and
/// bottom-right quadrants of a `[1, 1, H, W]` nonnegative map. Odd sides put
/// the middle row/column in the lower/right half.
pub fn quadrant_mass(image: &Tensor) -> Result<[f64; 4]> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 1 {
        return invalid(format!("quadrant mass takes one intensity plane, got {:?}", image.shape()));
    }
    let mut q = [0f64; 4];
    for i in 0..h {
        for j in 0..w {
            let v = image.at(0, 0, i, j).max(0.0) as f64;
            let k = 2 * usize::from(i >= h / 2) + usize::from(j >= w / 2);
            q[k] += v;
        }
    }
    let total: f64 = q.iter().sum();
    if total == 0.0 {
        return Ok([0.25; 4]);
    }
    Ok(q.map(|v| v / total))
}

/// Mean quadrant mass over a batch of images in `[-1, 1]`.
pub fn mean_quadrant_mass(images: &Tensor) -> Result<[f64; 4]> {
    let g = to_grayscale(images);
    let n = g.shape()[0];
    if n == 0 {
        return invalid("empty batch");
    }
    let mut acc = [0f64; 4];
    for b in 0..n {
        let q = quadrant_mass(&g.sample(b))?;
        for k in 0..4 {
            acc[k] += q[k];
        }
    }
    Ok(acc.map(|v| v / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCurve {
    pub shifts: Vec<f64>,
    pub similarities: Vec<f64>,
    pub mode: String,
}

impl ShiftCurve {
    pub fn mean(&self) -> f64 {
        self.similarities.iter().sum::<f64>() / self.similarities.len().max(1) as f64
    }
}

/// Crop size and shift direction for a consistency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub size: usize,
    /// Shift rows (vertical) when set, columns otherwise.
    pub vertical: bool,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec { size: 32, vertical: true }
    }
}

/// Generate at image-pixel shift `(dh, dw)` through the path each mode
/// supports: shifted pyramid for MS-PE, bilinearly shifted constant for the
/// baseline, shifted seed grid for SS-PE.
pub fn generate_shifted(gen: &Generator, inputs: &SynthInputs, dh: f64, dw: f64) -> Result<Tensor> {
    let scale = 2f64.powi(gen.config.levels as i32 - 1);
    match gen.config.mode {
        Mode::MsPe => shifted_generate(gen, inputs, dh, dw),
        Mode::Baseline => {
            let mut g = gen.clone();
            let c = g.params.get("const")?.clone();
            *g.params.get_mut("const")? = const_fractional_shift(&c, dh / scale, dw / scale)?;
            synth_forward(&g, inputs)
        }
        Mode::SsPe => {
            let pyr = match &inputs.pyramid {
                Some(p) => p.clone(),
                None => gen.config.pyramid()?,
            };
            let seed = pyr.truncate(1).map_levels(|_, g| {
                g.shift(dh / scale, dw / scale, crate::pe::ShiftMode::Circular)
            })?;
            synth_forward(
                gen,
                &SynthInputs {
                    pyramid: Some(seed),
                    ..inputs.clone()
                },
            )
        }
    }
}

/// Similarity between the crop at the origin of the unshifted image and the
/// crop that follows the content in each shifted image, averaged over the
/// batch. Shifts are image pixels along the crop's direction.
pub fn shift_consistency_curve(
    gen: &Generator,
    inputs: &SynthInputs,
    shifts: &[f64],
    crop: CropSpec,
) -> Result<ShiftCurve> {
    let base = to_grayscale(&synth_forward(gen, inputs)?);
    let [n, _, h, w] = base.shape();
    if crop.size > h || crop.size > w {
        return invalid(format!("crop {} larger than image {h}x{w}", crop.size));
    }
    let a = base.crop_wrapped(0, 0, crop.size, crop.size);
    let mut sims = Vec::with_capacity(shifts.len());
    for &s in shifts {
        let (dh, dw) = if crop.vertical { (s, 0.0) } else { (0.0, s) };
        let img = to_grayscale(&generate_shifted(gen, inputs, dh, dw)?);
        let b = img.crop_wrapped(dh.round() as isize, dw.round() as isize, crop.size, crop.size);
        let mut acc = 0.0;
        for k in 0..n {
            acc += patch_similarity(&a.sample(k), &b.sample(k))?;
        }
        sims.push(acc / n as f64);
    }
    Ok(ShiftCurve {
        shifts: shifts.to_vec(),
        similarities: sims,
        mode: gen.config.mode.to_string(),
    })
}
