//! Multi-scale 2-D sinusoidal positional embeddings.
//!
//! A [`PeGrid`] stores one scale's embedding together with the real-valued
//! coordinates it was evaluated at. Every transform (shift, resize, tile,
//! extend) produces new coordinates and re-evaluates the closed form there,
//! so fractional coordinates are exact rather than interpolated.
//!
//! Channel layout for a position `(i, j)` with `C = 4d` channels:
//! `[sin(i/f_0), cos(i/f_0), ..., sin(i/f_{d-1}), cos(i/f_{d-1}), <same for j>]`
//! with `f_k = 10000^(k / 2d)`.

use crate::error::{invalid, Result};

const BASE_FREQUENCY: f64 = 10000.0;

/// Coordinates closer than this to the wrap period are snapped to zero.
const WRAP_SNAP: f64 = 1e-9;

/// Boundary rule used when a shift moves coordinates past the grid extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Coordinates wrap modulo the grid's period.
    Circular,
    /// Coordinates leave the original range and are evaluated as-is.
    Open,
}

/// Sinusoidal code of a single coordinate: `2d` values, interleaved sin/cos.
pub fn encode_axis(coord: f64, d: usize) -> Result<Vec<f64>> {
    if !coord.is_finite() {
        return invalid(format!("coordinate must be finite, got {coord}"));
    }
    if d == 0 {
        return invalid("half-pair count d must be at least 1");
    }
    let mut out = Vec::with_capacity(2 * d);
    for k in 0..d {
        let freq = BASE_FREQUENCY.powf(k as f64 / (2 * d) as f64);
        let arg = coord / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

fn check_channels(channels: usize) -> Result<usize> {
    if channels == 0 || !channels.is_multiple_of(4) {
        return invalid(format!(
            "channel count must be a positive multiple of 4 (rows and columns each take C/4 sin/cos pairs), got {channels}"
        ));
    }
    Ok(channels / 4)
}

/// Full code of position `(i, j)`: row half followed by column half.
pub fn encode_position(i: f64, j: f64, channels: usize) -> Result<Vec<f64>> {
    let d = check_channels(channels)?;
    let mut v = encode_axis(i, d)?;
    v.extend(encode_axis(j, d)?);
    Ok(v)
}

/// Shift in level-`l` pixels that corresponds to `k` image pixels in an
/// `L`-level dyadic stack (`l` is 1-based, `L` is the image scale).
pub fn scale_shift_amount(k: f64, level: usize, levels: usize) -> Result<f64> {
    if level == 0 || level > levels {
        return invalid(format!("level {level} outside 1..={levels}"));
    }
    Ok(k * 2f64.powi(level as i32 - levels as i32))
}

/// One coordinate axis of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub coords: Vec<f64>,
    /// Wrap period for circular shifts; `None` once a grid has been
    /// extrapolated past its original extent.
    pub period: Option<f64>,
}

impl Axis {
    fn default_for(n: usize) -> Self {
        Axis {
            coords: (0..n).map(|i| i as f64).collect(),
            period: Some(n as f64),
        }
    }

    fn len(&self) -> usize {
        self.coords.len()
    }

    fn wrap(&self, x: f64) -> f64 {
        match self.period {
            Some(p) => wrap_coord(x, p),
            None => x,
        }
    }

    /// Coordinates with wrap discontinuities removed, so that neighbouring
    /// entries differ by the true lattice step.
    fn unwrapped(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coords.len());
        for (i, &c) in self.coords.iter().enumerate() {
            if i == 0 {
                out.push(c);
                continue;
            }
            let prev_raw = self.coords[i - 1];
            let mut diff = c - prev_raw;
            if let Some(p) = self.period {
                diff -= p * (diff / p).round();
            }
            let prev = out[i - 1];
            out.push(prev + diff);
        }
        out
    }

    /// Coordinate at fractional index `u`, linear between lattice entries and
    /// extrapolated with the end steps outside `[0, n-1]`. Not wrapped.
    fn coord_at(unwrapped: &[f64], u: f64) -> f64 {
        let n = unwrapped.len();
        if n == 1 {
            return unwrapped[0] + u;
        }
        if u <= 0.0 {
            let step = unwrapped[1] - unwrapped[0];
            return unwrapped[0] + u * step;
        }
        let last = (n - 1) as f64;
        if u >= last {
            let step = unwrapped[n - 1] - unwrapped[n - 2];
            return unwrapped[n - 1] + (u - last) * step;
        }
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        if frac == 0.0 {
            return unwrapped[i0];
        }
        unwrapped[i0] + frac * (unwrapped[i0 + 1] - unwrapped[i0])
    }
}

fn wrap_coord(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if period - r < WRAP_SNAP {
        0.0
    } else {
        r
    }
}

/// Explicit positional embedding of one scale, `C x H x W`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PeGrid {
    channels: usize,
    rows: Axis,
    cols: Axis,
    data: Vec<f32>,
}

impl PeGrid {
    fn evaluate(channels: usize, rows: Axis, cols: Axis) -> Result<Self> {
        let d = check_channels(channels)?;
        let (h, w) = (rows.len(), cols.len());
        if h == 0 || w == 0 {
            return invalid("grid must have at least one row and one column");
        }
        let row_codes = rows
            .coords
            .iter()
            .map(|&c| encode_axis(c, d))
            .collect::<Result<Vec<_>>>()?;
        let col_codes = cols
            .coords
            .iter()
            .map(|&c| encode_axis(c, d))
            .collect::<Result<Vec<_>>>()?;
        let half = 2 * d;
        let mut data = vec![0f32; channels * h * w];
        for c in 0..channels {
            let plane = &mut data[c * h * w..(c + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let v = if c < half {
                        row_codes[i][c]
                    } else {
                        col_codes[j][c - half]
                    };
                    plane[i * w + j] = v as f32;
                }
            }
        }
        Ok(PeGrid {
            channels,
            rows,
            cols,
            data,
        })
    }

    /// Default grid over integer coordinates `0..H x 0..W`.
    pub fn build(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("grid size must be at least 1x1, got {height}x{width}"));
        }
        Self::evaluate(channels, Axis::default_for(height), Axis::default_for(width))
    }

    /// Grid over explicit coordinates.
    pub fn from_axes(channels: usize, rows: Axis, cols: Axis) -> Result<Self> {
        Self::evaluate(channels, rows, cols)
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> &Axis {
        &self.rows
    }

    pub fn cols(&self) -> &Axis {
        &self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height() + i) * self.width() + j]
    }

    /// Values at `(:, i, j)`.
    pub fn vector_at(&self, i: usize, j: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.at(c, i, j)).collect()
    }

    /// Output index `i` reads source coordinate `rows[i] - dh`, so positive
    /// shifts move content down and right.
    pub fn shift(&self, dh: f64, dw: f64, mode: ShiftMode) -> Result<Self> {
        if !dh.is_finite() || !dw.is_finite() {
            return invalid("shift amounts must be finite");
        }
        let shift_axis = |axis: &Axis, delta: f64| -> Result<Axis> {
            let coords = match mode {
                ShiftMode::Circular => {
                    let Some(p) = axis.period else {
                        return invalid("circular shift needs a wrap period; this grid was extended past its range");
                    };
                    axis.coords.iter().map(|&c| wrap_coord(c - delta, p)).collect()
                }
                ShiftMode::Open => axis.coords.iter().map(|&c| c - delta).collect(),
            };
            Ok(Axis {
                coords,
                period: axis.period,
            })
        };
        Self::evaluate(
            self.channels,
            shift_axis(&self.rows, dh)?,
            shift_axis(&self.cols, dw)?,
        )
    }

    /// Resample to `H2 x W2`: target index `i2` reads fractional source index
    /// `i2 * H / H2`.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("resize target must be at least 1x1, got {height}x{width}"));
        }
        let resize_axis = |axis: &Axis, n2: usize| -> Axis {
            let n = axis.len();
            let unwrapped = axis.unwrapped();
            let coords = (0..n2)
                .map(|i2| {
                    let u = (i2 * n) as f64 / n2 as f64;
                    axis.wrap(Axis::coord_at(&unwrapped, u))
                })
                .collect();
            Axis {
                coords,
                period: axis.period,
            }
        };
        Self::evaluate(
            self.channels,
            resize_axis(&self.rows, height),
            resize_axis(&self.cols, width),
        )
    }

    /// Concatenate index segments `[start, end)` of the source, each sampled at
    /// unit steps. An empty list for an axis keeps that axis unchanged.
    pub fn tile(&self, h_segments: &[(f64, f64)], w_segments: &[(f64, f64)]) -> Result<Self> {
        if h_segments.is_empty() && w_segments.is_empty() {
            return invalid("tile needs at least one segment");
        }
        let tile_axis = |axis: &Axis, segs: &[(f64, f64)]| -> Result<Axis> {
            if segs.is_empty() {
                return Ok(axis.clone());
            }
            let unwrapped = axis.unwrapped();
            let mut coords = Vec::new();
            for &(start, end) in segs {
                if !(start.is_finite() && end.is_finite()) || end <= start {
                    return invalid(format!("segment [{start}, {end}) is empty or not finite"));
                }
                let mut u = start;
                let mut k = 0usize;
                while u < end {
                    coords.push(axis.wrap(Axis::coord_at(&unwrapped, u)));
                    k += 1;
                    u = start + k as f64;
                }
            }
            Ok(Axis {
                coords,
                period: axis.period,
            })
        };
        Self::evaluate(
            self.channels,
            tile_axis(&self.rows, h_segments)?,
            tile_axis(&self.cols, w_segments)?,
        )
    }

    /// Extrapolate to index range `[-m_h, H + m_h) x [-m_w, W + m_w)`.
    /// The result has no wrap period on an extended axis.
    pub fn extend(&self, margin_h: f64, margin_w: f64) -> Result<Self> {
        if !(margin_h >= 0.0 && margin_w >= 0.0) || !margin_h.is_finite() || !margin_w.is_finite() {
            return invalid("margins must be finite and non-negative");
        }
        let extend_axis = |axis: &Axis, m: f64| -> Axis {
            if m == 0.0 {
                return axis.clone();
            }
            let unwrapped = axis.unwrapped();
            let count = (axis.len() as f64 + 2.0 * m).floor() as usize;
            let coords = (0..count)
                .map(|k| Axis::coord_at(&unwrapped, -m + k as f64))
                .collect();
            Axis {
                coords,
                period: None,
            }
        };
        Self::evaluate(
            self.channels,
            extend_axis(&self.rows, margin_h),
            extend_axis(&self.cols, margin_w),
        )
    }
}

/// Consistent set of per-scale grids, coarsest first. Level `l` (1-based) is
/// `dyadic_factor^(l-1)` times the base size; the last level is image scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PePyramid {
    levels: Vec<PeGrid>,
    dyadic_factor: usize,
    offsets: Vec<(f64, f64)>,
}

impl PePyramid {
    pub fn build(base_h: usize, base_w: usize, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() {
            return invalid("pyramid needs at least one level");
        }
        let levels = channels
            .iter()
            .enumerate()
            .map(|(l, &c)| PeGrid::build(base_h << l, base_w << l, c))
            .collect::<Result<Vec<_>>>()?;
        let n = levels.len();
        Ok(PePyramid {
            levels,
            dyadic_factor: 2,
            offsets: vec![(0.0, 0.0); n],
        })
    }

    /// Wraps already-transformed grids. Offsets start at zero.
    pub fn from_levels(levels: Vec<PeGrid>) -> Result<Self> {
        if levels.is_empty() {
            return invalid("pyramid needs at least one level");
        }
        let n = levels.len();
        Ok(PePyramid {
            levels,
            dyadic_factor: 2,
            offsets: vec![(0.0, 0.0); n],
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[PeGrid] {
        &self.levels
    }

    pub fn level(&self, idx: usize) -> &PeGrid {
        &self.levels[idx]
    }

    pub fn dyadic_factor(&self) -> usize {
        self.dyadic_factor
    }

    /// Accumulated per-level shifts applied through [`PePyramid::shift`].
    pub fn offsets(&self) -> &[(f64, f64)] {
        &self.offsets
    }

    /// Shift by `(dh, dw)` image pixels; level `l` moves by `k * 2^(l-L)`.
    pub fn shift(&self, dh: f64, dw: f64, mode: ShiftMode) -> Result<Self> {
        let n = self.levels.len();
        let mut levels = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for (idx, grid) in self.levels.iter().enumerate() {
            let sh = scale_shift_amount(dh, idx + 1, n)?;
            let sw = scale_shift_amount(dw, idx + 1, n)?;
            levels.push(grid.shift(sh, sw, mode)?);
            let (oh, ow) = self.offsets[idx];
            offsets.push((oh + sh, ow + sw));
        }
        Ok(PePyramid {
            levels,
            dyadic_factor: self.dyadic_factor,
            offsets,
        })
    }

    /// Resize so that the image-scale level becomes `H2 x W2`; level `l`
    /// becomes `H2 / 2^(L-l)`, which must be a whole number.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        let n = self.levels.len();
        let factor = 1usize << (n - 1);
        if !height.is_multiple_of(factor) || !width.is_multiple_of(factor) || height == 0 || width == 0 {
            return invalid(format!(
                "target {height}x{width} is not representable by a {n}-level dyadic stack (needs multiples of {factor})"
            ));
        }
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(idx, g)| {
                let f = 1usize << (n - 1 - idx);
                g.resize(height / f, width / f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PePyramid {
            levels,
            dyadic_factor: self.dyadic_factor,
            offsets: self.offsets.clone(),
        })
    }

    /// Replace every level through `f(level_index, grid)`.
    pub fn map_levels<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &PeGrid) -> Result<PeGrid>,
    {
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, g)| f(i, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(PePyramid {
            levels,
            dyadic_factor: self.dyadic_factor,
            offsets: self.offsets.clone(),
        })
    }

    /// Keep only the first `n` (coarsest) levels.
    pub fn truncate(&self, n: usize) -> Self {
        PePyramid {
            levels: self.levels[..n].to_vec(),
            dyadic_factor: self.dyadic_factor,
            offsets: self.offsets[..n].to_vec(),
        }
    }
}
