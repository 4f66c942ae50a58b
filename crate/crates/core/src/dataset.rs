//! Spatially biased training images: IDX ingestion, placement on a canvas,
//! colouring, and procedural glyphs that need no external files.

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Result};
use crate::tensor::{SeededRng, Tensor};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Contents of an IDX file with unsigned-byte payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(offset, format!("header truncated: need 4 bytes, file has {}", bytes.len())),
    }
}

/// Parse a big-endian IDX image (`0x803`) or label (`0x801`) file. The
/// payload must be exactly as long as the header says.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32_be(bytes, 0)?;
    let ndims = match magic {
        IDX_IMAGES => 3,
        IDX_LABELS => 1,
        _ => {
            return format_err(
                0,
                format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES:08x} (images) or 0x{IDX_LABELS:08x} (labels)"),
            )
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        let off = 4 + 4 * k;
        let d = read_u32_be(bytes, off)? as usize;
        if d == 0 {
            return format_err(off, "dimension of size zero");
        }
        dims.push(d);
    }
    let header = 4 + 4 * ndims;
    let expected = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let actual = bytes.len() - header;
    match expected {
        Some(e) if e == actual => {}
        Some(e) if e > actual => {
            return format_err(
                bytes.len(),
                format!("payload truncated: expected {e} bytes, found {actual}"),
            )
        }
        Some(e) => {
            return format_err(
                header + e,
                format!("trailing data: expected {e} payload bytes, found {actual}"),
            )
        }
        None => return format_err(4, "dimensions overflow"),
    }
    let payload = bytes[header..].to_vec();
    Ok(match ndims {
        3 => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload,
        },
        _ => IdxData::Labels(payload),
    })
}

/// Centre a `rows x cols` digit (values in `[0, 1]`) inside a `patch`-sided
/// square by zero padding, and place that square at `offset` (row, col) on
/// a black `canvas x canvas` image.
pub fn make_biased_canvas(
    digit: &[f32],
    rows: usize,
    cols: usize,
    canvas: usize,
    patch: usize,
    offset: (usize, usize),
) -> Result<Vec<f32>> {
    if digit.len() != rows * cols {
        return invalid(format!("digit has {} values for {rows}x{cols}", digit.len()));
    }
    if patch > canvas || rows > patch || cols > patch {
        return invalid(format!(
            "a {rows}x{cols} digit in a {patch} patch does not fit a {canvas} canvas"
        ));
    }
    if offset.0 + patch > canvas || offset.1 + patch > canvas {
        return invalid(format!(
            "patch at {offset:?} of side {patch} leaves the {canvas} canvas"
        ));
    }
    let top = offset.0 + (patch - rows) / 2;
    let left = offset.1 + (patch - cols) / 2;
    let mut out = vec![0f32; canvas * canvas];
    for i in 0..rows {
        for j in 0..cols {
            out[(top + i) * canvas + left + j] = digit[i * cols + j];
        }
    }
    Ok(out)
}

/// Ten saturated hues, one per class label.
pub const PALETTE: [(&str, [f32; 3]); 10] = [
    ("red", [1.0, 0.0, 0.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("lime", [0.5, 1.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("teal", [0.0, 1.0, 0.5]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("purple", [0.5, 0.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
];

/// Palette entry picked deterministically from a seed.
pub fn palette_index_for_seed(seed: u64) -> usize {
    SeededRng::new(seed).below(PALETTE.len())
}

/// Intensity `g` in `[0, 1]` scales the palette colour channel-wise, mapped
/// to `[-1, 1]`: `out_c = 2 g color_c - 1`. Returns `[1, 3, H, W]`.
pub fn colorize(gray: &[f32], height: usize, width: usize, palette_index: usize) -> Result<Tensor> {
    if gray.len() != height * width {
        return invalid(format!("image has {} values for {height}x{width}", gray.len()));
    }
    let Some((_, color)) = PALETTE.get(palette_index) else {
        return invalid(format!("palette index {palette_index} out of range"));
    };
    let mut data = Vec::with_capacity(3 * gray.len());
    for &c in color {
        data.extend(gray.iter().map(|&g| 2.0 * g.clamp(0.0, 1.0) * c - 1.0));
    }
    Tensor::new([1, 3, height, width], data)
}

/// Single-channel `[1, 1, H, W]` image in `[-1, 1]`.
fn monochrome(gray: &[f32], height: usize, width: usize) -> Result<Tensor> {
    Tensor::new(
        [1, 1, height, width],
        gray.iter().map(|&g| 2.0 * g.clamp(0.0, 1.0) - 1.0).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphConfig {
    pub canvas: usize,
    pub patch: usize,
    /// Side of the square the glyph is drawn in; at most `patch`.
    pub glyph: usize,
    /// Top-left corner (row, col) of the placement patch.
    pub offset: (usize, usize),
    /// Three colour channels when set, otherwise one grey channel.
    pub color: bool,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        GlyphConfig {
            canvas: 64,
            patch: 32,
            glyph: 28,
            offset: (0, 0),
            color: true,
        }
    }
}

/// Images in `[-1, 1]` whose content sits inside one placement patch.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedCanvasSet {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub placements: Vec<(usize, usize)>,
    pub patch: usize,
}

impl BiasedCanvasSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Check the range and support invariants: every value in `[-1, 1]`
    /// and only background outside each image's patch.
    pub fn check(&self) -> Result<()> {
        let [n, c, h, w] = self.images.shape();
        if n != self.labels.len() || n != self.placements.len() {
            return invalid("labels and placements must match the image count");
        }
        for b in 0..n {
            let (r0, c0) = self.placements[b];
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = self.images.at(b, ch, i, j);
                        if !(-1.0..=1.0).contains(&v) {
                            return invalid(format!("image {b} value {v} outside [-1, 1]"));
                        }
                        let inside = (r0..r0 + self.patch).contains(&i) && (c0..c0 + self.patch).contains(&j);
                        if !inside && v != -1.0 {
                            return invalid(format!("image {b} has content at ({i}, {j}) outside its patch"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Batch of the given indices.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        Tensor::stack(&idx.iter().map(|&i| self.images.sample(i)).collect::<Vec<_>>())
    }
}

/// Distance from `p` to the segment `a`-`b`.
fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn ring(p: (f64, f64), c: (f64, f64), r: f64) -> f64 {
    (((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - r).abs()
}

fn polyline(p: (f64, f64), pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| seg_dist(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Distance (in normalized units) from `p` to the stroke of class `label`.
/// Coordinates are `(x, y)` in `[-1, 1]`, y pointing down.
fn shape_distance(label: u8, p: (f64, f64)) -> f64 {
    match label {
        0 => ring(p, (0.0, 0.0), 0.7),
        1 => seg_dist(p, (0.0, -0.85), (0.0, 0.85)),
        2 => seg_dist(p, (-0.85, 0.0), (0.85, 0.0)),
        3 => seg_dist(p, (0.0, -0.8), (0.0, 0.8)).min(seg_dist(p, (-0.8, 0.0), (0.8, 0.0))),
        4 => seg_dist(p, (-0.7, -0.7), (0.7, 0.7)).min(seg_dist(p, (-0.7, 0.7), (0.7, -0.7))),
        5 => polyline(p, &[(-0.7, -0.7), (0.7, -0.7), (0.7, 0.7), (-0.7, 0.7), (-0.7, -0.7)]),
        6 => {
            let r = (p.0 * p.0 + p.1 * p.1).sqrt();
            (r - 0.5).max(0.0)
        }
        7 => polyline(p, &[(0.0, -0.8), (0.75, 0.65), (-0.75, 0.65), (0.0, -0.8)]),
        8 => ring(p, (0.0, -0.42), 0.36).min(ring(p, (0.0, 0.42), 0.36)),
        _ => polyline(p, &[(-0.5, -0.85), (-0.5, 0.8), (0.7, 0.8)]),
    }
}

/// Draw one glyph of class `label` on a `size x size` grid, values in `[0, 1]`.
/// Position, scale and stroke width are jittered from `rng`.
pub fn draw_glyph(label: u8, size: usize, rng: &mut SeededRng) -> Vec<f32> {
    let s = size as f64;
    let half = s / 2.0 - 1.0;
    let scale = 0.8 + 0.2 * rng.uniform();
    let jx = (rng.uniform() - 0.5) * 0.1 * s;
    let jy = (rng.uniform() - 0.5) * 0.1 * s;
    let thick = (1.5 + rng.uniform()) * s / 28.0;
    let cx = (s - 1.0) / 2.0 + jx;
    let cy = (s - 1.0) / 2.0 + jy;
    let unit = half * scale;
    let mut out = vec![0f32; size * size];
    for i in 0..size {
        for j in 0..size {
            let p = ((j as f64 - cx) / unit, (i as f64 - cy) / unit);
            let d = shape_distance(label, p) * unit;
            out[i * size + j] = (thick / 2.0 + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

fn package(gray: &[f32], label: u8, cfg: &GlyphConfig) -> Result<Tensor> {
    if cfg.color {
        colorize(gray, cfg.canvas, cfg.canvas, label as usize % PALETTE.len())
    } else {
        monochrome(gray, cfg.canvas, cfg.canvas)
    }
}

/// `n` procedural glyphs from ten shape classes with the default geometry:
/// 64x64 colour canvases, content in the upper-left 32x32 patch.
pub fn synth_glyphs(n: usize, seed: u64) -> Result<BiasedCanvasSet> {
    synth_glyphs_with(n, seed, &GlyphConfig::default())
}

pub fn synth_glyphs_with(n: usize, seed: u64, cfg: &GlyphConfig) -> Result<BiasedCanvasSet> {
    if n == 0 {
        return invalid("need at least one glyph");
    }
    let mut rng = SeededRng::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.below(10) as u8;
        let g = draw_glyph(label, cfg.glyph, &mut rng);
        let canvas = make_biased_canvas(&g, cfg.glyph, cfg.glyph, cfg.canvas, cfg.patch, cfg.offset)?;
        images.push(package(&canvas, label, cfg)?);
        labels.push(label);
    }
    Ok(BiasedCanvasSet {
        images: Tensor::stack(&images)?,
        labels,
        placements: vec![cfg.offset; n],
        patch: cfg.patch,
    })
}

/// Canvas set from parsed IDX image and label files, first `limit` entries.
pub fn from_idx(images: &IdxData, labels: &IdxData, cfg: &GlyphConfig, limit: usize) -> Result<BiasedCanvasSet> {
    let (IdxData::Images { count, rows, cols, pixels }, IdxData::Labels(lab)) = (images, labels) else {
        return invalid("expected an image file and a label file");
    };
    if *count != lab.len() {
        return invalid(format!("{count} images but {} labels", lab.len()));
    }
    let n = limit.min(*count);
    if n == 0 {
        return invalid("no images selected");
    }
    let sz = rows * cols;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let digit: Vec<f32> = pixels[k * sz..(k + 1) * sz].iter().map(|&b| b as f32 / 255.0).collect();
        let canvas = make_biased_canvas(&digit, *rows, *cols, cfg.canvas, cfg.patch, cfg.offset)?;
        out.push(package(&canvas, lab[k], cfg)?);
    }
    Ok(BiasedCanvasSet {
        images: Tensor::stack(&out)?,
        labels: lab[..n].to_vec(),
        placements: vec![cfg.offset; n],
        patch: cfg.patch,
    })
}
