//! Portable pixmap (binary PGM/PPM) and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{format_err, invalid, Result};
use crate::eval::ShiftCurve;
use crate::tensor::Tensor;

fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Encode one `[1, C, H, W]` image in `[-1, 1]` as PGM (`C = 1`) or PPM
/// (`C = 3`).
pub fn encode_pnm(img: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = img.shape();
    if n != 1 || (c != 1 && c != 3) {
        return invalid(format!("pixmaps take one 1- or 3-channel image, got {:?}", img.shape()));
    }
    let mut out = format!("P{}\n{w} {h}\n255\n", if c == 1 { 5 } else { 6 }).into_bytes();
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.push(to_byte(img.at(0, ch, i, j)));
            }
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pnm(img)?)?;
    Ok(())
}

/// Decode a binary PGM/PPM with maxval 255 into `[1, C, H, W]` in `[-1, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err(pos, "pixmap header ends early");
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    pos += 1;
    let c = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return format_err(0, format!("unsupported pixmap kind {other}")),
    };
    let num = |k: usize| -> Result<usize> {
        fields[k]
            .1
            .parse()
            .or_else(|_| format_err(fields[k].0, format!("bad header number '{}'", fields[k].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return format_err(fields[3].0, format!("maxval {maxval} unsupported, expected 255"));
    }
    let need = w * h * c;
    if bytes.len() < pos + need {
        return format_err(bytes.len(), format!("pixel data truncated: expected {need} bytes"));
    }
    let mut img = Tensor::zeros([1, c, h, w]);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let b = bytes[pos + (i * w + j) * c + ch];
                img.set(0, ch, i, j, b as f32 / 127.5 - 1.0);
            }
        }
    }
    Ok(img)
}

pub const CURVE_HEADER: &str = "shift,similarity,mode";

/// Curves as CSV with header `shift,similarity,mode`.
pub fn curves_csv(curves: &[ShiftCurve]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for c in curves {
        for (x, y) in c.shifts.iter().zip(&c.similarities) {
            let _ = writeln!(s, "{x},{y:.9},{}", c.mode);
        }
    }
    s
}

/// Loss log as CSV with header `step,loss`.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l:.9}", i + 1);
    }
    s
}
