//! Fast self-check of the core invariants, used by the `verify` command.

use crate::checkpoint::Checkpoint;
use crate::diffusion::{make_beta_schedule, p_sample_from_eps};
use crate::error::Result;
use crate::eval::patch_similarity;
use crate::pe::{scale_shift_amount, PeGrid, PePyramid, ShiftMode};
use crate::tensor::{check_gradients, conv2d, ConvParams, Padding, SeededRng, Tensor};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn pe_oracle() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (h, c) in [(4, 4), (8, 64), (16, 64)] {
        let g = PeGrid::build(h, h, c)?;
        let d = c / 4;
        for ch in 0..c {
            for i in 0..h {
                for j in 0..h {
                    let (coord, k) = if ch < 2 * d { (i, ch) } else { (j, ch - 2 * d) };
                    let f = 10000f64.powf((k / 2) as f64 / (2 * d) as f64);
                    let x = coord as f64 / f;
                    let v = if k % 2 == 0 { x.sin() } else { x.cos() };
                    worst = worst.max((v - g.at(ch, i, j) as f64).abs());
                }
            }
        }
    }
    Ok((worst <= 1e-6, format!("max abs error {worst:.2e}")))
}

fn shift_laws() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(11);
    let g = PeGrid::build(8, 8, 16)?;
    let mut worst: f32 = 0.0;
    for _ in 0..50 {
        let a = rng.uniform() * 20.0 - 10.0;
        let b = rng.uniform() * 20.0 - 10.0;
        let two = g.shift(a, 0.0, ShiftMode::Circular)?.shift(b, 0.0, ShiftMode::Circular)?;
        let one = g.shift(a + b, 0.0, ShiftMode::Circular)?;
        worst = worst.max(diff(two.data(), one.data()));
    }
    let wrap = g.shift(8.0, 8.0, ShiftMode::Circular)?;
    let ok = worst <= 1e-6 && wrap == g;
    Ok((ok, format!("composition error {worst:.2e}, full-period wrap exact: {}", wrap == g)))
}

fn diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn pyramid_offsets() -> Result<(bool, String)> {
    let p = PePyramid::build(4, 4, &[4; 5])?.shift(16.0, 0.0, ShiftMode::Circular)?;
    let offs: Vec<f64> = p.offsets().iter().map(|o| o.0).collect();
    let expect: Vec<f64> = (1..=5).map(|l| scale_shift_amount(16.0, l, 5)).collect::<Result<_>>()?;
    Ok((offs == expect && offs == [1.0, 2.0, 4.0, 8.0, 16.0], format!("offsets {offs:?}")))
}

fn conv_equivariance() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(5);
    let x = rng.gaussian_tensor([1, 3, 8, 8]);
    let p = ConvParams::new(rng.gaussian_tensor([4, 3, 3, 3]), rng.gaussian_tensor([1, 1, 1, 4]), Padding::Circular, 1)?;
    let a = conv2d(&x.roll(3, -2), &p)?;
    let b = conv2d(&x, &p)?.roll(3, -2);
    let e = a.max_abs_diff(&b);
    Ok((e <= 1e-6, format!("roll mismatch {e:.2e}")))
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(9);
    let inputs = vec![
        rng.gaussian_tensor([2, 2, 5, 5]),
        rng.gaussian_tensor([3, 2, 3, 3]).map(|v| v * 0.3),
        rng.gaussian_tensor([2, 3, 5, 5]),
    ];
    let reports = check_gradients(
        &inputs,
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, Padding::Zero, 1)?;
            let y = t.leaky_relu(y, 0.2);
            t.mse(y, v[2])
        },
        1e-3,
    )?;
    let worst = reports.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    Ok((worst < 1e-3, format!("worst relative error {worst:.2e}")))
}

fn similarity() -> Result<(bool, String)> {
    let a = SeededRng::new(2).gaussian_tensor([1, 1, 6, 6]).map(|v| v.abs().min(1.0));
    let s = patch_similarity(&a, &a.map(|v| v * 0.5))?;
    Ok(((s - 0.5).abs() < 1e-7, format!("sim(A, A/2) = {s}")))
}

fn diffusion_math() -> Result<(bool, String)> {
    let s = make_beta_schedule(200, 1e-3, 0.05)?;
    let mono = s.betas().windows(2).all(|w| w[0] <= w[1]) && s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let product = (1..=200).all(|t| s.alpha_bar(t) == if t == 1 { s.alpha(1) } else { s.alpha_bar(t - 1) * s.alpha(t) });
    let x = Tensor::scalar(0.3);
    let e = Tensor::scalar(-0.8);
    let z = Tensor::scalar(0.5);
    let out = p_sample_from_eps(&x, 17, &e, &s, &z)?.item() as f64;
    let expect = (0.3 - s.beta(17) / (1.0 - s.alpha_bar(17)).sqrt() * -0.8) / s.alpha(17).sqrt() + s.sigma(17) * 0.5;
    let ok = mono && product && (out - expect).abs() < 1e-6;
    Ok((ok, format!("monotone {mono}, product identity {product}, reverse step error {:.2e}", (out - expect).abs())))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let mut c = Checkpoint::new(serde_json::json!({"probe": true}));
    c.push("w", "param", SeededRng::new(1).gaussian_tensor([2, 2, 3, 3]));
    let back = Checkpoint::from_bytes(&c.to_bytes()?)?;
    let exact = back == c;
    Ok((exact, format!("bit-exact: {exact}")))
}

/// Run every check; never panics.
pub fn run_all() -> Vec<Check> {
    vec![
        check("pe-oracle", pe_oracle),
        check("shift-algebra", shift_laws),
        check("pyramid-offsets", pyramid_offsets),
        check("circular-equivariance", conv_equivariance),
        check("gradients", gradients),
        check("similarity", similarity),
        check("diffusion-math", diffusion_math),
        check("checkpoint-round-trip", checkpoint_round_trip),
    ]
}
