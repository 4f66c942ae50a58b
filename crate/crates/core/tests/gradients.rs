use mspe::error::Result;
use mspe::generator::{Denoiser, DenoiserConfig, Generator, GeneratorConfig, Mode};
use mspe::pe::PeGrid;
use mspe::tensor::{add_scaled_pe, check_gradients, Padding, SeededRng, Tape, Tensor, Var};

const TOL: f64 = 1e-3;
const STEP: f32 = 1e-3;

fn check(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let reports = check_gradients(&inputs, f, STEP).unwrap();
    assert_eq!(reports.len(), inputs.len());
    for r in reports {
        assert!(r.passes(TOL), "{name}: input {} rel {:.2e} abs {:.2e}", r.input, r.rel_err, r.max_abs_err);
    }
}

fn rand(rng: &mut SeededRng, shape: [usize; 4]) -> Tensor {
    rng.gaussian_tensor(shape)
}

/// Values kept away from zero so the kink of leaky ReLU is never straddled.
fn away_from_zero(rng: &mut SeededRng, shape: [usize; 4]) -> Tensor {
    rng.gaussian_tensor(shape).map(|v| if v.abs() < 0.05 { v.signum() * 0.1 + v } else { v })
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut r = SeededRng::new(1);
    let a = rand(&mut r, [2, 4, 8, 8]);
    let b = rand(&mut r, [2, 4, 8, 8]);
    let bc = rand(&mut r, [1, 4, 1, 1]);
    let s = rand(&mut r, [1, 1, 1, 1]);
    check("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    check("add broadcast", vec![a.clone(), bc.clone()], |t, v| t.add(v[0], v[1]));
    check("mul broadcast", vec![a.clone(), bc.clone()], |t, v| t.mul(v[0], v[1]));
    check("mul scalar", vec![a.clone(), s.clone()], |t, v| t.mul(v[1], v[0]));
    check("broadcast_to", vec![bc.clone()], |t, v| t.broadcast_to(v[0], [2, 4, 8, 8]));
    check("scale", vec![a.clone()], |t, v| Ok(t.scale(v[0], -1.7)));
    let lr = away_from_zero(&mut r, [2, 4, 8, 8]);
    check("leaky_relu", vec![lr], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
}

#[test]
fn reductions_and_losses() {
    let mut r = SeededRng::new(2);
    let a = rand(&mut r, [2, 4, 8, 8]);
    let b = rand(&mut r, [2, 4, 8, 8]);
    check("sum", vec![a.clone()], |t, v| Ok(t.sum(v[0])));
    check("mean", vec![a.clone()], |t, v| Ok(t.mean(v[0])));
    check("mse", vec![a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]));
    let c = rand(&mut r, [2, 3, 8, 8]);
    check("concat_channels", vec![a, c], |t, v| t.concat_channels(v[0], v[1]));
}

#[test]
fn convolutions() {
    let mut r = SeededRng::new(3);
    let x = rand(&mut r, [2, 3, 8, 8]);
    let w3 = rand(&mut r, [4, 3, 3, 3]).map(|v| v * 0.3);
    let w1 = rand(&mut r, [4, 3, 1, 1]);
    let b = rand(&mut r, [1, 1, 1, 4]);
    for padding in [Padding::Zero, Padding::Circular] {
        for stride in [1, 2] {
            check(
                &format!("conv3x3 {padding:?} stride {stride}"),
                vec![x.clone(), w3.clone(), b.clone()],
                move |t, v| t.conv2d(v[0], v[1], Some(v[2]), padding, stride),
            );
        }
        check("conv3x3 no bias", vec![x.clone(), w3.clone()], move |t, v| {
            t.conv2d(v[0], v[1], None, padding, 1)
        });
    }
    check("conv1x1", vec![x, w1, b], |t, v| t.conv2d(v[0], v[1], Some(v[2]), Padding::Zero, 1));
}

#[test]
fn resampling_ops() {
    let mut r = SeededRng::new(4);
    let x = rand(&mut r, [2, 4, 4, 4]);
    let big = rand(&mut r, [2, 4, 8, 8]);
    for padding in [Padding::Zero, Padding::Circular] {
        check(&format!("upsample2x_blur {padding:?}"), vec![x.clone()], move |t, v| {
            Ok(t.upsample2x_blur(v[0], padding))
        });
        check(&format!("blur {padding:?}"), vec![big.clone()], move |t, v| Ok(t.blur(v[0], padding)));
    }
    check("avg_pool2x", vec![big.clone()], |t, v| t.avg_pool2x(v[0]));
    check("resize up", vec![x.clone()], |t, v| t.resize_bilinear(v[0], 7, 6));
    check("resize down", vec![big.clone()], |t, v| t.resize_bilinear(v[0], 3, 5));
    check("resize same", vec![big], |t, v| t.resize_bilinear(v[0], 8, 8));
}

#[test]
fn positional_injection() {
    let mut r = SeededRng::new(5);
    let h = rand(&mut r, [2, 8, 4, 8]);
    let gamma = rand(&mut r, [1, 1, 1, 1]);
    let pe = PeGrid::build(4, 8, 8).unwrap();
    check("add_scaled_pe", vec![h, gamma], move |t, v| add_scaled_pe(t, v[0], v[1], &pe));
}

#[test]
fn composed_chain() {
    let mut r = SeededRng::new(6);
    let x = rand(&mut r, [1, 2, 4, 4]);
    let w = rand(&mut r, [3, 2, 3, 3]).map(|v| v * 0.4);
    let target = rand(&mut r, [1, 3, 8, 8]);
    check("chain", vec![x, w, target], |t, v| {
        let u = t.upsample2x_blur(v[0], Padding::Zero);
        let c = t.conv2d(u, v[1], None, Padding::Circular, 1)?;
        let a = t.leaky_relu(c, 0.2);
        let p = t.avg_pool2x(a)?;
        let back = t.resize_bilinear(p, 8, 8)?;
        t.mse(back, v[2])
    });
}

/// Directional derivative of a scalar loss over every parameter at once,
/// against a central difference along the same random unit direction.
/// The unit norm keeps each weight's perturbation far below the distance to
/// the nearest leaky-ReLU kink.
fn directional_check(
    params: &mspe::params::ParamStore,
    loss: impl Fn(&mspe::params::ParamStore) -> f64,
    grads: &std::collections::BTreeMap<String, Tensor>,
    eps: f32,
) -> (f64, f64) {
    let mut r = SeededRng::new(77);
    let raw: Vec<(String, Tensor)> = params.iter().map(|(k, t)| (k.clone(), r.gaussian_tensor(t.shape()))).collect();
    let norm = raw.iter().map(|(_, d)| d.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>()).sum::<f64>().sqrt();
    let dirs: Vec<(String, Tensor)> = raw.into_iter().map(|(k, d)| (k, d.map(|v| (v as f64 / norm) as f32))).collect();
    let analytic: f64 = dirs
        .iter()
        .map(|(k, d)| {
            grads[k]
                .data()
                .iter()
                .zip(d.data())
                .map(|(g, d)| *g as f64 * *d as f64)
                .sum::<f64>()
        })
        .sum();
    let shifted = |sign: f32| {
        let mut p = params.clone();
        for (k, d) in &dirs {
            let t = p.get_mut(k).unwrap();
            for (v, dv) in t.data_mut().iter_mut().zip(d.data()) {
                *v += sign * eps * dv;
            }
        }
        loss(&p)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps as f64);
    (analytic, numeric)
}

#[test]
fn generator_graph_directional_derivative() {
    for mode in [Mode::Baseline, Mode::SsPe, Mode::MsPe] {
        let cfg = GeneratorConfig {
            mode,
            levels: 3,
            base_h: 4,
            base_w: 4,
            channels: vec![8, 8, 8],
            latent_dim: 4,
            ..GeneratorConfig::default()
        };
        let g = Generator::new(cfg, 3).unwrap();
        let mut rng = SeededRng::new(4);
        let inputs = g.sample_inputs(2, &mut rng).unwrap();
        let target = rng.gaussian_tensor([2, 3, 16, 16]).map(|v| 0.5 * v);
        let run = |params: &mspe::params::ParamStore, keep: bool| {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, true);
            let gen = Generator { config: g.config.clone(), params: params.clone() };
            let out = gen.forward_graph(&mut tape, &p, &inputs).unwrap();
            let t = tape.constant(target.clone());
            let l = tape.mse(out, t).unwrap();
            let value = tape.scalar_value(l);
            let mut grads = std::collections::BTreeMap::new();
            if keep {
                tape.backward(l).unwrap();
                for (k, _) in params.iter() {
                    let v = p.get(k).unwrap();
                    let gr = tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                    grads.insert(k.clone(), gr);
                }
            }
            (value, grads)
        };
        let (_, grads) = run(&g.params, true);
        let (a, n) = directional_check(&g.params, |p| run(p, false).0, &grads, 1e-3);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        assert!(rel < 1e-2, "{mode}: analytic {a} numeric {n}");
    }
}

#[test]
fn denoiser_graph_directional_derivative() {
    for mode in [Mode::Baseline, Mode::SsPe, Mode::MsPe] {
        let cfg = DenoiserConfig {
            mode,
            size: 8,
            channels: [4, 4, 4],
            time_dim: 8,
            time_hidden: 8,
            timesteps: 10,
            ..DenoiserConfig::default()
        };
        let d = Denoiser::new(cfg, 5).unwrap();
        let pyr = mode.uses_pe().then(|| d.config.pyramid().unwrap());
        let mut rng = SeededRng::new(6);
        let x = rng.gaussian_tensor([2, 1, 8, 8]);
        let eps = rng.gaussian_tensor([2, 1, 8, 8]);
        let run = |params: &mspe::params::ParamStore, keep: bool| {
            let den = Denoiser { config: d.config.clone(), params: params.clone() };
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, true);
            let xv = tape.constant(x.clone());
            let out = den.forward_graph(&mut tape, &p, xv, &[3, 9], pyr.as_ref()).unwrap();
            let t = tape.constant(eps.clone());
            let l = tape.mse(out, t).unwrap();
            let value = tape.scalar_value(l);
            let mut grads = std::collections::BTreeMap::new();
            if keep {
                tape.backward(l).unwrap();
                for (k, _) in params.iter() {
                    let v = p.get(k).unwrap();
                    grads.insert(k.clone(), tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))));
                }
            }
            (value, grads)
        };
        let (_, grads) = run(&d.params, true);
        let (a, n) = directional_check(&d.params, |p| run(p, false).0, &grads, 1e-3);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        assert!(rel < 1e-2, "{mode}: analytic {a} numeric {n}");
    }
}
