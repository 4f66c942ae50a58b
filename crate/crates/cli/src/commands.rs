use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use mspe::checkpoint::Checkpoint;
use mspe::config::{DatasetSource, ModelKind, RunConfig};
use mspe::dataset::{from_idx, parse_idx, synth_glyphs_with, BiasedCanvasSet};
use mspe::diffusion::{p_sample, stochastic_reconstruct, train_step, BetaSchedule, DenoiserTrainer};
use mspe::eval::{generate_shifted, mean_quadrant_mass, patch_similarity, quadrant_mass, shift_consistency_curve, to_grayscale, CropSpec};
use mspe::generator::{
    class_latents, expanded_generate, multiscale_generate, noise_std_probe, synth_forward, train_generator, Denoiser,
    ExpansionPlan, Generator, Mode, SynthInputs,
};
use mspe::imageio::{curves_csv, decode_pnm, loss_csv, write_pnm, CURVE_HEADER};
use mspe::pe::{PePyramid, ShiftMode};
use mspe::tensor::{AdamConfig, SeededRng, Tensor};

use crate::settings::{resolve, CliError, CliResult};
use crate::ConfigArgs;

const CHECKPOINT_FILE: &str = "checkpoint.mspe";

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<(T, T)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::usage(format!("{what} expects two comma-separated numbers, got '{s}'"));
    match parts[..] {
        [a] => {
            let v: T = a.parse().map_err(|_| bad())?;
            let w: T = a.parse().map_err(|_| bad())?;
            Ok((v, w))
        }
        [a, b] => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

/// Min-max normalise one plane to `[-1, 1]` for viewing.
fn heatmap(plane: &[f32], h: usize, w: usize) -> CliResult<Tensor> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(Tensor::new(
        [1, 1, h, w],
        plane.iter().map(|&v| 2.0 * (v - lo) / span - 1.0).collect(),
    )?)
}

// ---------------------------------------------------------------- build-pe

#[derive(Args, Debug)]
pub struct BuildPeArgs {
    /// Finest-level height.
    #[arg(long, default_value_t = 4)]
    pub height: usize,
    /// Finest-level width.
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    /// Channels per level; must be a positive multiple of 4.
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Pyramid levels; 1 writes a single grid.
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    /// Circular shift `dh,dw` in finest-level pixels.
    #[arg(long, default_value = "0,0")]
    pub shift: String,
    /// Channels to render as heatmaps (first N).
    #[arg(long, default_value_t = 4)]
    pub heatmaps: usize,
    #[arg(long, default_value = "pe_out")]
    pub out: PathBuf,
}

pub fn build_pe(a: &BuildPeArgs) -> CliResult<()> {
    if a.levels == 0 || a.levels > 16 {
        return Err(CliError::usage(format!("levels must be in 1..=16, got {}", a.levels)));
    }
    let f = 1usize << (a.levels - 1);
    if !a.height.is_multiple_of(f) || !a.width.is_multiple_of(f) || a.height == 0 || a.width == 0 {
        return Err(CliError::usage(format!(
            "{}x{} is not divisible by 2^(levels-1) = {f}",
            a.height, a.width
        )));
    }
    let (dh, dw): (f64, f64) = parse_pair(&a.shift, "--shift")?;
    let pyr = PePyramid::build(a.height / f, a.width / f, &vec![a.channels; a.levels])?
        .shift(dh, dw, ShiftMode::Circular)?;

    ensure_dir(&a.out)?;
    let mut ck = Checkpoint::new(json!({
        "kind": "pe",
        "height": a.height,
        "width": a.width,
        "channels": a.channels,
        "levels": a.levels,
        "offsets": pyr.offsets(),
    }));
    for (l, g) in pyr.levels().iter().enumerate() {
        ck.push(format!("level{l}"), "pe-grid", Tensor::from_pe(g));
        let rows = g.rows().coords.iter().map(|&v| v as f32).collect::<Vec<_>>();
        let cols = g.cols().coords.iter().map(|&v| v as f32).collect::<Vec<_>>();
        ck.push(format!("level{l}.rows"), "coords", Tensor::new([1, 1, 1, rows.len()], rows)?);
        ck.push(format!("level{l}.cols"), "coords", Tensor::new([1, 1, 1, cols.len()], cols)?);
        let hw = g.height() * g.width();
        for c in 0..a.heatmaps.min(g.channels()) {
            let plane = &g.data()[c * hw..(c + 1) * hw];
            write_pnm(&a.out.join(format!("pe_l{l}_c{c}.pgm")), &heatmap(plane, g.height(), g.width())?)?;
        }
    }
    ck.save(&a.out.join("pe.mspe"))?;
    println!(
        "wrote {} level(s), finest {}x{}x{} to {}",
        pyr.len(),
        a.height,
        a.width,
        a.channels,
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- datasets

fn load_dataset(cfg: &RunConfig) -> CliResult<BiasedCanvasSet> {
    let g = cfg.glyph_config();
    match cfg.dataset {
        DatasetSource::Synthetic => Ok(synth_glyphs_with(cfg.dataset_size, cfg.seed, &g)?),
        DatasetSource::Idx => {
            let read = |p: &Option<String>| -> CliResult<Vec<u8>> {
                let p = p.as_deref().unwrap_or_default();
                fs::read(p).map_err(|e| CliError::data(format!("cannot read {p}: {e}")))
            };
            let images = parse_idx(&read(&cfg.idx_images)?)?;
            let labels = parse_idx(&read(&cfg.idx_labels)?)?;
            Ok(from_idx(&images, &labels, &g, cfg.dataset_size)?)
        }
    }
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serialises")
}

pub fn build_dataset(a: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve(a)?;
    let data = load_dataset(&cfg)?;
    data.check()?;
    let out = PathBuf::from(&cfg.output);
    ensure_dir(&out)?;
    let mut ck = Checkpoint::new(config_json(&cfg));
    ck.push("images", "dataset", data.images.clone());
    let labels: Vec<f32> = data.labels.iter().map(|&l| l as f32).collect();
    ck.push("labels", "labels", Tensor::new([1, 1, 1, labels.len()], labels)?);
    let places: Vec<f32> = data.placements.iter().flat_map(|&(r, c)| [r as f32, c as f32]).collect();
    ck.push("placements", "placements", Tensor::new([1, 1, data.len(), 2], places)?);
    ck.save(&out.join("dataset.mspe"))?;
    for k in 0..data.len().min(8) {
        let ext = if data.images.shape()[1] == 3 { "ppm" } else { "pgm" };
        write_pnm(&out.join(format!("sample_{k:03}.{ext}")), &data.images.sample(k))?;
    }
    write_json(&out.join("config.json"), &config_json(&cfg))?;
    println!("wrote {} images to {}", data.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ train

pub enum Model {
    Generator(Generator),
    Denoiser(Denoiser),
}

fn save_model(cfg: &RunConfig, model: &Model, path: &Path) -> CliResult<()> {
    let mut ck = Checkpoint::new(config_json(cfg));
    match model {
        Model::Generator(g) => ck.push_params("gen.", &g.params),
        Model::Denoiser(d) => ck.push_params("den.", &d.params),
    }
    Ok(ck.save(path)?)
}

/// Rebuild the model described by a checkpoint.
pub fn load_model(path: &Path) -> CliResult<(RunConfig, Model)> {
    let ck = Checkpoint::load(path)?;
    let cfg: RunConfig = serde_json::from_value(ck.config.clone())
        .map_err(|e| CliError::data(format!("checkpoint config: {e}")))?;
    cfg.validate()?;
    let model = match cfg.model {
        ModelKind::Generator => {
            let mut g = Generator::new(cfg.generator_config(), cfg.seed)?;
            install(&mut g.params, ck.params("gen."))?;
            Model::Generator(g)
        }
        ModelKind::Denoiser => {
            let mut d = Denoiser::new(cfg.denoiser_config()?, cfg.seed)?;
            install(&mut d.params, ck.params("den."))?;
            Model::Denoiser(d)
        }
    };
    Ok((cfg, model))
}

fn install(dst: &mut mspe::params::ParamStore, src: mspe::params::ParamStore) -> CliResult<()> {
    if src.len() != dst.len() {
        return Err(CliError::data(format!(
            "checkpoint has {} parameters, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for (name, t) in src.iter() {
        let slot = dst.get_mut(name).map_err(|_| CliError::data(format!("unexpected parameter {name}")))?;
        if slot.shape() != t.shape() {
            return Err(CliError::data(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

fn progress(step: usize, total: usize, loss: f64) {
    let every = (total / 20).max(1);
    if step.is_multiple_of(every) || step + 1 == total {
        eprintln!("step {:>6}/{total} loss {loss:.6}", step + 1);
    }
}

pub fn train(a: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve(a)?;
    let data = load_dataset(&cfg)?;
    let out = PathBuf::from(&cfg.output);
    ensure_dir(&out)?;
    let (model, losses) = match cfg.model {
        ModelKind::Generator => {
            let mut g = Generator::new(cfg.generator_config(), cfg.seed)?;
            let losses = train_generator(&mut g, &data, &cfg.generator_train(), |s, l| progress(s, cfg.steps, l))?;
            (Model::Generator(g), losses)
        }
        ModelKind::Denoiser => {
            let mut d = Denoiser::new(cfg.denoiser_config()?, cfg.seed)?;
            let sched = BetaSchedule::from_config(&cfg.schedule())?;
            let adam = AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            };
            let mut trainer = DenoiserTrainer::new(&d, adam, cfg.seed)?;
            let mut pick = SeededRng::with_stream(cfg.seed, 0xba7c);
            let mut losses = Vec::with_capacity(cfg.steps);
            for step in 0..cfg.steps {
                let idx: Vec<usize> = (0..cfg.batch).map(|_| pick.below(data.len())).collect();
                let l = train_step(&mut d, &data.batch(&idx)?, &sched, &mut trainer)?;
                progress(step, cfg.steps, l);
                losses.push(l);
            }
            (Model::Denoiser(d), losses)
        }
    };
    save_model(&cfg, &model, &out.join(CHECKPOINT_FILE))?;
    write_file(&out.join("loss.csv"), loss_csv(&losses))?;
    write_json(&out.join("config.json"), &config_json(&cfg))?;
    println!("trained {} steps, checkpoint at {}", losses.len(), out.join(CHECKPOINT_FILE).display());
    Ok(())
}

// --------------------------------------------------------------- generate

/// Class latents, one per image (`k mod 10`), and noise from `seed` sized for
/// a stack whose seed level is `h0 x w0`.
fn eval_inputs(g: &Generator, cfg: &RunConfig, count: usize, seed: u64, seed_size: (usize, usize)) -> CliResult<SynthInputs> {
    let table = class_latents(10, cfg.latent_dim, cfg.seed);
    let w = Tensor::stack(&(0..count).map(|k| table.sample(k % 10)).collect::<Vec<_>>())?;
    let noise = g
        .config
        .noise
        .then(|| g.sample_noise(count, seed_size.0, seed_size.1, &mut SeededRng::new(seed)));
    let pyramid = if g.config.mode.uses_pe() {
        Some(g.config.pyramid()?)
    } else {
        None
    };
    Ok(SynthInputs {
        latents: g.latents_from(&w),
        noise,
        pyramid,
    })
}

fn parse_plan(s: &str, height: usize, width: usize) -> CliResult<ExpansionPlan> {
    let (h, w) = (height as f64, width as f64);
    match s {
        "identity" => Ok(ExpansionPlan::Identity),
        "tile-w" => Ok(ExpansionPlan::Tile {
            h_segments: vec![],
            w_segments: vec![(0.0, w), (0.0, w)],
        }),
        "tile-h" => Ok(ExpansionPlan::Tile {
            h_segments: vec![(0.0, h), (0.0, h)],
            w_segments: vec![],
        }),
        other => match other.strip_prefix("extend:") {
            Some(m) => {
                let (mh, mw) = parse_pair(m, "--expand extend")?;
                Ok(ExpansionPlan::Extend { margin_h: mh, margin_w: mw })
            }
            None => Err(CliError::usage(format!(
                "unknown expansion '{other}' (identity, tile-w, tile-h, extend:MH,MW)"
            ))),
        },
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Positional shift `dh,dw` in image pixels.
    #[arg(long, conflicts_with_all = ["size", "expand"])]
    pub shift: Option<String>,
    /// Output size `H,W` (encoding modes only).
    #[arg(long, conflicts_with = "expand")]
    pub size: Option<String>,
    /// identity | tile-w | tile-h | extend:MH,MW
    #[arg(long)]
    pub expand: Option<String>,
    /// Denoiser checkpoints: encode probes to step t and decode.
    #[arg(long)]
    pub reconstruct: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value = "gen_out")]
    pub out: PathBuf,
}

fn write_images(dir: &Path, prefix: &str, images: &Tensor) -> CliResult<()> {
    let ext = if images.shape()[1] == 3 { "ppm" } else { "pgm" };
    for k in 0..images.shape()[0] {
        write_pnm(&dir.join(format!("{prefix}_{k:03}.{ext}")), &images.sample(k))?;
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be positive"));
    }
    let (cfg, model) = load_model(&a.checkpoint)?;
    let shift: Option<(f64, f64)> = a.shift.as_deref().map(|s| parse_pair(s, "--shift")).transpose()?;
    ensure_dir(&a.out)?;
    let images = match model {
        Model::Generator(g) => {
            if a.reconstruct.is_some() {
                return Err(CliError::usage("--reconstruct needs a denoiser checkpoint"));
            }
            let f = 1usize << (g.config.levels - 1);
            let native = g.config.output_size();
            if let Some(size) = &a.size {
                let (h, w): (usize, usize) = parse_pair(size, "--size")?;
                if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
                    return Err(CliError::usage(format!("--size {h}x{w} must be positive multiples of {f}")));
                }
                let inputs = eval_inputs(&g, &cfg, a.count, a.seed, (h / f, w / f))?;
                multiscale_generate(&g, &inputs, h, w)?
            } else if let Some(plan) = &a.expand {
                let plan = parse_plan(plan, native.0, native.1)?;
                if g.config.mode != Mode::MsPe {
                    return Err(CliError::usage(format!("--expand needs an ms-pe generator, got {}", g.config.mode)));
                }
                let seed_level = plan.apply(&g.config.pyramid()?)?;
                let s = seed_level.level(0);
                let inputs = eval_inputs(&g, &cfg, a.count, a.seed, (s.height(), s.width()))?;
                expanded_generate(&g, &inputs, &plan)?
            } else {
                let inputs = eval_inputs(&g, &cfg, a.count, a.seed, (g.config.base_h, g.config.base_w))?;
                match shift {
                    Some((dh, dw)) => generate_shifted(&g, &inputs, dh, dw)?,
                    None => synth_forward(&g, &inputs)?,
                }
            }
        }
        Model::Denoiser(d) => {
            if a.size.is_some() || a.expand.is_some() {
                return Err(CliError::usage("--size and --expand apply to generator checkpoints"));
            }
            let sched = BetaSchedule::from_config(&cfg.schedule())?;
            let pyramid = denoiser_pyramid(&d, shift.unwrap_or((0.0, 0.0)))?;
            match a.reconstruct {
                Some(t) => {
                    let probes = synth_glyphs_with(a.count, a.seed, &cfg.glyph_config())?;
                    stochastic_reconstruct(&probes.images, t, &d, pyramid.as_ref(), &sched, a.seed)?
                }
                None => sample_chain(&d, pyramid.as_ref(), &sched, a.count, a.seed)?,
            }
        }
    };
    write_images(&a.out, "img", &images)?;
    println!("wrote {} image(s) to {}", images.shape()[0], a.out.display());
    Ok(())
}

fn denoiser_pyramid(d: &Denoiser, (dh, dw): (f64, f64)) -> CliResult<Option<PePyramid>> {
    if !d.config.mode.uses_pe() {
        if (dh, dw) != (0.0, 0.0) {
            return Err(CliError::usage("a baseline denoiser has no encoding to shift"));
        }
        return Ok(None);
    }
    Ok(Some(d.config.pyramid()?.shift(dh, dw, ShiftMode::Circular)?))
}

/// Full ancestral sampling from pure noise.
fn sample_chain(d: &Denoiser, pyramid: Option<&PePyramid>, sched: &BetaSchedule, count: usize, seed: u64) -> CliResult<Tensor> {
    let s = d.config.size;
    let shape = [count, d.config.image_channels, s, s];
    let mut rng = SeededRng::new(seed);
    let mut x = rng.gaussian_tensor(shape);
    for t in (1..=sched.steps()).rev() {
        let z = if t > 1 { rng.gaussian_tensor(shape) } else { Tensor::zeros(shape) };
        x = p_sample(&x, t, d, pyramid, sched, &z)?;
    }
    Ok(x)
}

// ------------------------------------------------------------ reconstruct

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoding step; defaults to half the schedule length.
    #[arg(long)]
    pub t_enc: Option<usize>,
    /// Positional shift `dh,dw` in image pixels.
    #[arg(long, default_value = "0,0")]
    pub shift: String,
    /// Placement `row,col` of the probe glyphs; defaults to the training placement.
    #[arg(long)]
    pub placement: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Probes per reverse-chain batch.
    #[arg(long, default_value_t = 16)]
    pub chunk: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value = "recon_out")]
    pub out: PathBuf,
}

pub fn reconstruct(a: &ReconstructArgs) -> CliResult<()> {
    if a.count == 0 || a.chunk == 0 {
        return Err(CliError::usage("--count and --chunk must be positive"));
    }
    let (mut cfg, model) = load_model(&a.checkpoint)?;
    let Model::Denoiser(d) = model else {
        return Err(CliError::usage("reconstruct needs a denoiser checkpoint"));
    };
    let sched = BetaSchedule::from_config(&cfg.schedule())?;
    let t_enc = a.t_enc.unwrap_or(sched.steps() / 2);
    if let Some(p) = &a.placement {
        cfg.placement = parse_pair(p, "--placement")?;
        cfg.validate()?;
    }
    let pyramid = denoiser_pyramid(&d, parse_pair(&a.shift, "--shift")?)?;
    let probes = synth_glyphs_with(a.count, a.seed, &cfg.glyph_config())?;

    ensure_dir(&a.out)?;
    let mut parts = Vec::new();
    for (k, start) in (0..a.count).step_by(a.chunk).enumerate() {
        let idx: Vec<usize> = (start..(start + a.chunk).min(a.count)).collect();
        let x = probes.batch(&idx)?;
        let seed = a.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        parts.push(stochastic_reconstruct(&x, t_enc, &d, pyramid.as_ref(), &sched, seed)?);
    }
    let rec = Tensor::stack(&parts.iter().flat_map(|p| (0..p.shape()[0]).map(|b| p.sample(b))).collect::<Vec<_>>())?;
    write_images(&a.out, "input", &probes.images)?;
    write_images(&a.out, "recon", &rec)?;

    let mut csv = String::from("index,ul,ur,bl,br\n");
    for k in 0..a.count {
        let q = quadrant_mass(&to_grayscale(&rec.sample(k)))?;
        csv.push_str(&format!("{k},{:.9},{:.9},{:.9},{:.9}\n", q[0], q[1], q[2], q[3]));
    }
    let mean = mean_quadrant_mass(&rec)?;
    csv.push_str(&format!("mean,{:.9},{:.9},{:.9},{:.9}\n", mean[0], mean[1], mean[2], mean[3]));
    write_file(&a.out.join("quadrants.csv"), csv)?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "mode": cfg.mode.as_str(),
            "t_enc": t_enc,
            "shift": a.shift,
            "count": a.count,
            "mean_quadrant_mass": {"ul": mean[0], "ur": mean[1], "bl": mean[2], "br": mean[3]},
        }),
    )?;
    println!(
        "{} t_enc={t_enc} quadrant mass ul={:.4} ur={:.4} bl={:.4} br={:.4}",
        cfg.mode, mean[0], mean[1], mean[2], mean[3]
    );
    Ok(())
}

// ----------------------------------------------------------------- report

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Generator checkpoint to probe.
    #[arg(long, required_unless_present = "compare")]
    pub checkpoint: Option<PathBuf>,
    /// Compare two PPM/PGM images instead of probing a model.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<PathBuf>>,
    /// Largest shift of the curve; defaults to 2^(levels-1).
    #[arg(long)]
    pub max_shift: Option<usize>,
    /// Shift columns instead of rows.
    #[arg(long)]
    pub horizontal: bool,
    /// Crop side for the consistency curve; defaults to half the image.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Images per probe batch.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Noise instances for the std probe (0 skips it).
    #[arg(long, default_value_t = 100)]
    pub noise_instances: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value = "report_out")]
    pub out: PathBuf,
}

fn read_image(path: &Path) -> CliResult<Tensor> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(decode_pnm(&bytes)?)
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    ensure_dir(&a.out)?;
    if let Some(pair) = &a.compare {
        let (x, y) = (read_image(&pair[0])?, read_image(&pair[1])?);
        let s = patch_similarity(&to_grayscale(&x), &to_grayscale(&y))?;
        write_file(&a.out.join("similarity.csv"), format!("{CURVE_HEADER}\n0,{s:.9},compare\n"))?;
        println!("similarity {s:.6}");
        return Ok(());
    }
    let path = a.checkpoint.as_ref().expect("clap enforces checkpoint or compare");
    let (cfg, model) = load_model(path)?;
    let Model::Generator(g) = model else {
        return Err(CliError::usage("report probes generator checkpoints; use reconstruct for denoisers"));
    };
    if a.count == 0 {
        return Err(CliError::usage("--count must be positive"));
    }
    let (h, w) = g.config.output_size();
    let max_shift = a.max_shift.unwrap_or(1 << (g.config.levels - 1));
    let shifts: Vec<f64> = (0..=max_shift).map(|s| s as f64).collect();
    let crop = CropSpec {
        size: a.crop.unwrap_or(h.min(w) / 2),
        vertical: !a.horizontal,
    };
    let inputs = eval_inputs(&g, &cfg, a.count, a.seed, (g.config.base_h, g.config.base_w))?;
    let curve = shift_consistency_curve(&g, &inputs, &shifts, crop)?;
    write_file(&a.out.join("curve.csv"), curves_csv(std::slice::from_ref(&curve)))?;

    let zero = curve.similarities[0];
    let rest = &curve.similarities[1..];
    let mean_rest = if rest.is_empty() { zero } else { rest.iter().sum::<f64>() / rest.len() as f64 };
    let noise_std = if g.config.noise && a.noise_instances >= 2 {
        let std = noise_std_probe(&g, &inputs, a.noise_instances, a.seed ^ 0x5eed)?;
        Some(std.mean())
    } else {
        None
    };
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "mode": cfg.mode.as_str(),
            "zero_shift_similarity": zero,
            "mean_shifted_similarity": mean_rest,
            "max_shift": max_shift,
            "crop": crop.size,
            "noise_std_mean": noise_std,
            "noise_instances": a.noise_instances,
        }),
    )?;
    println!(
        "{} similarity at shift 0 = {zero:.4}, mean over 1..={max_shift} = {mean_rest:.4}{}",
        cfg.mode,
        noise_std.map(|s| format!(", noise std = {s:.5}")).unwrap_or_default()
    );
    Ok(())
}

// ----------------------------------------------------------------- verify

pub fn verify() -> CliResult<()> {
    let checks = mspe::verify::run_all();
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError {
            code: crate::settings::EXIT_NUMERIC,
            message: format!("{failed} of {} checks failed", checks.len()),
        });
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
