use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use fpm_core::dataset::{self, DatasetManifest, Split, SynthesisOptions};
use fpm_core::geometry::SystemGeometry;
use fpm_core::io;
use fpm_core::lwgnet::{init_params, LwgNetParams, ModelKind, ModelMeta};
use fpm_core::metrics::{evaluate_methods, Method};
use fpm_core::solvers::{initialize_object, wf_reconstruct_auto, SolverConfig};
use fpm_core::train::{train_from_manifest, TrainConfig};
use fpm_core::{ComplexField, RealImage};

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::png_io::{read_gray_png, write_gray_png};

fn parse_u8_list(s: &str) -> CliResult<Vec<u8>> {
    s.split(',')
        .map(|part| part.trim().parse::<u8>().map_err(|_| CliError::input(format!("bad list entry '{part}'"))))
        .collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Geometry JSON (SystemGeometry fields, SI units).
    #[arg(long)]
    config: PathBuf,
    /// Directory of grayscale PNG amplitude sources.
    #[arg(long)]
    amp: PathBuf,
    /// Directory of grayscale PNG phase sources.
    #[arg(long)]
    phase: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Quantization bit depths, e.g. "16,12,8".
    #[arg(long, default_value = "16,12,8")]
    bits: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train/val/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
}

fn png_dir_sorted(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn simulate(args: SimulateArgs) -> CliResult<()> {
    let geometry: SystemGeometry = io::read_json(&args.config)
        .map_err(|e| CliError::input(format!("geometry config: {e}")))?;
    let amp_files = png_dir_sorted(&args.amp)?;
    let phase_files = png_dir_sorted(&args.phase)?;
    if amp_files.is_empty() || phase_files.is_empty() {
        return Err(CliError::input("no input images"));
    }
    if amp_files.len() != phase_files.len() {
        return Err(CliError::input(format!(
            "{} amplitude images vs {} phase images",
            amp_files.len(),
            phase_files.len()
        )));
    }
    let amps: Vec<RealImage> = amp_files.iter().map(|p| read_gray_png(p)).collect::<CliResult<_>>()?;
    let phases: Vec<RealImage> = phase_files.iter().map(|p| read_gray_png(p)).collect::<CliResult<_>>()?;

    let fractions: Vec<f64> = args
        .split
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::input("bad --split")))
        .collect::<CliResult<_>>()?;
    if fractions.len() != 3 {
        return Err(CliError::input("--split needs train,val,test fractions"));
    }
    let opts = SynthesisOptions {
        bit_depths: parse_u8_list(&args.bits)?,
        seed: args.seed,
        split_fractions: (fractions[0], fractions[1], fractions[2]),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::input(e.to_string()))?;
    let (manifest, summary) = dataset::synthesize_dataset(&amps, &phases, &geometry, &opts, &args.out)?;
    for (idx, reason) in &summary.skipped {
        eprintln!("warning: input {idx} skipped: {reason}");
    }
    println!(
        "wrote {} samples ({} bit depths) to {}",
        summary.written,
        manifest.bit_depths.len(),
        args.out.display()
    );

    RunManifest::new("simulate", serde_json::json!({
        "geometry": geometry,
        "bits": args.bits,
        "split": args.split,
    }), Some(args.seed))
    .input(&args.amp)
    .input(&args.phase)
    .output(&args.out.join("manifest.json"))
    .write(&args.out.join("run_manifest.json"))
}

// ------------------------------------------------------------- reconstruct

#[derive(Args)]
pub struct ReconstructArgs {
    /// ap | wf | lwgnet | ablation-post | ablation-reg
    #[arg(long)]
    method: String,
    /// Input measurement stack (.fpmd).
    #[arg(long)]
    input: PathBuf,
    /// Weights (.lwgw) for the learned methods.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output field (.cfld).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Initialize from sqrt(I0) instead of the literal intensity.
    #[arg(long, default_value_t = false)]
    init_sqrt: bool,
}

fn load_weights(path: &Option<PathBuf>, method: &str) -> CliResult<LwgNetParams> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::missing(format!("method '{method}' requires --weights")))?;
    if !path.exists() {
        return Err(CliError::missing(format!("weights file {} not found", path.display())));
    }
    Ok(io::read_lwgw(path)?)
}

pub fn reconstruct(args: ReconstructArgs) -> CliResult<()> {
    let stack = io::read_fpmd(&args.input)?;
    let mut trace: Option<Vec<f64>> = None;
    let field: ComplexField = match args.method.as_str() {
        "ap" => fpm_core::solvers::ap_reconstruct(&stack, args.iters)?,
        "wf" => {
            let cfg = SolverConfig {
                eta: args.eta,
                iters: args.iters,
                record_objective: true,
                init_sqrt: args.init_sqrt,
            };
            let init = initialize_object(&stack, &stack.geometry, cfg.init_sqrt)?;
            let (field, tr, eta_used) = wf_reconstruct_auto(&stack, &cfg, &init)?;
            println!("wf converged with eta {eta_used:.3e}");
            trace = Some(tr);
            field
        }
        "lwgnet" => {
            let params = load_weights(&args.weights, "lwgnet")?;
            fpm_core::lwgnet::lwgnet_forward(&stack, &params)?
        }
        "ablation-post" => {
            let params = load_weights(&args.weights, "ablation-post")?;
            fpm_core::lwgnet::variant_post_network(&stack, &params)?
        }
        "ablation-reg" => {
            let params = load_weights(&args.weights, "ablation-reg")?;
            fpm_core::lwgnet::variant_regular_gradient(&stack, &params)?
        }
        other => return Err(CliError::input(format!("unknown method '{other}'"))),
    };
    io::write_cfld(&args.out, &field)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(tr) = trace {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let trace_path = args.out.with_file_name(format!("{stem}.trace.csv"));
        io::write_csv(
            &trace_path,
            "iteration,objective",
            tr.iter().enumerate().map(|(i, f)| format!("{i},{f:.10e}")),
        )?;
        outputs.push(trace_path);
    }

    let mut manifest = RunManifest::new("reconstruct", serde_json::json!({
        "method": args.method,
        "iters": args.iters,
        "eta": args.eta,
        "init_sqrt": args.init_sqrt,
    }), None)
    .input(&args.input);
    for out in &outputs {
        manifest = manifest.output(out);
    }
    manifest.write(&manifest_path_for(&args.out))
}

// ------------------------------------------------------------------ train

/// Model section of the training config JSON.
#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub stages: usize,
    pub channels: usize,
    pub eta: f64,
    pub full_complex_conv: bool,
    pub init_sqrt: bool,
    pub sweeps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Lwgnet,
            stages: 3,
            channels: 32,
            eta: 0.01,
            full_complex_conv: false,
            init_sqrt: false,
            sweeps: 5,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TrainFileConfig {
    #[serde(flatten)]
    train: TrainConfig,
    #[serde(default)]
    model: ModelConfig,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// Training config JSON (TrainConfig fields + optional "model" block).
    #[arg(long)]
    config: PathBuf,
    /// Output weights (.lwgw).
    #[arg(long)]
    out: PathBuf,
    /// Measurement bit depth to train on (0 = ideal float stacks).
    #[arg(long, default_value_t = 16)]
    bits: u8,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file_cfg: TrainFileConfig = io::read_json(&args.config)
        .map_err(|e| CliError::input(format!("train config: {e}")))?;
    let mut cfg = file_cfg.train;
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    let m = file_cfg.model;
    let meta = ModelMeta {
        kind: m.kind,
        stages: m.stages,
        channels: m.channels,
        led_count: manifest.geometry.led_count(),
        eta: m.eta,
        full_complex_conv: m.full_complex_conv,
        init_sqrt: m.init_sqrt,
        sweeps: m.sweeps,
    };

    let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let metrics_path = args.out.with_file_name(format!("{stem}.metrics.csv"));

    if cfg.epochs == 0 {
        eprintln!("warning: --epochs 0: writing initialized weights without training");
        let params = init_params(&meta, cfg.seed);
        io::write_lwgw(&args.out, &params)?;
        io::write_csv(&metrics_path, "epoch,train_loss,val_loss,val_psnr,lr", std::iter::empty())?;
    } else {
        let report = train_from_manifest(&manifest, &dir, args.bits, &meta, &cfg, &args.out, Some(&metrics_path))?;
        println!(
            "trained {} steps over {} epochs; best val loss {:.6e} (epoch {})",
            report.steps,
            report.metrics.len(),
            report.best_val_loss,
            report.best_epoch
        );
    }

    RunManifest::new("train", serde_json::json!({
        "bits": args.bits,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "lambda": [cfg.lambda1, cfg.lambda2, cfg.lambda3],
        "model": { "kind": meta.kind, "stages": meta.stages, "channels": meta.channels, "eta": meta.eta },
    }), Some(cfg.seed))
    .input(&args.manifest)
    .output(&args.out)
    .output(&metrics_path)
    .write(&manifest_path_for(&args.out))
}

// ------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma list: gt, ap, wf, lwgnet, ablation-post, ablation-reg.
    #[arg(long, default_value = "gt,ap,wf")]
    methods: String,
    #[arg(long, default_value = "16,12,8")]
    bits: String,
    #[arg(long)]
    out: PathBuf,
    /// Weights for lwgnet.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Weights for ablation-post.
    #[arg(long)]
    weights_post: Option<PathBuf>,
    /// Weights for ablation-reg.
    #[arg(long)]
    weights_reg: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Dataset split to score: train | val | test.
    #[arg(long, default_value = "test")]
    split: String,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(CliError::input(format!("unknown split '{other}'"))),
    };
    let bit_depths = parse_u8_list(&args.bits)?;

    let mut lwg = None;
    let mut post = None;
    let mut reg = None;
    let mut methods: Vec<Method> = Vec::new();
    for name in args.methods.split(',').map(str::trim) {
        match name {
            "gt" => methods.push(Method::GroundTruth),
            "ap" => methods.push(Method::Ap { iters: args.iters }),
            "wf" => methods.push(Method::Wf { iters: args.iters, eta0: args.eta }),
            "lwgnet" => {
                lwg = Some(load_weights(&args.weights, "lwgnet")?);
            }
            "ablation-post" => {
                post = Some(load_weights(&args.weights_post, "ablation-post")?);
            }
            "ablation-reg" => {
                reg = Some(load_weights(&args.weights_reg, "ablation-reg")?);
            }
            other => return Err(CliError::input(format!("unknown method '{other}'"))),
        }
    }
    if let Some(p) = &lwg {
        methods.push(Method::Lwgnet(p));
    }
    if let Some(p) = &post {
        methods.push(Method::AblationPost(p));
    }
    if let Some(p) = &reg {
        methods.push(Method::AblationReg(p));
    }

    let report = evaluate_methods(&manifest, &dir, &methods, &bit_depths, split)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::input(e.to_string()))?;
    let csv_path = args.out.join("report.csv");
    let md_path = args.out.join("report.md");
    fpm_core::io::atomic_write(&csv_path, report.to_csv().as_bytes())?;
    fpm_core::io::atomic_write(&md_path, report.to_markdown().as_bytes())?;
    // Per-sample scores, one file per (method, bit depth).
    for row in &report.rows {
        let path = args.out.join(format!("{}_b{:02}.csv", row.method, row.bit_depth));
        io::write_csv(
            &path,
            "sample,amp_psnr,amp_ssim,phase_psnr,phase_ssim",
            row.per_sample.iter().map(|s| {
                format!(
                    "{},{},{:.6},{},{:.6}",
                    s.id,
                    fpm_core::metrics::psnr_display(s.amp_psnr),
                    s.amp_ssim,
                    fpm_core::metrics::psnr_display(s.phase_psnr),
                    s.phase_ssim
                )
            }),
        )?;
    }
    print!("{}", report.to_markdown());

    RunManifest::new("eval", serde_json::json!({
        "methods": args.methods,
        "bits": args.bits,
        "iters": args.iters,
        "split": args.split,
    }), None)
    .input(&args.manifest)
    .output(&csv_path)
    .output(&md_path)
    .write(&args.out.join("run_manifest.json"))
}

// ------------------------------------------------------------------- plot

#[derive(Args)]
pub struct PlotArgs {
    /// Input field (.cfld).
    #[arg(long)]
    field: PathBuf,
    /// Output prefix: writes <prefix>_amplitude.png and <prefix>_phase.png.
    #[arg(long)]
    out: String,
}

pub fn plot(args: PlotArgs) -> CliResult<()> {
    let field = io::read_cfld(&args.field).map_err(|e| CliError::format(e.to_string()))?;
    let (h, w) = (field.height, field.width);

    let amp = field.magnitude();
    let (lo, hi) = amp.min_max();
    let amp_bytes: Vec<u8> = amp
        .data
        .iter()
        .map(|&v| {
            if hi > lo {
                (((v - lo) / (hi - lo)) * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect();

    let phase = field.phase();
    let phase_bytes: Vec<u8> = phase
        .data
        .iter()
        .map(|&t| (((t + std::f64::consts::PI) / std::f64::consts::TAU) * 255.0).round() as u8)
        .collect();

    let amp_path = PathBuf::from(format!("{}_amplitude.png", args.out));
    let phase_path = PathBuf::from(format!("{}_phase.png", args.out));
    write_gray_png(&amp_path, w, h, &amp_bytes)?;
    write_gray_png(&phase_path, w, h, &phase_bytes)?;
    println!("wrote {} and {}", amp_path.display(), phase_path.display());

    RunManifest::new("plot", serde_json::json!({}), None)
        .input(&args.field)
        .output(&amp_path)
        .output(&phase_path)
        .write(&manifest_path_for(&amp_path))
}

// ----------------------------------------------------------- params-count

#[derive(Args)]
pub struct ParamsCountArgs {
    #[arg(long, default_value_t = 3)]
    stages: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 225)]
    leds: usize,
    /// lwgnet | regular-gradient | post-network
    #[arg(long, default_value = "lwgnet")]
    kind: String,
}

pub fn params_count(args: ParamsCountArgs) -> CliResult<()> {
    let kind = match args.kind.as_str() {
        "lwgnet" => ModelKind::Lwgnet,
        "regular-gradient" => ModelKind::RegularGradient,
        "post-network" => ModelKind::PostNetwork,
        other => return Err(CliError::input(format!("unknown kind '{other}'"))),
    };
    let meta = ModelMeta {
        kind,
        stages: args.stages,
        channels: args.channels,
        led_count: args.leds,
        eta: 0.01,
        full_complex_conv: false,
        init_sqrt: false,
        sweeps: 5,
    };
    let params = init_params(&meta, 0);
    let count = params.count_reals();
    println!("{count} real parameters ({:.3} M)", count as f64 / 1e6);
    Ok(())
}
