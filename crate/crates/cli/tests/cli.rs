//! End-to-end tests of the `fpm` binary: command contracts, exit codes,
//! and artifact formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpm_core::geometry::presets::tiny_geometry;
use fpm_core::synthgen::blob_image;
use fpm_core::RealImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpm"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fpm-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_png(path: &Path, img: &RealImage) {
    let (lo, hi) = img.min_max();
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| if hi > lo { (((v - lo) / (hi - lo)) * 255.0).round() as u8 } else { 128 })
        .collect();
    let file = fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(&bytes).unwrap();
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny dataset fixture: geometry JSON + PNG inputs + synthesized output.
fn make_dataset(tag: &str, samples: usize, bits: &str) -> (PathBuf, PathBuf) {
    let dir = tmpdir(tag);
    let g = tiny_geometry();
    let geom_path = dir.join("geometry.json");
    fs::write(&geom_path, serde_json::to_string(&g).unwrap()).unwrap();
    let amp_dir = dir.join("amp");
    let phase_dir = dir.join("phase");
    fs::create_dir_all(&amp_dir).unwrap();
    fs::create_dir_all(&phase_dir).unwrap();
    for i in 0..samples {
        write_png(&amp_dir.join(format!("img_{i:03}.png")), &blob_image(g.obj_size_px, 300 + i as u64));
        write_png(&phase_dir.join(format!("img_{i:03}.png")), &blob_image(g.obj_size_px, 400 + i as u64));
    }
    let out_dir = dir.join("dataset");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&geom_path)
        .arg("--amp")
        .arg(&amp_dir)
        .arg("--phase")
        .arg(&phase_dir)
        .arg("--out")
        .arg(&out_dir)
        .args(["--bits", bits, "--seed", "5", "--split", "0.5,0.25,0.25"])
        .output()
        .unwrap();
    assert_ok(&out);
    (dir, out_dir)
}

#[test]
fn simulate_writes_dataset_and_manifest() {
    let (_root, out_dir) = make_dataset("sim", 4, "16,12,8");
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("led_order"));
    let stacks: Vec<_> = fs::read_dir(out_dir.join("stacks")).unwrap().collect();
    // Per sample: one ideal + three quantized stacks, each with a sidecar.
    assert_eq!(stacks.len(), 4 * 4 * 2);
    assert!(out_dir.join("run_manifest.json").exists());
}

#[test]
fn simulate_empty_dir_is_input_error() {
    let dir = tmpdir("sim-empty");
    let g = tiny_geometry();
    let geom_path = dir.join("geometry.json");
    fs::write(&geom_path, serde_json::to_string(&g).unwrap()).unwrap();
    let empty = dir.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&geom_path)
        .arg("--amp")
        .arg(&empty)
        .arg("--phase")
        .arg(&empty)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no input images"));
}

fn first_stack(out_dir: &Path, suffix: &str) -> PathBuf {
    let mut stacks: Vec<PathBuf> = fs::read_dir(out_dir.join("stacks"))
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    stacks.sort();
    stacks.remove(0)
}

#[test]
fn reconstruct_wf_and_ap_share_shape_and_write_traces() {
    let (_root, out_dir) = make_dataset("rec", 2, "16");
    let stack = first_stack(&out_dir, "_b16.fpmd");

    let wf_out = out_dir.join("wf.cfld");
    let out = bin()
        .args(["reconstruct", "--method", "wf", "--iters", "30", "--input"])
        .arg(&stack)
        .arg("--out")
        .arg(&wf_out)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(out_dir.join("wf.trace.csv").exists());
    let trace = fs::read_to_string(out_dir.join("wf.trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective"));
    assert!(trace.lines().count() >= 31);

    let ap_out = out_dir.join("ap.cfld");
    let out = bin()
        .args(["reconstruct", "--method", "ap", "--iters", "3", "--input"])
        .arg(&stack)
        .arg("--out")
        .arg(&ap_out)
        .output()
        .unwrap();
    assert_ok(&out);

    let wf_field = fpm_core::io::read_cfld(&wf_out).unwrap();
    let ap_field = fpm_core::io::read_cfld(&ap_out).unwrap();
    assert_eq!((wf_field.height, wf_field.width), (ap_field.height, ap_field.width));
}

#[test]
fn reconstruct_lwgnet_without_weights_is_exit_3() {
    let (_root, out_dir) = make_dataset("rec3", 1, "16");
    let stack = first_stack(&out_dir, "_b16.fpmd");
    let out = bin()
        .args(["reconstruct", "--method", "lwgnet", "--input"])
        .arg(&stack)
        .arg("--out")
        .arg(out_dir.join("x.cfld"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reconstruct_bad_format_is_exit_4() {
    let dir = tmpdir("rec4");
    let bogus = dir.join("bogus.fpmd");
    fs::write(&bogus, b"not a stack").unwrap();
    fs::write(dir.join("bogus.fpmd.json"), b"{}").unwrap();
    let out = bin()
        .args(["reconstruct", "--method", "ap", "--input"])
        .arg(&bogus)
        .arg("--out")
        .arg(dir.join("x.cfld"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

fn train_config_json(epochs: usize) -> String {
    format!(
        r#"{{
  "lr": 1e-3, "batch_size": 2, "epochs": {epochs}, "seed": 11,
  "model": {{ "kind": "lwgnet", "stages": 1, "channels": 2, "eta": 1e-6 }}
}}"#
    )
}

#[test]
fn train_toy_manifest_writes_weights_and_metrics() {
    let (root, out_dir) = make_dataset("train", 8, "16");
    let cfg_path = root.join("train.json");
    fs::write(&cfg_path, train_config_json(2)).unwrap();
    let weights = root.join("model.lwgw");
    let out = bin()
        .args(["train", "--manifest"])
        .arg(out_dir.join("manifest.json"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&weights)
        .args(["--bits", "16"])
        .output()
        .unwrap();
    assert_ok(&out);
    let params = fpm_core::io::read_lwgw(&weights).unwrap();
    assert_eq!(params.meta.stages, 1);
    assert_eq!(params.meta.led_count, 9);
    let metrics = fs::read_to_string(root.join("model.metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_loss,val_psnr,lr"));
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn train_zero_epochs_warns_and_writes_initialized_weights() {
    let (root, out_dir) = make_dataset("train0", 4, "16");
    let cfg_path = root.join("train.json");
    fs::write(&cfg_path, train_config_json(5)).unwrap();
    let weights = root.join("init.lwgw");
    let out = bin()
        .args(["train", "--manifest"])
        .arg(out_dir.join("manifest.json"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&weights)
        .args(["--bits", "16", "--epochs", "0"])
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(weights.exists());
}

#[test]
fn eval_ground_truth_method_scores_exact() {
    let (root, out_dir) = make_dataset("eval", 4, "16");
    let report_dir = root.join("report");
    let out = bin()
        .args(["eval", "--manifest"])
        .arg(out_dir.join("manifest.json"))
        .args(["--methods", "gt", "--bits", "16", "--split", "train", "--out"])
        .arg(&report_dir)
        .output()
        .unwrap();
    assert_ok(&out);
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("gt,16,exact,1.000000,exact,1.000000"), "row: {row}");
    assert!(report_dir.join("report.md").exists());
}

#[test]
fn plot_renders_grayscale_pngs_with_matching_dims() {
    let dir = tmpdir("plot");
    // Constant field -> uniform gray in both panels.
    let field = fpm_core::ComplexField::from_fn(20, 24, |_, _| num_complex::Complex64::new(0.5, 0.0));
    let cfld = dir.join("flat.cfld");
    fpm_core::io::write_cfld(&cfld, &field).unwrap();
    let out = bin()
        .args(["plot", "--field"])
        .arg(&cfld)
        .arg("--out")
        .arg(dir.join("flat").to_str().unwrap())
        .output()
        .unwrap();
    assert_ok(&out);
    for name in ["flat_amplitude.png", "flat_phase.png"] {
        let decoder = png::Decoder::new(fs::File::open(dir.join(name)).unwrap());
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (24, 20));
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        let first = buf[0];
        assert!(buf[..info.buffer_size()].iter().all(|&b| b == first), "{name} not uniform");
    }
}

#[test]
fn plot_phase_panel_correlates_with_source_image() {
    // Synthesized ground-truth phase comes from a known source image; the
    // rendered phase PNG must correlate with it almost perfectly.
    let (root, out_dir) = make_dataset("plotcorr", 1, "16");
    let object = out_dir.join("objects/sample_0000.cfld");
    let out = bin()
        .args(["plot", "--field"])
        .arg(&object)
        .arg("--out")
        .arg(root.join("obj").to_str().unwrap())
        .output()
        .unwrap();
    assert_ok(&out);

    let decoder = png::Decoder::new(fs::File::open(root.join("obj_phase.png")).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    let png_vals: Vec<f64> = buf[..info.buffer_size()].iter().map(|&b| b as f64).collect();

    let g = tiny_geometry();
    let source = blob_image(g.obj_size_px, 400);
    let src_vals: Vec<f64> = source.data.clone();

    let n = png_vals.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mp, ms) = (mean(&png_vals), mean(&src_vals));
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vs = 0.0;
    for (a, b) in png_vals.iter().zip(&src_vals) {
        cov += (a - mp) * (b - ms);
        vp += (a - mp) * (a - mp);
        vs += (b - ms) * (b - ms);
    }
    let pearson = cov / (vp.sqrt() * vs.sqrt());
    assert!(pearson > 0.99, "pearson {pearson}");
}

#[test]
fn plot_unreadable_field_is_exit_4() {
    let dir = tmpdir("plotbad");
    let bad = dir.join("bad.cfld");
    fs::write(&bad, b"garbage").unwrap();
    let out = bin()
        .args(["plot", "--field"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("x").to_str().unwrap())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn params_count_reports_total() {
    let out = bin()
        .args(["params-count", "--stages", "3", "--channels", "32", "--leds", "225"])
        .output()
        .unwrap();
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("501318"), "{text}");
}
