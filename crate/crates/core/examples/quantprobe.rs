// scratch probe: when does WF become bit-depth sensitive?
use fpm_core::dataset::{load_split, synthesize_dataset, Split, SynthesisOptions};
use fpm_core::geometry::presets::desk_geometry;
use fpm_core::metrics::psnr;
use fpm_core::solvers::{initialize_object, wf_reconstruct_auto, SolverConfig};
use fpm_core::synthgen::textured_image;
use fpm_core::RealImage;

fn main() {
    let g = desk_geometry();
    let n = g.obj_size_px;
    let dir = std::env::temp_dir().join("fpm-quantprobe");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let count = 48;
    let amps: Vec<RealImage> = (0..count).map(|i| textured_image(n, 1000 + i, 34.0)).collect();
    let phases: Vec<RealImage> = (0..count).map(|i| textured_image(n, 2000 + i, 34.0)).collect();
    let opts = SynthesisOptions { bit_depths: vec![16, 12, 8], seed: 42, split_fractions: (32.0/48.0, 8.0/48.0, 8.0/48.0) };
    let (manifest, _) = synthesize_dataset(&amps, &phases, &g, &opts, &dir).unwrap();

    for (sqrt_init, iters) in [(true, 500usize), (false, 1500), (true, 1500)] {
        for bits in [0u8, 16, 12, 8] {
            let test = load_split(&manifest, &dir, Split::Test, bits).unwrap();
            let m: f64 = test.iter().map(|s| {
                let cfg = SolverConfig { eta: 0.01, iters, record_objective: false, init_sqrt: sqrt_init };
                let init = initialize_object(&s.stack, &g, sqrt_init).unwrap();
                let (rec, _, _) = wf_reconstruct_auto(&s.stack, &cfg, &init).unwrap();
                psnr(&rec.magnitude(), &s.gt.magnitude(), 1.0)
            }).sum::<f64>() / test.len() as f64;
            println!("sqrt={sqrt_init} iters={iters} bits={bits}: {m:.3} dB");
        }
    }
}
