//! Manual tuning harness for the desk-scale learning run. Run with
//! `cargo test --release -p lfdepth --test smoke_tune -- --ignored --nocapture`.

use std::time::Instant;

use lfdepth::epishift::SweepRange;
use lfdepth::lightfield::{CrossStack, DisparityMap};
use lfdepth::metrics::{badpix, eval_mask, mse_x100};
use lfdepth::net::NetConfig;
use lfdepth::pipeline::infer;
use lfdepth::synth::{Layer, Region, SceneSpec, TextureKind, TextureSpec};
use lfdepth::train::{TrainConfig, Trainer};

fn noise(seed: u64, period: u32) -> TextureSpec {
    TextureSpec { kind: TextureKind::Noise, period, seed }
}

fn two_plane(seed: u64, w: usize, h: usize, views: usize, d_back: f32, d_front: f32) -> SceneSpec {
    let bw = (w / 2) as i64;
    let bh = (h / 2) as i64;
    SceneSpec {
        width: w,
        height: h,
        nu: views,
        nv: views,
        layers: vec![
            Layer { disparity: d_back, texture: noise(seed, 5), region: None },
            Layer {
                disparity: d_front,
                texture: noise(seed.wrapping_mul(31) + 7, 4),
                region: Some(Region {
                    x0: (w as i64 - bw) / 2 + (seed % 13) as i64 - 6,
                    y0: (h as i64 - bh) / 2 + (seed % 7) as i64 - 3,
                    w: bw,
                    h: bh,
                }),
            },
        ],
    }
}

fn detail(pred: &DisparityMap, gt: &DisparityMap, mask: &lfdepth::lightfield::Mask) {
    let mut n = 0usize;
    let mut label_ok = 0usize;
    let mut offs: Vec<f32> = Vec::new();
    for (idx, &m) in mask.indexed_iter() {
        if !m { continue; }
        n += 1;
        let err = pred.values[idx] - gt.values[idx];
        if err.abs() < 0.5 {
            label_ok += 1;
            offs.push(err.abs());
        }
    }
    offs.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f32 { if offs.is_empty() {f32::NAN} else { offs[((offs.len()-1) as f64 * p) as usize] } };
    println!(
        "  label_acc={:.4} | offset err on correct labels: p50={:.4} p85={:.4} p95={:.4}",
        label_ok as f64 / n.max(1) as f64, q(0.5), q(0.85), q(0.95)
    );
}

fn render(spec: &SceneSpec) -> (CrossStack, DisparityMap) {
    let (lf, gt) = spec.render().unwrap();
    (lf.extract_cross().unwrap(), gt)
}

#[test]
#[ignore]
fn tune_smoke() {
    let views: usize = std::env::var("VIEWS").map(|v| v.parse().unwrap()).unwrap_or(5);
    let iters1: usize = std::env::var("IT1").map(|v| v.parse().unwrap()).unwrap_or(250);
    let iters2: usize = std::env::var("IT2").map(|v| v.parse().unwrap()).unwrap_or(100);
    let lr1: f32 = std::env::var("LR1").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let lr2: f32 = std::env::var("LR2").map(|v| v.parse().unwrap()).unwrap_or(2e-4);
    let patch: usize = std::env::var("PATCH").map(|v| v.parse().unwrap()).unwrap_or(64);
    let seed: u64 = std::env::var("SEED").map(|v| v.parse().unwrap()).unwrap_or(1);

    // Training scenes: two-plane scenes for occlusion structure plus
    // single planes at dense fractional disparities for the regression.
    let train_ds: &[(f32, f32)] =
        &[(-1.8, 0.6), (-1.2, 1.9), (-0.4, 1.1), (-2.0, -0.3), (0.2, 1.6), (-0.9, 0.9)];
    let mut scenes: Vec<(CrossStack, DisparityMap)> = train_ds
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| render(&two_plane(10 + i as u64, 128, 96, views, a, b)))
        .collect();
    for (i, d) in [-1.55f32, -0.7, 0.35, 1.25, 1.8].into_iter().enumerate() {
        let spec = lfdepth::synth::plane_scene(
            128,
            96,
            views,
            views,
            d,
            noise(40 + i as u64, 4),
        );
        scenes.push(render(&spec));
    }

    let mut cfg = TrainConfig::desk(views);
    cfg.patch = patch;
    cfg.iters_phase1 = iters1;
    cfg.iters_phase2 = iters2;
    cfg.lr_phase1 = lr1;
    cfg.lr_phase2 = lr2;
    cfg.seed = seed;
    cfg.weight_floor = std::env::var("FLOOR").map(|v| v.parse().unwrap()).unwrap_or(0.0);
    println!(
        "config: views={views} iters={iters1}+{iters2} lr={lr1}/{lr2} patch={patch} seed={seed} floor={}",
        cfg.weight_floor
    );

    let t0 = Instant::now();
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut last_print = Instant::now();
    let mut trace = Vec::new();
    while trainer.iteration() < cfg.total_iters() {
        let row = trainer.step(&scenes).unwrap();
        if last_print.elapsed().as_secs() >= 5 {
            println!(
                "iter {:>4}: class {:.5} reg {:.5} total {:.5} ({:.2} s/iter)",
                row.iteration,
                row.l_class,
                row.l_reg,
                row.total,
                t0.elapsed().as_secs_f64() / (row.iteration + 1) as f64
            );
            last_print = Instant::now();
        }
        trace.push(row);
    }
    let train_secs = t0.elapsed().as_secs_f64();
    println!(
        "trained {} iters in {train_secs:.1} s; loss {:.5} -> {:.5}",
        trace.len(),
        trace.first().unwrap().total,
        trace.last().unwrap().total
    );
    let net = trainer.into_network();

    // Held-out near-range scene.
    let (cross, gt) = render(&two_plane(91, 160, 120, views, -1.3, 1.6));
    let t1 = Instant::now();
    let (pred, _, _) = infer(&net, &cross, SweepRange::new(-2, 2).unwrap(), 64, None).unwrap();
    let mask = eval_mask(&pred, &gt).unwrap();
    let mse = mse_x100(&pred, &gt, &mask).unwrap();
    let (bp, _) = badpix(&pred, &gt, &mask, 0.07).unwrap();
    println!("held-out: mse_x100={mse:.4} badpix={bp:.4} ({:.1} s)", t1.elapsed().as_secs_f64());
    detail(&pred, &gt, &mask);

    // Wide-baseline scene: planes at 8..11 via sweep [0, 12].
    let (cross_far, gt_far) = render(&two_plane(77, 224, 160, views, 8.4, 10.6));
    let t2 = Instant::now();
    let (pred_far, _, _) =
        infer(&net, &cross_far, SweepRange::new(0, 12).unwrap(), 64, None).unwrap();
    let mask_far = eval_mask(&pred_far, &gt_far).unwrap();
    let (bp_far, _) = badpix(&pred_far, &gt_far, &mask_far, 0.07).unwrap();
    let mse_far = mse_x100(&pred_far, &gt_far, &mask_far).unwrap();
    println!(
        "far sweep: mse_x100={mse_far:.4} badpix={bp_far:.4} ({:.1} s)",
        t2.elapsed().as_secs_f64()
    );

    detail(&pred_far, &gt_far, &mask_far);

    // Ablation: single s=0 volume.
    let (pred_base, _, _) =
        infer(&net, &cross_far, SweepRange::new(0, 0).unwrap(), 64, None).unwrap();
    let mask_base = eval_mask(&pred_base, &gt_far).unwrap();
    let (bp_base, _) = badpix(&pred_base, &gt_far, &mask_base, 0.07).unwrap();
    println!("no-shift baseline: badpix={bp_base:.4}");
}
