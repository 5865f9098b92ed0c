use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Subcommand;

use lfdepth::epishift::{build_sweep, SweepRange, DEFAULT_SWEEP_CAP};
use lfdepth::io::{load_scene, read_pfm, save_scene, write_mask_png, write_pfm, write_view_png};
use lfdepth::lightfield::DisparityMap;
use lfdepth::metrics::{badpix, eval_mask, mse_x100, write_badpix_png, Report, DEFAULT_TAU};
use lfdepth::net::Network;
use lfdepth::pipeline;
use lfdepth::synth::SceneSpec;
use lfdepth::train::{train_scenes, write_trace_csv, TrainConfig};

#[derive(Subcommand)]
pub enum Command {
    /// Render a synthetic scene description into a scene directory.
    Synth {
        /// Scene spec file (key=value lines with [layer] sections).
        spec: PathBuf,
        /// Output scene directory.
        out_dir: PathBuf,
    },
    /// Estimate disparity for a scene with a trained checkpoint.
    Infer {
        scene_dir: PathBuf,
        checkpoint: PathBuf,
        /// Output PFM path.
        #[arg(long, default_value = "disparity.pfm")]
        out: PathBuf,
        /// Sweep range as two integers; defaults to the scene's disparity bounds.
        #[arg(long, num_args = 2, value_names = ["S_MIN", "S_MAX"], allow_hyphen_values = true)]
        range: Option<Vec<i32>>,
        /// Refinement threshold and odd median kernel size.
        #[arg(long, num_args = 2, value_names = ["T", "K"])]
        refine: Option<Vec<f64>>,
        /// Cap on the number of shifts.
        #[arg(long, default_value_t = DEFAULT_SWEEP_CAP)]
        sweep_cap: usize,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        /// Also save the raw sweep volumes into this directory.
        #[arg(long)]
        save_volumes: Option<PathBuf>,
        /// BadPix threshold for the report when ground truth is present.
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f32,
    },
    /// Train a model on a list of scene directories.
    Train {
        /// Scene directories (all must contain ground truth).
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        /// Training config file (key=value); defaults to the full-scale setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint directory.
        #[arg(long, default_value = "checkpoint")]
        out: PathBuf,
        /// Override the total iteration count (shrinks phase 2 first).
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Loss trace CSV path (default: <out>/trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a predicted disparity map against ground truth.
    Eval {
        pred_pfm: PathBuf,
        gt_pfm: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f32,
        /// Write the bad-pixel visualization here.
        #[arg(long)]
        badpix_png: Option<PathBuf>,
    },
    /// Write the EPI-shifted stacks of a scene for visual inspection.
    Shift {
        scene_dir: PathBuf,
        /// Integer shift to apply.
        #[arg(allow_hyphen_values = true)]
        s: i32,
        out_dir: PathBuf,
    },
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out_dir } => synth(spec, out_dir),
        Command::Infer {
            scene_dir,
            checkpoint,
            out,
            range,
            refine,
            sweep_cap,
            workers,
            save_volumes,
            tau,
        } => infer(scene_dir, checkpoint, out, range, refine, sweep_cap, workers, save_volumes, tau),
        Command::Train { scenes, config, out, iterations, seed, trace } => {
            train(scenes, config, out, iterations, seed, trace)
        }
        Command::Eval { pred_pfm, gt_pfm, tau, badpix_png } => eval(pred_pfm, gt_pfm, tau, badpix_png),
        Command::Shift { scene_dir, s, out_dir } => shift(scene_dir, s, out_dir),
    }
}

fn synth(spec_path: PathBuf, out_dir: PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(&spec_path)
        .with_context(|| format!("cannot read scene spec {}", spec_path.display()))?;
    let spec = SceneSpec::parse(&text)?;
    let (lf, gt) = spec.render()?;
    save_scene(&out_dir, &lf, Some(&gt))?;
    println!(
        "rendered {}x{} scene with {}x{} views into {}",
        lf.width(),
        lf.height(),
        lf.nv(),
        lf.nu(),
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    scene_dir: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    range: Option<Vec<i32>>,
    refinement: Option<Vec<f64>>,
    sweep_cap: usize,
    workers: Option<usize>,
    save_volumes: Option<PathBuf>,
    tau: f32,
) -> Result<()> {
    let (lf, gt) = load_scene(&scene_dir)?;
    let cross = lf.extract_cross()?;
    let (net, _) = Network::<f32>::load_from(&checkpoint)?;
    if net.config.views != cross.horizontal.len() || net.config.views != cross.vertical.len() {
        bail!(
            "checkpoint expects {} views per stack, scene provides {}x{}",
            net.config.views,
            cross.horizontal.len(),
            cross.vertical.len()
        );
    }
    let range = match range {
        Some(r) => SweepRange::new(r[0], r[1])?,
        None => SweepRange::from_disparity_bounds(lf.disp_min, lf.disp_max)?,
    };
    let refinement = match refinement {
        Some(r) => {
            let k = r[1] as usize;
            Some((r[0] as f32, k))
        }
        None => None,
    };

    let run = || -> Result<_> {
        let (map, volumes, timings) =
            pipeline::infer(&net, &cross, range, sweep_cap, refinement)?;
        Ok((map, volumes, timings))
    };
    let (map, volumes, timings) = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(run)?,
        None => run()?,
    };

    for t in &timings {
        println!("shift {:>3}: {:.3} s", t.shift, t.seconds);
    }
    println!(
        "sweep [{}, {}]: {} forward passes in {:.3} s",
        range.s_min,
        range.s_max,
        volumes.shifts.len(),
        timings.iter().map(|t| t.seconds).sum::<f64>()
    );
    write_pfm(&out, &map.values)?;
    println!("wrote {}", out.display());
    if let Some(dir) = save_volumes {
        volumes.save(&dir)?;
        println!("wrote volumes to {}", dir.display());
    }
    if let Some(gt) = gt {
        let report = Report::compute(&map, &gt, tau)?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn train(
    scene_dirs: Vec<PathBuf>,
    config_path: Option<PathBuf>,
    out: PathBuf,
    iterations: Option<usize>,
    seed: Option<u64>,
    trace_path: Option<PathBuf>,
) -> Result<()> {
    let mut config = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("cannot read training config {}", p.display()))?;
            TrainConfig::parse(&text)?
        }
        None => TrainConfig::full(),
    };
    if let Some(n) = iterations {
        if n <= config.iters_phase1 {
            config.iters_phase1 = n;
            config.iters_phase2 = 0;
        } else {
            config.iters_phase2 = n - config.iters_phase1;
        }
    }
    if let Some(s) = seed {
        config.seed = s;
    }

    // Fail fast on unreadable scenes before spending any training time.
    let mut scenes = Vec::new();
    for dir in &scene_dirs {
        let (lf, gt) = load_scene(dir)?;
        let gt = gt.with_context(|| format!("scene {} has no ground truth", dir.display()))?;
        scenes.push((lf.extract_cross()?, gt));
    }

    let (net, trace) = train_scenes(&scenes, config)?;
    net.save_to(&out, &Default::default())?;
    let trace_path = trace_path.unwrap_or_else(|| out.join("trace.csv"));
    write_trace_csv(&trace_path, &trace)?;
    println!(
        "trained {} iterations; checkpoint in {}, trace in {}",
        trace.len(),
        out.display(),
        trace_path.display()
    );
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("loss: {:.6} -> {:.6}", first.total, last.total);
    }
    Ok(())
}

fn eval(pred_pfm: PathBuf, gt_pfm: PathBuf, tau: f32, badpix_png: Option<PathBuf>) -> Result<()> {
    let pred = DisparityMap::all_valid(read_pfm(&pred_pfm)?)?;
    let gt = DisparityMap::all_valid(read_pfm(&gt_pfm)?)?;
    let mask = eval_mask(&pred, &gt)?;
    let mse = mse_x100(&pred, &gt, &mask)?;
    let (bp, bad) = badpix(&pred, &gt, &mask, tau)?;
    println!("mse_x100={mse:.6}");
    println!("badpix({tau})={bp:.6}");
    if let Some(path) = badpix_png {
        write_badpix_png(&path, &bad, &gt, &mask)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn shift(scene_dir: PathBuf, s: i32, out_dir: PathBuf) -> Result<()> {
    let (lf, _) = load_scene(&scene_dir)?;
    let cross = lf.extract_cross()?;
    let range = SweepRange::new(s, s)?;
    let sweep = build_sweep(&cross, range, DEFAULT_SWEEP_CAP)?;
    let shifted = &sweep[0];
    std::fs::create_dir_all(&out_dir)?;
    for (i, view) in shifted.stack.horizontal.iter().enumerate() {
        write_view_png(out_dir.join(format!("h{i:02}.png")), view)?;
    }
    for (i, view) in shifted.stack.vertical.iter().enumerate() {
        write_view_png(out_dir.join(format!("v{i:02}.png")), view)?;
    }
    write_mask_png(out_dir.join("valid.png"), &shifted.valid)?;
    println!(
        "wrote {} shifted views and the valid mask to {}",
        shifted.stack.horizontal.len() + shifted.stack.vertical.len(),
        out_dir.display()
    );
    Ok(())
}
