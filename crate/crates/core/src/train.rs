//! Training: augmentation, batch assembly over sampled shifts, the Adam
//! optimizer and the two-phase schedule (normalization statistics frozen in
//! the second phase). Every random draw flows through one seeded generator,
//! and batches process their samples in parallel with a deterministic merge,
//! so identical (seed, config, data) reproduce identical traces bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::epishift::{shift_cross, SweepRange, DEFAULT_SWEEP_CAP};
use crate::error::{Error, Result};
use crate::fusion::{fuse, SweepVolumes};
use crate::lightfield::{CrossStack, DisparityMap, Mask, View};
use crate::net::{
    load_checkpoint, save_checkpoint, BnMode, GradStore, NetConfig, NetInput, Network, ParamKind,
};
use crate::targets::{
    class_loss, class_loss_grad, disp_weight, reg_loss, reg_loss_grad, total_loss, ShiftTargets,
    TargetKind, TargetSpec,
};

/// Training hyperparameters and schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_phase1: f32,
    pub iters_phase1: usize,
    pub lr_phase2: f32,
    pub iters_phase2: usize,
    pub patch: usize,
    pub shifts_per_batch: usize,
    pub seed: u64,
    pub target: TargetSpec,
    /// Optional floor added to the disparity weighting (0 keeps Eq. 6 as-is).
    pub weight_floor: f32,
    pub net: NetConfig,
    pub sweep_cap: usize,
}

impl TrainConfig {
    /// The full-scale schedule.
    pub fn full() -> Self {
        Self {
            lr_phase1: 1e-4,
            iters_phase1: 10_000,
            lr_phase2: 1e-5,
            iters_phase2: 30_000,
            patch: 225,
            shifts_per_batch: 7,
            seed: 0,
            target: TargetSpec::default(),
            weight_floor: 0.0,
            net: NetConfig::full(9),
            sweep_cap: DEFAULT_SWEEP_CAP,
        }
    }

    /// Small configuration for desk-scale runs and tests.
    pub fn desk(views: usize) -> Self {
        Self {
            lr_phase1: 2e-3,
            iters_phase1: 250,
            lr_phase2: 5e-4,
            iters_phase2: 100,
            patch: 64,
            shifts_per_batch: 7,
            seed: 1,
            target: TargetSpec::default(),
            weight_floor: 0.0,
            net: NetConfig::desk(views),
            sweep_cap: DEFAULT_SWEEP_CAP,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.iters_phase1 + self.iters_phase2
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.shifts_per_batch == 0 {
            return Err(Error::Config("patch and shifts_per_batch must be positive".into()));
        }
        if !(self.lr_phase1.is_finite() && self.lr_phase2.is_finite()) {
            return Err(Error::Config("non-finite learning rate".into()));
        }
        self.target.validate()?;
        self.net.validate()
    }

    pub fn to_text(&self) -> String {
        let kind = match self.target.kind {
            TargetKind::Rectangle => "rectangle",
            TargetKind::Triangle => "triangle",
        };
        format!(
            "lr_phase1={}\niters_phase1={}\nlr_phase2={}\niters_phase2={}\npatch={}\n\
             shifts_per_batch={}\nseed={}\ntarget_kind={kind}\neps_class={}\neps_reg={}\n\
             alpha={}\nweight_floor={}\nsweep_cap={}\n{}",
            self.lr_phase1,
            self.iters_phase1,
            self.lr_phase2,
            self.iters_phase2,
            self.patch,
            self.shifts_per_batch,
            self.seed,
            self.target.eps_class,
            self.target.eps_reg,
            self.target.alpha,
            self.weight_floor,
            self.sweep_cap,
            self.net.to_text()
        )
    }

    /// Parses a `key=value` config file; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::parse_kv(&pairs)
    }

    pub fn parse_kv(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::full();
        let parse_f32 = |k: &str, v: &str| -> Result<f32> {
            v.parse().map_err(|_| Error::Config(format!("malformed value for {k}")))
        };
        let parse_usize = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("malformed value for {k}")))
        };
        let mut net_keys = BTreeMap::new();
        for (k, v) in pairs {
            match k.as_str() {
                "lr_phase1" => cfg.lr_phase1 = parse_f32(k, v)?,
                "iters_phase1" => cfg.iters_phase1 = parse_usize(k, v)?,
                "lr_phase2" => cfg.lr_phase2 = parse_f32(k, v)?,
                "iters_phase2" => cfg.iters_phase2 = parse_usize(k, v)?,
                "patch" => cfg.patch = parse_usize(k, v)?,
                "shifts_per_batch" => cfg.shifts_per_batch = parse_usize(k, v)?,
                "seed" => {
                    cfg.seed =
                        v.parse().map_err(|_| Error::Config("malformed value for seed".into()))?
                }
                "target_kind" => {
                    cfg.target.kind = match v.as_str() {
                        "rectangle" => TargetKind::Rectangle,
                        "triangle" => TargetKind::Triangle,
                        other => {
                            return Err(Error::Config(format!("unknown target kind {other:?}")))
                        }
                    }
                }
                "eps_class" => cfg.target.eps_class = parse_f32(k, v)?,
                "eps_reg" => cfg.target.eps_reg = parse_f32(k, v)?,
                "alpha" => cfg.target.alpha = parse_f32(k, v)?,
                "weight_floor" => cfg.weight_floor = parse_f32(k, v)?,
                "sweep_cap" => cfg.sweep_cap = parse_usize(k, v)?,
                "views" | "feat_channels" | "feat_blocks" | "unet_depth" | "unet_base" => {
                    net_keys.insert(k.clone(), v.clone());
                }
                other => return Err(Error::Config(format!("unknown training key {other:?}"))),
            }
        }
        if !net_keys.is_empty() {
            // Missing net keys fall back to the full-scale defaults.
            for (k, v) in [
                ("views", cfg.net.views),
                ("feat_channels", cfg.net.feat_channels),
                ("feat_blocks", cfg.net.feat_blocks),
                ("unet_depth", cfg.net.unet_depth),
                ("unet_base", cfg.net.unet_base),
            ] {
                net_keys.entry(k.to_string()).or_insert_with(|| v.to_string());
            }
            cfg.net = NetConfig::parse_kv(&net_keys)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// One concrete augmentation draw; applying it is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Quarter turns counter-clockwise (0..=3).
    pub rot_quarters: u8,
    /// Spatial scale in [0.5, 1].
    pub scale: f32,
    pub brightness: f32,
    pub contrast: f32,
    /// Channel permutation.
    pub perm: [usize; 3],
    /// Blend toward the convex remix (0 = pure permutation).
    pub mix: f32,
    pub mix_weights: [f32; 3],
    /// Crop origin (x, y) and size; applied after rotation and scaling.
    pub crop: Option<(usize, usize, usize)>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rot_quarters: 0,
            scale: 1.0,
            brightness: 0.0,
            contrast: 1.0,
            perm: [0, 1, 2],
            mix: 0.0,
            mix_weights: [1.0 / 3.0; 3],
            crop: None,
        }
    }

    /// Samples a draw for an `(h, w)` scene cropped to `patch`.
    pub fn sample(rng: &mut ChaCha20Rng, h: usize, w: usize, patch: usize) -> Result<Self> {
        let rot_quarters = rng.gen_range(0..4u8);
        let (h, w) = if rot_quarters % 2 == 1 { (w, h) } else { (h, w) };
        if h < patch || w < patch {
            return Err(Error::Train(format!(
                "crop of {patch} exceeds scene size {h}x{w}"
            )));
        }
        // Scales drawn from a fixed grid, keeping the scaled image at least
        // as large as the crop.
        let candidates = [1.0f32, 0.9, 0.8, 0.7, 0.6, 0.5];
        let valid: Vec<f32> = candidates
            .iter()
            .copied()
            .filter(|&k| {
                ((h as f32) * k).floor() as usize >= patch
                    && ((w as f32) * k).floor() as usize >= patch
            })
            .collect();
        let scale = valid[rng.gen_range(0..valid.len())];
        let sh = ((h as f32) * scale).floor() as usize;
        let sw = ((w as f32) * scale).floor() as usize;
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut weights = [0.0f32; 3];
        let mut total = 0.0;
        for wgt in &mut weights {
            *wgt = rng.gen_range(0.05..1.0);
            total += *wgt;
        }
        for wgt in &mut weights {
            *wgt /= total;
        }
        let crop_x = rng.gen_range(0..=sw - patch);
        let crop_y = rng.gen_range(0..=sh - patch);
        Ok(Self {
            rot_quarters,
            scale,
            brightness: rng.gen_range(-0.12..0.12),
            contrast: rng.gen_range(0.75..1.25),
            perm: perms[rng.gen_range(0..perms.len())],
            mix: rng.gen_range(0.0..0.25),
            mix_weights: weights,
            crop: Some((crop_x, crop_y, patch)),
        })
    }
}

fn rotate_view_ccw(view: &View) -> View {
    let (c, h, w) = view.dim();
    View::from_shape_fn((c, w, h), |(ch, yp, xp)| view[(ch, xp, w - 1 - yp)])
}

fn rotate_map_ccw(map: &Array2<f32>) -> Array2<f32> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((w, h), |(yp, xp)| map[(xp, w - 1 - yp)])
}

fn rotate_mask2_ccw(mask: &Mask) -> Mask {
    let (h, w) = mask.dim();
    Mask::from_shape_fn((w, h), |(yp, xp)| mask[(xp, w - 1 - yp)])
}

/// One quarter turn of the whole cross: stacks swap roles. The old vertical
/// stack becomes the new horizontal one (order kept), the old horizontal
/// becomes the new vertical with reversed view order, so a point at
/// disparity `d` still aligns at shift `d` afterwards.
fn rotate_cross_ccw(cross: &CrossStack) -> CrossStack {
    let horizontal: Vec<View> = cross.vertical.iter().map(rotate_view_ccw).collect();
    let vertical: Vec<View> =
        cross.horizontal.iter().rev().map(rotate_view_ccw).collect();
    let center_u = horizontal.len() / 2;
    let center_v = vertical.len() / 2;
    CrossStack { horizontal, vertical, center_u, center_v }
}

fn resample_view_bilinear(view: &View, scale: f32, out_h: usize, out_w: usize) -> View {
    let (c, h, w) = view.dim();
    let inv = 1.0 / scale;
    View::from_shape_fn((c, out_h, out_w), |(ch, y, x)| {
        let fy = (y as f32 * inv).min(h as f32 - 1.0);
        let fx = (x as f32 * inv).min(w as f32 - 1.0);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = fy - y0 as f32;
        let tx = fx - x0 as f32;
        let top = view[(ch, y0, x0)] * (1.0 - tx) + view[(ch, y0, x1)] * tx;
        let bot = view[(ch, y1, x0)] * (1.0 - tx) + view[(ch, y1, x1)] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

fn resample_gt_nearest(gt: &DisparityMap, scale: f32, out_h: usize, out_w: usize) -> DisparityMap {
    let (h, w) = gt.values.dim();
    let inv = 1.0 / scale;
    let src = |y: usize, x: usize| -> (usize, usize) {
        let sy = ((y as f32 * inv).round() as usize).min(h - 1);
        let sx = ((x as f32 * inv).round() as usize).min(w - 1);
        (sy, sx)
    };
    let values = Array2::from_shape_fn((out_h, out_w), |(y, x)| gt.values[src(y, x)] * scale);
    let valid = Mask::from_shape_fn((out_h, out_w), |(y, x)| gt.valid[src(y, x)]);
    DisparityMap { values, valid }
}

fn crop_view(view: &View, x0: usize, y0: usize, size: usize) -> View {
    view.slice(ndarray::s![.., y0..y0 + size, x0..x0 + size]).to_owned()
}

/// Applies an augmentation draw to a cross stack and its ground truth.
/// Color operations leave the ground truth unchanged; rotation permutes the
/// stack roles and rotates the ground truth; scaling by `k` multiplies the
/// disparities by `k`; the crop slices both consistently.
pub fn augment(
    cross: &CrossStack,
    gt: &DisparityMap,
    params: &AugmentParams,
) -> Result<(CrossStack, DisparityMap)> {
    let mut cross = cross.clone();
    let mut gt = gt.clone();

    for _ in 0..params.rot_quarters {
        cross = rotate_cross_ccw(&cross);
        gt = DisparityMap {
            values: rotate_map_ccw(&gt.values),
            valid: rotate_mask2_ccw(&gt.valid),
        };
    }

    if params.scale != 1.0 {
        let (h, w) = (cross.height(), cross.width());
        let out_h = ((h as f32) * params.scale).floor().max(1.0) as usize;
        let out_w = ((w as f32) * params.scale).floor().max(1.0) as usize;
        let scale_stack = |views: &[View]| -> Vec<View> {
            views.iter().map(|v| resample_view_bilinear(v, params.scale, out_h, out_w)).collect()
        };
        cross = CrossStack {
            horizontal: scale_stack(&cross.horizontal),
            vertical: scale_stack(&cross.vertical),
            center_u: cross.center_u,
            center_v: cross.center_v,
        };
        gt = resample_gt_nearest(&gt, params.scale, out_h, out_w);
    }

    // Color: same operation on every view keeps cross-view consistency.
    let color_is_identity = params.perm == [0, 1, 2]
        && params.mix == 0.0
        && params.brightness == 0.0
        && params.contrast == 1.0;
    if !color_is_identity {
        let color = |view: &View| -> View {
            let (c, h, w) = view.dim();
            View::from_shape_fn((c, h, w), |(ch, y, x)| {
                let permuted = view[(params.perm[ch], y, x)];
                let mixed = params.mix_weights[0] * view[(0, y, x)]
                    + params.mix_weights[1] * view[(1, y, x)]
                    + params.mix_weights[2] * view[(2, y, x)];
                let v = (1.0 - params.mix) * permuted + params.mix * mixed;
                ((v - 0.5) * params.contrast + 0.5 + params.brightness).clamp(0.0, 1.0)
            })
        };
        cross = CrossStack {
            horizontal: cross.horizontal.iter().map(color).collect(),
            vertical: cross.vertical.iter().map(color).collect(),
            center_u: cross.center_u,
            center_v: cross.center_v,
        };
    }

    if let Some((x0, y0, size)) = params.crop {
        let (h, w) = (cross.height(), cross.width());
        if y0 + size > h || x0 + size > w {
            return Err(Error::Train(format!(
                "crop {size} at ({x0},{y0}) exceeds image {h}x{w}"
            )));
        }
        cross = CrossStack {
            horizontal: cross.horizontal.iter().map(|v| crop_view(v, x0, y0, size)).collect(),
            vertical: cross.vertical.iter().map(|v| crop_view(v, x0, y0, size)).collect(),
            center_u: cross.center_u,
            center_v: cross.center_v,
        };
        gt = DisparityMap {
            values: gt.values.slice(ndarray::s![y0..y0 + size, x0..x0 + size]).to_owned(),
            valid: gt.valid.slice(ndarray::s![y0..y0 + size, x0..x0 + size]).to_owned(),
        };
    }
    Ok((cross, gt))
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

/// One training sample: a shift with its network input and supervision.
pub struct BatchSample {
    pub shift: i32,
    pub input: NetInput<f32>,
    pub targets: ShiftTargets,
}

pub struct Batch {
    pub samples: Vec<BatchSample>,
    /// The augmented, cropped ground truth the samples were built from.
    pub gt: DisparityMap,
}

/// Assembles a batch from an already augmented crop: samples
/// `shifts_per_batch` shifts (biased toward shifts whose rectangle target is
/// non-empty, every in-range shift covered first when the range is short),
/// shifts the stacks, and builds per-shift targets with the padding masks of
/// the (clamped) triples.
pub fn make_batch(
    cross: &CrossStack,
    gt: &DisparityMap,
    config: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Batch> {
    let Some((lo, hi)) = gt.valid_range() else {
        return Err(Error::Train("no supervised pixels".into()));
    };
    let range = SweepRange::from_disparity_bounds(lo, hi)?;
    if range.len() > config.sweep_cap {
        return Err(Error::SweepTooLong { len: range.len(), cap: config.sweep_cap });
    }

    // Importance weights: pixels whose rectangle target lights up, plus a
    // floor so every shift stays reachable.
    let weights: Vec<f64> = range
        .shifts()
        .map(|s| {
            let hits = gt
                .values
                .iter()
                .zip(gt.valid.iter())
                .filter(|(&d, &m)| m && (d - s as f32).abs() <= 0.5 + config.target.eps_class)
                .count();
            hits as f64 + 1.0
        })
        .collect();
    let shifts_in_range: Vec<i32> = range.shifts().collect();
    let mut chosen: Vec<i32> = Vec::with_capacity(config.shifts_per_batch);
    if shifts_in_range.len() <= config.shifts_per_batch {
        chosen.extend(&shifts_in_range);
    }
    while chosen.len() < config.shifts_per_batch {
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, w) in weights.iter().enumerate() {
            if draw < *w {
                idx = i;
                break;
            }
            draw -= *w;
        }
        chosen.push(shifts_in_range[idx]);
    }
    chosen.sort_unstable();

    // Shift each needed stack once (samples and their clamped neighbors).
    let mut needed: Vec<i32> = chosen
        .iter()
        .flat_map(|&s| [range.clamp(s - 1), s, range.clamp(s + 1)])
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let mut shifted = BTreeMap::new();
    for &s in &needed {
        shifted.insert(s, shift_cross(cross, s)?);
    }

    let mut samples = Vec::with_capacity(chosen.len());
    for &s in &chosen {
        let prev = &shifted[&range.clamp(s - 1)];
        let cur = &shifted[&s];
        let next = &shifted[&range.clamp(s + 1)];
        let padding_valid = Mask::from_shape_fn(cur.valid.dim(), |idx| {
            prev.valid[idx] && cur.valid[idx] && next.valid[idx]
        });
        let targets = ShiftTargets::build(gt, s, &config.target, &padding_valid)?;
        let input = NetInput::from_triple(prev, cur, next);
        samples.push(BatchSample { shift: s, input, targets });
    }
    let supervised: usize = samples
        .iter()
        .map(|s| s.targets.loss_mask.iter().filter(|&&m| m).count())
        .sum();
    if supervised == 0 {
        return Err(Error::Train("no supervised pixels".into()));
    }
    Ok(Batch { samples, gt: gt.clone() })
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    fn new(net: &Network<f32>) -> Self {
        let sizes: Vec<usize> = net.param_metas().iter().map(|m| m.shape.iter().product()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(
        &mut self,
        net: &mut Network<f32>,
        grads: &GradStore<f32>,
        lr: f32,
        freeze_bn_affine: bool,
    ) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let metas = net.param_metas().to_vec();
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = &mut self.m;
        let v = &mut self.v;
        net.visit_params_mut(&mut |id, data| {
            let kind = metas[id].kind;
            if !kind.trainable() || (freeze_bn_affine && kind == ParamKind::BnAffine) {
                return;
            }
            let g = grads.get(id);
            let ms = &mut m[id];
            let vs = &mut v[id];
            for i in 0..data.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let mhat = ms[i] / b1t;
                let vhat = vs[i] / b2t;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// One row of the loss trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub l_class: f64,
    pub l_reg: f64,
    pub total: f64,
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,l_class,l_reg,total")?;
    for row in trace {
        writeln!(f, "{},{:.9},{:.9},{:.9}", row.iteration, row.l_class, row.l_reg, row.total)?;
    }
    Ok(())
}

/// Resumable training state.
pub struct Trainer {
    pub config: TrainConfig,
    net: Network<f32>,
    adam: Adam,
    iteration: usize,
    rng: ChaCha20Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::new(config.net, config.seed)?;
        let adam = Adam::new(&net);
        let rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5EED_F00D);
        Ok(Self { config, net, adam, iteration: 0, rng })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn in_phase2(&self) -> bool {
        self.iteration >= self.config.iters_phase1
    }

    /// Runs one optimization step on a scene drawn from `scenes`.
    pub fn step(&mut self, scenes: &[(CrossStack, DisparityMap)]) -> Result<TraceRow> {
        if scenes.is_empty() {
            return Err(Error::Train("no training scenes".into()));
        }
        let scene_idx = self.rng.gen_range(0..scenes.len());
        let (cross, gt) = &scenes[scene_idx];
        let params =
            AugmentParams::sample(&mut self.rng, cross.height(), cross.width(), self.config.patch)?;
        let (aug_cross, aug_gt) = augment(cross, gt, &params)?;
        let batch = make_batch(&aug_cross, &aug_gt, &self.config, &mut self.rng)?;

        let phase2 = self.in_phase2();
        let lr = if phase2 { self.config.lr_phase2 } else { self.config.lr_phase1 };
        let bn_mode = if phase2 { BnMode::Running } else { BnMode::Batch };

        // One batched forward: normalization statistics pool over the whole
        // seven-shift batch.
        let inputs: Vec<&NetInput<f32>> = batch.samples.iter().map(|s| &s.input).collect();
        let (outputs, cache) = self.net.forward_batch(&inputs, bn_mode)?;

        // Fuse the current predictions over the batch's distinct shifts to
        // evaluate the disparity weighting (a constant for the gradients).
        let mut seen = Vec::new();
        let mut vol_shifts = Vec::new();
        let mut vol_c = Vec::new();
        let mut vol_r = Vec::new();
        let mut vol_valid = Vec::new();
        for (sample, (c, r)) in batch.samples.iter().zip(&outputs) {
            if seen.contains(&sample.shift) {
                continue;
            }
            seen.push(sample.shift);
            vol_shifts.push(sample.shift);
            vol_c.push(c.clone());
            vol_r.push(r.clone());
            vol_valid.push(sample.targets.loss_mask.clone());
        }
        let order: Vec<usize> = {
            let mut idx: Vec<usize> = (0..vol_shifts.len()).collect();
            idx.sort_by_key(|&i| vol_shifts[i]);
            idx
        };
        let volumes = SweepVolumes::new(
            order.iter().map(|&i| vol_shifts[i]).collect(),
            order.iter().map(|&i| vol_c[i].clone()).collect(),
            order.iter().map(|&i| vol_r[i].clone()).collect(),
            order.iter().map(|&i| vol_valid[i].clone()).collect(),
        )?;
        let fused = fuse(&volumes);
        let w_disp = disp_weight(&fused, &batch.gt, self.config.weight_floor)?;

        let c_maps: Vec<Array2<f32>> = outputs.iter().map(|(c, _)| c.clone()).collect();
        let r_maps: Vec<Array2<f32>> = outputs.iter().map(|(_, r)| r.clone()).collect();
        let c_stars: Vec<Array2<f32>> =
            batch.samples.iter().map(|s| s.targets.c_star.clone()).collect();
        let gates: Vec<Array2<f32>> =
            batch.samples.iter().map(|s| s.targets.r_gate.clone()).collect();
        let masks: Vec<Mask> = batch.samples.iter().map(|s| s.targets.loss_mask.clone()).collect();
        let shifts: Vec<i32> = batch.samples.iter().map(|s| s.shift).collect();

        let l_class = class_loss(&c_maps, &c_stars, &w_disp, &masks)?;
        let l_reg = reg_loss(&r_maps, &batch.gt, &shifts, &gates, &masks)?;
        let total = total_loss(l_reg, l_class, self.config.target.alpha);
        if !total.is_finite() {
            return Err(Error::Train(format!(
                "diverged at iteration {}: non-finite loss",
                self.iteration
            )));
        }

        let d_c = class_loss_grad(&c_maps, &c_stars, &w_disp, &masks)?;
        let mut d_r = reg_loss_grad(&r_maps, &batch.gt, &shifts, &gates, &masks)?;
        let alpha = self.config.target.alpha;
        for dr in &mut d_r {
            dr.mapv_inplace(|v| v * alpha);
        }

        let mut grads = GradStore::new(self.net.n_params());
        self.net.backward_batch(&cache, &d_c, &d_r, &mut grads)?;

        self.adam.step(&mut self.net, &grads, lr, phase2);
        if bn_mode == BnMode::Batch {
            self.net.update_running_stats_batch(&cache);
        }

        let row = TraceRow { iteration: self.iteration, l_class, l_reg, total };
        self.iteration += 1;
        Ok(row)
    }

    /// Trains until the configured iteration count, appending to `trace`.
    /// On divergence a diagnostic checkpoint is written next to `diag_dir`
    /// when provided.
    pub fn run(
        &mut self,
        scenes: &[(CrossStack, DisparityMap)],
        diag_dir: Option<&Path>,
    ) -> Result<Vec<TraceRow>> {
        let mut trace = Vec::new();
        while self.iteration < self.config.total_iters() {
            match self.step(scenes) {
                Ok(row) => trace.push(row),
                Err(e) => {
                    if let Some(dir) = diag_dir {
                        let _ = self.save(dir);
                    }
                    return Err(e);
                }
            }
        }
        Ok(trace)
    }

    /// Writes a resumable checkpoint: parameters, optimizer state, iteration
    /// counter and generator position.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.net.export_tensors();
        let metas = self.net.param_metas();
        for (id, meta) in metas.iter().enumerate() {
            tensors.push((format!("adam.m.{}", meta.name), meta.shape.clone(), self.adam.m[id].clone()));
            tensors.push((format!("adam.v.{}", meta.name), meta.shape.clone(), self.adam.v[id].clone()));
        }
        let mut extras = BTreeMap::new();
        extras.insert("iteration".into(), self.iteration.to_string());
        extras.insert("adam_t".into(), self.adam.t.to_string());
        extras.insert("rng_seed".into(), self.config.seed.to_string());
        extras.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        save_checkpoint(dir, &self.config.net, &tensors, &extras)
    }

    /// Restores a trainer from [`Trainer::save`] output. The training config
    /// must match the one the checkpoint was created with.
    pub fn resume(dir: impl AsRef<Path>, config: TrainConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let data = load_checkpoint(dir)?;
        if data.config != config.net {
            return Err(Error::Checkpoint {
                path: dir.into(),
                msg: "network config does not match the checkpoint".into(),
            });
        }
        let mut trainer = Self::new(config)?;
        trainer.net.import_tensors(&data.tensors)?;
        let metas = trainer.net.param_metas().to_vec();
        let by_name: BTreeMap<&str, &(String, Vec<usize>, Vec<f32>)> =
            data.tensors.iter().map(|t| (t.0.as_str(), t)).collect();
        for (id, meta) in metas.iter().enumerate() {
            for (prefix, slot) in
                [("adam.m.", &mut trainer.adam.m), ("adam.v.", &mut trainer.adam.v)]
            {
                let name = format!("{prefix}{}", meta.name);
                let t = by_name.get(name.as_str()).ok_or_else(|| Error::Checkpoint {
                    path: dir.into(),
                    msg: format!("missing optimizer tensor {name}"),
                })?;
                if t.2.len() != slot[id].len() {
                    return Err(Error::Checkpoint {
                        path: dir.into(),
                        msg: format!("optimizer tensor {name} has the wrong size"),
                    });
                }
                slot[id].copy_from_slice(&t.2);
            }
        }
        let get = |k: &str| -> Result<u128> {
            data.extras
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint { path: dir.into(), msg: format!("missing {k}") })
        };
        trainer.iteration = get("iteration")? as usize;
        trainer.adam.t = get("adam_t")? as u64;
        trainer.rng.set_word_pos(get("rng_word_pos")?);
        Ok(trainer)
    }
}

/// Trains a fresh model on the given scenes.
pub fn train_scenes(
    scenes: &[(CrossStack, DisparityMap)],
    config: TrainConfig,
) -> Result<(Network<f32>, Vec<TraceRow>)> {
    let mut trainer = Trainer::new(config)?;
    let trace = trainer.run(scenes, None)?;
    Ok((trainer.into_network(), trace))
}
