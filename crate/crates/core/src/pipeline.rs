//! The inference driver: build the sweep, run the network once per shift,
//! optionally refine, and fuse into a disparity map.

use std::time::Instant;

use crate::epishift::{build_sweep, shift_cross, SweepRange};
use crate::error::Result;
use crate::fusion::{fuse, refine, SweepVolumes};
use crate::lightfield::{CrossStack, DisparityMap, Mask};
use crate::net::{stack_channels_f32, triple_indices, BnMode, NetInput, Network};

/// Per-shift wall-clock timings of one inference run.
#[derive(Debug, Clone)]
pub struct ShiftTiming {
    pub shift: i32,
    pub seconds: f64,
}

/// Runs the network over every shift in `range` and assembles the volumes.
/// Each shift's validity mask is the intersection over the (clamped) triple
/// of shifted stacks the network actually saw.
pub fn infer_volumes(
    net: &Network<f32>,
    cross: &CrossStack,
    range: SweepRange,
    cap: usize,
) -> Result<(SweepVolumes, Vec<ShiftTiming>)> {
    let sweep = build_sweep(cross, range, cap)?;
    let n = sweep.len();
    let center = cross.center_view().clone();

    let start = Instant::now();
    let stacks: Vec<_> = sweep.iter().map(stack_channels_f32).collect();
    let outputs = net.forward_sweep(&stacks, &center, BnMode::Running)?;
    let total = start.elapsed().as_secs_f64();

    let mut shifts = Vec::with_capacity(n);
    let mut c_maps = Vec::with_capacity(n);
    let mut r_maps = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);
    for (i, (c, r)) in outputs.into_iter().enumerate() {
        let (prev, cur, next) = triple_indices(i, n);
        let mask = Mask::from_shape_fn(sweep[cur].valid.dim(), |idx| {
            sweep[prev].valid[idx] && sweep[cur].valid[idx] && sweep[next].valid[idx]
        });
        shifts.push(sweep[i].shift);
        c_maps.push(c);
        r_maps.push(r);
        valid.push(mask);
        // Feature reuse makes per-shift cost uniform; report the average.
        timings.push(ShiftTiming { shift: sweep[i].shift, seconds: total / n as f64 });
    }
    Ok((SweepVolumes::new(shifts, c_maps, r_maps, valid)?, timings))
}

/// Reference single-shift path (no feature reuse): used to cross-check
/// [`infer_volumes`] and by tests. Produces identical outputs.
pub fn infer_single_shift(
    net: &Network<f32>,
    cross: &CrossStack,
    s: i32,
    range: SweepRange,
) -> Result<(ndarray::Array2<f32>, ndarray::Array2<f32>)> {
    let prev = shift_cross(cross, range.clamp(s - 1))?;
    let cur = shift_cross(cross, s)?;
    let next = shift_cross(cross, range.clamp(s + 1))?;
    let input = NetInput::<f32>::from_triple(&prev, &cur, &next);
    let (c, r, _) = net.forward(&input, BnMode::Running)?;
    Ok((c, r))
}

/// Full inference: volumes, optional refinement, fusion.
pub fn infer(
    net: &Network<f32>,
    cross: &CrossStack,
    range: SweepRange,
    cap: usize,
    refinement: Option<(f32, usize)>,
) -> Result<(DisparityMap, SweepVolumes, Vec<ShiftTiming>)> {
    let (mut volumes, timings) = infer_volumes(net, cross, range, cap)?;
    if let Some((t, k)) = refinement {
        volumes = refine(&volumes, t, k)?;
    }
    let map = fuse(&volumes);
    Ok((map, volumes, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::synth::{plane_scene, TextureKind, TextureSpec};

    #[test]
    fn sweep_inference_matches_per_shift_forward() {
        let spec = plane_scene(
            20,
            16,
            3,
            3,
            1.0,
            TextureSpec { kind: TextureKind::Noise, period: 4, seed: 2 },
        );
        let (lf, _) = spec.render().unwrap();
        let cross = lf.extract_cross().unwrap();
        let net = Network::<f32>::new(
            NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 1, unet_base: 4 },
            7,
        )
        .unwrap();
        let range = SweepRange::new(-1, 2).unwrap();
        let (volumes, _) = infer_volumes(&net, &cross, range, 64).unwrap();
        for (i, &s) in volumes.shifts.iter().enumerate() {
            let (c, r) = infer_single_shift(&net, &cross, s, range).unwrap();
            assert_eq!(c, volumes.c[i], "classification map differs at shift {s}");
            assert_eq!(r, volumes.r[i], "regression map differs at shift {s}");
        }
    }
}
