//! Network-level invariants: gradient correctness against finite
//! differences, receptive-field locality, translation covariance of the
//! fully-convolutional pipeline, and the structural contracts (padding,
//! weight sharing, deterministic initialization).

use lfdepth::net::{BnMode, GradStore, NetConfig, NetInput, Network, ParamKind, Scalar};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_tensor<F: Scalar>(rng: &mut ChaCha20Rng, dim: (usize, usize, usize)) -> Array3<F> {
    Array3::from_shape_fn(dim, |_| F::from_f64(rng.gen_range(0.0..1.0)))
}

fn random_input<F: Scalar>(rng: &mut ChaCha20Rng, config: &NetConfig, h: usize, w: usize) -> NetInput<F> {
    let c = config.views * 3;
    NetInput {
        horiz: [
            random_tensor(rng, (c, h, w)),
            random_tensor(rng, (c, h, w)),
            random_tensor(rng, (c, h, w)),
        ],
        vert_rot: [
            random_tensor(rng, (c, w, h)),
            random_tensor(rng, (c, w, h)),
            random_tensor(rng, (c, w, h)),
        ],
        center: random_tensor(rng, (3, h, w)),
    }
}

fn poke(net: &mut Network<f64>, id: usize, idx: usize, delta: f64) {
    net.visit_params_mut(&mut |pid, data| {
        if pid == id {
            data[idx] += delta;
        }
    });
}

/// Scalar loss: a fixed random linear functional of both output maps. Linear
/// scalarization keeps the finite differences free of extra nonlinearity.
fn scalar_loss(net: &Network<f64>, input: &NetInput<f64>, gc: &Array2<f64>, gr: &Array2<f64>) -> f64 {
    let (c, r, _) = net.forward(input, BnMode::Batch).expect("finite forward");
    c.iter().zip(gc.iter()).map(|(a, b)| a * b).sum::<f64>()
        + r.iter().zip(gr.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// Checks every trainable parameter gradient against central finite
/// differences at f64 precision. Returns the worst relative error.
pub fn gradient_check(seed: u64) -> f64 {
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 2, unet_depth: 1, unet_base: 2 };
    let mut net: Network<f64> = Network::new(config, seed).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xABCD);
    let (h, w) = (8, 8);
    let input = random_input::<f64>(&mut rng, &config, h, w);
    let gc = Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0));
    let gr = Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0));

    let (_, _, cache) = net.forward(&input, BnMode::Batch).unwrap();
    let mut grads = GradStore::new(net.n_params());
    net.backward(&cache, &gc, &gr, &mut grads).unwrap();

    let metas = net.param_metas().to_vec();
    // Small enough that no ReLU preactivation crosses zero under the
    // perturbation at this seed; f64 keeps the rounding error near 1e-10.
    let step = 1e-6;
    let mut worst = 0.0f64;
    for (id, meta) in metas.iter().enumerate() {
        if !meta.kind.trainable() {
            continue;
        }
        let len: usize = meta.shape.iter().product();
        let analytic: Vec<f64> = grads.get(id).map(|g| g.to_vec()).unwrap_or(vec![0.0; len]);
        for idx in 0..len {
            poke(&mut net, id, idx, step);
            let plus = scalar_loss(&net, &input, &gc, &gr);
            poke(&mut net, id, idx, -2.0 * step);
            let minus = scalar_loss(&net, &input, &gc, &gr);
            poke(&mut net, id, idx, step);
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let worst = gradient_check(11);
    assert!(worst < 1e-3, "worst relative gradient error {worst}");
}

/// Same check through the batched path with two samples, which exercises the
/// pooled-statistics normalization backward (samples couple through the
/// shared batch mean and variance).
#[test]
fn batched_gradients_match_finite_differences() {
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 1, unet_depth: 1, unet_base: 2 };
    let mut net: Network<f64> = Network::new(config, 17).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let (h, w) = (6, 6);
    let inputs: Vec<NetInput<f64>> =
        (0..2).map(|_| random_input::<f64>(&mut rng, &config, h, w)).collect();
    let gcs: Vec<Array2<f64>> =
        (0..2).map(|_| Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))).collect();
    let grs: Vec<Array2<f64>> =
        (0..2).map(|_| Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))).collect();

    let refs: Vec<&NetInput<f64>> = inputs.iter().collect();
    let (_, cache) = net.forward_batch(&refs, BnMode::Batch).unwrap();
    let mut grads = GradStore::new(net.n_params());
    net.backward_batch(&cache, &gcs, &grs, &mut grads).unwrap();

    let loss = |net: &Network<f64>| -> f64 {
        let refs: Vec<&NetInput<f64>> = inputs.iter().collect();
        let (outs, _) = net.forward_batch(&refs, BnMode::Batch).unwrap();
        outs.iter()
            .enumerate()
            .map(|(i, (c, r))| {
                c.iter().zip(gcs[i].iter()).map(|(a, b)| a * b).sum::<f64>()
                    + r.iter().zip(grs[i].iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    };
    let metas = net.param_metas().to_vec();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for (id, meta) in metas.iter().enumerate() {
        if !meta.kind.trainable() {
            continue;
        }
        let len: usize = meta.shape.iter().product();
        let analytic: Vec<f64> = grads.get(id).map(|g| g.to_vec()).unwrap_or(vec![0.0; len]);
        for idx in 0..len {
            poke(&mut net, id, idx, step);
            let plus = loss(&net);
            poke(&mut net, id, idx, -2.0 * step);
            let minus = loss(&net);
            poke(&mut net, id, idx, step);
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
    }
    assert!(worst < 1e-3, "worst relative batched gradient error {worst}");
}

#[test]
fn batch_of_one_matches_single_forward_with_running_stats() {
    // With running statistics the two paths are the same computation. (In
    // batch mode they differ by design: the batched path pools extractor
    // statistics over all six stacks, the single path normalizes per stack.)
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 2, unet_depth: 1, unet_base: 2 };
    let net: Network<f32> = Network::new(config, 19).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let input = random_input::<f32>(&mut rng, &config, 10, 8);
    let (c1, r1, _) = net.forward(&input, BnMode::Running).unwrap();
    let (outs, _) = net.forward_batch(&[&input], BnMode::Running).unwrap();
    assert_eq!(outs[0].0, c1);
    assert_eq!(outs[0].1, r1);
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 2, unet_depth: 1, unet_base: 2 };
    let net: Network<f64> = Network::new(config, 3).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let input = random_input::<f64>(&mut rng, &config, 8, 8);
    let (_, _, cache) = net.forward(&input, BnMode::Batch).unwrap();
    let zeros = Array2::zeros((8, 8));
    let mut grads = GradStore::new(net.n_params());
    net.backward(&cache, &zeros, &zeros, &mut grads).unwrap();
    for id in 0..net.n_params() {
        if let Some(g) = grads.get(id) {
            assert!(g.iter().all(|&v| v == 0.0), "param {id} has nonzero gradient");
        }
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let config = NetConfig::desk(3);
    let a: Network<f32> = Network::new(config, 7).unwrap();
    let b: Network<f32> = Network::new(config, 7).unwrap();
    let c: Network<f32> = Network::new(config, 8).unwrap();
    let ta = a.export_tensors();
    let tb = b.export_tensors();
    let tc = c.export_tensors();
    assert_eq!(ta.len(), tb.len());
    for ((n1, _, v1), (_, _, v2)) in ta.iter().zip(&tb) {
        assert!(v1.iter().zip(v2).all(|(x, y)| x.to_bits() == y.to_bits()), "{n1}");
    }
    assert!(
        ta.iter().zip(&tc).any(|((_, _, v1), (_, _, v2))| v1 != v2),
        "different seeds produced identical parameters"
    );
}

#[test]
fn output_shapes_follow_input_even_when_not_divisible() {
    let config = NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 2, unet_base: 4 };
    let net: Network<f32> = Network::new(config, 1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for (h, w) in [(32, 32), (29, 23), (16, 40)] {
        let input = random_input::<f32>(&mut rng, &config, h, w);
        let (c, r, _) = net.forward(&input, BnMode::Running).unwrap();
        assert_eq!(c.dim(), (h, w));
        assert_eq!(r.dim(), (h, w));
        assert!(c.iter().chain(r.iter()).all(|v| v.is_finite()));
    }
}

#[test]
fn zero_input_propagates_to_zero_output() {
    let config = NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 1, unet_base: 4 };
    let net: Network<f32> = Network::new(config, 1).unwrap();
    let zero = |d| Array3::<f32>::zeros(d);
    let input = NetInput {
        horiz: [zero((9, 12, 12)), zero((9, 12, 12)), zero((9, 12, 12))],
        vert_rot: [zero((9, 12, 12)), zero((9, 12, 12)), zero((9, 12, 12))],
        center: zero((3, 12, 12)),
    };
    for mode in [BnMode::Batch, BnMode::Running] {
        let (c, r, _) = net.forward(&input, mode).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(r.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn paper_scale_concat_width_is_387() {
    assert_eq!(NetConfig::full(9).concat_channels(), 387);
    // The full-scale network is constructible (just parameters; no forward).
    let net: Network<f32> = Network::new(NetConfig::full(9), 0).unwrap();
    assert!(net.n_params() > 100);
}

#[test]
fn shared_extractor_feeds_both_orientations() {
    // Zeroing the vertical stacks and perturbing a feature weight must still
    // change the output through the horizontal path, and vice versa: both
    // paths read the same tensors.
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 2, unet_depth: 1, unet_base: 2 };
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut input = random_input::<f32>(&mut rng, &config, 8, 8);
    for k in 0..3 {
        input.vert_rot[k].fill(0.0);
    }
    let net: Network<f32> = Network::new(config, 4).unwrap();
    let mut net2 = net.clone();
    net2.visit_params_mut(&mut |id, data| {
        if id == 0 {
            data[0] += 0.5; // first feature conv kernel element
        }
    });
    let (c1, _, _) = net.forward(&input, BnMode::Running).unwrap();
    let (c2, _, _) = net2.forward(&input, BnMode::Running).unwrap();
    assert!(c1 != c2, "horizontal path ignores the shared weight");

    let mut input_v = random_input::<f32>(&mut rng, &config, 8, 8);
    for k in 0..3 {
        input_v.horiz[k].fill(0.0);
    }
    let (c1, _, _) = net.forward(&input_v, BnMode::Running).unwrap();
    let (c2, _, _) = net2.forward(&input_v, BnMode::Running).unwrap();
    assert!(c1 != c2, "vertical path ignores the shared weight");
}

#[test]
fn extractor_is_pure_and_preserves_spatial_dims() {
    let config = NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 1, unet_base: 4 };
    let net: Network<f32> = Network::new(config, 6).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let x = random_tensor::<f32>(&mut rng, (9, 10, 14));
    let f_direct = net.extract_features(&x, BnMode::Running);
    assert_eq!(f_direct.dim(), (4, 10, 14));
    let f_again = net.extract_features(&x, BnMode::Running);
    assert_eq!(f_direct, f_again, "extractor must be pure");
}

#[test]
fn receptive_field_bounds_single_pixel_influence() {
    let config = NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 2, unet_base: 4 };
    let radius = config.receptive_radius();
    let net: Network<f32> = Network::new(config, 5).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let (h, w) = (80, 80);
    let input = random_input::<f32>(&mut rng, &config, h, w);
    let (c0, r0, _) = net.forward(&input, BnMode::Running).unwrap();

    let mut poked = input.clone();
    let (py, px) = (h / 2, w / 2);
    poked.horiz[1][(0, py, px)] += 0.5;
    let (c1, r1, _) = net.forward(&poked, BnMode::Running).unwrap();

    let mut changed = 0usize;
    for y in 0..h {
        for x in 0..w {
            let dc = (c1[(y, x)] - c0[(y, x)]).abs();
            let dr = (r1[(y, x)] - r0[(y, x)]).abs();
            if dc > 0.0 || dr > 0.0 {
                changed += 1;
                let cheb = (y as i64 - py as i64).abs().max((x as i64 - px as i64).abs());
                assert!(
                    cheb <= radius as i64,
                    "pixel ({y},{x}) changed outside radius {radius}"
                );
            }
        }
    }
    assert!(changed > 0, "perturbation had no effect at all");
}

#[test]
fn translation_by_total_stride_shifts_outputs() {
    // A fully convolutional net with stride-2 stages is covariant to
    // translations by multiples of 2^depth; check on windows of a common
    // random "world" so border content matches.
    let config = NetConfig { views: 3, feat_channels: 4, feat_blocks: 2, unet_depth: 1, unet_base: 4 };
    let radius = config.receptive_radius();
    let shift = 1usize << config.unet_depth;
    let net: Network<f32> = Network::new(config, 13).unwrap();
    let (h, w) = (40, 40);
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let world = random_tensor::<f32>(&mut rng, (9, h + shift, w + shift));
    let world_v = random_tensor::<f32>(&mut rng, (9, h + shift, w + shift));
    let world_c = random_tensor::<f32>(&mut rng, (3, h + shift, w + shift));
    let take = |src: &Array3<f32>, ch: usize, oy: usize, ox: usize| {
        Array3::from_shape_fn((ch, h, w), |(c, y, x)| src[(c, y + oy, x + ox)])
    };
    // The vertical stacks live in the rotated frame: an image-space shift by
    // (+d, +d) corresponds to (-d, +d) there, so window 1 starts at (shift, 0)
    // and window 2 at (0, shift).
    let window = |img_off: usize, v_oy: usize, v_ox: usize| -> NetInput<f32> {
        NetInput {
            horiz: [
                take(&world, 9, img_off, img_off),
                take(&world, 9, img_off, img_off),
                take(&world, 9, img_off, img_off),
            ],
            vert_rot: [
                take(&world_v, 9, v_oy, v_ox),
                take(&world_v, 9, v_oy, v_ox),
                take(&world_v, 9, v_oy, v_ox),
            ],
            center: take(&world_c, 3, img_off, img_off),
        }
    };
    let (c0, _, _) = net.forward(&window(0, shift, 0), BnMode::Running).unwrap();
    let (c1, _, _) = net.forward(&window(shift, 0, shift), BnMode::Running).unwrap();
    // c1(y, x) sees the world at (y + shift, x + shift), i.e. c0 shifted.
    let margin = radius + shift;
    let mut compared = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let a = c0[(y + shift, x + shift)];
            let b = c1[(y, x)];
            assert!(
                (a - b).abs() <= 1e-5,
                "covariance violated at ({y},{x}): {a} vs {b}"
            );
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn non_finite_activations_are_reported() {
    let config = NetConfig { views: 3, feat_channels: 2, feat_blocks: 2, unet_depth: 1, unet_base: 2 };
    let mut net: Network<f32> = Network::new(config, 1).unwrap();
    net.visit_params_mut(&mut |_, data| {
        if !data.is_empty() {
            data[0] = f32::NAN;
        }
    });
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let input = random_input::<f32>(&mut rng, &config, 8, 8);
    assert!(net.forward(&input, BnMode::Running).is_err());
}
