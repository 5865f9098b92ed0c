//! The full predictor. Per shift `s` the network consumes the EPI-shifted
//! stacks at `s-1`, `s`, `s+1` in both orientations plus the center view.
//! A weight-shared feature extractor (four conv blocks) processes each of
//! the six stacks; the vertical ones pass through it in rotated orientation
//! and their feature maps are rotated back before concatenation. The
//! concatenated features (`F*2*3 + 3` channels, 387 at F=64) are reduced to
//! the U-Net width by a 3x3 convolution, run through the U-Net, and a final
//! 3x3 convolution emits the two output channels: classification score and
//! regression offset, with no activation on top so the offset can be
//! negative.
//!
//! U-Net layout per level: a conv block, then a strided 3x3 convolution that
//! halves the spatial size and doubles the channels. On the way up, the
//! output of the corresponding downsampling convolution is concatenated
//! before each transposed 3x3 convolution, which doubles the spatial size
//! and cuts the concatenated channels by four. Inputs whose size is not a
//! multiple of `2^depth` are reflect-padded for the U-Net and the outputs
//! cropped back.

use ndarray::{concatenate, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::epishift::{rotate_for_vertical, ShiftedStack};
use crate::error::{Error, Result};
use crate::lightfield::View;

use super::layers::{
    BnMode, ConvBlock, ConvBlockBatchCache, ConvBlockCache, Conv2d, ConvTranspose2d, GradStore,
    ParamMeta, ParamRegistry,
};
use super::ops::{
    crop, crop_backward, reflect_pad_backward, reflect_pad_to_multiple, relu, relu_backward,
    rotate_ccw_chw, rotate_cw_chw, Scalar,
};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Views per stack (both stacks must match for weight sharing).
    pub views: usize,
    /// Feature extractor width F.
    pub feat_channels: usize,
    /// Number of conv blocks in the feature extractor.
    pub feat_blocks: usize,
    /// Number of down/up-sampling levels in the U-Net.
    pub unet_depth: usize,
    /// U-Net width at full resolution.
    pub unet_base: usize,
}

impl NetConfig {
    /// The full-scale configuration.
    pub fn full(views: usize) -> Self {
        Self { views, feat_channels: 64, feat_blocks: 4, unet_depth: 5, unet_base: 64 }
    }

    /// Small configuration for desk-scale training and tests.
    pub fn desk(views: usize) -> Self {
        Self { views, feat_channels: 8, feat_blocks: 4, unet_depth: 2, unet_base: 8 }
    }

    /// Channels entering the U-Net: features of 3 shifts x 2 orientations
    /// plus the RGB center view.
    pub fn concat_channels(&self) -> usize {
        self.feat_channels * 2 * 3 + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.views < 3 || self.views % 2 == 0 {
            return Err(Error::Config(format!("views must be odd and >= 3, got {}", self.views)));
        }
        if self.feat_channels == 0 || self.feat_blocks == 0 || self.unet_base == 0 {
            return Err(Error::Config("channel and block counts must be positive".into()));
        }
        if self.unet_depth == 0 || self.unet_depth > 8 {
            return Err(Error::Config(format!("unet_depth {} out of range", self.unet_depth)));
        }
        Ok(())
    }

    /// Receptive radius of the whole network in input pixels: walk the layer
    /// sequence accumulating kernel reach scaled by the current grid step.
    pub fn receptive_radius(&self) -> usize {
        self.feat_blocks * 2 + 1 + self.unet_receptive_radius()
    }

    /// Receptive radius from the reduced tensor through the U-Net and head.
    pub fn unet_receptive_radius(&self) -> usize {
        let mut j = 1usize;
        let mut r = 0usize;
        for _ in 0..self.unet_depth {
            r += 2 * j; // conv block
            r += j; // down conv
            j *= 2;
        }
        r += 2 * j; // bottleneck block
        for _ in 0..self.unet_depth {
            j /= 2;
            r += j; // up conv
            r += 2 * j; // conv block
        }
        r + 1 // head conv
    }

    pub fn to_text(&self) -> String {
        format!(
            "views={}\nfeat_channels={}\nfeat_blocks={}\nunet_depth={}\nunet_base={}\n",
            self.views, self.feat_channels, self.feat_blocks, self.unet_depth, self.unet_base
        )
    }

    pub fn parse_kv(pairs: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            pairs
                .get(k)
                .ok_or_else(|| Error::Config(format!("missing net key {k}")))?
                .parse()
                .map_err(|_| Error::Config(format!("malformed net key {k}")))
        };
        let cfg = Self {
            views: get("views")?,
            feat_channels: get("feat_channels")?,
            feat_blocks: get("feat_blocks")?,
            unet_depth: get("unet_depth")?,
            unet_base: get("unet_base")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Network input for one shift sample. Horizontal stacks are channel-stacked
/// views `(U*3, H, W)`; vertical stacks are channel-stacked after rotation,
/// `(V*3, W, H)`.
#[derive(Debug, Clone)]
pub struct NetInput<F> {
    pub horiz: [Array3<F>; 3],
    pub vert_rot: [Array3<F>; 3],
    pub center: Array3<F>,
}

/// Concatenates a view stack along the channel axis (view-major, RGB within).
pub fn stack_channels<F: Scalar>(views: &[View]) -> Array3<F> {
    let converted: Vec<Array3<F>> =
        views.iter().map(|v| v.mapv(|x| F::from_f32(x))).collect();
    let refs: Vec<_> = converted.iter().map(|v| v.view()).collect();
    concatenate(Axis(0), &refs).expect("uniform view shapes")
}

/// Channel-stacks one shifted cross for the network: the horizontal stack
/// as-is and the vertical stack in rotated orientation.
pub fn stack_channels_f32(shifted: &ShiftedStack) -> (Array3<f32>, Array3<f32>) {
    (
        stack_channels::<f32>(&shifted.stack.horizontal),
        stack_channels::<f32>(&rotate_for_vertical(&shifted.stack.vertical)),
    )
}

/// Clamped triple `(i-1, i, i+1)` inside `[0, n)` (sweep-end handling).
pub fn triple_indices(i: usize, n: usize) -> (usize, usize, usize) {
    (i.saturating_sub(1), i, (i + 1).min(n - 1))
}

impl<F: Scalar> NetInput<F> {
    /// Assembles the input for shift `cur.shift` from the already clamped
    /// triple of shifted stacks.
    pub fn from_triple(prev: &ShiftedStack, cur: &ShiftedStack, next: &ShiftedStack) -> Self {
        let horiz = [&prev.stack, &cur.stack, &next.stack]
            .map(|s| stack_channels::<F>(&s.horizontal));
        let vert_rot = [&prev.stack, &cur.stack, &next.stack]
            .map(|s| stack_channels::<F>(&rotate_for_vertical(&s.vertical)));
        let center = cur.stack.center_view().mapv(|x| F::from_f32(x));
        Self { horiz, vert_rot, center }
    }

    fn validate(&self, config: &NetConfig) -> Result<(usize, usize)> {
        let (c, h, w) = self.center.dim();
        if c != 3 {
            return Err(Error::Net(format!("center view has {c} channels")));
        }
        let want = config.views * 3;
        for k in 0..3 {
            if self.horiz[k].dim() != (want, h, w) {
                return Err(Error::Net(format!(
                    "horizontal stack {k} is {:?}, expected {:?}",
                    self.horiz[k].dim(),
                    (want, h, w)
                )));
            }
            if self.vert_rot[k].dim() != (want, w, h) {
                return Err(Error::Net(format!(
                    "rotated vertical stack {k} is {:?}, expected {:?}",
                    self.vert_rot[k].dim(),
                    (want, w, h)
                )));
            }
        }
        Ok((h, w))
    }
}

/// Gradients with respect to the network input.
#[derive(Debug)]
pub struct NetInputGrad<F> {
    pub horiz: [Array3<F>; 3],
    pub vert_rot: [Array3<F>; 3],
    pub center: Array3<F>,
}

/// The shared feature extractor.
#[derive(Debug, Clone)]
struct FeatureNet<F> {
    blocks: Vec<ConvBlock<F>>,
}

type FeatureCache<F> = Vec<ConvBlockCache<F>>;

impl<F: Scalar> FeatureNet<F> {
    fn new(reg: &mut ParamRegistry, config: &NetConfig, rng: &mut ChaCha20Rng) -> Self {
        let mut blocks = Vec::with_capacity(config.feat_blocks);
        for i in 0..config.feat_blocks {
            let cin = if i == 0 { config.views * 3 } else { config.feat_channels };
            blocks.push(ConvBlock::new(
                reg,
                &format!("feat.block{i}"),
                cin,
                config.feat_channels,
                rng,
            ));
        }
        Self { blocks }
    }

    fn forward(&self, x: &Array3<F>, mode: BnMode) -> (Array3<F>, FeatureCache<F>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut t = x.clone();
        for block in &self.blocks {
            let (y, cache) = block.forward(&t, mode);
            caches.push(cache);
            t = y;
        }
        (t, caches)
    }

    fn backward(&self, caches: &FeatureCache<F>, dy: &Array3<F>, grads: &mut GradStore<F>) -> Array3<F> {
        let mut d = dy.clone();
        for (block, cache) in self.blocks.iter().zip(caches).rev() {
            d = block.backward(cache, &d, grads);
        }
        d
    }

    fn update_running(&mut self, caches: &FeatureCache<F>) {
        for (block, cache) in self.blocks.iter_mut().zip(caches) {
            block.update_running(cache);
        }
    }

    fn forward_batch(
        &self,
        xs: &[Array3<F>],
        mode: BnMode,
    ) -> (Vec<Array3<F>>, Vec<ConvBlockBatchCache<F>>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut t = xs.to_vec();
        for block in &self.blocks {
            let (ys, cache) = block.forward_batch(&t, mode);
            caches.push(cache);
            t = ys;
        }
        (t, caches)
    }

    fn backward_batch(
        &self,
        caches: &[ConvBlockBatchCache<F>],
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        let mut d = dys.to_vec();
        for (block, cache) in self.blocks.iter().zip(caches).rev() {
            d = block.backward_batch(cache, &d, grads);
        }
        d
    }

    fn update_running_batch(&mut self, caches: &[ConvBlockBatchCache<F>]) {
        for (block, cache) in self.blocks.iter_mut().zip(caches) {
            block.update_running_batch(cache);
        }
    }
}

/// U-Net over the reduced tensor.
#[derive(Debug, Clone)]
struct UNet<F> {
    enc_blocks: Vec<ConvBlock<F>>,
    downs: Vec<Conv2d<F>>,
    bottleneck: ConvBlock<F>,
    ups: Vec<ConvTranspose2d<F>>,
    dec_blocks: Vec<ConvBlock<F>>,
}

#[derive(Debug)]
struct UNetCache<F> {
    enc: Vec<ConvBlockCache<F>>,
    /// Conv block outputs (inputs to the down convs).
    enc_out: Vec<Array3<F>>,
    bottleneck: ConvBlockCache<F>,
    /// Inputs to the up convs (post-concatenation).
    cat: Vec<Array3<F>>,
    dec: Vec<ConvBlockCache<F>>,
}

impl<F: Scalar> UNet<F> {
    fn new(reg: &mut ParamRegistry, config: &NetConfig, rng: &mut ChaCha20Rng) -> Self {
        let depth = config.unet_depth;
        let ch = |i: usize| config.unet_base << i;
        let mut enc_blocks = Vec::new();
        let mut downs = Vec::new();
        for i in 0..depth {
            enc_blocks.push(ConvBlock::new(reg, &format!("unet.enc{i}"), ch(i), ch(i), rng));
            downs.push(Conv2d::new(reg, &format!("unet.down{i}"), ch(i), ch(i + 1), 2, 6.0, rng));
        }
        let bottleneck = ConvBlock::new(reg, "unet.bottleneck", ch(depth), ch(depth), rng);
        let mut ups = Vec::new();
        let mut dec_blocks = Vec::new();
        for i in (0..depth).rev() {
            ups.push(ConvTranspose2d::new(
                reg,
                &format!("unet.up{i}"),
                2 * ch(i + 1),
                ch(i),
                rng,
            ));
            dec_blocks.push(ConvBlock::new(reg, &format!("unet.dec{i}"), ch(i), ch(i), rng));
        }
        Self { enc_blocks, downs, bottleneck, ups, dec_blocks }
    }

    fn forward(&self, x: &Array3<F>, mode: BnMode) -> (Array3<F>, UNetCache<F>) {
        let depth = self.downs.len();
        let mut enc = Vec::with_capacity(depth);
        let mut enc_out = Vec::with_capacity(depth);
        let mut down_out = Vec::with_capacity(depth);
        let mut t = x.clone();
        for i in 0..depth {
            let (e, cache) = self.enc_blocks[i].forward(&t, mode);
            enc.push(cache);
            let d = self.downs[i].forward(&e);
            enc_out.push(e);
            t = d.clone();
            down_out.push(d);
        }
        let (b, bott_cache) = self.bottleneck.forward(&t, mode);
        let mut u = b;
        let mut cat = Vec::with_capacity(depth);
        let mut dec = Vec::with_capacity(depth);
        // ups/dec_blocks are stored outermost-last (construction iterated in
        // reverse), so walking them in storage order descends from the
        // bottleneck.
        for (k, i) in (0..depth).rev().enumerate() {
            let joined = concatenate(Axis(0), &[u.view(), down_out[i].view()])
                .expect("matching spatial dims");
            let v = self.ups[k].forward(&joined);
            cat.push(joined);
            let (out, cache) = self.dec_blocks[k].forward(&v, mode);
            dec.push(cache);
            u = out;
        }
        (u, UNetCache { enc, enc_out, bottleneck: bott_cache, cat, dec })
    }

    fn backward(&self, cache: &UNetCache<F>, dy: &Array3<F>, grads: &mut GradStore<F>) -> Array3<F> {
        let depth = self.downs.len();
        let mut d_down_out: Vec<Option<Array3<F>>> = (0..depth).map(|_| None).collect();
        let mut d = dy.clone();
        // Decoder stages in reverse storage order; stage k handled level
        // i = depth-1-k on the way down.
        for k in (0..depth).rev() {
            let i = depth - 1 - k;
            let dv = self.dec_blocks[k].backward(&cache.dec[k], &d, grads);
            let d_joined = self.ups[k].backward(&cache.cat[k], &dv, grads);
            let main_ch = d_joined.dim().0 / 2;
            let d_main = d_joined.slice(ndarray::s![..main_ch, .., ..]).to_owned();
            let d_skip = d_joined.slice(ndarray::s![main_ch.., .., ..]).to_owned();
            d_down_out[i] = Some(d_skip);
            d = d_main;
        }
        let mut carry = self.bottleneck.backward(&cache.bottleneck, &d, grads);
        for i in (0..depth).rev() {
            let total = match d_down_out[i].take() {
                Some(mut skip) => {
                    skip.zip_mut_with(&carry, |a, &b| *a = *a + b);
                    skip
                }
                None => carry,
            };
            let de = self.downs[i].backward(&cache.enc_out[i], &total, grads);
            carry = self.enc_blocks[i].backward(&cache.enc[i], &de, grads);
        }
        carry
    }

    fn update_running(&mut self, cache: &UNetCache<F>) {
        for (block, c) in self.enc_blocks.iter_mut().zip(&cache.enc) {
            block.update_running(c);
        }
        self.bottleneck.update_running(&cache.bottleneck);
        for (block, c) in self.dec_blocks.iter_mut().zip(&cache.dec) {
            block.update_running(c);
        }
    }

    fn forward_batch(&self, xs: &[Array3<F>], mode: BnMode) -> (Vec<Array3<F>>, UNetBatchCache<F>) {
        let depth = self.downs.len();
        let mut enc = Vec::with_capacity(depth);
        let mut enc_out = Vec::with_capacity(depth);
        let mut down_out: Vec<Vec<Array3<F>>> = Vec::with_capacity(depth);
        let mut t = xs.to_vec();
        for i in 0..depth {
            let (es, cache) = self.enc_blocks[i].forward_batch(&t, mode);
            enc.push(cache);
            let ds = self.downs[i].forward_batch(&es);
            enc_out.push(es);
            t = ds.clone();
            down_out.push(ds);
        }
        let (bs, bott_cache) = self.bottleneck.forward_batch(&t, mode);
        let mut u = bs;
        let mut cat: Vec<Vec<Array3<F>>> = Vec::with_capacity(depth);
        let mut dec = Vec::with_capacity(depth);
        for (k, i) in (0..depth).rev().enumerate() {
            let joined: Vec<Array3<F>> = u
                .iter()
                .zip(&down_out[i])
                .map(|(a, b)| {
                    concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
                })
                .collect();
            let vs = self.ups[k].forward_batch(&joined);
            cat.push(joined);
            let (outs, cache) = self.dec_blocks[k].forward_batch(&vs, mode);
            dec.push(cache);
            u = outs;
        }
        (u, UNetBatchCache { enc, enc_out, bottleneck: bott_cache, cat, dec })
    }

    fn backward_batch(
        &self,
        cache: &UNetBatchCache<F>,
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        let depth = self.downs.len();
        let n = dys.len();
        let mut d_down_out: Vec<Option<Vec<Array3<F>>>> = (0..depth).map(|_| None).collect();
        let mut d = dys.to_vec();
        for k in (0..depth).rev() {
            let i = depth - 1 - k;
            let dv = self.dec_blocks[k].backward_batch(&cache.dec[k], &d, grads);
            let d_joined = self.ups[k].backward_batch(&cache.cat[k], &dv, grads);
            let mut d_main = Vec::with_capacity(n);
            let mut d_skip = Vec::with_capacity(n);
            for dj in d_joined {
                let main_ch = dj.dim().0 / 2;
                d_main.push(dj.slice(ndarray::s![..main_ch, .., ..]).to_owned());
                d_skip.push(dj.slice(ndarray::s![main_ch.., .., ..]).to_owned());
            }
            d_down_out[i] = Some(d_skip);
            d = d_main;
        }
        let mut carry = self.bottleneck.backward_batch(&cache.bottleneck, &d, grads);
        for i in (0..depth).rev() {
            if let Some(skips) = d_down_out[i].take() {
                for (c, s) in carry.iter_mut().zip(skips) {
                    c.zip_mut_with(&s, |a, &b| *a = *a + b);
                }
            }
            let de = self.downs[i].backward_batch(&cache.enc_out[i], &carry, grads);
            carry = self.enc_blocks[i].backward_batch(&cache.enc[i], &de, grads);
        }
        carry
    }

    fn update_running_batch(&mut self, cache: &UNetBatchCache<F>) {
        for (block, c) in self.enc_blocks.iter_mut().zip(&cache.enc) {
            block.update_running_batch(c);
        }
        self.bottleneck.update_running_batch(&cache.bottleneck);
        for (block, c) in self.dec_blocks.iter_mut().zip(&cache.dec) {
            block.update_running_batch(c);
        }
    }
}

#[derive(Debug)]
struct UNetBatchCache<F> {
    enc: Vec<ConvBlockBatchCache<F>>,
    enc_out: Vec<Vec<Array3<F>>>,
    bottleneck: ConvBlockBatchCache<F>,
    cat: Vec<Vec<Array3<F>>>,
    dec: Vec<ConvBlockBatchCache<F>>,
}

/// Saved activations of one batched forward pass.
pub struct NetworkBatchCache<F> {
    feat: Vec<ConvBlockBatchCache<F>>,
    cats: Vec<Array3<F>>,
    reduce_act: Vec<Array3<F>>,
    padded_hw: Vec<(usize, usize)>,
    dims: Vec<(usize, usize)>,
    unet: UNetBatchCache<F>,
    head_in: Vec<Array3<F>>,
}

/// Saved activations of one forward pass.
pub struct NetworkCache<F> {
    /// Feature caches in concat order: (h, v_rot) per shift offset.
    feat: Vec<FeatureCache<F>>,
    concat: Array3<F>,
    reduce_act: Array3<F>,
    padded_hw: (usize, usize),
    orig_hw: (usize, usize),
    unet: UNetCache<F>,
    head_in: Array3<F>,
}

/// The complete model with its parameter registry.
#[derive(Debug, Clone)]
pub struct Network<F> {
    pub config: NetConfig,
    feat: FeatureNet<F>,
    reduce: Conv2d<F>,
    unet: UNet<F>,
    head: Conv2d<F>,
    metas: Vec<ParamMeta>,
}

impl<F: Scalar> Network<F> {
    /// Builds a network with deterministic fan-in-scaled uniform kernels,
    /// zero biases and identity normalization.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::default();
        let feat = FeatureNet::new(&mut reg, &config, &mut rng);
        let reduce = Conv2d::new(
            &mut reg,
            "reduce",
            config.concat_channels(),
            config.unet_base,
            1,
            6.0,
            &mut rng,
        );
        let unet = UNet::new(&mut reg, &config, &mut rng);
        // Small head gain keeps the initial predictions near zero, so early
        // training builds the outputs up from the features instead of
        // suppressing the feature variance.
        let head = Conv2d::new(&mut reg, "head", config.unet_base, 2, 1, 0.05, &mut rng);
        Ok(Self { config, feat, reduce, unet, head, metas: reg.metas })
    }

    pub fn param_metas(&self) -> &[ParamMeta] {
        &self.metas
    }

    pub fn n_params(&self) -> usize {
        self.metas.len()
    }

    /// Runs the shared feature extractor on one channel-stacked view stack.
    pub fn extract_features(&self, stack: &Array3<F>, mode: BnMode) -> Array3<F> {
        self.feat.forward(stack, mode).0
    }

    /// Runs one shift sample. Returns the classification map, the regression
    /// map, and the cache needed for [`Self::backward`].
    pub fn forward(
        &self,
        input: &NetInput<F>,
        mode: BnMode,
    ) -> Result<(Array2<F>, Array2<F>, NetworkCache<F>)> {
        let (h, w) = input.validate(&self.config)?;
        let fch = self.config.feat_channels;

        let mut feat_caches = Vec::with_capacity(6);
        let mut parts: Vec<Array3<F>> = Vec::with_capacity(7);
        for k in 0..3 {
            let (fh, ch) = self.feat.forward(&input.horiz[k], mode);
            feat_caches.push(ch);
            parts.push(fh);
            let (fv_rot, cv) = self.feat.forward(&input.vert_rot[k], mode);
            feat_caches.push(cv);
            parts.push(rotate_cw_chw(&fv_rot));
        }
        parts.push(input.center.clone());
        debug_assert!(parts.iter().take(6).all(|p| p.dim() == (fch, h, w)));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let cat = concatenate(Axis(0), &views).expect("aligned feature maps");

        let z = self.reduce.forward(&cat);
        let a = relu(&z);
        let multiple = 1usize << self.config.unet_depth;
        let (padded, _pads) = reflect_pad_to_multiple(&a, multiple);
        let padded_hw = (padded.dim().1, padded.dim().2);
        let (unet_out, unet_cache) = self.unet.forward(&padded, mode);
        let out_padded = self.head.forward(&unet_out);
        let out = crop(&out_padded, h, w);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Net("non-finite activations in network output".into()));
        }
        let c = out.index_axis(Axis(0), 0).to_owned();
        let r = out.index_axis(Axis(0), 1).to_owned();
        let cache = NetworkCache {
            feat: feat_caches,
            concat: cat,
            reduce_act: a,
            padded_hw,
            orig_hw: (h, w),
            unet: unet_cache,
            head_in: unet_out,
        };
        Ok((c, r, cache))
    }

    /// Exact reverse pass: accumulates parameter gradients into `grads` and
    /// returns the input gradients.
    pub fn backward(
        &self,
        cache: &NetworkCache<F>,
        d_c: &Array2<F>,
        d_r: &Array2<F>,
        grads: &mut GradStore<F>,
    ) -> Result<NetInputGrad<F>> {
        let (h, w) = cache.orig_hw;
        if d_c.dim() != (h, w) || d_r.dim() != (h, w) {
            return Err(Error::Net(format!(
                "upstream gradient is {:?}/{:?}, expected {:?}",
                d_c.dim(),
                d_r.dim(),
                (h, w)
            )));
        }
        let mut d_out = Array3::zeros((2, h, w));
        d_out.index_axis_mut(Axis(0), 0).assign(d_c);
        d_out.index_axis_mut(Axis(0), 1).assign(d_r);

        let d_out_padded = crop_backward(&d_out, cache.padded_hw);
        let d_head_in = self.head.backward(&cache.head_in, &d_out_padded, grads);
        let d_padded = self.unet.backward(&cache.unet, &d_head_in, grads);
        let d_a = reflect_pad_backward(&d_padded, (h, w));
        let d_z = relu_backward(&d_a, &cache.reduce_act);
        let d_cat = self.reduce.backward(&cache.concat, &d_z, grads);

        let fch = self.config.feat_channels;
        let slice_at = |start: usize, len: usize| -> Array3<F> {
            d_cat.slice(ndarray::s![start..start + len, .., ..]).to_owned()
        };
        let mut horiz: Vec<Array3<F>> = Vec::with_capacity(3);
        let mut vert_rot: Vec<Array3<F>> = Vec::with_capacity(3);
        for k in 0..3 {
            let d_fh = slice_at(2 * k * fch, fch);
            horiz.push(self.feat.backward(&cache.feat[2 * k], &d_fh, grads));
            let d_fv = slice_at((2 * k + 1) * fch, fch);
            let d_fv_rot = rotate_ccw_chw(&d_fv);
            vert_rot.push(self.feat.backward(&cache.feat[2 * k + 1], &d_fv_rot, grads));
        }
        let center = slice_at(6 * fch, 3);
        Ok(NetInputGrad {
            horiz: horiz.try_into().expect("three elements"),
            vert_rot: vert_rot.try_into().expect("three elements"),
            center,
        })
    }

    /// Applies the deferred running-statistic updates of one batch-mode
    /// forward, in a fixed structural order.
    pub fn update_running_stats(&mut self, cache: &NetworkCache<F>) {
        for fc in &cache.feat {
            self.feat.update_running(fc);
        }
        self.unet.update_running(&cache.unet);
    }

    /// Batched forward over several shift samples with shared normalization
    /// statistics: in batch mode every BN layer pools its statistics over
    /// all samples (the feature extractor over all six stacks of every
    /// sample), matching training batches made of several shifts of one
    /// scene. Sample order is preserved.
    pub fn forward_batch(
        &self,
        inputs: &[&NetInput<F>],
        mode: BnMode,
    ) -> Result<(Vec<(Array2<F>, Array2<F>)>, NetworkBatchCache<F>)> {
        if inputs.is_empty() {
            return Err(Error::Net("empty batch".into()));
        }
        let mut dims = Vec::with_capacity(inputs.len());
        for input in inputs {
            dims.push(input.validate(&self.config)?);
        }
        let n = inputs.len();

        // All stacks of all samples as a single extractor batch.
        let mut stacks: Vec<Array3<F>> = Vec::with_capacity(6 * n);
        for input in inputs {
            for k in 0..3 {
                stacks.push(input.horiz[k].clone());
                stacks.push(input.vert_rot[k].clone());
            }
        }
        let (feat_out, feat_cache) = self.feat.forward_batch(&stacks, mode);

        let mut cats = Vec::with_capacity(n);
        for (i, input) in inputs.iter().enumerate() {
            let mut parts: Vec<Array3<F>> = Vec::with_capacity(7);
            for k in 0..3 {
                parts.push(feat_out[6 * i + 2 * k].clone());
                parts.push(rotate_cw_chw(&feat_out[6 * i + 2 * k + 1]));
            }
            parts.push(input.center.clone());
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            cats.push(concatenate(Axis(0), &views).expect("aligned feature maps"));
        }

        let zs = self.reduce.forward_batch(&cats);
        let acts: Vec<Array3<F>> = zs.iter().map(relu).collect();
        let multiple = 1usize << self.config.unet_depth;
        let mut padded = Vec::with_capacity(n);
        let mut padded_hw = Vec::with_capacity(n);
        for a in &acts {
            let (p, _) = reflect_pad_to_multiple(a, multiple);
            padded_hw.push((p.dim().1, p.dim().2));
            padded.push(p);
        }
        let (unet_out, unet_cache) = self.unet.forward_batch(&padded, mode);
        let outs_padded = self.head.forward_batch(&unet_out);
        let mut outputs = Vec::with_capacity(n);
        for (i, op) in outs_padded.iter().enumerate() {
            let (h, w) = dims[i];
            let out = crop(op, h, w);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Net("non-finite activations in network output".into()));
            }
            outputs.push((
                out.index_axis(Axis(0), 0).to_owned(),
                out.index_axis(Axis(0), 1).to_owned(),
            ));
        }
        let cache = NetworkBatchCache {
            feat: feat_cache,
            cats,
            reduce_act: acts,
            padded_hw,
            dims,
            unet: unet_cache,
            head_in: unet_out,
        };
        Ok((outputs, cache))
    }

    /// Reverse pass of [`Self::forward_batch`]; parameter gradients sum over
    /// the batch (input gradients are discarded).
    pub fn backward_batch(
        &self,
        cache: &NetworkBatchCache<F>,
        d_c: &[Array2<F>],
        d_r: &[Array2<F>],
        grads: &mut GradStore<F>,
    ) -> Result<()> {
        let n = cache.dims.len();
        if d_c.len() != n || d_r.len() != n {
            return Err(Error::Net(format!(
                "upstream gradients for {} samples, batch has {n}",
                d_c.len()
            )));
        }
        let mut d_out_padded = Vec::with_capacity(n);
        for i in 0..n {
            let (h, w) = cache.dims[i];
            if d_c[i].dim() != (h, w) || d_r[i].dim() != (h, w) {
                return Err(Error::Net("upstream gradient shape mismatch".into()));
            }
            let mut d_out = Array3::zeros((2, h, w));
            d_out.index_axis_mut(Axis(0), 0).assign(&d_c[i]);
            d_out.index_axis_mut(Axis(0), 1).assign(&d_r[i]);
            d_out_padded.push(crop_backward(&d_out, cache.padded_hw[i]));
        }
        let d_head_in = self.head.backward_batch(&cache.head_in, &d_out_padded, grads);
        let d_padded = self.unet.backward_batch(&cache.unet, &d_head_in, grads);
        let mut d_z = Vec::with_capacity(n);
        for i in 0..n {
            let d_a = reflect_pad_backward(&d_padded[i], cache.dims[i]);
            d_z.push(relu_backward(&d_a, &cache.reduce_act[i]));
        }
        let d_cats = self.reduce.backward_batch(&cache.cats, &d_z, grads);

        let fch = self.config.feat_channels;
        let mut d_stacks: Vec<Array3<F>> = Vec::with_capacity(6 * n);
        for d_cat in &d_cats {
            for k in 0..3 {
                let d_fh = d_cat.slice(ndarray::s![2 * k * fch..(2 * k + 1) * fch, .., ..]);
                d_stacks.push(d_fh.to_owned());
                let d_fv =
                    d_cat.slice(ndarray::s![(2 * k + 1) * fch..(2 * k + 2) * fch, .., ..]);
                d_stacks.push(rotate_ccw_chw(&d_fv.to_owned()));
            }
        }
        let _ = self.feat.backward_batch(&cache.feat, &d_stacks, grads);
        Ok(())
    }

    /// Deferred running-statistic updates after a batch-mode
    /// [`Self::forward_batch`]: one blend per normalization layer.
    pub fn update_running_stats_batch(&mut self, cache: &NetworkBatchCache<F>) {
        self.feat.update_running_batch(&cache.feat);
        self.unet.update_running_batch(&cache.unet);
    }

    /// Inference over a whole sweep, computing each stack's features once
    /// instead of three times (adjacent shifts share them). `stacks[i]` holds
    /// the channel-stacked horizontal and rotated vertical stack of shift
    /// `i`; triple indices are clamped at the sweep ends. Outputs are
    /// identical to running [`Self::forward`] per shift.
    pub fn forward_sweep(
        &self,
        stacks: &[(Array3<F>, Array3<F>)],
        center: &Array3<F>,
        mode: BnMode,
    ) -> Result<Vec<(Array2<F>, Array2<F>)>> {
        use rayon::prelude::*;
        if stacks.is_empty() {
            return Err(Error::Net("empty sweep".into()));
        }
        let (c, h, w) = center.dim();
        if c != 3 {
            return Err(Error::Net(format!("center view has {c} channels")));
        }
        let feats: Vec<(Array3<F>, Array3<F>)> = stacks
            .par_iter()
            .map(|(horiz, vert_rot)| {
                let (fh, _) = self.feat.forward(horiz, mode);
                let (fv_rot, _) = self.feat.forward(vert_rot, mode);
                (fh, rotate_cw_chw(&fv_rot))
            })
            .collect();
        let n = stacks.len();
        let last = n - 1;
        let outputs: Result<Vec<_>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let parts: Vec<_> = [i.saturating_sub(1), i, (i + 1).min(last)]
                    .into_iter()
                    .flat_map(|k| [feats[k].0.view(), feats[k].1.view()])
                    .chain(std::iter::once(center.view()))
                    .collect();
                let cat = concatenate(Axis(0), &parts).expect("aligned feature maps");
                let z = self.reduce.forward(&cat);
                let a = relu(&z);
                let multiple = 1usize << self.config.unet_depth;
                let (padded, _) = reflect_pad_to_multiple(&a, multiple);
                let (unet_out, _) = self.unet.forward(&padded, mode);
                let out = crop(&self.head.forward(&unet_out), h, w);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Net("non-finite activations in network output".into()));
                }
                Ok((
                    out.index_axis(Axis(0), 0).to_owned(),
                    out.index_axis(Axis(0), 1).to_owned(),
                ))
            })
            .collect();
        outputs
    }

    /// Visits every parameter as a flat slice, in id order.
    pub fn visit_params(&self, f: &mut dyn FnMut(usize, &[F])) {
        for block in &self.feat.blocks {
            visit_block(block, f);
        }
        visit_conv(&self.reduce, f);
        for i in 0..self.unet.enc_blocks.len() {
            visit_block(&self.unet.enc_blocks[i], f);
            visit_conv(&self.unet.downs[i], f);
        }
        visit_block(&self.unet.bottleneck, f);
        for k in 0..self.unet.ups.len() {
            let up = &self.unet.ups[k];
            f(up.id_w, up.w.as_slice().expect("standard layout"));
            f(up.id_b, up.b.as_slice().expect("standard layout"));
            visit_block(&self.unet.dec_blocks[k], f);
        }
        visit_conv(&self.head, f);
    }

    /// Mutable visitation in id order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(usize, &mut [F])) {
        // Walk layers in the same construction order as `walk`.
        for block in &mut self.feat.blocks {
            visit_block_mut(block, f);
        }
        visit_conv_mut(&mut self.reduce, f);
        for i in 0..self.unet.enc_blocks.len() {
            visit_block_mut(&mut self.unet.enc_blocks[i], f);
            visit_conv_mut(&mut self.unet.downs[i], f);
        }
        visit_block_mut(&mut self.unet.bottleneck, f);
        for k in 0..self.unet.ups.len() {
            let up = &mut self.unet.ups[k];
            f(up.id_w, up.w.as_slice_mut().expect("standard layout"));
            f(up.id_b, up.b.as_slice_mut().expect("standard layout"));
            visit_block_mut(&mut self.unet.dec_blocks[k], f);
        }
        visit_conv_mut(&mut self.head, f);
    }

}

fn visit_conv<F: Scalar>(conv: &Conv2d<F>, f: &mut dyn FnMut(usize, &[F])) {
    f(conv.id_w, conv.w.as_slice().expect("standard layout"));
    f(conv.id_b, conv.b.as_slice().expect("standard layout"));
}

fn visit_conv_mut<F: Scalar>(conv: &mut Conv2d<F>, f: &mut dyn FnMut(usize, &mut [F])) {
    f(conv.id_w, conv.w.as_slice_mut().expect("standard layout"));
    f(conv.id_b, conv.b.as_slice_mut().expect("standard layout"));
}

fn visit_block<F: Scalar>(block: &ConvBlock<F>, f: &mut dyn FnMut(usize, &[F])) {
    visit_conv(&block.conv1, f);
    visit_bn(&block.bn1, f);
    visit_conv(&block.conv2, f);
    visit_bn(&block.bn2, f);
}

fn visit_block_mut<F: Scalar>(block: &mut ConvBlock<F>, f: &mut dyn FnMut(usize, &mut [F])) {
    visit_conv_mut(&mut block.conv1, f);
    visit_bn_mut(&mut block.bn1, f);
    visit_conv_mut(&mut block.conv2, f);
    visit_bn_mut(&mut block.bn2, f);
}

fn visit_bn<F: Scalar>(bn: &super::layers::BatchNorm2d<F>, f: &mut dyn FnMut(usize, &[F])) {
    f(bn.id_gamma, bn.gamma.as_slice().expect("standard layout"));
    f(bn.id_beta, bn.beta.as_slice().expect("standard layout"));
    f(bn.id_run_mean, bn.run_mean.as_slice().expect("standard layout"));
    f(bn.id_run_var, bn.run_var.as_slice().expect("standard layout"));
}

fn visit_bn_mut<F: Scalar>(
    bn: &mut super::layers::BatchNorm2d<F>,
    f: &mut dyn FnMut(usize, &mut [F]),
) {
    f(bn.id_gamma, bn.gamma.as_slice_mut().expect("standard layout"));
    f(bn.id_beta, bn.beta.as_slice_mut().expect("standard layout"));
    f(bn.id_run_mean, bn.run_mean.as_slice_mut().expect("standard layout"));
    f(bn.id_run_var, bn.run_var.as_slice_mut().expect("standard layout"));
}
