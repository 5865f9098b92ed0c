//! Network layers with externalized activation caches. Layers never mutate
//! themselves during the forward pass, so a shared `&Network` can run many
//! shifts concurrently; every per-call state lives in a cache value returned
//! to the caller, and gradients accumulate into a [`GradStore`] indexed by
//! parameter id.

use ndarray::{Array1, Array3, Array4, Axis};
use rand::Rng;

use super::ops::{
    channel_sums, conv2d_backward_dw, conv2d_backward_dx, conv2d_forward, convt2d_backward_dw,
    convt2d_backward_dx, convt2d_forward, relu, relu_backward, Scalar,
};

/// What a parameter is, which decides whether the optimizer touches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernels and biases.
    Weight,
    /// Batch-norm scale/shift; trainable but frozen in the second phase.
    BnAffine,
    /// Batch-norm running statistics; never optimized.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningStat)
    }
}

#[derive(Debug, Clone)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Registry of parameter metadata, built in construction order so ids and
/// checkpoint ordering are stable.
#[derive(Debug, Default)]
pub struct ParamRegistry {
    pub metas: Vec<ParamMeta>,
}

impl ParamRegistry {
    fn register(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.metas.push(ParamMeta { name, shape, kind });
        self.metas.len() - 1
    }
}

/// Per-parameter gradient accumulator (flat storage in parameter id order).
#[derive(Debug)]
pub struct GradStore<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> GradStore<F> {
    pub fn new(n_params: usize) -> Self {
        Self { grads: (0..n_params).map(|_| None).collect() }
    }

    pub fn accumulate(&mut self, id: usize, contribution: impl ExactSizeIterator<Item = F>) {
        let slot = &mut self.grads[id];
        match slot {
            None => *slot = Some(contribution.collect()),
            Some(acc) => {
                debug_assert_eq!(acc.len(), contribution.len());
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a = *a + c;
                }
            }
        }
    }

    pub fn get(&self, id: usize) -> Option<&[F]> {
        self.grads[id].as_deref()
    }

    /// Adds another store into this one (deterministic when merged in a
    /// fixed order).
    pub fn merge(&mut self, other: GradStore<F>) {
        for (id, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g.into_iter());
            }
        }
    }

    /// Scales every accumulated gradient, e.g. for batch averaging.
    pub fn scale(&mut self, factor: F) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v = *v * factor;
            }
        }
    }
}

fn uniform_init<F: Scalar>(rng: &mut impl Rng, bound: f64) -> F {
    F::from_f64(rng.gen_range(-bound..bound))
}

/// 3x3 convolution layer, padding 1.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub id_w: usize,
    pub id_b: usize,
}

impl<F: Scalar> Conv2d<F> {
    /// Uniform fan-in-scaled init with bound `sqrt(gain / fan_in)`: gain 6
    /// keeps activation variance stable through ReLU conv stacks; output
    /// heads use a small gain so predictions start near zero.
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (gain / (cin * 9) as f64).sqrt();
        let w = Array4::from_shape_fn((cout, cin, 3, 3), |_| uniform_init(rng, bound));
        let b = Array1::zeros(cout);
        let id_w = reg.register(format!("{name}.w"), vec![cout, cin, 3, 3], ParamKind::Weight);
        let id_b = reg.register(format!("{name}.b"), vec![cout], ParamKind::Weight);
        Self { w, b, stride, id_w, id_b }
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        conv2d_forward(x, &self.w, Some(&self.b), self.stride)
    }

    pub fn backward(&self, x: &Array3<F>, dy: &Array3<F>, grads: &mut GradStore<F>) -> Array3<F> {
        let dw = conv2d_backward_dw(x, dy, self.stride);
        grads.accumulate(self.id_w, dw.iter().copied());
        grads.accumulate(self.id_b, channel_sums(dy).iter().copied());
        let (_, h, w) = x.dim();
        conv2d_backward_dx(dy, &self.w, self.stride, (h, w))
    }

    pub fn forward_batch(&self, xs: &[Array3<F>]) -> Vec<Array3<F>> {
        use rayon::prelude::*;
        xs.par_iter().map(|x| self.forward(x)).collect()
    }

    /// Batched backward; weight gradients accumulate over samples in order.
    pub fn backward_batch(
        &self,
        xs: &[Array3<F>],
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        use rayon::prelude::*;
        let parts: Vec<(Array4<F>, Array1<F>, Array3<F>)> = xs
            .par_iter()
            .zip(dys.par_iter())
            .map(|(x, dy)| {
                let dw = conv2d_backward_dw(x, dy, self.stride);
                let db = channel_sums(dy);
                let (_, h, w) = x.dim();
                let dx = conv2d_backward_dx(dy, &self.w, self.stride, (h, w));
                (dw, db, dx)
            })
            .collect();
        let mut dxs = Vec::with_capacity(parts.len());
        for (dw, db, dx) in parts {
            grads.accumulate(self.id_w, dw.iter().copied());
            grads.accumulate(self.id_b, db.iter().copied());
            dxs.push(dx);
        }
        dxs
    }
}

/// Transposed 3x3 convolution with stride 2 (doubles the spatial size).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F> {
    pub w: Array4<F>, // (Cin, Cout, 3, 3)
    pub b: Array1<F>,
    pub id_w: usize,
    pub id_b: usize,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Each output pixel draws from roughly a quarter of the taps.
        let fan_in = ((cin * 9) as f64 / 4.0).max(1.0);
        let bound = (6.0 / fan_in).sqrt();
        let w = Array4::from_shape_fn((cin, cout, 3, 3), |_| uniform_init(rng, bound));
        let b = Array1::zeros(cout);
        let id_w = reg.register(format!("{name}.w"), vec![cin, cout, 3, 3], ParamKind::Weight);
        let id_b = reg.register(format!("{name}.b"), vec![cout], ParamKind::Weight);
        Self { w, b, id_w, id_b }
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        convt2d_forward(x, &self.w, &self.b)
    }

    pub fn backward(&self, x: &Array3<F>, dy: &Array3<F>, grads: &mut GradStore<F>) -> Array3<F> {
        let dw = convt2d_backward_dw(x, dy);
        grads.accumulate(self.id_w, dw.iter().copied());
        grads.accumulate(self.id_b, channel_sums(dy).iter().copied());
        convt2d_backward_dx(dy, &self.w)
    }

    pub fn forward_batch(&self, xs: &[Array3<F>]) -> Vec<Array3<F>> {
        use rayon::prelude::*;
        xs.par_iter().map(|x| self.forward(x)).collect()
    }

    pub fn backward_batch(
        &self,
        xs: &[Array3<F>],
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        use rayon::prelude::*;
        let parts: Vec<(Array4<F>, Array1<F>, Array3<F>)> = xs
            .par_iter()
            .zip(dys.par_iter())
            .map(|(x, dy)| {
                (convt2d_backward_dw(x, dy), channel_sums(dy), convt2d_backward_dx(dy, &self.w))
            })
            .collect();
        let mut dxs = Vec::with_capacity(parts.len());
        for (dw, db, dx) in parts {
            grads.accumulate(self.id_w, dw.iter().copied());
            grads.accumulate(self.id_b, db.iter().copied());
            dxs.push(dx);
        }
        dxs
    }
}

/// Whether batch normalization uses the statistics of the current tensor or
/// the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by the per-call batch statistics (training phase 1).
    Batch,
    /// Normalize by running statistics (inference, and training once the
    /// normalization is frozen).
    Running,
}

/// Per-channel batch normalization over the spatial axes.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub run_mean: Array1<F>,
    pub run_var: Array1<F>,
    pub eps: F,
    pub momentum: F,
    pub id_gamma: usize,
    pub id_beta: usize,
    pub id_run_mean: usize,
    pub id_run_var: usize,
}

#[derive(Debug)]
pub struct BnCache<F> {
    pub xhat: Array3<F>,
    pub inv_std: Array1<F>,
    pub mode: BnMode,
    pub batch_mean: Array1<F>,
    pub batch_var: Array1<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize) -> Self {
        let id_gamma =
            reg.register(format!("{name}.gamma"), vec![channels], ParamKind::BnAffine);
        let id_beta = reg.register(format!("{name}.beta"), vec![channels], ParamKind::BnAffine);
        let id_run_mean =
            reg.register(format!("{name}.run_mean"), vec![channels], ParamKind::RunningStat);
        let id_run_var =
            reg.register(format!("{name}.run_var"), vec![channels], ParamKind::RunningStat);
        Self {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            run_mean: Array1::zeros(channels),
            run_var: Array1::from_elem(channels, F::one()),
            eps: F::from_f64(1e-5),
            momentum: F::from_f64(0.9),
            id_gamma,
            id_beta,
            id_run_mean,
            id_run_var,
        }
    }

    pub fn forward(&self, x: &Array3<F>, mode: BnMode) -> (Array3<F>, BnCache<F>) {
        let (c, h, w) = x.dim();
        let n = F::from_f64((h * w) as f64);
        let (mean, var) = match mode {
            BnMode::Batch => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ci in 0..c {
                    let plane = x.index_axis(Axis(0), ci);
                    let mut sum = F::zero();
                    for v in plane.iter() {
                        sum = sum + *v;
                    }
                    let mu = sum / n;
                    let mut acc = F::zero();
                    for v in plane.iter() {
                        let d = *v - mu;
                        acc = acc + d * d;
                    }
                    mean[ci] = mu;
                    var[ci] = acc / n;
                }
                (mean, var)
            }
            BnMode::Running => (self.run_mean.clone(), self.run_var.clone()),
        };
        let inv_std = Array1::from_shape_fn(c, |ci| F::one() / (var[ci] + self.eps).sqrt());
        let mut xhat = x.clone();
        for ci in 0..c {
            let mu = mean[ci];
            let is = inv_std[ci];
            xhat.index_axis_mut(Axis(0), ci).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let g = self.gamma[ci];
            let b = self.beta[ci];
            y.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v * g + b);
        }
        let cache = BnCache { xhat, inv_std, mode, batch_mean: mean, batch_var: var };
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &BnCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let (c, h, w) = dy.dim();
        let n = F::from_f64((h * w) as f64);
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let mut dx = Array3::zeros((c, h, w));
        for ci in 0..c {
            let dy_p = dy.index_axis(Axis(0), ci);
            let xhat_p = cache.xhat.index_axis(Axis(0), ci);
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for (&d, &xh) in dy_p.iter().zip(xhat_p.iter()) {
                sum_dy = sum_dy + d;
                sum_dy_xhat = sum_dy_xhat + d * xh;
            }
            dbeta[ci] = sum_dy;
            dgamma[ci] = sum_dy_xhat;
            let g = self.gamma[ci];
            let is = cache.inv_std[ci];
            let mut dx_p = dx.index_axis_mut(Axis(0), ci);
            match cache.mode {
                BnMode::Batch => {
                    // Full backward through the batch statistics.
                    let inv_n = F::one() / n;
                    for ((d, &dy_v), &xh) in
                        dx_p.iter_mut().zip(dy_p.iter()).zip(xhat_p.iter())
                    {
                        let dxhat = dy_v * g;
                        *d = is * (dxhat - inv_n * (g * sum_dy + xh * g * sum_dy_xhat));
                    }
                }
                BnMode::Running => {
                    // Statistics are constants here.
                    for (d, &dy_v) in dx_p.iter_mut().zip(dy_p.iter()) {
                        *d = dy_v * g * is;
                    }
                }
            }
        }
        grads.accumulate(self.id_gamma, dgamma.iter().copied());
        grads.accumulate(self.id_beta, dbeta.iter().copied());
        dx
    }

    /// Applies the deferred running-statistics update from a batch-mode
    /// forward: `run = momentum * run + (1 - momentum) * batch`.
    pub fn update_running(&mut self, cache: &BnCache<F>) {
        if cache.mode != BnMode::Batch {
            return;
        }
        self.blend_running(&cache.batch_mean, &cache.batch_var);
    }

    fn blend_running(&mut self, mean: &Array1<F>, var: &Array1<F>) {
        let m = self.momentum;
        let one_m = F::one() - m;
        for (r, &b) in self.run_mean.iter_mut().zip(mean.iter()) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.run_var.iter_mut().zip(var.iter()) {
            *r = m * *r + one_m * b;
        }
    }

    /// Batched forward with statistics pooled over every sample in `xs`
    /// (spatial sizes may differ; pixels pool with their natural weight).
    pub fn forward_batch(&self, xs: &[Array3<F>], mode: BnMode) -> (Vec<Array3<F>>, BnBatchCache<F>) {
        let c = xs[0].dim().0;
        let total: usize = xs.iter().map(|x| x.dim().1 * x.dim().2).sum();
        let n = F::from_f64(total as f64);
        let (mean, var) = match mode {
            BnMode::Batch => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ci in 0..c {
                    let mut sum = F::zero();
                    for x in xs {
                        for v in x.index_axis(Axis(0), ci).iter() {
                            sum = sum + *v;
                        }
                    }
                    let mu = sum / n;
                    let mut acc = F::zero();
                    for x in xs {
                        for v in x.index_axis(Axis(0), ci).iter() {
                            let d = *v - mu;
                            acc = acc + d * d;
                        }
                    }
                    mean[ci] = mu;
                    var[ci] = acc / n;
                }
                (mean, var)
            }
            BnMode::Running => (self.run_mean.clone(), self.run_var.clone()),
        };
        let inv_std = Array1::from_shape_fn(c, |ci| F::one() / (var[ci] + self.eps).sqrt());
        let mut xhats = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xhat = x.clone();
            for ci in 0..c {
                let mu = mean[ci];
                let is = inv_std[ci];
                xhat.index_axis_mut(Axis(0), ci).mapv_inplace(|v| (v - mu) * is);
            }
            let mut y = xhat.clone();
            for ci in 0..c {
                let g = self.gamma[ci];
                let b = self.beta[ci];
                y.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v * g + b);
            }
            xhats.push(xhat);
            ys.push(y);
        }
        (ys, BnBatchCache { xhats, inv_std, mode, batch_mean: mean, batch_var: var })
    }

    /// Batched backward; in batch mode the statistic gradients couple all
    /// samples through the pooled sums.
    pub fn backward_batch(
        &self,
        cache: &BnBatchCache<F>,
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        let c = dys[0].dim().0;
        let total: usize = dys.iter().map(|d| d.dim().1 * d.dim().2).sum();
        let n = F::from_f64(total as f64);
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut sum_dy = Array1::<F>::zeros(c);
        let mut sum_dy_xhat = Array1::<F>::zeros(c);
        for (dy, xhat) in dys.iter().zip(&cache.xhats) {
            for ci in 0..c {
                let mut s = F::zero();
                let mut sx = F::zero();
                for (&d, &xh) in dy
                    .index_axis(Axis(0), ci)
                    .iter()
                    .zip(xhat.index_axis(Axis(0), ci).iter())
                {
                    s = s + d;
                    sx = sx + d * xh;
                }
                sum_dy[ci] = sum_dy[ci] + s;
                sum_dy_xhat[ci] = sum_dy_xhat[ci] + sx;
            }
        }
        for ci in 0..c {
            dbeta[ci] = sum_dy[ci];
            dgamma[ci] = sum_dy_xhat[ci];
        }
        let mut dxs = Vec::with_capacity(dys.len());
        for (dy, xhat) in dys.iter().zip(&cache.xhats) {
            let (_, h, w) = dy.dim();
            let mut dx = Array3::zeros((c, h, w));
            for ci in 0..c {
                let g = self.gamma[ci];
                let is = cache.inv_std[ci];
                let dy_p = dy.index_axis(Axis(0), ci);
                let xhat_p = xhat.index_axis(Axis(0), ci);
                let mut dx_p = dx.index_axis_mut(Axis(0), ci);
                match cache.mode {
                    BnMode::Batch => {
                        let inv_n = F::one() / n;
                        for ((d, &dy_v), &xh) in
                            dx_p.iter_mut().zip(dy_p.iter()).zip(xhat_p.iter())
                        {
                            let dxhat = dy_v * g;
                            *d = is
                                * (dxhat
                                    - inv_n * (g * sum_dy[ci] + xh * g * sum_dy_xhat[ci]));
                        }
                    }
                    BnMode::Running => {
                        for (d, &dy_v) in dx_p.iter_mut().zip(dy_p.iter()) {
                            *d = dy_v * g * is;
                        }
                    }
                }
            }
            dxs.push(dx);
        }
        grads.accumulate(self.id_gamma, dgamma.iter().copied());
        grads.accumulate(self.id_beta, dbeta.iter().copied());
        dxs
    }

    /// Running update from a joint batch cache (one blend per step).
    pub fn update_running_batch(&mut self, cache: &BnBatchCache<F>) {
        if cache.mode != BnMode::Batch {
            return;
        }
        self.blend_running(&cache.batch_mean, &cache.batch_var);
    }
}

#[derive(Debug)]
pub struct BnBatchCache<F> {
    pub xhats: Vec<Array3<F>>,
    pub inv_std: Array1<F>,
    pub mode: BnMode,
    pub batch_mean: Array1<F>,
    pub batch_var: Array1<F>,
}

/// Two 3x3 convolutions, each followed by a ReLU and a batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm2d<F>,
    pub conv2: Conv2d<F>,
    pub bn2: BatchNorm2d<F>,
}

#[derive(Debug)]
pub struct ConvBlockCache<F> {
    x: Array3<F>,
    a1: Array3<F>,
    bn1: BnCache<F>,
    h1: Array3<F>,
    a2: Array3<F>,
    bn2: BnCache<F>,
}

impl<F: Scalar> ConvBlock<F> {
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv1: Conv2d::new(reg, &format!("{name}.conv1"), cin, cout, 1, 6.0, rng),
            bn1: BatchNorm2d::new(reg, &format!("{name}.bn1"), cout),
            conv2: Conv2d::new(reg, &format!("{name}.conv2"), cout, cout, 1, 6.0, rng),
            bn2: BatchNorm2d::new(reg, &format!("{name}.bn2"), cout),
        }
    }

    pub fn forward(&self, x: &Array3<F>, mode: BnMode) -> (Array3<F>, ConvBlockCache<F>) {
        let z1 = self.conv1.forward(x);
        let a1 = relu(&z1);
        let (h1, bn1) = self.bn1.forward(&a1, mode);
        let z2 = self.conv2.forward(&h1);
        let a2 = relu(&z2);
        let (y, bn2) = self.bn2.forward(&a2, mode);
        let cache = ConvBlockCache { x: x.clone(), a1, bn1, h1, a2, bn2 };
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &ConvBlockCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let da2 = self.bn2.backward(&cache.bn2, dy, grads);
        let dz2 = relu_backward(&da2, &cache.a2);
        let dh1 = self.conv2.backward(&cache.h1, &dz2, grads);
        let da1 = self.bn1.backward(&cache.bn1, &dh1, grads);
        let dz1 = relu_backward(&da1, &cache.a1);
        self.conv1.backward(&cache.x, &dz1, grads)
    }

    pub fn update_running(&mut self, cache: &ConvBlockCache<F>) {
        self.bn1.update_running(&cache.bn1);
        self.bn2.update_running(&cache.bn2);
    }

    pub fn forward_batch(
        &self,
        xs: &[Array3<F>],
        mode: BnMode,
    ) -> (Vec<Array3<F>>, ConvBlockBatchCache<F>) {
        let z1 = self.conv1.forward_batch(xs);
        let a1: Vec<_> = z1.iter().map(relu).collect();
        let (h1, bn1) = self.bn1.forward_batch(&a1, mode);
        let z2 = self.conv2.forward_batch(&h1);
        let a2: Vec<_> = z2.iter().map(relu).collect();
        let (ys, bn2) = self.bn2.forward_batch(&a2, mode);
        let cache = ConvBlockBatchCache { xs: xs.to_vec(), a1, bn1, h1, a2, bn2 };
        (ys, cache)
    }

    pub fn backward_batch(
        &self,
        cache: &ConvBlockBatchCache<F>,
        dys: &[Array3<F>],
        grads: &mut GradStore<F>,
    ) -> Vec<Array3<F>> {
        let da2 = self.bn2.backward_batch(&cache.bn2, dys, grads);
        let dz2: Vec<_> =
            da2.iter().zip(&cache.a2).map(|(d, a)| relu_backward(d, a)).collect();
        let dh1 = self.conv2.backward_batch(&cache.h1, &dz2, grads);
        let da1 = self.bn1.backward_batch(&cache.bn1, &dh1, grads);
        let dz1: Vec<_> =
            da1.iter().zip(&cache.a1).map(|(d, a)| relu_backward(d, a)).collect();
        self.conv1.backward_batch(&cache.xs, &dz1, grads)
    }

    pub fn update_running_batch(&mut self, cache: &ConvBlockBatchCache<F>) {
        self.bn1.update_running_batch(&cache.bn1);
        self.bn2.update_running_batch(&cache.bn2);
    }
}

#[derive(Debug)]
pub struct ConvBlockBatchCache<F> {
    xs: Vec<Array3<F>>,
    a1: Vec<Array3<F>>,
    bn1: BnBatchCache<F>,
    h1: Vec<Array3<F>>,
    a2: Vec<Array3<F>>,
    bn2: BnBatchCache<F>,
}
