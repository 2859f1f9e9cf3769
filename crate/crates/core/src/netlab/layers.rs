use rand::Rng;

use super::{NetError, Real, Result, Tensor3};

pub const KERNEL: usize = 3;
const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm; the tape carries them for a later
    /// running-statistics update.
    Train,
    /// Running statistics; the layer is a fixed function of its input.
    Eval,
}

/// Parameter gradients, one vector per parameter tensor in
/// [`Sequential::params`] order.
pub type Grads<T> = Vec<Vec<T>>;

/// Width-3 1-D convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cout, cin, 3]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Per-channel batch normalization over the batch and length axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    Dense(Dense<T>),
    Norm(BatchNorm<T>),
    Relu,
    /// Non-overlapping max-pool of width 3.
    MaxPool3,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    Conv {
        input: Tensor3<T>,
    },
    Dense {
        input: Tensor3<T>,
    },
    Norm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Batch mean and unbiased variance, train mode only.
        batch_stats: Option<(Vec<T>, Vec<T>)>,
        n: usize,
        l: usize,
    },
    Relu {
        active: Vec<bool>,
    },
    Pool {
        argmax: Vec<usize>,
        n: usize,
        c: usize,
        l: usize,
    },
}

/// Forward-pass record needed for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    mode: Mode,
}

impl<T> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn uniform<T: Real, R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect()
}

impl<T: Real> Conv1d<T> {
    /// Uniform init with bound `1/sqrt(fan_in)` for weights and bias.
    pub fn init<R: Rng>(cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((cin * KERNEL) as f64).sqrt();
        Self {
            cin,
            cout,
            stride,
            pad,
            weight: uniform(rng, cout * cin * KERNEL, bound),
            bias: uniform(rng, cout, bound),
        }
    }

    pub fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.pad).saturating_sub(KERNEL) / self.stride + 1
    }

    /// Valid output range `[t0, t1)` for tap `k` at stride 1.
    fn tap_range(&self, k: usize, l: usize, lo: usize) -> (usize, usize) {
        let t0 = self.pad.saturating_sub(k);
        let t1 = lo.min((l + self.pad).saturating_sub(k));
        (t0, t1.max(t0))
    }

    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        if x.c != self.cin {
            return Err(NetError::ShapeMismatch(format!(
                "conv expects {} channels, got {}",
                self.cin, x.c
            )));
        }
        if x.l + 2 * self.pad < KERNEL {
            return Err(NetError::ShapeMismatch(format!(
                "input length {} too short",
                x.l
            )));
        }
        let (l, lo) = (x.l, self.out_len(x.l));
        let mut y = Tensor3::zeros(x.n, self.cout, lo);
        for b in 0..x.n {
            let xb = x.sample(b);
            let yb = &mut y.data[b * self.cout * lo..(b + 1) * self.cout * lo];
            for co in 0..self.cout {
                let row = &mut yb[co * lo..(co + 1) * lo];
                row.fill(self.bias[co]);
                for ci in 0..self.cin {
                    let xs = &xb[ci * l..(ci + 1) * l];
                    let w = &self.weight[(co * self.cin + ci) * KERNEL..][..KERNEL];
                    if self.stride == 1 {
                        for (k, &wk) in w.iter().enumerate() {
                            let (t0, t1) = self.tap_range(k, l, lo);
                            let src = &xs[t0 + k - self.pad..t1 + k - self.pad];
                            for (out, &v) in row[t0..t1].iter_mut().zip(src) {
                                *out += wk * v;
                            }
                        }
                    } else {
                        for (t, out) in row.iter_mut().enumerate() {
                            for (k, &wk) in w.iter().enumerate() {
                                let pos = (t * self.stride + k) as isize - self.pad as isize;
                                if pos >= 0 && (pos as usize) < l {
                                    *out += wk * xs[pos as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor3<T>,
        dy: &Tensor3<T>,
        want_dx: bool,
    ) -> (Option<Tensor3<T>>, Grads<T>) {
        let (l, lo) = (x.l, dy.l);
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.cout];
        let mut dx = want_dx.then(|| Tensor3::zeros(x.n, x.c, l));
        for b in 0..x.n {
            let xb = x.sample(b);
            let dyb = dy.sample(b);
            for co in 0..self.cout {
                let g = &dyb[co * lo..(co + 1) * lo];
                db[co] += g.iter().copied().sum::<T>();
                for ci in 0..self.cin {
                    let xs = &xb[ci * l..(ci + 1) * l];
                    let widx = (co * self.cin + ci) * KERNEL;
                    for k in 0..KERNEL {
                        let wk = self.weight[widx + k];
                        if self.stride == 1 {
                            let (t0, t1) = self.tap_range(k, l, lo);
                            let off = k as isize - self.pad as isize;
                            let lo_in = (t0 as isize + off) as usize;
                            let hi_in = (t1 as isize + off) as usize;
                            let src = &xs[lo_in..hi_in];
                            let gs = &g[t0..t1];
                            let mut acc = T::zero();
                            for (&gv, &xv) in gs.iter().zip(src) {
                                acc += gv * xv;
                            }
                            dw[widx + k] += acc;
                            if let Some(dx) = dx.as_mut() {
                                let dst =
                                    &mut dx.data[(b * self.cin + ci) * l..][..l][lo_in..hi_in];
                                for (d, &gv) in dst.iter_mut().zip(gs) {
                                    *d += wk * gv;
                                }
                            }
                        } else {
                            for (t, &gv) in g.iter().enumerate() {
                                let pos = (t * self.stride + k) as isize - self.pad as isize;
                                if pos >= 0 && (pos as usize) < l {
                                    let p = pos as usize;
                                    dw[widx + k] += gv * xs[p];
                                    if let Some(dx) = dx.as_mut() {
                                        dx.data[(b * self.cin + ci) * l + p] += wk * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, vec![dw, db])
    }
}

impl<T: Real> Dense<T> {
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: uniform(rng, inputs * outputs, bound),
            bias: uniform(rng, outputs, bound),
        }
    }

    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        if x.sample_len() != self.inputs || x.l != 1 {
            return Err(NetError::ShapeMismatch(format!(
                "dense expects [n, {}, 1], got [n, {}, {}]",
                self.inputs, x.c, x.l
            )));
        }
        let mut y = Tensor3::zeros(x.n, self.outputs, 1);
        for b in 0..x.n {
            let xb = x.sample(b);
            for o in 0..self.outputs {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.bias[o];
                for (&w, &v) in row.iter().zip(xb) {
                    acc += w * v;
                }
                y.data[b * self.outputs + o] = acc;
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor3<T>,
        dy: &Tensor3<T>,
        want_dx: bool,
    ) -> (Option<Tensor3<T>>, Grads<T>) {
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.outputs];
        let mut dx = want_dx.then(|| Tensor3::zeros(x.n, x.c, x.l));
        for b in 0..x.n {
            let xb = x.sample(b);
            for o in 0..self.outputs {
                let g = dy.data[b * self.outputs + o];
                db[o] += g;
                let row = &mut dw[o * self.inputs..(o + 1) * self.inputs];
                for (d, &v) in row.iter_mut().zip(xb) {
                    *d += g * v;
                }
                if let Some(dx) = dx.as_mut() {
                    let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                    let dst = &mut dx.data[b * self.inputs..(b + 1) * self.inputs];
                    for (d, &wv) in dst.iter_mut().zip(w) {
                        *d += g * wv;
                    }
                }
            }
        }
        (dx, vec![dw, db])
    }
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    fn forward(&self, x: &Tensor3<T>, mode: Mode) -> Result<(Tensor3<T>, Cache<T>)> {
        if x.c != self.channels {
            return Err(NetError::ShapeMismatch(format!(
                "batch-norm expects {} channels, got {}",
                self.channels, x.c
            )));
        }
        let (n, c, l) = (x.n, x.c, x.l);
        let eps = T::of(BN_EPS);
        let count = n * l;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let batch_stats = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(NetError::ShapeMismatch(
                        "batch-norm in train mode needs more than one value per channel".into(),
                    ));
                }
                let m = T::of(count as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += x.data[(b * c + ch) * l..][..l].iter().copied().sum::<T>();
                    }
                    mean[ch] = s / m;
                    let mut q = T::zero();
                    for b in 0..n {
                        for &v in &x.data[(b * c + ch) * l..][..l] {
                            let d = v - mean[ch];
                            q += d * d;
                        }
                    }
                    var[ch] = q / m;
                }
                let unbiased = var
                    .iter()
                    .map(|&v| v * m / T::of((count - 1) as f64))
                    .collect();
                Some((mean.clone(), unbiased))
            }
            Mode::Eval => {
                mean.clone_from(&self.running_mean);
                var.clone_from(&self.running_var);
                None
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut y = Tensor3::zeros(n, c, l);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    let h = (x.data[base + t] - mean[ch]) * inv_std[ch];
                    xhat[base + t] = h;
                    y.data[base + t] = self.gamma[ch] * h + self.beta[ch];
                }
            }
        }
        Ok((
            y,
            Cache::Norm {
                xhat,
                inv_std,
                batch_stats,
                n,
                l,
            },
        ))
    }

    fn backward(
        &self,
        cache: &Cache<T>,
        dy: &Tensor3<T>,
        want_dx: bool,
    ) -> (Option<Tensor3<T>>, Grads<T>) {
        let Cache::Norm {
            xhat,
            inv_std,
            batch_stats,
            n,
            l,
        } = cache
        else {
            unreachable!("batch-norm cache")
        };
        let (n, l, c) = (*n, *l, self.channels);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    dgamma[ch] += dy.data[base + t] * xhat[base + t];
                    dbeta[ch] += dy.data[base + t];
                }
            }
        }
        let dx = want_dx.then(|| {
            let mut dx = Tensor3::zeros(n, c, l);
            let m = T::of((n * l) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * l;
                    let scale = self.gamma[ch] * inv_std[ch];
                    for t in 0..l {
                        let g = dy.data[base + t];
                        dx.data[base + t] = if batch_stats.is_some() {
                            scale / m * (m * g - dbeta[ch] - xhat[base + t] * dgamma[ch])
                        } else {
                            scale * g
                        };
                    }
                }
            }
            dx
        });
        (dx, vec![dgamma, dbeta])
    }
}

fn relu_forward<T: Real>(x: &Tensor3<T>) -> (Tensor3<T>, Cache<T>) {
    let active: Vec<bool> = x.data.iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, Cache::Relu { active })
}

fn pool_forward<T: Real>(x: &Tensor3<T>) -> Result<(Tensor3<T>, Cache<T>)> {
    let lo = x.l / KERNEL;
    if lo == 0 {
        return Err(NetError::ShapeMismatch(format!(
            "cannot pool length {}",
            x.l
        )));
    }
    let mut y = Tensor3::zeros(x.n, x.c, lo);
    let mut argmax = vec![0usize; x.n * x.c * lo];
    for row in 0..x.n * x.c {
        let src = &x.data[row * x.l..(row + 1) * x.l];
        for t in 0..lo {
            let window = &src[t * KERNEL..(t + 1) * KERNEL];
            let mut best = 0;
            for k in 1..KERNEL {
                if window[k] > window[best] {
                    best = k;
                }
            }
            y.data[row * lo + t] = window[best];
            argmax[row * lo + t] = row * x.l + t * KERNEL + best;
        }
    }
    Ok((
        y,
        Cache::Pool {
            argmax,
            n: x.n,
            c: x.c,
            l: x.l,
        },
    ))
}

impl<T: Real> Layer<T> {
    fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Norm(b) => vec![&b.gamma, &b.beta],
            Layer::Relu | Layer::MaxPool3 => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Norm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu | Layer::MaxPool3 => vec![],
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Dense(_) => "dense",
            Layer::Norm(_) => "norm",
            Layer::Relu => "relu",
            Layer::MaxPool3 => "pool",
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        match self {
            Layer::Conv(c) => Layer::Conv(Conv1d {
                cin: c.cin,
                cout: c.cout,
                stride: c.stride,
                pad: c.pad,
                weight: cv(&c.weight),
                bias: cv(&c.bias),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: cv(&d.weight),
                bias: cv(&d.bias),
            }),
            Layer::Norm(b) => Layer::Norm(BatchNorm {
                channels: b.channels,
                gamma: cv(&b.gamma),
                beta: cv(&b.beta),
                running_mean: cv(&b.running_mean),
                running_var: cv(&b.running_var),
            }),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool3 => Layer::MaxPool3,
        }
    }
}

/// A feed-forward stack of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor3<T>, mode: Mode) -> Result<(Tensor3<T>, Tape<T>)> {
        self.run(x, mode, true)
    }

    /// Eval-mode forward pass without recording a tape.
    pub fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(self.run(x, Mode::Eval, false)?.0)
    }

    fn run(&self, x: &Tensor3<T>, mode: Mode, record: bool) -> Result<(Tensor3<T>, Tape<T>)> {
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(conv) => {
                    let y = conv.forward(&cur)?;
                    (y, record.then_some(Cache::Conv { input: cur }))
                }
                Layer::Dense(dense) => {
                    let y = dense.forward(&cur)?;
                    (y, record.then_some(Cache::Dense { input: cur }))
                }
                Layer::Norm(bn) => {
                    let (y, cache) = bn.forward(&cur, mode)?;
                    (y, record.then_some(cache))
                }
                Layer::Relu => {
                    let (y, cache) = relu_forward(&cur);
                    (y, record.then_some(cache))
                }
                Layer::MaxPool3 => {
                    let (y, cache) = pool_forward(&cur)?;
                    (y, record.then_some(cache))
                }
            };
            if let Some(cache) = cache {
                caches.push(cache);
            }
            cur = next;
        }
        Ok((cur, Tape { caches, mode }))
    }

    /// Propagates `dy` back through the recorded pass. Returns the input
    /// gradient (when requested) and parameter gradients in `params()` order.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        dy: Tensor3<T>,
        want_input_grad: bool,
    ) -> (Option<Tensor3<T>>, Grads<T>) {
        assert_eq!(
            tape.caches.len(),
            self.layers.len(),
            "tape from a different network"
        );
        let mut per_layer: Vec<Grads<T>> = vec![Vec::new(); self.layers.len()];
        let mut grad = dy;
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let want_dx = idx > 0 || want_input_grad;
            let (dx, g) = match (layer, cache) {
                (Layer::Conv(conv), Cache::Conv { input }) => conv.backward(input, &grad, want_dx),
                (Layer::Dense(dense), Cache::Dense { input }) => {
                    dense.backward(input, &grad, want_dx)
                }
                (Layer::Norm(bn), cache @ Cache::Norm { .. }) => bn.backward(cache, &grad, want_dx),
                (Layer::Relu, Cache::Relu { active }) => {
                    let mut g = grad;
                    for (v, &on) in g.data.iter_mut().zip(active) {
                        if !on {
                            *v = T::zero();
                        }
                    }
                    (Some(g), vec![])
                }
                (Layer::MaxPool3, Cache::Pool { argmax, n, c, l }) => {
                    let mut dx = Tensor3::zeros(*n, *c, *l);
                    for (&src, &g) in argmax.iter().zip(&grad.data) {
                        dx.data[src] += g;
                    }
                    (Some(dx), vec![])
                }
                _ => unreachable!("cache/layer mismatch"),
            };
            per_layer[idx] = g;
            match dx {
                Some(dx) => grad = dx,
                None => {
                    debug_assert_eq!(idx, 0);
                    grad = Tensor3::zeros(0, 0, 0);
                }
            }
        }
        let input_grad = want_input_grad.then_some(grad);
        (input_grad, per_layer.into_iter().flatten().collect())
    }

    /// Folds the batch statistics recorded on a train-mode tape into the
    /// running statistics.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        let momentum = T::of(BN_MOMENTUM);
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (
                Layer::Norm(bn),
                Cache::Norm {
                    batch_stats: Some((mean, var)),
                    ..
                },
            ) = (layer, cache)
            {
                for ch in 0..bn.channels {
                    bn.running_mean[ch] =
                        (T::one() - momentum) * bn.running_mean[ch] + momentum * mean[ch];
                    bn.running_var[ch] =
                        (T::one() - momentum) * bn.running_var[ch] + momentum * var[ch];
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Named view of every stored tensor: parameters and batch-norm buffers.
    pub fn named_tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer.kind();
            match layer {
                Layer::Conv(c) => {
                    out.push((format!("{i}.{kind}.weight"), &c.weight));
                    out.push((format!("{i}.{kind}.bias"), &c.bias));
                }
                Layer::Dense(d) => {
                    out.push((format!("{i}.{kind}.weight"), &d.weight));
                    out.push((format!("{i}.{kind}.bias"), &d.bias));
                }
                Layer::Norm(b) => {
                    out.push((format!("{i}.{kind}.gamma"), &b.gamma));
                    out.push((format!("{i}.{kind}.beta"), &b.beta));
                    out.push((format!("{i}.{kind}.running_mean"), &b.running_mean));
                    out.push((format!("{i}.{kind}.running_var"), &b.running_var));
                }
                Layer::Relu | Layer::MaxPool3 => {}
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            match layer {
                Layer::Conv(c) => {
                    out.push((format!("{i}.{kind}.weight"), &mut c.weight));
                    out.push((format!("{i}.{kind}.bias"), &mut c.bias));
                }
                Layer::Dense(d) => {
                    out.push((format!("{i}.{kind}.weight"), &mut d.weight));
                    out.push((format!("{i}.{kind}.bias"), &mut d.bias));
                }
                Layer::Norm(b) => {
                    out.push((format!("{i}.{kind}.gamma"), &mut b.gamma));
                    out.push((format!("{i}.{kind}.beta"), &mut b.beta));
                    out.push((format!("{i}.{kind}.running_mean"), &mut b.running_mean));
                    out.push((format!("{i}.{kind}.running_var"), &mut b.running_var));
                }
                Layer::Relu | Layer::MaxPool3 => {}
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}
