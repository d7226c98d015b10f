//! Layer state, forward caches, and hand-written backward passes.
//!
//! Every layer owns its parameters, its parameter gradients (replaced on each
//! backward pass), and whatever it cached during the latest forward pass.
//! Calling backward without a preceding forward is a state error.

use super::{ActivationTrace, LayerSpec, Mode};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(super) enum Layer {
    Conv(Conv),
    BatchNorm(BatchNorm),
    Relu(Relu),
    Residual(Residual),
    Gap(Gap),
    Dropout(Dropout),
    Dense(Dense),
}

impl Layer {
    pub(super) fn build(
        name: &str,
        spec: &LayerSpec,
        in_shape: (usize, usize, usize),
        out_shape: (usize, usize, usize),
        rng: &mut Rng,
    ) -> Result<Layer> {
        Ok(match *spec {
            LayerSpec::Conv { out_channels, kernel, stride } => {
                debug_assert_eq!(out_channels, out_shape.0);
                Layer::Conv(Conv::new(name, in_shape, out_shape, kernel, stride, rng))
            }
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(name, in_shape)),
            LayerSpec::Relu => Layer::Relu(Relu { name: name.to_string(), cache: None }),
            LayerSpec::ResidualBlock { .. } => Layer::Residual(Residual::new(name, in_shape, rng)),
            LayerSpec::GlobalAvgPool => Layer::Gap(Gap {
                name: name.to_string(),
                channels: in_shape.0,
                spatial: in_shape.1 * in_shape.2,
                cached_n: None,
            }),
            LayerSpec::Dropout { rate } => {
                Layer::Dropout(Dropout { name: name.to_string(), rate, cache: None })
            }
            LayerSpec::Dense { out_dim } => {
                let in_dim = in_shape.0 * in_shape.1 * in_shape.2;
                Layer::Dense(Dense::new(name, in_dim, out_dim, rng))
            }
        })
    }

    pub(super) fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        rng: &mut Rng,
        trace: Option<&mut ActivationTrace>,
    ) -> Result<Matrix> {
        match self {
            Layer::Residual(l) => l.forward(x, mode, trace),
            _ => {
                let out = match self {
                    Layer::Conv(l) => l.forward(x)?,
                    Layer::BatchNorm(l) => l.forward(x, mode)?,
                    Layer::Relu(l) => l.forward(x),
                    Layer::Gap(l) => l.forward(x)?,
                    Layer::Dropout(l) => l.forward(x, mode, rng),
                    Layer::Dense(l) => l.forward(x)?,
                    Layer::Residual(_) => unreachable!(),
                };
                if let Some(t) = trace {
                    // Dropout is not a capturable layer: eval-mode traces
                    // would duplicate the previous entry bitwise.
                    if !matches!(self, Layer::Dropout(_)) {
                        t.push(self.name(), out.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    pub(super) fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::Residual(l) => l.backward(g),
            Layer::Gap(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
        }
    }

    fn name(&self) -> &str {
        match self {
            Layer::Conv(l) => &l.name,
            Layer::BatchNorm(l) => &l.name,
            Layer::Relu(l) => &l.name,
            Layer::Residual(l) => &l.name,
            Layer::Gap(l) => &l.name,
            Layer::Dropout(l) => &l.name,
            Layer::Dense(l) => &l.name,
        }
    }

    pub(super) fn trace_names(&self, out: &mut Vec<String>) {
        match self {
            Layer::Dropout(_) => {}
            Layer::Residual(l) => {
                for part in ["conv1", "bn1", "relu1", "conv2", "bn2", "out"] {
                    out.push(format!("{}.{part}", l.name));
                }
            }
            other => out.push(other.name().to_string()),
        }
    }

    pub(super) fn visit_trainable(&mut self, f: &mut impl FnMut(&str, &mut Matrix, &mut Matrix)) {
        match self {
            Layer::Conv(l) => l.visit_trainable(f),
            Layer::BatchNorm(l) => l.visit_trainable(f),
            Layer::Dense(l) => l.visit_trainable(f),
            Layer::Residual(l) => {
                l.conv1.visit_trainable(f);
                l.bn1.visit_trainable(f);
                l.conv2.visit_trainable(f);
                l.bn2.visit_trainable(f);
            }
            Layer::Relu(_) | Layer::Gap(_) | Layer::Dropout(_) => {}
        }
    }

    pub(super) fn visit_state(&mut self, f: &mut impl FnMut(&str, &mut Matrix)) {
        match self {
            Layer::Conv(l) => l.visit_state(f),
            Layer::BatchNorm(l) => l.visit_state(f),
            Layer::Dense(l) => l.visit_state(f),
            Layer::Residual(l) => {
                l.conv1.visit_state(f);
                l.bn1.visit_state(f);
                l.conv2.visit_state(f);
                l.bn2.visit_state(f);
            }
            Layer::Relu(_) | Layer::Gap(_) | Layer::Dropout(_) => {}
        }
    }
}

fn need_cache<'a, T>(cache: &'a Option<T>, name: &str) -> Result<&'a T> {
    cache
        .as_ref()
        .ok_or_else(|| Error::State(format!("{name}: backward called before forward")))
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution via im2col: each output position's receptive field is
/// copied into one row of a patch matrix, turning the convolution into a
/// single (n·oh·ow)×(ci·k·k) by (ci·k·k)×co product. Zero padding of k/2.
#[derive(Debug, Clone)]
pub(super) struct Conv {
    name: String,
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    weight: Matrix,
    bias: Matrix,
    grad_weight: Matrix,
    grad_bias: Matrix,
    cache: Option<Matrix>,
}

impl Conv {
    fn new(
        name: &str,
        in_shape: (usize, usize, usize),
        out_shape: (usize, usize, usize),
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Conv {
        let fan_in = in_shape.0 * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, out_shape.0, |_, _| rng.normal() * std);
        Conv {
            name: name.to_string(),
            in_shape,
            out_shape,
            kernel,
            stride,
            grad_weight: Matrix::zeros(weight.rows(), weight.cols()),
            grad_bias: Matrix::zeros(1, out_shape.0),
            bias: Matrix::zeros(1, out_shape.0),
            weight,
            cache: None,
        }
    }

    /// Patch matrix for the whole batch: row s·oh·ow + oy·ow + ox holds the
    /// receptive field of output position (oy, ox) of sample s, laid out
    /// channel-major then kernel-row-major. Out-of-image taps stay zero.
    fn im2col(&self, x: &Matrix) -> Matrix {
        let (ci, h, w) = self.in_shape;
        let (_, oh, ow) = self.out_shape;
        let (k, stride) = (self.kernel, self.stride);
        let pad = (k / 2) as isize;
        let n = x.rows();
        let mut patches = Matrix::zeros(n * oh * ow, ci * k * k);
        for s in 0..n {
            let row = x.row(s);
            for oy in 0..oh {
                for ox in 0..ow {
                    let prow = patches.row_mut((s * oh + oy) * ow + ox);
                    let mut col = 0;
                    for c in 0..ci {
                        let base = c * h * w;
                        for dy in 0..k {
                            let iy = (oy * stride + dy) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                col += k;
                                continue;
                            }
                            let line = base + iy as usize * w;
                            for dx in 0..k {
                                let ix = (ox * stride + dx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    prow[col] = row[line + ix as usize];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        patches
    }

    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (ci, h, w) = self.in_shape;
        if x.cols() != ci * h * w {
            return Err(Error::Shape(format!(
                "{}: input has {} features, expected {ci}x{h}x{w}",
                self.name,
                x.cols()
            )));
        }
        let (co, oh, ow) = self.out_shape;
        let n = x.rows();
        let y = self.im2col(x).matmul(&self.weight)?;
        let mut out = Matrix::zeros(n, co * oh * ow);
        for s in 0..n {
            let orow = out.row_mut(s);
            for pos in 0..oh * ow {
                let yrow = y.row(s * oh * ow + pos);
                for (c, &v) in yrow.iter().enumerate() {
                    orow[c * oh * ow + pos] = v + self.bias[(0, c)];
                }
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let x = need_cache(&self.cache, &self.name)?;
        let (ci, h, w) = self.in_shape;
        let (co, oh, ow) = self.out_shape;
        let (k, stride) = (self.kernel, self.stride);
        let pad = (k / 2) as isize;
        let n = x.rows();

        // Regroup the upstream gradient to match the patch-matrix layout.
        let mut gbig = Matrix::zeros(n * oh * ow, co);
        for s in 0..n {
            let grow = g.row(s);
            for pos in 0..oh * ow {
                let brow = gbig.row_mut(s * oh * ow + pos);
                for (c, b) in brow.iter_mut().enumerate() {
                    *b = grow[c * oh * ow + pos];
                }
            }
        }

        let mut gb = Matrix::zeros(1, co);
        for r in 0..gbig.rows() {
            for (acc, &v) in gb.row_mut(0).iter_mut().zip(gbig.row(r).iter()) {
                *acc += v;
            }
        }
        let patches = self.im2col(x);
        self.grad_weight = patches.t_matmul(&gbig)?;
        self.grad_bias = gb;

        // Scatter the patch gradients back into image space (col2im),
        // accumulating in the same fixed loop order as im2col.
        let dpatches = gbig.matmul_bt(&self.weight)?;
        let mut dx = Matrix::zeros(n, ci * h * w);
        for s in 0..n {
            let drow = dx.row_mut(s);
            for oy in 0..oh {
                for ox in 0..ow {
                    let prow = dpatches.row((s * oh + oy) * ow + ox);
                    let mut col = 0;
                    for c in 0..ci {
                        let base = c * h * w;
                        for dy in 0..k {
                            let iy = (oy * stride + dy) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                col += k;
                                continue;
                            }
                            let line = base + iy as usize * w;
                            for dx_k in 0..k {
                                let ix = (ox * stride + dx_k) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    drow[line + ix as usize] += prow[col];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit_trainable(&mut self, f: &mut impl FnMut(&str, &mut Matrix, &mut Matrix)) {
        f(&format!("{}.weight", self.name), &mut self.weight, &mut self.grad_weight);
        f(&format!("{}.bias", self.name), &mut self.bias, &mut self.grad_bias);
    }

    fn visit_state(&mut self, f: &mut impl FnMut(&str, &mut Matrix)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over samples and spatial positions.
/// Training normalizes with batch statistics (biased variance) and updates
/// running averages with momentum 0.9; eval normalizes with the running
/// statistics. Epsilon 1e-5.
#[derive(Debug, Clone)]
pub(super) struct BatchNorm {
    name: String,
    channels: usize,
    spatial: usize,
    gamma: Matrix,
    beta: Matrix,
    running_mean: Matrix,
    running_var: Matrix,
    grad_gamma: Matrix,
    grad_beta: Matrix,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x: Matrix,
    mean: Vec<f64>,
    invstd: Vec<f64>,
    mode: Mode,
}

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

impl BatchNorm {
    fn new(name: &str, in_shape: (usize, usize, usize)) -> BatchNorm {
        let c = in_shape.0;
        BatchNorm {
            name: name.to_string(),
            channels: c,
            spatial: in_shape.1 * in_shape.2,
            gamma: Matrix::from_fn(1, c, |_, _| 1.0),
            beta: Matrix::zeros(1, c),
            running_mean: Matrix::zeros(1, c),
            running_var: Matrix::from_fn(1, c, |_, _| 1.0),
            grad_gamma: Matrix::zeros(1, c),
            grad_beta: Matrix::zeros(1, c),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let (c, sp) = (self.channels, self.spatial);
        if x.cols() != c * sp {
            return Err(Error::Shape(format!(
                "{}: input has {} features, expected {c}x{sp}",
                self.name,
                x.cols()
            )));
        }
        let n = x.rows();
        let m = (n * sp) as f64;
        let mut mean = vec![0.0; c];
        let mut invstd = vec![0.0; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for s in 0..n {
                        for &v in &x.row(s)[ch * sp..(ch + 1) * sp] {
                            acc += v;
                        }
                    }
                    let mu = acc / m;
                    let mut var_acc = 0.0;
                    for s in 0..n {
                        for &v in &x.row(s)[ch * sp..(ch + 1) * sp] {
                            var_acc += (v - mu) * (v - mu);
                        }
                    }
                    let var = var_acc / m;
                    mean[ch] = mu;
                    invstd[ch] = 1.0 / (var + BN_EPS).sqrt();
                    self.running_mean[(0, ch)] =
                        BN_MOMENTUM * self.running_mean[(0, ch)] + (1.0 - BN_MOMENTUM) * mu;
                    self.running_var[(0, ch)] =
                        BN_MOMENTUM * self.running_var[(0, ch)] + (1.0 - BN_MOMENTUM) * var;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = self.running_mean[(0, ch)];
                    invstd[ch] = 1.0 / (self.running_var[(0, ch)] + BN_EPS).sqrt();
                }
            }
        }
        let mut out = Matrix::zeros(n, c * sp);
        for s in 0..n {
            let xrow = x.row(s);
            let orow = out.row_mut(s);
            for ch in 0..c {
                let (g, b) = (self.gamma[(0, ch)], self.beta[(0, ch)]);
                let (mu, is) = (mean[ch], invstd[ch]);
                for p in ch * sp..(ch + 1) * sp {
                    orow[p] = g * (xrow[p] - mu) * is + b;
                }
            }
        }
        self.cache = Some(BnCache { x: x.clone(), mean, invstd, mode });
        Ok(out)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let cache = need_cache(&self.cache, &self.name)?;
        let (c, sp) = (self.channels, self.spatial);
        let n = cache.x.rows();
        let m = (n * sp) as f64;
        let mut dx = Matrix::zeros(n, c * sp);
        for ch in 0..c {
            let (mu, is) = (cache.mean[ch], cache.invstd[ch]);
            let gamma = self.gamma[(0, ch)];
            let mut sum_g = 0.0;
            let mut sum_g_xhat = 0.0;
            for s in 0..n {
                let xrow = cache.x.row(s);
                let grow = g.row(s);
                for p in ch * sp..(ch + 1) * sp {
                    sum_g += grow[p];
                    sum_g_xhat += grow[p] * (xrow[p] - mu) * is;
                }
            }
            self.grad_beta[(0, ch)] = sum_g;
            self.grad_gamma[(0, ch)] = sum_g_xhat;
            match cache.mode {
                Mode::Train => {
                    // Batch statistics depend on x, so their gradients flow:
                    // dx = γ·invstd·(g − Σg/m − x̂·Σ(g·x̂)/m).
                    for s in 0..n {
                        let xrow = cache.x.row(s);
                        let grow = g.row(s);
                        let drow = dx.row_mut(s);
                        for p in ch * sp..(ch + 1) * sp {
                            let xhat = (xrow[p] - mu) * is;
                            drow[p] =
                                gamma * is * (grow[p] - sum_g / m - xhat * sum_g_xhat / m);
                        }
                    }
                }
                Mode::Eval => {
                    // Running statistics are constants here.
                    for s in 0..n {
                        let grow = g.row(s);
                        let drow = dx.row_mut(s);
                        for p in ch * sp..(ch + 1) * sp {
                            drow[p] = gamma * is * grow[p];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit_trainable(&mut self, f: &mut impl FnMut(&str, &mut Matrix, &mut Matrix)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma, &mut self.grad_gamma);
        f(&format!("{}.beta", self.name), &mut self.beta, &mut self.grad_beta);
    }

    fn visit_state(&mut self, f: &mut impl FnMut(&str, &mut Matrix)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

/// max(x, 0), with the subgradient at 0 taken as 0.
#[derive(Debug, Clone)]
pub(super) struct Relu {
    pub(super) name: String,
    cache: Option<Matrix>,
}

impl Relu {
    fn forward(&mut self, x: &Matrix) -> Matrix {
        self.cache = Some(x.clone());
        x.map(|v| v.max(0.0))
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let x = need_cache(&self.cache, &self.name)?;
        Ok(Matrix::from_fn(g.rows(), g.cols(), |r, c| {
            if x[(r, c)] > 0.0 {
                g[(r, c)]
            } else {
                0.0
            }
        }))
    }
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// conv-bn-relu-conv-bn with an identity skip, then a final ReLU. Channel
/// count and spatial extent are preserved (3×3 kernels, stride 1).
#[derive(Debug, Clone)]
pub(super) struct Residual {
    pub(super) name: String,
    pub(super) conv1: Conv,
    pub(super) bn1: BatchNorm,
    relu1: Relu,
    pub(super) conv2: Conv,
    pub(super) bn2: BatchNorm,
    sum_cache: Option<Matrix>,
}

impl Residual {
    fn new(name: &str, shape: (usize, usize, usize), rng: &mut Rng) -> Residual {
        Residual {
            name: name.to_string(),
            conv1: Conv::new(&format!("{name}.conv1"), shape, shape, 3, 1, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), shape),
            relu1: Relu { name: format!("{name}.relu1"), cache: None },
            conv2: Conv::new(&format!("{name}.conv2"), shape, shape, 3, 1, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), shape),
            sum_cache: None,
        }
    }

    fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        mut trace: Option<&mut ActivationTrace>,
    ) -> Result<Matrix> {
        let push = |t: &mut Option<&mut ActivationTrace>, name: &str, m: &Matrix| {
            if let Some(t) = t.as_deref_mut() {
                t.push(name, m.clone());
            }
        };
        let a = self.conv1.forward(x)?;
        push(&mut trace, &self.conv1.name, &a);
        let b = self.bn1.forward(&a, mode)?;
        push(&mut trace, &self.bn1.name, &b);
        let c = self.relu1.forward(&b);
        push(&mut trace, &self.relu1.name, &c);
        let d = self.conv2.forward(&c)?;
        push(&mut trace, &self.conv2.name, &d);
        let e = self.bn2.forward(&d, mode)?;
        push(&mut trace, &self.bn2.name, &e);
        let sum = e.add(x)?;
        let out = sum.map(|v| v.max(0.0));
        push(&mut trace, &format!("{}.out", self.name), &out);
        self.sum_cache = Some(sum);
        Ok(out)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let sum = need_cache(&self.sum_cache, &self.name)?;
        let gpre = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
            if sum[(r, c)] > 0.0 {
                g[(r, c)]
            } else {
                0.0
            }
        });
        let d = self.bn2.backward(&gpre)?;
        let d = self.conv2.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        let d = self.bn1.backward(&d)?;
        let d_main = self.conv1.backward(&d)?;
        d_main.add(&gpre)
    }
}

// ---------------------------------------------------------------------------
// Global average pooling
// ---------------------------------------------------------------------------

/// Means each channel over its spatial positions: n×(c·h·w) → n×c.
#[derive(Debug, Clone)]
pub(super) struct Gap {
    pub(super) name: String,
    channels: usize,
    spatial: usize,
    cached_n: Option<usize>,
}

impl Gap {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (c, sp) = (self.channels, self.spatial);
        if x.cols() != c * sp {
            return Err(Error::Shape(format!(
                "{}: input has {} features, expected {c}x{sp}",
                self.name,
                x.cols()
            )));
        }
        let n = x.rows();
        let mut out = Matrix::zeros(n, c);
        for s in 0..n {
            let xrow = x.row(s);
            let orow = out.row_mut(s);
            for ch in 0..c {
                let mut acc = 0.0;
                for &v in &xrow[ch * sp..(ch + 1) * sp] {
                    acc += v;
                }
                orow[ch] = acc / sp as f64;
            }
        }
        self.cached_n = Some(n);
        Ok(out)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let n = *need_cache(&self.cached_n, &self.name)?;
        let (c, sp) = (self.channels, self.spatial);
        let mut dx = Matrix::zeros(n, c * sp);
        for s in 0..n {
            let grow = g.row(s);
            let drow = dx.row_mut(s);
            for ch in 0..c {
                let v = grow[ch] / sp as f64;
                for d in &mut drow[ch * sp..(ch + 1) * sp] {
                    *d = v;
                }
            }
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: each training-mode activation is zeroed with probability
/// `rate` or scaled by 1/(1−rate); masks are drawn row-major from the
/// network's dropout stream. Eval mode is the identity and draws nothing.
#[derive(Debug, Clone)]
pub(super) struct Dropout {
    pub(super) name: String,
    rate: f64,
    cache: Option<DropCache>,
}

#[derive(Debug, Clone)]
enum DropCache {
    Mask(Matrix),
    Identity,
}

impl Dropout {
    fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Matrix {
        match mode {
            Mode::Train => {
                let keep = 1.0 / (1.0 - self.rate);
                let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
                    if rng.next_f64() < self.rate {
                        0.0
                    } else {
                        keep
                    }
                });
                let out = Matrix::from_fn(x.rows(), x.cols(), |r, c| x[(r, c)] * mask[(r, c)]);
                self.cache = Some(DropCache::Mask(mask));
                out
            }
            Mode::Eval => {
                self.cache = Some(DropCache::Identity);
                x.clone()
            }
        }
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        match need_cache(&self.cache, &self.name)? {
            DropCache::Mask(mask) => {
                Ok(Matrix::from_fn(g.rows(), g.cols(), |r, c| g[(r, c)] * mask[(r, c)]))
            }
            DropCache::Identity => Ok(g.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Fully connected layer y = x·W + b on flattened features.
#[derive(Debug, Clone)]
pub(super) struct Dense {
    pub(super) name: String,
    weight: Matrix,
    bias: Matrix,
    grad_weight: Matrix,
    grad_bias: Matrix,
    cache: Option<Matrix>,
}

impl Dense {
    fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Dense {
        let std = (2.0 / in_dim as f64).sqrt();
        Dense {
            name: name.to_string(),
            weight: Matrix::from_fn(in_dim, out_dim, |_, _| rng.normal() * std),
            bias: Matrix::zeros(1, out_dim),
            grad_weight: Matrix::zeros(in_dim, out_dim),
            grad_bias: Matrix::zeros(1, out_dim),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = x.matmul(&self.weight)?;
        let out = Matrix::from_fn(y.rows(), y.cols(), |r, c| y[(r, c)] + self.bias[(0, c)]);
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let x = need_cache(&self.cache, &self.name)?;
        self.grad_weight = x.t_matmul(g)?;
        let mut gb = Matrix::zeros(1, g.cols());
        for r in 0..g.rows() {
            for (acc, &v) in gb.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                *acc += v;
            }
        }
        self.grad_bias = gb;
        g.matmul_bt(&self.weight)
    }

    fn visit_trainable(&mut self, f: &mut impl FnMut(&str, &mut Matrix, &mut Matrix)) {
        f(&format!("{}.weight", self.name), &mut self.weight, &mut self.grad_weight);
        f(&format!("{}.bias", self.name), &mut self.bias, &mut self.grad_bias);
    }

    fn visit_state(&mut self, f: &mut impl FnMut(&str, &mut Matrix)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_input(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.uniform(-1.0, 1.0).unwrap())
    }

    /// Independent convolution oracle: direct quadruple loop over output
    /// channel, spatial position, input channel, and kernel taps.
    fn naive_conv(
        x: &Matrix,
        weight: &Matrix,
        bias: &Matrix,
        in_shape: (usize, usize, usize),
        out_shape: (usize, usize, usize),
        k: usize,
        stride: usize,
    ) -> Matrix {
        let (ci, h, w) = in_shape;
        let (co, oh, ow) = out_shape;
        let pad = (k / 2) as isize;
        Matrix::from_fn(x.rows(), co * oh * ow, |s, idx| {
            let c_out = idx / (oh * ow);
            let oy = (idx % (oh * ow)) / ow;
            let ox = idx % ow;
            let mut acc = bias[(0, c_out)];
            for c_in in 0..ci {
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (oy * stride + dy) as isize - pad;
                        let ix = (ox * stride + dx) as isize - pad;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let xv = x[(s, c_in * h * w + iy as usize * w + ix as usize)];
                        let wv = weight[(c_in * k * k + dy * k + dx, c_out)];
                        acc += xv * wv;
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Rng::new(101);
        for &(in_shape, out_ch, stride) in
            &[((2, 5, 5), 3, 1), ((3, 6, 6), 4, 2), ((1, 4, 7), 2, 2)]
        {
            let k = 3;
            let pad = k / 2;
            let oh = (in_shape.1 + 2 * pad - k) / stride + 1;
            let ow = (in_shape.2 + 2 * pad - k) / stride + 1;
            let out_shape = (out_ch, oh, ow);
            let mut conv = Conv::new("c", in_shape, out_shape, k, stride, &mut rng);
            conv.bias = Matrix::from_fn(1, out_ch, |_, c| 0.1 * c as f64);
            let x = rand_input(&mut rng, 3, in_shape.0 * in_shape.1 * in_shape.2);
            let got = conv.forward(&x).unwrap();
            let want = naive_conv(&x, &conv.weight, &conv.bias, in_shape, out_shape, k, stride);
            for (a, b) in got.as_slice().iter().zip(want.as_slice().iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes_and_tracks_running_stats() {
        let mut rng = Rng::new(7);
        let mut bn = BatchNorm::new("bn", (2, 2, 2));
        let x = rand_input(&mut rng, 6, 8);
        let y = bn.forward(&x, Mode::Train).unwrap();
        // Per channel, output mean ≈ 0 and biased variance ≈ 1 (up to eps).
        for ch in 0..2 {
            let mut vals = Vec::new();
            for s in 0..6 {
                vals.extend_from_slice(&y.row(s)[ch * 4..(ch + 1) * 4]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-3);
            // Running stats moved 10% of the way from init toward the batch.
            assert!(bn.running_mean[(0, ch)].abs() > 0.0 || mean.abs() <= 1e-12);
            assert!((bn.running_var[(0, ch)] - 1.0).abs() <= 0.2);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::new("bn", (1, 1, 2));
        bn.running_mean = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        bn.running_var = Matrix::from_vec(1, 1, vec![4.0]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![3.0, 1.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        // (3-1)/sqrt(4+eps) ≈ 1, (1-1)/2 = 0.
        assert!((y[(0, 0)] - 1.0).abs() <= 1e-5);
        assert!(y[(0, 1)].abs() <= 1e-12);
    }

    #[test]
    fn gap_means_channels() {
        let mut gap = Gap { name: "gap".into(), channels: 2, spatial: 2, cached_n: None };
        let x = Matrix::from_vec(1, 4, vec![1.0, 3.0, 10.0, 20.0]).unwrap();
        let y = gap.forward(&x).unwrap();
        assert_eq!(y, Matrix::from_vec(1, 2, vec![2.0, 15.0]).unwrap());
        let dx = gap.backward(&Matrix::from_vec(1, 2, vec![4.0, 8.0]).unwrap()).unwrap();
        assert_eq!(dx, Matrix::from_vec(1, 4, vec![2.0, 2.0, 4.0, 4.0]).unwrap());
    }

    #[test]
    fn dropout_train_mask_values_are_zero_or_scaled() {
        let mut rng = Rng::new(5);
        let mut drop = Dropout { name: "d".into(), rate: 0.4, cache: None };
        let x = Matrix::from_fn(8, 50, |_, _| 1.0);
        let y = drop.forward(&x, Mode::Train, &mut rng);
        let keep = 1.0 / 0.6;
        let mut kept = 0;
        for &v in y.as_slice() {
            assert!(v == 0.0 || (v - keep).abs() <= 1e-12);
            if v != 0.0 {
                kept += 1;
            }
        }
        let frac = kept as f64 / 400.0;
        assert!((frac - 0.6).abs() <= 0.1, "kept fraction {frac}");
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut relu = Relu { name: "r".into(), cache: None };
        assert!(matches!(relu.backward(&Matrix::zeros(1, 1)), Err(Error::State(_))));
        let mut rng = Rng::new(1);
        let mut conv = Conv::new("c", (1, 3, 3), (1, 3, 3), 3, 1, &mut rng);
        assert!(matches!(conv.backward(&Matrix::zeros(1, 9)), Err(Error::State(_))));
    }
}
