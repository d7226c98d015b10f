//! A small residual convolutional network with manual backpropagation.
//!
//! The layer vocabulary is fixed: convolution, batch normalization, ReLU,
//! residual blocks, global average pooling, dropout, and dense layers.
//! Activations flow through [`crate::matrix::Matrix`] values of shape
//! n×(c·h·w), one flattened sample per row, channel-major within the row.
//!
//! Two presets cover the crate's needs: [`NetworkConfig::mini_resnet`] is the
//! desk-scale residual network the experiments train, and
//! [`NetworkConfig::micro`] is a four-layer net small enough for exhaustive
//! finite-difference gradient checks.

mod adam;
mod layers;
mod train;

pub use adam::{AdamState, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
pub use train::{
    evaluate, train, EarlyStopper, EpochStats, LabeledSet, StopReason, TrainReport, TrainSchedule,
};

use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};
use layers::Layer;

/// Forward-pass behavior switch: training mode uses batch statistics and
/// active dropout; eval mode uses running statistics and identity dropout
/// (and consumes no randomness).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer descriptor. Shapes are inferred when a config is validated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// 2-D convolution, odd square kernel, zero padding of kernel/2.
    Conv { out_channels: usize, kernel: usize, stride: usize },
    /// Per-channel batch normalization (momentum 0.9, epsilon 1e-5).
    BatchNorm,
    Relu,
    /// conv-bn-relu-conv-bn plus identity skip, then ReLU. Channel count must
    /// match the incoming feature map so the skip needs no projection.
    ResidualBlock { channels: usize },
    GlobalAvgPool,
    Dropout { rate: f64 },
    /// Fully connected layer on the flattened features.
    Dense { out_dim: usize },
}

/// Architecture description: input shape, layer stack, and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// The desk-scale residual network: two strided conv stages, one residual
    /// block per stage, global average pooling, 40% dropout, and a dense head
    /// mapping the pooled features to class scores. 20 capturable layers.
    pub fn mini_resnet(input_shape: (usize, usize, usize), num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_shape,
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 2 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::ResidualBlock { channels: 8 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 2 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::ResidualBlock { channels: 16 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dropout { rate: 0.4 },
                LayerSpec::Dense { out_dim: num_classes },
            ],
            num_classes,
        }
    }

    /// A miniature net for exhaustive gradient checks:
    /// conv(4,3,1) - relu - gap - dense(C).
    pub fn micro(input_shape: (usize, usize, usize), num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_shape,
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: num_classes },
            ],
            num_classes,
        }
    }

    /// Looks up a preset by the name used in config files.
    pub fn by_name(
        name: &str,
        input_shape: (usize, usize, usize),
        num_classes: usize,
    ) -> Result<NetworkConfig> {
        match name {
            "mini" => Ok(NetworkConfig::mini_resnet(input_shape, num_classes)),
            "micro" => Ok(NetworkConfig::micro(input_shape, num_classes)),
            other => {
                Err(Error::Argument(format!("unknown network preset `{other}` (mini|micro)")))
            }
        }
    }

    /// Shape of the feature map after each layer. Fails if the stack does not
    /// chain consistently or does not end in an n×num_classes output.
    pub fn feature_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Argument(format!("degenerate input shape {c}x{h}x{w}")));
        }
        let mut cur = self.input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride } => {
                    if kernel == 0 || kernel % 2 == 0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: conv kernel must be odd, got {kernel}"
                        )));
                    }
                    if stride == 0 {
                        return Err(Error::Argument(format!("layer {i}: conv stride must be ≥ 1")));
                    }
                    if out_channels == 0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: conv out_channels must be ≥ 1"
                        )));
                    }
                    let pad = kernel / 2;
                    let oh = (cur.1 + 2 * pad - kernel) / stride + 1;
                    let ow = (cur.2 + 2 * pad - kernel) / stride + 1;
                    if oh == 0 || ow == 0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: conv collapses {}x{} to zero extent",
                            cur.1, cur.2
                        )));
                    }
                    (out_channels, oh, ow)
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => cur,
                LayerSpec::ResidualBlock { channels } => {
                    if channels != cur.0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: residual block wants {channels} channels but gets {}",
                            cur.0
                        )));
                    }
                    cur
                }
                LayerSpec::GlobalAvgPool => (cur.0, 1, 1),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Argument(format!(
                            "layer {i}: dropout rate {rate} outside [0,1)"
                        )));
                    }
                    cur
                }
                LayerSpec::Dense { out_dim } => {
                    if out_dim == 0 {
                        return Err(Error::Argument(format!("layer {i}: dense out_dim must be ≥ 1")));
                    }
                    (out_dim, 1, 1)
                }
            };
            shapes.push(cur);
        }
        let (fc, fh, fw) = cur;
        if fc * fh * fw != self.num_classes {
            return Err(Error::Argument(format!(
                "network output has {} features but num_classes is {}",
                fc * fh * fw,
                self.num_classes
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Argument(format!(
                "num_classes must be ≥ 2, got {}",
                self.num_classes
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Argument("network has no layers".into()));
        }
        self.feature_shapes().map(|_| ())
    }
}

/// Per-layer activations captured during one forward pass, flattened to
/// n×(c·h·w) per entry, in network order. Dropout layers are omitted: in eval
/// mode (the only mode traces are meant for) they are the bitwise identity of
/// the previous entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    entries: Vec<(String, Matrix)>,
}

impl ActivationTrace {
    fn new() -> ActivationTrace {
        ActivationTrace { entries: Vec::new() }
    }

    /// Builds a trace directly from named activations (one row per sample).
    /// Useful for feeding hand-crafted features into the similarity analysis.
    pub fn from_entries(entries: Vec<(String, Matrix)>) -> ActivationTrace {
        ActivationTrace { entries }
    }

    fn push(&mut self, name: &str, activation: Matrix) {
        self.entries.push((name.to_string(), activation));
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A frozen copy of every named parameter and running statistic, used for
/// best-epoch restoration and checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub entries: Vec<(String, Matrix)>,
}

///// The network: configuration, layer state (parameters, gradients, caches),
/// mode, and the private randomness stream that drives dropout.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    mode: Mode,
    dropout_rng: Rng,
    forwarded: bool,
}

impl Network {
    /// Validates the config, builds the layer stack, and initializes
    /// parameters from `init_rng`: He fan-in scaled normal draws for conv and
    /// dense weights (row-major draw order, layer by layer), zero biases,
    /// unit batchnorm scale. One extra draw seeds the dropout stream.
    pub fn new(config: NetworkConfig, init_rng: &mut Rng) -> Result<Network> {
        config.validate()?;
        let shapes = config.feature_shapes()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut counts = std::collections::HashMap::new();
        let mut in_shape = config.input_shape;
        for (spec, &out_shape) in config.layers.iter().zip(shapes.iter()) {
            let name = {
                let kind = match spec {
                    LayerSpec::Conv { .. } => "conv",
                    LayerSpec::BatchNorm => "bn",
                    LayerSpec::Relu => "relu",
                    LayerSpec::ResidualBlock { .. } => "block",
                    LayerSpec::GlobalAvgPool => "gap",
                    LayerSpec::Dropout { .. } => "dropout",
                    LayerSpec::Dense { .. } => "fc",
                };
                let n = counts.entry(kind).and_modify(|n| *n += 1).or_insert(1usize);
                match spec {
                    LayerSpec::GlobalAvgPool => "gap".to_string(),
                    LayerSpec::Dense { .. } if *n == 1 => "fc".to_string(),
                    _ => format!("{kind}{n}"),
                }
            };
            layers.push(Layer::build(&name, spec, in_shape, out_shape, init_rng)?);
            in_shape = out_shape;
        }
        let dropout_rng = Rng::new(init_rng.next_u64());
        Ok(Network { config, layers, mode: Mode::Train, dropout_rng, forwarded: false })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Names of the capturable layers, in forward order (dropout excluded).
    pub fn trace_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for layer in &self.layers {
            layer.trace_names(&mut names);
        }
        names
    }

    /// Runs the stack on a batch of flattened samples, caching intermediates
    /// for a following [`Network::backward`]. With `capture` set, also
    /// returns every capturable layer's activations.
    pub fn forward(
        &mut self,
        batch: &Matrix,
        capture: bool,
    ) -> Result<(Matrix, Option<ActivationTrace>)> {
        let (c, h, w) = self.config.input_shape;
        if batch.cols() != c * h * w {
            return Err(Error::Shape(format!(
                "batch has {} features but the network expects {c}x{h}x{w} = {}",
                batch.cols(),
                c * h * w
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let mut trace = if capture { Some(ActivationTrace::new()) } else { None };
        let mut cur = batch.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, self.mode, &mut self.dropout_rng, trace.as_mut())?;
        }
        self.forwarded = true;
        Ok((cur, trace))
    }

    /// Reverse-mode pass from a gradient on the logits. Stores per-parameter
    /// gradients inside the layers (replacing previous ones) and returns the
    /// gradient with respect to the input batch.
    pub fn backward(&mut self, loss_grad: &Matrix) -> Result<Matrix> {
        if !self.forwarded {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        let mut grad = loss_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(grad)
    }

    /// Visits every trainable parameter as (name, param, grad), in a fixed
    /// layer-by-layer order. Batchnorm running statistics are not trainable
    /// and are not visited here.
    pub fn visit_trainable(&mut self, mut f: impl FnMut(&str, &mut Matrix, &mut Matrix)) {
        for layer in &mut self.layers {
            layer.visit_trainable(&mut f);
        }
    }

    /// Visits every persistent parameter — trainable ones plus batchnorm
    /// running statistics — as (name, matrix). This is the checkpoint and
    /// snapshot surface.
    pub fn visit_state(&mut self, mut f: impl FnMut(&str, &mut Matrix)) {
        for layer in &mut self.layers {
            layer.visit_state(&mut f);
        }
    }

    pub fn num_trainable_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_trainable(|_, p, _| n += p.rows() * p.cols());
        n
    }

    pub fn snapshot(&mut self) -> ParamSnapshot {
        let mut entries = Vec::new();
        self.visit_state(|name, m| entries.push((name.to_string(), m.clone())));
        ParamSnapshot { entries }
    }

    /// Restores a snapshot taken from a network of the same architecture.
    pub fn restore(&mut self, snap: &ParamSnapshot) -> Result<()> {
        let mut idx = 0;
        let mut mismatch: Option<String> = None;
        self.visit_state(|name, m| {
            if mismatch.is_some() {
                return;
            }
            match snap.entries.get(idx) {
                Some((snap_name, snap_m)) if snap_name == name && snap_m.shape() == m.shape() => {
                    *m = snap_m.clone();
                }
                Some((snap_name, _)) => {
                    mismatch = Some(format!("parameter {idx}: expected {name}, found {snap_name}"));
                }
                None => mismatch = Some(format!("snapshot ends before parameter {name}")),
            }
            idx += 1;
        });
        if let Some(msg) = mismatch {
            return Err(Error::State(format!("snapshot mismatch: {msg}")));
        }
        if idx != snap.entries.len() {
            return Err(Error::State(format!(
                "snapshot has {} parameters, network has {idx}",
                snap.entries.len()
            )));
        }
        Ok(())
    }
}

/// Finite-difference oracle over network parameters: perturbs every
/// coordinate of every trainable parameter by ±h and compares the batch-loss
/// slope against the analytic gradient from one backward pass. The network is
/// used in its current mode; batchnorm batch statistics are recomputed on
/// every probe, so train-mode nets are checked against the train-mode
/// function. Nets containing dropout must be in eval mode (the loss would be
/// stochastic otherwise). Returns the worst relative error over all
/// coordinates, |analytic − numeric| / max(|analytic| + |numeric|, 1e-6).
pub fn param_grad_check(
    net: &mut Network,
    batch: &Matrix,
    targets: &crate::loss::Targets,
    spec: &crate::loss::LossSpec,
    h: f64,
) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::Argument(format!("step h={h} outside [1e-8, 1e-3]")));
    }
    if net.mode == Mode::Train
        && net.config.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { rate } if *rate > 0.0))
    {
        return Err(Error::Argument(
            "gradient check on a dropout network requires eval mode".into(),
        ));
    }
    let (logits, _) = net.forward(batch, false)?;
    let res = crate::loss::evaluate(spec, &logits, targets)?;
    net.backward(&res.grad)?;
    let mut analytic: Vec<Matrix> = Vec::new();
    net.visit_trainable(|_, _, g| analytic.push(g.clone()));

    let mut worst = 0.0_f64;
    for pi in 0..analytic.len() {
        let (rows, cols) = analytic[pi].shape();
        for r in 0..rows {
            for c in 0..cols {
                let mut loss_at = |delta: f64| -> Result<f64> {
                    let mut k = 0;
                    net.visit_trainable(|_, p, _| {
                        if k == pi {
                            p[(r, c)] += delta;
                        }
                        k += 1;
                    });
                    let out = net.forward(batch, false).map(|(lg, _)| lg);
                    let mut k = 0;
                    net.visit_trainable(|_, p, _| {
                        if k == pi {
                            p[(r, c)] -= delta;
                        }
                        k += 1;
                    });
                    Ok(crate::loss::evaluate(spec, &out?, targets)?.value)
                };
                let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
                let a = analytic[pi][(r, c)];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LossKind, LossSpec, Targets, ALL_LOSS_KINDS};

    fn random_batch(rng: &mut Rng, n: usize, shape: (usize, usize, usize)) -> Matrix {
        Matrix::from_fn(n, shape.0 * shape.1 * shape.2, |_, _| rng.uniform(0.0, 1.0).unwrap())
    }

    #[test]
    fn mini_resnet_shapes_chain() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let shapes = cfg.feature_shapes().unwrap();
        assert_eq!(shapes[0], (8, 8, 8));
        assert_eq!(shapes[3], (8, 8, 8));
        assert_eq!(shapes[4], (16, 4, 4));
        assert_eq!(*shapes.last().unwrap(), (10, 1, 1));
    }

    #[test]
    fn mini_resnet_has_twenty_capturable_layers() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let mut rng = Rng::new(1);
        let net = Network::new(cfg, &mut rng).unwrap();
        let names = net.trace_names();
        assert_eq!(names.len(), 20);
        assert_eq!(names[0], "conv1");
        assert!(names.contains(&"block1.out".to_string()));
        assert!(names.contains(&"fc".to_string()));
        assert!(!names.iter().any(|n| n.contains("dropout")));
    }

    #[test]
    fn config_rejects_bad_stacks() {
        let mut cfg = NetworkConfig::micro((3, 8, 8), 3);
        cfg.layers[0] = LayerSpec::Conv { out_channels: 4, kernel: 2, stride: 1 };
        assert!(cfg.validate().is_err());

        let mut cfg = NetworkConfig::micro((3, 8, 8), 3);
        cfg.layers.insert(1, LayerSpec::ResidualBlock { channels: 7 });
        assert!(cfg.validate().is_err());

        let mut cfg = NetworkConfig::micro((3, 8, 8), 3);
        cfg.layers.insert(3, LayerSpec::Dropout { rate: 1.0 });
        assert!(cfg.validate().is_err());

        // Head width must match num_classes.
        let mut cfg = NetworkConfig::micro((3, 8, 8), 3);
        cfg.num_classes = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_weight_network_outputs_bias() {
        let cfg = NetworkConfig::micro((3, 8, 8), 3);
        let mut rng = Rng::new(5);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        net.visit_trainable(|name, p, _| {
            if name.ends_with(".weight") {
                *p = Matrix::zeros(p.rows(), p.cols());
            } else if name == "fc.bias" {
                *p = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
            }
        });
        net.set_mode(Mode::Eval);
        let batch = random_batch(&mut rng, 4, (3, 8, 8));
        let (logits, _) = net.forward(&batch, false).unwrap();
        for r in 0..4 {
            assert_eq!(logits.row(r), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let mut rng = Rng::new(7);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        net.set_mode(Mode::Eval);
        let batch = random_batch(&mut rng, 5, (3, 16, 16));
        let (a, _) = net.forward(&batch, false).unwrap();
        let (b, _) = net.forward(&batch, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_chain_matches_hand_matmul() {
        // Two dense layers with no nonlinearity: y = (x·W1 + b1)·W2 + b2.
        let cfg = NetworkConfig {
            input_shape: (1, 1, 4),
            layers: vec![LayerSpec::Dense { out_dim: 3 }, LayerSpec::Dense { out_dim: 2 }],
            num_classes: 2,
        };
        let mut rng = Rng::new(11);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let mut params: Vec<Matrix> = Vec::new();
        net.visit_trainable(|_, p, _| params.push(p.clone()));
        let (w1, b1, w2, b2) = (&params[0], &params[1], &params[2], &params[3]);

        let x = random_batch(&mut rng, 6, (1, 1, 4));
        let hidden = x.matmul(w1).unwrap();
        let hidden = Matrix::from_fn(6, 3, |r, c| hidden[(r, c)] + b1[(0, c)]);
        let expect = hidden.matmul(w2).unwrap();
        let expect = Matrix::from_fn(6, 2, |r, c| expect[(r, c)] + b2[(0, c)]);

        let (got, _) = net.forward(&x, false).unwrap();
        for (a, b) in got.as_slice().iter().zip(expect.as_slice().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let cfg = NetworkConfig::micro((3, 8, 8), 3);
        let mut rng = Rng::new(3);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let err = net.backward(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn zero_loss_grad_gives_zero_param_grads() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let mut rng = Rng::new(13);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, (3, 16, 16));
        net.forward(&batch, false).unwrap();
        net.backward(&Matrix::zeros(4, 10)).unwrap();
        net.visit_trainable(|name, _, g| {
            assert!(g.as_slice().iter().all(|&v| v == 0.0), "{name} grad nonzero");
        });
    }

    #[test]
    fn dropout_in_eval_mode_is_identity() {
        let cfg = NetworkConfig {
            input_shape: (1, 1, 6),
            layers: vec![LayerSpec::Dropout { rate: 0.4 }, LayerSpec::Dense { out_dim: 2 }],
            num_classes: 2,
        };
        let mut rng = Rng::new(17);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        net.set_mode(Mode::Eval);
        let x = random_batch(&mut rng, 3, (1, 1, 6));
        let (_, trace) = net.forward(&x, true).unwrap();
        // Dropout is excluded from traces; the first captured layer is fc,
        // whose cached input equals x bitwise iff dropout was the identity.
        let trace = trace.unwrap();
        assert_eq!(trace.layer_names(), vec!["fc"]);
        // Check identity directly: logits from the net equal logits from a
        // dense-only forward on the same parameters.
        let mut params: Vec<Matrix> = Vec::new();
        net.visit_trainable(|_, p, _| params.push(p.clone()));
        let expect = x.matmul(&params[0]).unwrap();
        let expect = Matrix::from_fn(3, 2, |r, c| expect[(r, c)] + params[1][(0, c)]);
        let (got, _) = net.forward(&x, false).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn dropout_in_train_mode_scales_surviving_units() {
        let cfg = NetworkConfig {
            input_shape: (1, 1, 200),
            layers: vec![LayerSpec::Dropout { rate: 0.5 }, LayerSpec::Dense { out_dim: 2 }],
            num_classes: 2,
        };
        let mut rng = Rng::new(19);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let x = Matrix::from_fn(1, 200, |_, _| 1.0);
        // Capture the dropout output through the fc input gradient: instead,
        // compare two train-mode forwards — they must differ (random masks).
        let (a, _) = net.forward(&x, false).unwrap();
        let (b, _) = net.forward(&x, false).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn residual_block_with_zeroed_convs_is_identity_in_eval() {
        let cfg = NetworkConfig {
            input_shape: (4, 6, 6),
            layers: vec![
                LayerSpec::ResidualBlock { channels: 4 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: 2 },
            ],
            num_classes: 2,
        };
        let mut rng = Rng::new(23);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        net.visit_trainable(|name, p, _| {
            if name.contains("conv") && name.ends_with(".weight") {
                *p = Matrix::zeros(p.rows(), p.cols());
            }
        });
        net.set_mode(Mode::Eval);
        // Nonnegative input: the block's final ReLU must pass it through.
        let x = random_batch(&mut rng, 3, (4, 6, 6));
        let (_, trace) = net.forward(&x, true).unwrap();
        let trace = trace.unwrap();
        let out = trace.get("block1.out").unwrap();
        for (a, b) in out.as_slice().iter().zip(x.as_slice().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn trace_covers_all_layers_in_order() {
        let cfg = NetworkConfig::micro((3, 8, 8), 3);
        let mut rng = Rng::new(29);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, (3, 8, 8));
        let (logits, trace) = net.forward(&x, true).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.layer_names(), vec!["conv1", "relu1", "gap", "fc"]);
        assert_eq!(trace.get("conv1").unwrap().shape(), (4, 4 * 8 * 8));
        assert_eq!(trace.get("gap").unwrap().shape(), (4, 4));
        assert_eq!(trace.get("fc").unwrap(), &logits);
        assert_eq!(net.trace_names(), trace.layer_names());
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let mut rng = Rng::new(31);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let snap = net.snapshot();
        // Scramble everything, then restore.
        net.visit_state(|_, m| *m = m.map(|v| v + 1.5));
        net.restore(&snap).unwrap();
        assert_eq!(net.snapshot(), snap);
    }

    #[test]
    fn param_gradients_match_finite_differences_on_micro_net() {
        // The miniature-network oracle: every parameter of the micro config,
        // under every objective, against central differences on the batch
        // loss. h = 1e-5, relative error ≤ 1e-5.
        let mut rng = Rng::new(37);
        let batch = random_batch(&mut rng, 4, (3, 8, 8));
        let labels = [0usize, 1, 2, 0];
        let targets = Targets::from_labels(&labels, 3).unwrap();
        for kind in ALL_LOSS_KINDS {
            let spec = LossSpec::new(kind);
            let mut rng = Rng::new(41);
            let mut net = Network::new(NetworkConfig::micro((3, 8, 8), 3), &mut rng).unwrap();
            let worst = param_grad_check(&mut net, &batch, &targets, &spec, 1e-5).unwrap();
            assert!(worst <= 1e-5, "{kind}: worst rel err {worst}");
        }
    }

    #[test]
    fn param_gradients_match_finite_differences_through_residual_block() {
        let cfg = NetworkConfig {
            input_shape: (3, 6, 6),
            layers: vec![
                LayerSpec::ResidualBlock { channels: 3 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: 2 },
            ],
            num_classes: 2,
        };
        let mut rng = Rng::new(43);
        let batch = random_batch(&mut rng, 5, (3, 6, 6));
        let targets = Targets::from_labels(&[0, 1, 0, 1, 1], 2).unwrap();
        let spec = LossSpec::new(LossKind::Sce);
        let mut net_rng = Rng::new(47);
        let mut net = Network::new(cfg, &mut net_rng).unwrap();
        // h balances roundoff in the centered difference (∝ 1/h, noticeable
        // on near-zero gradients) against crossing a ReLU kink (large h).
        let worst = param_grad_check(&mut net, &batch, &targets, &spec, 3e-5).unwrap();
        assert!(worst <= 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn param_grad_check_rejects_train_mode_dropout() {
        let cfg = NetworkConfig::mini_resnet((3, 16, 16), 10);
        let mut rng = Rng::new(53);
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, (3, 16, 16));
        let targets = Targets::from_labels(&[0, 1, 2, 3], 10).unwrap();
        let err =
            param_grad_check(&mut net, &batch, &targets, &LossSpec::new(LossKind::Sce), 1e-5)
                .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
