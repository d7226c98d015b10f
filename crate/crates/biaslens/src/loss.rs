//! The six classification objectives, each returning the scalar batch loss
//! and its analytic gradient with respect to the raw network outputs.
//!
//! Conventions shared by every objective:
//!
//! - inputs `fv` are raw, unconstrained network outputs of shape n×C;
//!   objectives that need probabilities apply softmax or sigmoid internally
//! - the batch reduction is the mean over samples, so gradient scale is
//!   comparable across batch sizes
//! - all values are nonnegative minimization objectives
//!
//! `sce` and `nll` are analytically the same function under these
//! conventions; they are kept as distinct code paths (direct log-sum-exp vs
//! an explicit log-softmax stage) and distinct configuration choices.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Which objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Softmax cross-entropy on logits.
    Sce,
    /// One-vs-rest binary cross-entropy with sigmoid outputs.
    Bce,
    /// Negative log-likelihood of softmax probabilities (explicit log-softmax).
    Nll,
    /// Manhattan distance between the softmax output and the one-hot target.
    L1,
    /// Squared Euclidean distance between the softmax output and the target.
    L2,
    /// Rescaled sum-of-squares on raw outputs, parameters alpha and beta.
    Sos,
}

pub const ALL_LOSS_KINDS: [LossKind; 6] =
    [LossKind::Sce, LossKind::Bce, LossKind::Nll, LossKind::L1, LossKind::L2, LossKind::Sos];

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Sce => "sce",
            LossKind::Bce => "bce",
            LossKind::Nll => "nll",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Sos => "sos",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s.to_ascii_lowercase().as_str() {
            "sce" => Ok(LossKind::Sce),
            "bce" => Ok(LossKind::Bce),
            "nll" => Ok(LossKind::Nll),
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "sos" => Ok(LossKind::Sos),
            other => Err(Error::Argument(format!(
                "unknown loss kind `{other}` (expected sce|bce|nll|l1|l2|sos)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// An objective plus its parameters. `alpha`/`beta` only affect `Sos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> LossSpec {
        LossSpec { kind, alpha: 1.0, beta: 1.0 }
    }

    pub fn with_sos_params(alpha: f64, beta: f64) -> Result<LossSpec> {
        let spec = LossSpec { kind: LossKind::Sos, alpha, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Argument(format!("loss alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One-hot targets, n×C with exactly one 1 per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    one_hot: Matrix,
    labels: Vec<usize>,
}

impl Targets {
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Targets> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let one_hot = Matrix::from_fn(labels.len(), num_classes, |r, c| {
            if labels[r] == c {
                1.0
            } else {
                0.0
            }
        });
        Ok(Targets { one_hot, labels: labels.to_vec() })
    }

    pub fn from_one_hot(one_hot: Matrix) -> Result<Targets> {
        let mut labels = Vec::with_capacity(one_hot.rows());
        for r in 0..one_hot.rows() {
            let row = one_hot.row(r);
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(c, _)| c)
                .collect();
            if ones.len() != 1 || row[ones[0]] != 1.0 {
                return Err(Error::Argument(format!(
                    "target row {r} is not one-hot (must contain exactly one 1)"
                )));
            }
            labels.push(ones[0]);
        }
        Ok(Targets { one_hot, labels })
    }

    pub fn one_hot(&self) -> &Matrix {
        &self.one_hot
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.one_hot.cols()
    }
}

/// Scalar loss plus gradient w.r.t. the raw outputs (same shape as `fv`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Matrix,
}

/// Row-wise softmax with max-subtraction so large logits cannot overflow.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row.iter()) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Row-wise log-softmax: x - max - ln Σ exp(x - max).
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_z = max + sum.ln();
        for (o, &v) in out.row_mut(r).iter_mut().zip(row.iter()) {
            *o = v - log_z;
        }
    }
    out
}

/// Element-wise logistic sigmoid with overflow-safe branches.
pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(fv: &Matrix, targets: &Targets) -> Result<()> {
    if fv.shape() != targets.one_hot().shape() {
        return Err(Error::Shape(format!(
            "outputs {}x{} vs targets {}x{}",
            fv.rows(),
            fv.cols(),
            targets.one_hot().rows(),
            targets.one_hot().cols()
        )));
    }
    if fv.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    Ok(())
}

/// Softmax cross-entropy: mean over samples of log-sum-exp(fv) - fv_true.
pub fn loss_sce(fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let mut value = 0.0;
    for r in 0..fv.rows() {
        let row = fv.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        value += max + sum.ln() - row[targets.labels()[r]];
    }
    let probs = softmax(fv);
    let grad = Matrix::from_fn(fv.rows(), fv.cols(), |r, c| {
        (probs[(r, c)] - targets.one_hot()[(r, c)]) / n
    });
    Ok(LossResult { value: value / n, grad })
}

/// One-vs-rest binary cross-entropy over all C outputs with sigmoid
/// activation, in the stable max(x,0) - x·t + ln(1 + e^{-|x|}) form.
pub fn loss_bce(fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let mut value = 0.0;
    for r in 0..fv.rows() {
        for (&x, &t) in fv.row(r).iter().zip(targets.one_hot().row(r).iter()) {
            value += x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
        }
    }
    let grad = Matrix::from_fn(fv.rows(), fv.cols(), |r, c| {
        (sigmoid_scalar(fv[(r, c)]) - targets.one_hot()[(r, c)]) / n
    });
    Ok(LossResult { value: value / n, grad })
}

/// Negative log-likelihood of the softmax probabilities, computed through an
/// explicit log-softmax matrix. Analytically identical to [`loss_sce`]; the
/// code path is deliberately different.
pub fn loss_nll(fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let log_probs = log_softmax(fv);
    let mut value = 0.0;
    for r in 0..fv.rows() {
        for (&lp, &t) in log_probs.row(r).iter().zip(targets.one_hot().row(r).iter()) {
            value -= t * lp;
        }
    }
    let grad = Matrix::from_fn(fv.rows(), fv.cols(), |r, c| {
        (log_probs[(r, c)].exp() - targets.one_hot()[(r, c)]) / n
    });
    Ok(LossResult { value: value / n, grad })
}

/// Backpropagates a gradient on softmax outputs to the logits:
/// dfv = p ⊙ (g - Σ_c g_c p_c), per row.
fn softmax_backward(probs: &Matrix, grad_on_probs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad_on_probs.row(r);
        let mut dot = 0.0;
        for (&pi, &gi) in p.iter().zip(g.iter()) {
            dot += pi * gi;
        }
        for ((o, &pi), &gi) in out.row_mut(r).iter_mut().zip(p.iter()).zip(g.iter()) {
            *o = pi * (gi - dot);
        }
    }
    out
}

/// Manhattan distance between softmax outputs and targets, mean over samples.
/// Subgradient convention: sign(0) = 0.
pub fn loss_l1(fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let probs = softmax(fv);
    let mut value = 0.0;
    for r in 0..fv.rows() {
        for (&p, &t) in probs.row(r).iter().zip(targets.one_hot().row(r).iter()) {
            value += (t - p).abs();
        }
    }
    let grad_on_probs = Matrix::from_fn(fv.rows(), fv.cols(), |r, c| {
        let d = probs[(r, c)] - targets.one_hot()[(r, c)];
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok(LossResult { value: value / n, grad: softmax_backward(&probs, &grad_on_probs) })
}

/// Squared Euclidean distance between softmax outputs and targets, mean over
/// samples.
pub fn loss_l2(fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let probs = softmax(fv);
    let mut value = 0.0;
    for r in 0..fv.rows() {
        for (&p, &t) in probs.row(r).iter().zip(targets.one_hot().row(r).iter()) {
            value += (t - p) * (t - p);
        }
    }
    let grad_on_probs = Matrix::from_fn(fv.rows(), fv.cols(), |r, c| {
        2.0 * (probs[(r, c)] - targets.one_hot()[(r, c)]) / n
    });
    Ok(LossResult { value: value / n, grad: softmax_backward(&probs, &grad_on_probs) })
}

/// Rescaled sum-of-squares on raw outputs:
/// mean over samples of (1/C) Σ_c [α y_c (fv_c - β)² + (1 - y_c) fv_c²].
/// At α = β = 1 this is the standard square loss against the one-hot target.
pub fn loss_sos(fv: &Matrix, targets: &Targets, alpha: f64, beta: f64) -> Result<LossResult> {
    if alpha <= 0.0 {
        return Err(Error::Argument(format!("sos alpha must be > 0, got {alpha}")));
    }
    check_shapes(fv, targets)?;
    let n = fv.rows() as f64;
    let c = fv.cols() as f64;
    let mut value = 0.0;
    for r in 0..fv.rows() {
        for (&x, &t) in fv.row(r).iter().zip(targets.one_hot().row(r).iter()) {
            value += alpha * t * (x - beta) * (x - beta) + (1.0 - t) * x * x;
        }
    }
    let grad = Matrix::from_fn(fv.rows(), fv.cols(), |r, cix| {
        let x = fv[(r, cix)];
        let t = targets.one_hot()[(r, cix)];
        2.0 / (n * c) * (alpha * t * (x - beta) + (1.0 - t) * x)
    });
    Ok(LossResult { value: value / (n * c), grad })
}

/// Dispatches to the objective selected by `spec`.
pub fn evaluate(spec: &LossSpec, fv: &Matrix, targets: &Targets) -> Result<LossResult> {
    spec.validate()?;
    match spec.kind {
        LossKind::Sce => loss_sce(fv, targets),
        LossKind::Bce => loss_bce(fv, targets),
        LossKind::Nll => loss_nll(fv, targets),
        LossKind::L1 => loss_l1(fv, targets),
        LossKind::L2 => loss_l2(fv, targets),
        LossKind::Sos => loss_sos(fv, targets, spec.alpha, spec.beta),
    }
}

/// Central-difference gradient of the selected loss w.r.t. every output
/// coordinate: (L(fv + h e) - L(fv - h e)) / 2h. This is the independent
/// oracle the analytic gradients are checked against; it only ever calls the
/// loss *values*.
pub fn finite_diff_grad(spec: &LossSpec, fv: &Matrix, targets: &Targets, h: f64) -> Result<Matrix> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::Argument(format!("step h={h} outside [1e-8, 1e-3]")));
    }
    let mut probe = fv.clone();
    let mut grad = Matrix::zeros(fv.rows(), fv.cols());
    for r in 0..fv.rows() {
        for c in 0..fv.cols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + h;
            let plus = evaluate(spec, &probe, targets)?.value;
            probe[(r, c)] = orig - h;
            let minus = evaluate(spec, &probe, targets)?.value;
            probe[(r, c)] = orig;
            grad[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Relative disagreement |a - b| / max(|a| + |b|, 1e-8), zero when both are
/// zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = (a.abs() + b.abs()).max(1e-8);
    (a - b).abs() / denom
}
