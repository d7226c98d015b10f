//! Built-in verification suites, runnable in production via the `selftest`
//! subcommand: finite-difference gradient checks for every objective, the
//! same checks through the full network, the CKA property battery against a
//! naive HSIC implementation, and the softmax-cross-entropy /
//! negative-log-likelihood identity.

use crate::cka::{cka_full, gram_linear, hsic_unbiased, Gram};
use crate::loss::{
    evaluate, finite_diff_grad, rel_err, softmax, LossKind, LossSpec, Targets, ALL_LOSS_KINDS,
};
use crate::matrix::Matrix;
use crate::nn::{param_grad_check, Network, NetworkConfig};
use crate::rng::Rng;

const SELFTEST_SEED: u64 = 0xB145;
const POINTS_PER_LOSS: usize = 100;

/// Outcome of one suite: how many of its checks passed and the worst
/// deviation any check observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub worst: f64,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {}/{} passed (worst deviation {:.3e})",
            self.name, self.passed, self.total, self.worst
        )
    }
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(lo, hi).unwrap())
}

fn random_targets(rng: &mut Rng, rows: usize, num_classes: usize) -> Targets {
    let labels: Vec<usize> = (0..rows).map(|_| rng.index(num_classes)).collect();
    Targets::from_labels(&labels, num_classes).unwrap()
}

/// True when any softmax output sits within 1e-3 of its target, i.e. near the
/// L1 objective's non-differentiable kink.
fn near_l1_kink(logits: &Matrix, targets: &Targets) -> bool {
    let probs = softmax(logits);
    let one_hot = targets.one_hot();
    probs
        .as_slice()
        .iter()
        .zip(one_hot.as_slice())
        .any(|(p, y)| (p - y).abs() <= 1e-3)
}

/// True when some gradient component is too small for a centered difference
/// at h=1e-6 to resolve: the difference quotient carries ≈|value|·ε/h ≈ 1e-10
/// of roundoff, so components below ~1e-4 drown in it long before the 1e-6
/// relative tolerance is meaningful.
fn ill_conditioned(grad: &Matrix) -> bool {
    grad.as_slice().iter().any(|g| g.abs() < 2e-4)
}

/// Analytic-vs-numeric gradient agreement for every objective at 100 seeded
/// logit/target draws each. Tolerance 1e-6, relaxed to 1e-5 for the L1
/// objective whose draws are resampled away from its kink; draws whose
/// gradient has a component the difference quotient cannot resolve are
/// resampled the same way. The scaled variant is checked at α=3, β=2 so the
/// rescaling itself is exercised.
pub fn loss_gradient_suite() -> SuiteResult {
    let (n, c) = (2, 5);
    let h = 1e-6;
    let mut passed = 0;
    let mut total = 0;
    let mut worst = 0.0_f64;
    for (li, kind) in ALL_LOSS_KINDS.iter().enumerate() {
        let spec = match kind {
            LossKind::Sos => LossSpec::with_sos_params(3.0, 2.0).unwrap(),
            other => LossSpec::new(*other),
        };
        let tol = if *kind == LossKind::L1 { 1e-5 } else { 1e-6 };
        let mut rng = Rng::stream(SELFTEST_SEED, li as u64);
        for _ in 0..POINTS_PER_LOSS {
            let mut tries = 0;
            let (analytic, logits, targets) = loop {
                let logits = random_matrix(&mut rng, n, c, -2.0, 2.0);
                let targets = random_targets(&mut rng, n, c);
                let analytic = evaluate(&spec, &logits, &targets).unwrap().grad;
                tries += 1;
                let kink = *kind == LossKind::L1 && near_l1_kink(&logits, &targets);
                if tries >= 1000 || (!kink && !ill_conditioned(&analytic)) {
                    break (analytic, logits, targets);
                }
            };
            let numeric = finite_diff_grad(&spec, &logits, &targets, h).unwrap();
            let err = analytic
                .as_slice()
                .iter()
                .zip(numeric.as_slice())
                .map(|(&a, &b)| rel_err(a, b))
                .fold(0.0, f64::max);
            worst = worst.max(err);
            total += 1;
            if err <= tol {
                passed += 1;
            }
        }
    }
    SuiteResult { name: "loss_gradients", passed, total, worst }
}

/// A finite difference at step h crosses a ReLU kink when some pre-activation
/// sits within h·(its sensitivity to the perturbed parameter) of zero,
/// turning the secant into a chord over the elbow. In the micro net only the
/// first conv feeds a ReLU, so a draw is acceptable once every conv output
/// clears zero by a wide multiple of h.
fn clear_of_relu_kinks(net: &mut Network, batch: &Matrix, margin: f64) -> bool {
    let (_, trace) = net.forward(batch, true).unwrap();
    let trace = trace.unwrap();
    let pre = trace.get("conv1").unwrap();
    pre.as_slice().iter().all(|v| v.abs() > margin)
}

/// Finite-difference check of every trainable parameter of the miniature
/// network under each objective, at tolerance 1e-5. Draws that park a ReLU
/// input within 5e-4 of its kink are resampled, for the same reason the L1
/// suite stays off that objective's kink.
pub fn network_gradient_suite() -> SuiteResult {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    let config = NetworkConfig::by_name("micro", (3, 6, 6), 3).unwrap();
    for kind in ALL_LOSS_KINDS {
        let mut rng = Rng::stream(SELFTEST_SEED, 100 + kind as u64);
        let (mut net, batch, targets) = loop {
            let mut net = Network::new(config.clone(), &mut rng).unwrap();
            let batch = random_matrix(&mut rng, 4, 3 * 6 * 6, 0.0, 1.0);
            let targets = random_targets(&mut rng, 4, 3);
            if clear_of_relu_kinks(&mut net, &batch, 5e-4) {
                break (net, batch, targets);
            }
        };
        let err = param_grad_check(&mut net, &batch, &targets, &LossSpec::new(kind), 1e-5)
            .unwrap();
        worst = worst.max(err);
        if err <= 1e-5 {
            passed += 1;
        }
    }
    SuiteResult { name: "network_gradients", passed, total: ALL_LOSS_KINDS.len(), worst }
}

/// Straightforward HSIC₁ that materializes the zero-diagonal matrices and a
/// full matrix product, as an independent oracle for the streaming form.
fn naive_hsic(k: &Gram, l: &Gram) -> f64 {
    let n = k.n();
    let nf = n as f64;
    let kt = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { k.values()[(i, j)] });
    let lt = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { l.values()[(i, j)] });
    let trace: f64 = (0..n).map(|i| (0..n).map(|j| kt[(i, j)] * lt[(j, i)]).sum::<f64>()).sum();
    let sum_k: f64 = kt.as_slice().iter().sum();
    let sum_l: f64 = lt.as_slice().iter().sum();
    let cross: f64 = kt.matmul(&lt).unwrap().as_slice().iter().sum();
    (trace + sum_k * sum_l / ((nf - 1.0) * (nf - 2.0)) - 2.0 * cross / (nf - 2.0))
        / (nf * (nf - 3.0))
}

fn gram_schmidt(rng: &mut Rng, d: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for prev in &rows {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in &mut v {
                *vi /= norm;
            }
            rows.push(v);
        }
    }
    Matrix::from_fn(d, d, |i, j| rows[i][j])
}

/// CKA property battery: self-similarity, HSIC argument symmetry, orthogonal
/// and isotropic-scaling invariance (all at 1e-10 or tighter), and agreement
/// of the unbiased HSIC with its naive oracle at n = 8.
pub fn cka_suite() -> SuiteResult {
    let mut passed = 0;
    let mut total = 0;
    let mut worst = 0.0_f64;
    let mut check = |deviation: f64, tol: f64| {
        worst = worst.max(deviation);
        total += 1;
        if deviation <= tol {
            passed += 1;
        }
    };

    for draw in 0..5u64 {
        let mut rng = Rng::stream(SELFTEST_SEED, 200 + draw);
        let x = Matrix::from_fn(12, 4, |_, _| rng.normal());
        let y = Matrix::from_fn(12, 4, |_, _| rng.normal());

        check((cka_full(&x, &x).unwrap() - 1.0).abs(), 1e-10);

        let q = gram_schmidt(&mut rng, 4);
        let base = cka_full(&x, &y).unwrap();
        check((cka_full(&x, &y.matmul(&q).unwrap()).unwrap() - base).abs(), 1e-10);
        for c in [1e-3, 1e3] {
            check((cka_full(&x, &y.scale(c)).unwrap() - base).abs(), 1e-10);
        }

        let small = Matrix::from_fn(8, 5, |i, j| x[(i % 12, j % 4)] + 0.1 * j as f64);
        let other = Matrix::from_fn(8, 3, |i, j| y[(i % 12, j % 4)] * (1.0 + j as f64));
        let (k, l) = (gram_linear(&small), gram_linear(&other));
        let fast = hsic_unbiased(&k, &l).unwrap();
        check((fast - hsic_unbiased(&l, &k).unwrap()).abs(), 1e-12);
        check((fast - naive_hsic(&k, &l)).abs(), 1e-10);
    }
    SuiteResult { name: "cka_properties", passed, total, worst }
}

/// Agreement of the two cross-entropy formulations at 1000 random inputs:
/// values and gradients must match to 1e-12.
pub fn identity_suite() -> SuiteResult {
    let (n, c) = (3, 6);
    let mut rng = Rng::stream(SELFTEST_SEED, 300);
    let sce = LossSpec::new(LossKind::Sce);
    let nll = LossSpec::new(LossKind::Nll);
    let mut passed = 0;
    let mut worst = 0.0_f64;
    let total = 1000;
    for _ in 0..total {
        let logits = random_matrix(&mut rng, n, c, -10.0, 10.0);
        let targets = random_targets(&mut rng, n, c);
        let a = evaluate(&sce, &logits, &targets).unwrap();
        let b = evaluate(&nll, &logits, &targets).unwrap();
        let mut dev = (a.value - b.value).abs();
        for (ga, gb) in a.grad.as_slice().iter().zip(b.grad.as_slice()) {
            dev = dev.max((ga - gb).abs());
        }
        worst = worst.max(dev);
        if dev <= 1e-12 {
            passed += 1;
        }
    }
    SuiteResult { name: "sce_nll_identity", passed, total, worst }
}

pub fn run_all() -> Vec<SuiteResult> {
    vec![loss_gradient_suite(), network_gradient_suite(), cka_suite(), identity_suite()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_completely() {
        for suite in run_all() {
            assert!(suite.ok(), "{suite}");
        }
    }

    #[test]
    fn suite_results_format_with_counts() {
        let r = SuiteResult { name: "demo", passed: 3, total: 4, worst: 0.25 };
        assert_eq!(r.to_string(), "demo: 3/4 passed (worst deviation 2.500e-1)");
        assert!(!r.ok());
    }
}
