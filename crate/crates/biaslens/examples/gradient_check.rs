//! Verifies analytic gradients against central finite differences: first each
//! objective's gradient in logit space, then every trainable parameter of the
//! miniature network under each objective.
//!
//! Run with: cargo run --example gradient_check

use biaslens::loss::{
    evaluate, finite_diff_grad, rel_err, LossSpec, Targets, ALL_LOSS_KINDS,
};
use biaslens::matrix::Matrix;
use biaslens::nn::{param_grad_check, Network, NetworkConfig};
use biaslens::rng::Rng;

fn main() {
    let mut rng = Rng::new(17);
    let logits = Matrix::from_fn(3, 4, |_, _| rng.uniform(-2.0, 2.0).unwrap());
    let labels: Vec<usize> = (0..3).map(|_| rng.index(4)).collect();
    let targets = Targets::from_labels(&labels, 4).expect("labels in range");

    println!("logit-space gradients vs central differences (h = 1e-6):");
    for kind in ALL_LOSS_KINDS {
        let spec = LossSpec::new(kind);
        let analytic = evaluate(&spec, &logits, &targets).unwrap().grad;
        let numeric = finite_diff_grad(&spec, &logits, &targets, 1e-6).unwrap();
        let worst = analytic
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .map(|(&a, &b)| rel_err(a, b))
            .fold(0.0, f64::max);
        println!("  {:<4} worst rel err {:.3e}", kind, worst);
    }

    println!("\nparameter gradients through the miniature network (h = 1e-5):");
    let config = NetworkConfig::micro((3, 6, 6), 3);
    for kind in ALL_LOSS_KINDS {
        let mut net_rng = Rng::stream(17, kind as u64);
        let mut net = Network::new(config.clone(), &mut net_rng).unwrap();
        let batch = Matrix::from_fn(4, 3 * 6 * 6, |_, _| net_rng.uniform(0.0, 1.0).unwrap());
        let labels: Vec<usize> = (0..4).map(|_| net_rng.index(3)).collect();
        let targets = Targets::from_labels(&labels, 3).unwrap();
        let worst =
            param_grad_check(&mut net, &batch, &targets, &LossSpec::new(kind), 1e-5).unwrap();
        println!("  {:<4} worst rel err {:.3e}", kind, worst);
    }
}
