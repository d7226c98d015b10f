//! Evaluates all six training objectives on the same batch of logits and
//! targets, printing each value and gradient norm. Highlights the exact
//! SCE ≡ NLL identity and the effect of the rescaled squared objective's
//! (α, β) parameters.
//!
//! Run with: cargo run --example loss_gallery

use biaslens::loss::{evaluate, LossKind, LossSpec, Targets, ALL_LOSS_KINDS};
use biaslens::matrix::Matrix;
use biaslens::rng::Rng;

fn main() {
    let mut rng = Rng::new(3);
    let logits = Matrix::from_fn(4, 5, |_, _| rng.uniform(-2.0, 2.0).unwrap());
    let labels: Vec<usize> = (0..4).map(|_| rng.index(5)).collect();
    let targets = Targets::from_labels(&labels, 5).expect("labels in range");

    println!("{:<6} {:>12} {:>14}", "loss", "value", "|grad|");
    for kind in ALL_LOSS_KINDS {
        let spec = LossSpec::new(kind);
        let out = evaluate(&spec, &logits, &targets).expect("shapes agree");
        println!("{:<6} {:>12.6} {:>14.6e}", kind, out.value, out.grad.frob_norm());
    }

    let sce = evaluate(&LossSpec::new(LossKind::Sce), &logits, &targets).unwrap();
    let nll = evaluate(&LossSpec::new(LossKind::Nll), &logits, &targets).unwrap();
    println!("\n|sce - nll| = {:.3e} (identical by construction)", (sce.value - nll.value).abs());

    println!("\nrescaled squared objective at different (α, β):");
    for (alpha, beta) in [(1.0, 1.0), (3.0, 2.0), (0.5, 4.0)] {
        let spec = LossSpec::with_sos_params(alpha, beta).expect("α > 0");
        let out = evaluate(&spec, &logits, &targets).unwrap();
        println!("  α={alpha:<4} β={beta:<4} value {:>10.6}", out.value);
    }
}
