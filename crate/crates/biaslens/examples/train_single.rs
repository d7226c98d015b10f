//! Trains the mini ResNet on a biased dataset with the standard cross-entropy
//! objective and reports the gap between bias-aligned and bias-conflicting
//! test accuracy — the shortcut-learning signature this library measures.
//!
//! Run with: cargo run --release --example train_single

use biaslens::data::{color_only_baseline, generate, to_labeled_set, BiasSpec};
use biaslens::loss::{LossKind, LossSpec};
use biaslens::nn::{evaluate, train, Network, NetworkConfig, TrainSchedule};
use biaslens::rng::Rng;

fn main() {
    let spec = BiasSpec {
        num_classes: 5,
        height: 16,
        width: 16,
        diversity_ratio: 0.05,
        train_count: 1500,
        val_count: 300,
        test_count: 500,
        seed: 1,
    };
    let ds = generate(&spec).expect("spec is valid");
    let train_set = to_labeled_set(&ds.train, spec.num_classes).unwrap();
    let val_set = to_labeled_set(&ds.val, spec.num_classes).unwrap();

    let config = NetworkConfig::mini_resnet((3, spec.height, spec.width), spec.num_classes);
    let mut net = Network::new(config, &mut Rng::stream(spec.seed, 1)).unwrap();
    let schedule = TrainSchedule { batch_size: 128, max_epochs: 15, ..TrainSchedule::default() };

    let started = std::time::Instant::now();
    let report =
        train(&mut net, &train_set, &val_set, &LossSpec::new(LossKind::Sce), &schedule).unwrap();
    println!("trained {} epochs in {:.1}s", report.epochs_run(), started.elapsed().as_secs_f64());
    for (i, e) in report.epochs.iter().enumerate() {
        println!("  epoch {:>2}: train loss {:.4}, val acc {:.4}", i, e.train_loss, e.val_accuracy);
    }
    println!("best epoch {} (val acc {:.4}), {}", report.best_epoch, report.best_val_accuracy, report.stop_reason);

    let aligned = to_labeled_set(&ds.test_aligned, spec.num_classes).unwrap();
    let conflicting = to_labeled_set(&ds.test_conflicting, spec.num_classes).unwrap();
    let acc_aligned = evaluate(&mut net, &aligned, schedule.batch_size).unwrap();
    let acc_conflicting = evaluate(&mut net, &conflicting, schedule.batch_size).unwrap();
    let (base_aligned, base_conflicting) = color_only_baseline(&ds).unwrap();

    println!("\n{:<22} {:>9} {:>12}", "", "aligned", "conflicting");
    println!("{:<22} {:>9.4} {:>12.4}", "network", acc_aligned, acc_conflicting);
    println!("{:<22} {:>9.4} {:>12.4}", "color-only baseline", base_aligned, base_conflicting);
    println!(
        "\nthe aligned/conflicting gap of {:.4} is the shortcut signature",
        acc_aligned - acc_conflicting
    );
}
