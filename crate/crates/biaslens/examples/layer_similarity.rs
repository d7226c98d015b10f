//! Trains a small network briefly, captures per-layer activations on held-out
//! batches, and reduces them to a layer×layer CKA similarity matrix with its
//! block / progressive structure scores and a rendered heatmap.
//!
//! Run with: cargo run --release --example layer_similarity

use biaslens::cka::{layer_similarity, structure_report};
use biaslens::data::{generate, to_labeled_set, BiasSpec};
use biaslens::harness::heatmap::emit_heatmap;
use biaslens::loss::{LossKind, LossSpec};
use biaslens::nn::{train, Mode, Network, NetworkConfig, TrainSchedule};
use biaslens::rng::Rng;

fn main() {
    let spec = BiasSpec {
        num_classes: 4,
        height: 12,
        width: 12,
        diversity_ratio: 0.1,
        train_count: 400,
        val_count: 100,
        test_count: 200,
        seed: 5,
    };
    let ds = generate(&spec).expect("spec is valid");
    let train_set = to_labeled_set(&ds.train, spec.num_classes).unwrap();
    let val_set = to_labeled_set(&ds.val, spec.num_classes).unwrap();

    let config = NetworkConfig::mini_resnet((3, spec.height, spec.width), spec.num_classes);
    let mut net = Network::new(config, &mut Rng::stream(spec.seed, 1)).unwrap();
    let schedule = TrainSchedule { batch_size: 64, max_epochs: 4, ..TrainSchedule::default() };
    train(&mut net, &train_set, &val_set, &LossSpec::new(LossKind::Sce), &schedule).unwrap();

    // Capture eval-mode traces on batches drawn from both test splits.
    net.set_mode(Mode::Eval);
    let pool: Vec<_> = ds.test_aligned.iter().chain(ds.test_conflicting.iter()).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    Rng::stream(spec.seed, 99).shuffle(&mut order);
    let mut traces = Vec::new();
    for batch_rows in order.chunks(32).take(4) {
        let batch = to_labeled_set(batch_rows.iter().map(|&i| pool[i]), spec.num_classes).unwrap();
        let (_, trace) = net.forward(&batch.images, true).unwrap();
        traces.push(trace.expect("capture was requested"));
    }

    let sim = layer_similarity(&traces).unwrap();
    println!("CKA similarity across {} captured layers:", sim.len());
    for (i, name) in sim.layer_names().iter().enumerate() {
        let row: Vec<String> =
            (0..sim.len()).map(|j| format!("{:.2}", sim.get(i, j))).collect();
        println!("  {:<12} {}", name, row.join(" "));
    }

    let report = structure_report(&sim, 0.9).unwrap();
    println!("\nblock_score       = {:.4}", report.block_score);
    println!("progressive_score = {:.4}", report.progressive_score);

    let path = std::env::temp_dir().join("biaslens_layer_similarity.ppm");
    emit_heatmap(&sim, &path).unwrap();
    println!("heatmap written to {}", path.display());
}
