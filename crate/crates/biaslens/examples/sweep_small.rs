//! Runs a reduced objective×seed sweep end to end — dataset generation,
//! training, evaluation on both test splits, CKA capture, artifacts — and
//! prints the resulting results table.
//!
//! Run with: cargo run --release --example sweep_small

use biaslens::data::BiasSpec;
use biaslens::harness::{run_experiment, ExperimentConfig};
use biaslens::loss::LossKind;

fn main() {
    let out_dir = std::env::temp_dir().join("biaslens_sweep_small");
    let mut cfg = ExperimentConfig::default();
    cfg.data = BiasSpec {
        num_classes: 3,
        height: 12,
        width: 12,
        diversity_ratio: 0.1,
        train_count: 300,
        val_count: 90,
        test_count: 120,
        seed: 1,
    };
    cfg.network = "mini".to_string();
    cfg.losses = vec![LossKind::Sce, LossKind::L2, LossKind::Sos];
    cfg.seeds = vec![1, 2];
    cfg.schedule.batch_size = 32;
    cfg.schedule.max_epochs = 12;
    cfg.cka.batch_count = 4;
    cfg.cka.batch_size = 30;
    cfg.out_dir = out_dir.clone();

    let started = std::time::Instant::now();
    let records = run_experiment(&cfg).expect("sweep completes");
    println!(
        "{} runs in {:.1}s; artifacts under {}\n",
        records.len(),
        started.elapsed().as_secs_f64(),
        out_dir.display()
    );

    let table = std::fs::read_to_string(out_dir.join("results_table.txt")).unwrap();
    println!("{table}");
    println!("per-run artifacts: report.txt, sim_matrix.txt, structure.txt, heatmap.ppm, checkpoint.bin");
}
