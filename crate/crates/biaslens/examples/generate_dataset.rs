//! Builds a small biased dataset, summarizes its splits, and shows how far a
//! color-only shortcut gets on each test split. Also round-trips the dataset
//! through its binary file format.
//!
//! Run with: cargo run --example generate_dataset

use biaslens::data::{color_only_baseline, generate, load_binary, save_binary, BiasSpec};

fn main() {
    let spec = BiasSpec {
        num_classes: 5,
        height: 12,
        width: 12,
        diversity_ratio: 0.05,
        train_count: 600,
        val_count: 150,
        test_count: 250,
        seed: 11,
    };
    let ds = generate(&spec).expect("spec is valid");

    println!(
        "dataset: {} classes, {}x{} px, diversity {}",
        spec.num_classes, spec.height, spec.width, spec.diversity_ratio
    );
    for (name, split) in ds.splits() {
        let conflicting = split.iter().filter(|s| !s.aligned).count();
        println!(
            "  {:<17} {:>5} samples, {:>4} bias-conflicting",
            name,
            split.len(),
            conflicting
        );
    }

    // A classifier that only looks at mean color nails the aligned split and
    // collapses to chance on the conflicting one: the color is the shortcut.
    let (aligned, conflicting) = color_only_baseline(&ds).expect("all classes present");
    println!("color-only baseline: aligned {aligned:.4}, conflicting {conflicting:.4}");
    println!("chance level: {:.4}", 1.0 / spec.num_classes as f64);

    let path = std::env::temp_dir().join("biaslens_example_dataset.bin");
    save_binary(&ds, &path).expect("temp dir is writable");
    let reloaded = load_binary(&path).expect("file was just written");
    assert_eq!(reloaded, ds);
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("round-tripped through {} ({} bytes)", path.display(), bytes);
    let _ = std::fs::remove_file(&path);
}
