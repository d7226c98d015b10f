//! End-to-end verification battery. Each criterion prints one PASS/FAIL line
//! (run with `--nocapture` to see them live); the test fails if any criterion
//! fails. All tolerances are pinned here as literals.

use std::path::Path;
use std::time::Instant;

use biaslens::cka::{cka_full, cka_minibatch, structure_report, SimilarityMatrix};
use biaslens::data::{color_only_baseline, generate, BiasSpec};
use biaslens::harness::heatmap::render_heatmap;
use biaslens::harness::selftest::{
    cka_suite, identity_suite, loss_gradient_suite, network_gradient_suite,
};
use biaslens::harness::{run_experiment, ExperimentConfig, RunRecord};
use biaslens::loss::{LossKind, ALL_LOSS_KINDS};
use biaslens::matrix::Matrix;
use biaslens::rng::Rng;

struct Outcome {
    name: &'static str,
    pass: bool,
}

fn check(
    outcomes: &mut Vec<Outcome>,
    name: &'static str,
    run: impl FnOnce() -> Result<String, String>,
) {
    let (pass, detail) = match run() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    outcomes.push(Outcome { name, pass });
}

fn gradient_suite() -> Result<String, String> {
    let started = Instant::now();
    let losses = loss_gradient_suite();
    let params = network_gradient_suite();
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "losses {}/{} (worst {:.2e}), params {}/{} (worst {:.2e}), {:.1}s",
        losses.passed, losses.total, losses.worst, params.passed, params.total, params.worst,
        secs
    );
    if losses.total != 600 || !losses.ok() {
        return Err(format!("loss gradient failures: {detail}"));
    }
    if params.total != 6 || !params.ok() {
        return Err(format!("parameter gradient failures: {detail}"));
    }
    if secs >= 60.0 {
        return Err(format!("over the 60 s budget: {detail}"));
    }
    Ok(detail)
}

fn sce_nll_identity() -> Result<String, String> {
    let suite = identity_suite();
    let detail =
        format!("{}/{} points (worst {:.2e})", suite.passed, suite.total, suite.worst);
    if suite.total != 1000 || !suite.ok() || suite.worst > 1e-12 {
        return Err(detail);
    }
    Ok(detail)
}

fn cka_properties() -> Result<String, String> {
    let started = Instant::now();
    let suite = cka_suite();
    let secs = started.elapsed().as_secs_f64();
    let detail =
        format!("{}/{} checks (worst {:.2e}), {:.1}s", suite.passed, suite.total, suite.worst, secs);
    if !suite.ok() || suite.worst > 1e-10 {
        return Err(detail);
    }
    if secs >= 30.0 {
        return Err(format!("over the 30 s budget: {detail}"));
    }
    Ok(detail)
}

fn minibatch_consistency() -> Result<String, String> {
    let (n, d) = (1024, 16);
    let mut rng = Rng::new(0xACCE);
    let x = Matrix::from_fn(n, d, |_, _| rng.normal());
    let a = Matrix::from_fn(d, d, |_, _| rng.normal());
    let noise = Matrix::from_fn(n, d, |_, _| 0.1 * rng.normal());
    let y = x.matmul(&a).unwrap().add(&noise).unwrap();
    let full = cka_full(&x, &y).map_err(|e| e.to_string())?;

    let mut total = 0.0;
    for _ in 0..10 {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let take = |m: &Matrix, b: usize| {
            Matrix::from_fn(256, d, |i, j| m[(order[b * 256 + i], j)])
        };
        let xs: Vec<Matrix> = (0..4).map(|b| take(&x, b)).collect();
        let ys: Vec<Matrix> = (0..4).map(|b| take(&y, b)).collect();
        let mb = cka_minibatch(&xs, &ys).map_err(|e| e.to_string())?;
        total += (mb - full).abs();
    }
    let avg = total / 10.0;
    let detail = format!("full {full:.4}, mean |mini-batch − full| {avg:.2e} (bound 0.05)");
    if avg > 0.05 {
        return Err(detail);
    }
    Ok(detail)
}

fn bias_oracle() -> Result<String, String> {
    let spec = BiasSpec {
        num_classes: 10,
        height: 16,
        width: 16,
        diversity_ratio: 0.05,
        train_count: 5000,
        val_count: 1000,
        test_count: 1000,
        seed: 1,
    };
    let ds = generate(&spec).map_err(|e| e.to_string())?;
    let (aligned, conflicting) = color_only_baseline(&ds).map_err(|e| e.to_string())?;
    let chance_slack = 1.0 / spec.num_classes as f64 + 0.05;
    let detail = format!(
        "color-only baseline: aligned {aligned:.4} (≥ 0.95), conflicting {conflicting:.4} (≤ {chance_slack:.2})"
    );
    if aligned < 0.95 || conflicting > chance_slack {
        return Err(detail);
    }
    Ok(detail)
}

fn trend_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data = BiasSpec {
        num_classes: 10,
        height: 16,
        width: 16,
        diversity_ratio: 0.05,
        train_count: 5000,
        val_count: 1000,
        test_count: 1000,
        seed: 1,
    };
    cfg.network = "mini".to_string();
    cfg.losses = vec![LossKind::Sce];
    cfg.seeds = vec![1, 2, 3];
    cfg.cka.batch_size = 256;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn desk_trend(records_out: &mut Vec<RunRecord>) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = trend_config(dir.path());
    let started = Instant::now();
    let records = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();

    let mean = |f: &dyn Fn(&RunRecord) -> f64| {
        records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
    };
    let aligned = mean(&|r: &RunRecord| r.acc_aligned);
    let conflicting = mean(&|r: &RunRecord| r.acc_conflicting);

    let mut baseline_conflicting = 0.0;
    for &seed in &cfg.seeds {
        let ds = generate(&BiasSpec { seed, ..cfg.data }).map_err(|e| e.to_string())?;
        baseline_conflicting += color_only_baseline(&ds).map_err(|e| e.to_string())?.1;
    }
    baseline_conflicting /= cfg.seeds.len() as f64;

    let detail = format!(
        "sce×3 seeds: aligned {aligned:.4} (≥ 0.90), conflicting {conflicting:.4} \
         (> baseline {baseline_conflicting:.4}), {secs:.0}s (< 600)"
    );
    records_out.extend(records);
    if secs >= 600.0 || aligned < 0.90 || conflicting <= baseline_conflicting {
        return Err(detail);
    }
    Ok(detail)
}

fn sweep_config(out: &Path) -> ExperimentConfig {
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
    cfg.losses = ALL_LOSS_KINDS.to_vec();
    cfg.seeds = vec![1, 2, 3];
    cfg.schedule.batch_size = 32;
    cfg.schedule.max_epochs = 8;
    cfg.schedule.patience = 8;
    cfg.cka.batch_size = 32;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn run_dirs(cfg: &ExperimentConfig) -> Vec<std::path::PathBuf> {
    cfg.losses
        .iter()
        .flat_map(|loss| {
            cfg.seeds.iter().map(|seed| cfg.out_dir.join(loss.name()).join(seed.to_string()))
        })
        .collect()
}

fn full_sweep(sweep_dir: &Path) -> Result<String, String> {
    let cfg = sweep_config(sweep_dir);
    let started = Instant::now();
    let records = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    if records.len() != 18 {
        return Err(format!("expected 18 runs, got {}", records.len()));
    }
    for file in ["results_table.txt", "results_table.csv"] {
        if !sweep_dir.join(file).is_file() {
            return Err(format!("missing {file}"));
        }
    }
    let heatmaps =
        run_dirs(&cfg).iter().filter(|d| d.join("heatmap.ppm").is_file()).count();
    let detail = format!("18 runs, table emitted, {heatmaps}/18 heatmaps, {secs:.0}s");
    if heatmaps != 18 {
        return Err(detail);
    }
    Ok(detail)
}

fn structure_metrics(
    trend_records: &[RunRecord],
    sweep_dir: &Path,
) -> Result<String, String> {
    let names = |l: usize| (0..l).map(|i| format!("l{i}")).collect::<Vec<_>>();

    // Identity: no block clears τ, similarity decays perfectly with distance.
    let eye = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
    let identity = SimilarityMatrix::new(names(4), eye).map_err(|e| e.to_string())?;
    let r = structure_report(&identity, 0.9).map_err(|e| e.to_string())?;
    if r.block_score != 0.0 || r.progressive_score <= 0.0 {
        return Err(format!(
            "identity matrix: block {} progressive {}",
            r.block_score, r.progressive_score
        ));
    }

    // All ones: one full block, no rank trend among all-tied similarities.
    let ones =
        SimilarityMatrix::new(names(4), Matrix::from_fn(4, 4, |_, _| 1.0))
            .map_err(|e| e.to_string())?;
    let r = structure_report(&ones, 0.9).map_err(|e| e.to_string())?;
    if r.block_score != 1.0 || r.progressive_score != 0.0 {
        return Err(format!(
            "all-ones matrix: block {} progressive {}",
            r.block_score, r.progressive_score
        ));
    }

    // A 4-layer block of 0.95s at the tail of 10 layers, 0.2 elsewhere.
    let tail = Matrix::from_fn(10, 10, |i, j| {
        if i == j {
            1.0
        } else if i >= 6 && j >= 6 {
            0.95
        } else {
            0.2
        }
    });
    let tail = SimilarityMatrix::new(names(10), tail).map_err(|e| e.to_string())?;
    let r = structure_report(&tail, 0.9).map_err(|e| e.to_string())?;
    if r.block_score != 0.4 {
        return Err(format!("tail-block matrix: block {} (want exactly 0.4)", r.block_score));
    }

    // Every trained run must have emitted its structure report.
    let cfg = sweep_config(sweep_dir);
    let missing =
        run_dirs(&cfg).iter().filter(|d| !d.join("structure.txt").is_file()).count();
    if missing != 0 {
        return Err(format!("{missing} runs lack structure.txt"));
    }
    let trend: Vec<String> = trend_records
        .iter()
        .map(|r| format!("block {:.2}/prog {:.2}", r.structure.block_score, r.structure.progressive_score))
        .collect();
    Ok(format!("hand-built scores exact; trained runs reported: [{}]", trend.join(", ")))
}

fn determinism(first_sweep: &Path) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = sweep_config(dir.path());
    run_experiment(&cfg).map_err(|e| e.to_string())?;

    let mut compared = 0;
    for file in ["results_table.txt", "results_table.csv"] {
        let a = std::fs::read(first_sweep.join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join(file)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{file} differs between reruns"));
        }
        compared += 1;
    }
    for run in run_dirs(&cfg) {
        let rel = run.strip_prefix(dir.path()).unwrap();
        for file in ["heatmap.ppm", "sim_matrix.txt"] {
            let a = std::fs::read(first_sweep.join(rel).join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(run.join(file)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{}/{file} differs between reruns", rel.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} artifacts byte-identical across independent sweeps"))
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    let mut trend_records = Vec::new();
    let sweep_dir = tempfile::tempdir().unwrap();

    check(&mut outcomes, "gradient suite", gradient_suite);
    check(&mut outcomes, "sce/nll identity", sce_nll_identity);
    check(&mut outcomes, "cka properties", cka_properties);
    check(&mut outcomes, "mini-batch consistency", minibatch_consistency);
    check(&mut outcomes, "bias mechanism oracle", bias_oracle);
    check(&mut outcomes, "desk-scale trend", || desk_trend(&mut trend_records));
    check(&mut outcomes, "full sweep artifacts", || full_sweep(sweep_dir.path()));
    check(&mut outcomes, "structure metrics", || {
        structure_metrics(&trend_records, sweep_dir.path())
    });
    check(&mut outcomes, "determinism", || determinism(sweep_dir.path()));

    let failed: Vec<&str> =
        outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn heatmap_matches_golden() {
    let values = Matrix::from_fn(4, 4, |i, j| {
        if i == j {
            1.0
        } else {
            0.2 + 0.1 * (i + j) as f64
        }
    });
    let names = (0..4).map(|i| format!("l{i}")).collect();
    let sim = SimilarityMatrix::new(names, values).unwrap();
    let rendered = render_heatmap(&sim);
    let golden = std::fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/heatmap_4x4.ppm"
    ))
    .expect("golden heatmap present");
    assert_eq!(rendered, golden, "rendered heatmap deviates from the frozen golden bytes");
}
