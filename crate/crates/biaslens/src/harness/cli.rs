//! Command-line interface. Exit codes: 0 success, 1 validation or usage
//! problems, 2 I/O and file-format failures.

use super::checkpoint::load_checkpoint;
use super::config::{ExperimentConfig, Overrides};
use super::runner::{
    capture_similarity, load_records, run_experiment, run_single, write_similarity_artifacts,
};
use super::selftest;
use super::table::emit_table;
use crate::cka::SimilarityMatrix;
use crate::data::{generate, load_binary, save_binary, BiasSpec};
use crate::loss::LossKind;
use crate::{Error, Result};
use std::path::PathBuf;

const USAGE: &str = "usage: biaslens <command> [options]

commands:
  generate   write a synthetic biased dataset (--out names the file)
  train      train one objective on one seed and persist its artifacts
  sweep      run every configured objective x seed, emit table and heatmaps
  cka        recompute similarity artifacts from a saved run checkpoint
  report     rebuild the results table and heatmaps from persisted runs
  selftest   run the gradient and CKA verification suites

options:
  --config PATH        experiment config file (defaults apply without it)
  --out PATH           output directory (dataset file path for `generate`)
  --loss NAME          restrict to one objective: sce|bce|nll|l1|l2|sos
  --seed N             restrict to one seed
  --diversity R        override the bias-conflicting sample ratio
  --tau R              override the block-structure threshold
  --cka-batches N      override the number of CKA trace batches
  --cka-batch-size N   override the CKA trace batch size (0 = training batch)
";

struct Cli {
    command: String,
    config: Option<String>,
    out: Option<String>,
    loss: Option<String>,
    seed: Option<String>,
    diversity: Option<String>,
    tau: Option<String>,
    cka_batches: Option<String>,
    cka_batch_size: Option<String>,
}

fn parse_args(args: &[String]) -> std::result::Result<Cli, String> {
    let mut cli = Cli {
        command: String::new(),
        config: None,
        out: None,
        loss: None,
        seed: None,
        diversity: None,
        tau: None,
        cka_batches: None,
        cka_batch_size: None,
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if let Some(flag) = arg.strip_prefix("--") {
            let slot = match flag {
                "config" => &mut cli.config,
                "out" => &mut cli.out,
                "loss" => &mut cli.loss,
                "seed" => &mut cli.seed,
                "diversity" => &mut cli.diversity,
                "tau" => &mut cli.tau,
                "cka-batches" => &mut cli.cka_batches,
                "cka-batch-size" => &mut cli.cka_batch_size,
                "help" => return Err(String::new()),
                other => return Err(format!("unknown flag --{other}")),
            };
            match it.next() {
                Some(value) => *slot = Some(value.clone()),
                None => return Err(format!("--{flag} needs a value")),
            }
        } else if arg == "-h" {
            return Err(String::new());
        } else if cli.command.is_empty() {
            cli.command = arg.clone();
        } else {
            return Err(format!("unexpected argument `{arg}`"));
        }
    }
    if cli.command.is_empty() {
        return Err("no command given".to_string());
    }
    Ok(cli)
}

fn parse_flag<T: std::str::FromStr>(name: &str, value: &Option<String>) -> Result<Option<T>> {
    match value {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Argument(format!("--{name}: cannot parse `{v}`"))),
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        out: cli.out.as_ref().map(PathBuf::from),
        loss: match &cli.loss {
            Some(name) => Some(LossKind::parse(name)?),
            None => None,
        },
        seed: parse_flag("seed", &cli.seed)?,
        diversity: parse_flag("diversity", &cli.diversity)?,
        tau: parse_flag("tau", &cli.tau)?,
        cka_batches: parse_flag("cka-batches", &cli.cka_batches)?,
        cka_batch_size: parse_flag("cka-batch-size", &cli.cka_batch_size)?,
    };
    cfg.apply(&overrides);
    Ok(cfg)
}

fn dataset_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<crate::data::BiasedDataset> {
    match &cfg.dataset_file {
        Some(file) => load_binary(file),
        None => generate(&BiasSpec { seed, ..cfg.data }),
    }
}

fn cmd_generate(cli: &Cli) -> Result<i32> {
    let cfg = build_config(cli)?;
    cfg.data.validate()?;
    let path = cli.out.clone().unwrap_or_else(|| "dataset.bin".to_string());
    let ds = generate(&cfg.data)?;
    save_binary(&ds, &path)?;
    println!(
        "wrote {path}: {} classes, {}x{} images, splits {}/{}/{}/{} (diversity {})",
        ds.spec.num_classes,
        ds.spec.height,
        ds.spec.width,
        ds.train.len(),
        ds.val.len(),
        ds.test_aligned.len(),
        ds.test_conflicting.len(),
        ds.spec.diversity_ratio,
    );
    Ok(0)
}

fn cmd_train(cli: &Cli) -> Result<i32> {
    let cfg = build_config(cli)?;
    cfg.validate()?;
    let loss = cfg.losses[0];
    let seed = cfg.seeds[0];
    let ds = dataset_for_seed(&cfg, seed)?;
    let record = run_single(&cfg, loss, seed, &ds)?;
    println!(
        "loss={} seed={} aligned={:.4} conflicting={:.4} mixed={:.4} epochs={} stop={}",
        record.loss,
        record.seed,
        record.acc_aligned,
        record.acc_conflicting,
        record.acc_mixed,
        record.epochs_run,
        record.stop_reason,
    );
    println!(
        "block_score={:.4} progressive_score={:.4} artifacts={}",
        record.structure.block_score,
        record.structure.progressive_score,
        cfg.out_dir.join(loss.name()).join(seed.to_string()).display(),
    );
    Ok(0)
}

fn cmd_sweep(cli: &Cli) -> Result<i32> {
    let cfg = build_config(cli)?;
    let records = run_experiment(&cfg)?;
    println!(
        "{} runs complete under {}",
        records.len(),
        cfg.out_dir.display()
    );
    print!("{}", std::fs::read_to_string(cfg.out_dir.join("results_table.txt")).unwrap_or_default());
    Ok(0)
}

fn cmd_cka(cli: &Cli) -> Result<i32> {
    let cfg = build_config(cli)?;
    cfg.validate()?;
    let loss = cfg.losses[0];
    let seed = cfg.seeds[0];
    let run_dir = cfg.out_dir.join(loss.name()).join(seed.to_string());
    let checkpoint = run_dir.join("checkpoint.bin");
    let (_preset, mut net) = load_checkpoint(&checkpoint)?;
    let ds = dataset_for_seed(&cfg, seed)?;
    let sim = capture_similarity(&mut net, &ds, &cfg, seed)?;
    let structure = write_similarity_artifacts(&sim, cfg.cka.tau, &run_dir)?;
    println!(
        "sim_matrix={} block_score={:.4} progressive_score={:.4}",
        run_dir.join("sim_matrix.txt").display(),
        structure.block_score,
        structure.progressive_score,
    );
    Ok(0)
}

fn cmd_report(cli: &Cli) -> Result<i32> {
    let cfg = build_config(cli)?;
    let records = load_records(&cfg.out_dir)?;
    for record in &records {
        let text = std::fs::read_to_string(&record.sim_matrix)
            .map_err(|e| Error::io(&record.sim_matrix, e))?;
        let sim = SimilarityMatrix::from_text(&text)?;
        let dir = record.sim_matrix.parent().unwrap_or_else(|| std::path::Path::new("."));
        super::heatmap::emit_heatmap(&sim, dir.join("heatmap.ppm"))?;
    }
    let table = emit_table(&records, &cfg.out_dir)?;
    print!("{table}");
    Ok(0)
}

fn cmd_selftest() -> Result<i32> {
    let suites = selftest::run_all();
    let mut all_ok = true;
    for suite in &suites {
        println!("{suite}");
        all_ok &= suite.ok();
    }
    if all_ok {
        println!("selftest passed");
        Ok(0)
    } else {
        println!("selftest FAILED");
        Ok(1)
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    match cli.command.as_str() {
        "generate" => cmd_generate(cli),
        "train" => cmd_train(cli),
        "sweep" => cmd_sweep(cli),
        "cka" => cmd_cka(cli),
        "report" => cmd_report(cli),
        "selftest" => cmd_selftest(),
        other => {
            eprintln!("unknown command `{other}`\n{USAGE}");
            Ok(1)
        }
    }
}

/// Entry point used by the binary: takes the full argument list (including
/// the program name) and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let args: Vec<String> = args.into_iter().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(message) if message.is_empty() => {
            println!("{USAGE}");
            return 0;
        }
        Err(message) => {
            eprintln!("{message}\n{USAGE}");
            return 1;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
