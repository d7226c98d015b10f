//! Sweep execution: one run per (objective, seed), artifact persistence, and
//! the parallel scheduler.
//!
//! Determinism contract: a run's result is a pure function of the experiment
//! config, the loss kind, and the seed. At a given seed every objective sees
//! the same generated dataset and the same network initialization (so
//! representational differences are attributable to the objective alone);
//! training shuffles and CKA batch selection derive from the run seed through
//! fixed stream constants. Parallel scheduling cannot perturb any of this:
//! workers only pop task indices and write into disjoint slots.

use super::checkpoint::save_checkpoint;
use super::config::ExperimentConfig;
use super::heatmap::emit_heatmap;
use super::table::emit_table;
use crate::cka::{layer_similarity, structure_report, SimilarityMatrix, StructureReport};
use crate::data::{generate, load_binary, to_labeled_set, BiasSpec, BiasedDataset, BiasedSample};
use crate::loss::{LossKind, LossSpec};
use crate::nn::{evaluate, train, Network, NetworkConfig, StopReason};
use crate::rng::Rng;
use crate::{Error, Result};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// Stream id for network initialization; a function of the seed only, so all
/// objectives start from identical weights at a given seed.
const NETWORK_STREAM: u64 = 0x4E45;
/// Stream id for CKA trace batch selection.
const CKA_STREAM: u64 = 0x434B;

/// Everything a single run produced. Persisted as `report.txt` in the run
/// directory and reloadable from it without loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub loss: LossKind,
    pub seed: u64,
    pub acc_aligned: f64,
    pub acc_conflicting: f64,
    pub acc_mixed: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stop_reason: StopReason,
    pub structure: StructureReport,
    pub wall_time_s: f64,
    /// Path of the persisted similarity grid. Reports store only its file
    /// name; parsing resolves that name against the report's directory.
    pub sim_matrix: PathBuf,
}

impl RunRecord {
    pub fn to_report_text(&self) -> String {
        // Only the file name is written so reports stay byte-identical
        // across output directories.
        let sim_name = self.sim_matrix.file_name().map_or_else(
            || self.sim_matrix.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        format!(
            "loss = {}\nseed = {}\nacc_aligned = {}\nacc_conflicting = {}\nacc_mixed = {}\n\
             epochs_run = {}\nbest_epoch = {}\nbest_val_accuracy = {}\nstop_reason = {}\n\
             block_score = {}\nprogressive_score = {}\ntau = {}\nwall_time_s = {}\n\
             sim_matrix = {}\n",
            self.loss,
            self.seed,
            self.acc_aligned,
            self.acc_conflicting,
            self.acc_mixed,
            self.epochs_run,
            self.best_epoch,
            self.best_val_accuracy,
            self.stop_reason,
            self.structure.block_score,
            self.structure.progressive_score,
            self.structure.tau,
            self.wall_time_s,
            sim_name,
        )
    }

    /// Parses the `key = value` form written by [`RunRecord::to_report_text`].
    /// Relative `sim_matrix` paths are resolved against `dir`.
    pub fn from_report_text(text: &str, dir: &Path) -> Result<RunRecord> {
        let mut fields = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!("report line {}: expected `key = value`", lineno + 1))
            })?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut take = |key: &str| {
            fields
                .remove(key)
                .ok_or_else(|| Error::Data(format!("report is missing `{key}`")))
        };
        let parse_f64 = |key: &str, v: String| {
            v.parse::<f64>()
                .map_err(|_| Error::Data(format!("report `{key}`: cannot parse `{v}`")))
        };
        let parse_usize = |key: &str, v: String| {
            v.parse::<usize>()
                .map_err(|_| Error::Data(format!("report `{key}`: cannot parse `{v}`")))
        };

        let loss = LossKind::parse(&take("loss")?)?;
        let seed = {
            let v = take("seed")?;
            v.parse::<u64>().map_err(|_| Error::Data(format!("report `seed`: `{v}`")))?
        };
        let acc_aligned = parse_f64("acc_aligned", take("acc_aligned")?)?;
        let acc_conflicting = parse_f64("acc_conflicting", take("acc_conflicting")?)?;
        let acc_mixed = parse_f64("acc_mixed", take("acc_mixed")?)?;
        let epochs_run = parse_usize("epochs_run", take("epochs_run")?)?;
        let best_epoch = parse_usize("best_epoch", take("best_epoch")?)?;
        let best_val_accuracy = parse_f64("best_val_accuracy", take("best_val_accuracy")?)?;
        let stop_reason = StopReason::parse(&take("stop_reason")?)?;
        let structure = StructureReport {
            block_score: parse_f64("block_score", take("block_score")?)?,
            progressive_score: parse_f64("progressive_score", take("progressive_score")?)?,
            tau: parse_f64("tau", take("tau")?)?,
        };
        let wall_time_s = parse_f64("wall_time_s", take("wall_time_s")?)?;
        let sim_raw = PathBuf::from(take("sim_matrix")?);
        let sim_matrix =
            if sim_raw.is_absolute() { sim_raw } else { dir.join(sim_raw) };
        if let Some(extra) = fields.into_keys().next() {
            return Err(Error::Data(format!("report has unknown key `{extra}`")));
        }
        for (name, acc) in [
            ("acc_aligned", acc_aligned),
            ("acc_conflicting", acc_conflicting),
            ("acc_mixed", acc_mixed),
        ] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Data(format!("report `{name}` = {acc} outside [0,1]")));
            }
        }
        Ok(RunRecord {
            loss,
            seed,
            acc_aligned,
            acc_conflicting,
            acc_mixed,
            epochs_run,
            best_epoch,
            best_val_accuracy,
            stop_reason,
            structure,
            wall_time_s,
            sim_matrix,
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Captures eval-mode activation traces on mini-batches drawn without
/// replacement from the union of the two test splits, shuffled by a stream of
/// the run seed, and reduces them to a similarity matrix.
pub fn capture_similarity(
    net: &mut Network,
    ds: &BiasedDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SimilarityMatrix> {
    let n_b = cfg.cka_batch_size();
    let wanted = cfg.cka.batch_count * n_b;
    let pool: Vec<&BiasedSample> =
        ds.test_aligned.iter().chain(ds.test_conflicting.iter()).collect();
    if wanted > pool.len() {
        return Err(Error::Argument(format!(
            "cka needs {wanted} samples but the mixed test pool has only {}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    Rng::stream(seed, CKA_STREAM).shuffle(&mut order);

    let mut traces = Vec::with_capacity(cfg.cka.batch_count);
    for b in 0..cfg.cka.batch_count {
        let chunk = &order[b * n_b..(b + 1) * n_b];
        let batch = to_labeled_set(chunk.iter().map(|&i| pool[i]), ds.spec.num_classes)?;
        let (_, trace) = net.forward(&batch.images, true)?;
        traces.push(trace.expect("capture requested"));
    }
    layer_similarity(&traces)
}

/// Persists the similarity grid, structure scores and heatmap into `dir`.
///
/// The structure report and heatmap are computed from the *reparsed* text
/// grid, not the in-memory matrix: nine significant digits do not round-trip
/// f64 exactly, and regenerating artifacts later from `sim_matrix.txt` (the
/// `report` and `cka` paths) must reproduce them byte for byte.
pub fn write_similarity_artifacts(
    sim: &SimilarityMatrix,
    tau: f64,
    dir: &Path,
) -> Result<StructureReport> {
    let text = sim.to_text();
    write_text(&dir.join("sim_matrix.txt"), &text)?;
    let reparsed = SimilarityMatrix::from_text(&text)?;
    let structure = structure_report(&reparsed, tau)?;
    write_text(
        &dir.join("structure.txt"),
        &format!(
            "block_score = {}\nprogressive_score = {}\ntau = {}\n",
            structure.block_score, structure.progressive_score, structure.tau
        ),
    )?;
    emit_heatmap(&reparsed, dir.join("heatmap.ppm"))?;
    Ok(structure)
}

/// Trains one (objective, seed) run on the given dataset and persists its
/// artifacts under `<out>/<loss>/<seed>/`.
pub fn run_single(
    cfg: &ExperimentConfig,
    loss: LossKind,
    seed: u64,
    ds: &BiasedDataset,
) -> Result<RunRecord> {
    let started = std::time::Instant::now();
    let run_dir = cfg.out_dir.join(loss.name()).join(seed.to_string());
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let num_classes = ds.spec.num_classes;
    let shape = (crate::data::CHANNELS, ds.spec.height, ds.spec.width);
    let net_config = NetworkConfig::by_name(&cfg.network, shape, num_classes)?;
    let mut net = Network::new(net_config, &mut Rng::stream(seed, NETWORK_STREAM))?;

    let train_set = to_labeled_set(&ds.train, num_classes)?;
    let val_set = to_labeled_set(&ds.val, num_classes)?;
    let spec = match loss {
        LossKind::Sos => LossSpec::with_sos_params(cfg.sos_alpha, cfg.sos_beta)?,
        other => LossSpec::new(other),
    };
    let mut schedule = cfg.schedule.clone();
    schedule.seed = seed;
    let report = train(&mut net, &train_set, &val_set, &spec, &schedule)?;

    let aligned_set = to_labeled_set(&ds.test_aligned, num_classes)?;
    let conflicting_set = to_labeled_set(&ds.test_conflicting, num_classes)?;
    let mixed_set = to_labeled_set(
        ds.test_aligned.iter().chain(ds.test_conflicting.iter()),
        num_classes,
    )?;
    let acc_aligned = evaluate(&mut net, &aligned_set, schedule.batch_size)?;
    let acc_conflicting = evaluate(&mut net, &conflicting_set, schedule.batch_size)?;
    let acc_mixed = evaluate(&mut net, &mixed_set, schedule.batch_size)?;

    let sim = capture_similarity(&mut net, ds, cfg, seed)?;
    let structure = write_similarity_artifacts(&sim, cfg.cka.tau, &run_dir)?;
    save_checkpoint(&cfg.network, &mut net, run_dir.join("checkpoint.bin"))?;

    let record = RunRecord {
        loss,
        seed,
        acc_aligned,
        acc_conflicting,
        acc_mixed,
        epochs_run: report.epochs_run(),
        best_epoch: report.best_epoch,
        best_val_accuracy: report.best_val_accuracy,
        stop_reason: report.stop_reason,
        structure,
        wall_time_s: started.elapsed().as_secs_f64(),
        sim_matrix: run_dir.join("sim_matrix.txt"),
    };
    write_text(&run_dir.join("report.txt"), &record.to_report_text())?;
    Ok(record)
}

/// Builds (or loads) the dataset for each seed. Generated datasets use the
/// run seed directly, so every objective at that seed trains on identical
/// data; a configured dataset file is shared by all seeds.
fn datasets_for(cfg: &ExperimentConfig) -> Result<Vec<Arc<BiasedDataset>>> {
    if let Some(file) = &cfg.dataset_file {
        let ds = Arc::new(load_binary(file)?);
        return Ok(vec![ds; cfg.seeds.len()]);
    }
    cfg.seeds
        .iter()
        .map(|&seed| Ok(Arc::new(generate(&BiasSpec { seed, ..cfg.data })?)))
        .collect()
}

fn worker_count(tasks: usize) -> usize {
    let configured = std::env::var("BIASLENS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    let available =
        std::thread::available_parallelism().map(std::num::NonZeroUsize::get).unwrap_or(1);
    configured.unwrap_or(available).min(tasks.max(1))
}

/// Runs the full sweep: every configured objective × seed, in parallel up to
/// `BIASLENS_THREADS` workers, then writes the results table. Returns records
/// in (loss, seed) config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    // Fail on an unwritable output directory before any training happens.
    let probe = cfg.out_dir.join(".write_probe");
    std::fs::write(&probe, b"ok").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;

    let datasets = datasets_for(cfg)?;
    let tasks: Vec<(LossKind, u64, Arc<BiasedDataset>)> = cfg
        .losses
        .iter()
        .flat_map(|&loss| {
            cfg.seeds.iter().zip(&datasets).map(move |(&seed, ds)| (loss, seed, ds.clone()))
        })
        .collect();

    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let workers = worker_count(tasks.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let (loss, seed, ds) = &tasks[i];
                let outcome = run_single(cfg, *loss, *seed, ds);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut records = Vec::with_capacity(tasks.len());
    for slot in results.into_inner().unwrap() {
        records.push(slot.expect("worker filled every slot")?);
    }
    emit_table(&records, &cfg.out_dir)?;
    Ok(records)
}

/// Loads every persisted run record under `out_dir`, in canonical loss order
/// with seeds ascending.
pub fn load_records(out_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for loss in crate::loss::ALL_LOSS_KINDS {
        let loss_dir = out_dir.join(loss.name());
        if !loss_dir.is_dir() {
            continue;
        }
        let mut seeds = Vec::new();
        let entries = std::fs::read_dir(&loss_dir).map_err(|e| Error::io(&loss_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&loss_dir, e))?;
            if let Some(seed) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                if entry.path().join("report.txt").is_file() {
                    seeds.push(seed);
                }
            }
        }
        seeds.sort_unstable();
        for seed in seeds {
            let dir = loss_dir.join(seed.to_string());
            let path = dir.join("report.txt");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            records.push(RunRecord::from_report_text(&text, &dir)?);
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("no run records under {}", out_dir.display())));
    }
    Ok(records)
}
