//! Experiment orchestration: configuration files, the sweep runner that
//! crosses objectives with seeds, artifact persistence (checkpoints,
//! similarity grids, heatmaps), the results table, and the command-line
//! interface.
//!
//! Every run writes into `<out>/<loss>/<seed>/` the files `report.txt`
//! (key = value run record), `sim_matrix.txt` (similarity text grid),
//! `structure.txt` (structure scores), `heatmap.ppm` (P6 image), and
//! `checkpoint.bin` (parameter dump). The sweep finishes by writing
//! `results_table.txt` and `results_table.csv` at the output root, and the
//! `report` subcommand can rebuild both, plus the heatmaps, from the
//! persisted artifacts alone.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod heatmap;
pub mod runner;
pub mod selftest;
pub mod table;

pub use config::{CkaConfig, ExperimentConfig, Overrides};
pub use runner::{run_experiment, run_single, RunRecord};
