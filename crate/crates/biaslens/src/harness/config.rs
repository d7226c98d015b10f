//! Plain-text experiment configuration: `key = value` lines grouped under
//! `[section]` headers, `#` starting a comment anywhere on a line. Unknown
//! sections or keys are errors, so typos cannot silently fall back to
//! defaults. Every key has a default; an empty (or absent) file is a valid,
//! fully specified experiment.

use crate::cka::DEFAULT_TAU;
use crate::data::BiasSpec;
use crate::loss::{LossKind, ALL_LOSS_KINDS};
use crate::nn::{NetworkConfig, TrainSchedule};
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Mini-batch CKA settings: how many trace batches to capture and how large
/// each is (0 = reuse the training batch size), plus the block threshold τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkaConfig {
    pub batch_count: usize,
    pub batch_size: usize,
    pub tau: f64,
}

impl Default for CkaConfig {
    fn default() -> CkaConfig {
        CkaConfig { batch_count: 4, batch_size: 0, tau: DEFAULT_TAU }
    }
}

/// Everything a sweep needs. `data.seed` seeds only the standalone `generate`
/// command; sweep runs regenerate the dataset from each run seed so that all
/// objectives see identical data at a given seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: BiasSpec,
    /// When set, load this dataset file instead of generating per seed.
    pub dataset_file: Option<PathBuf>,
    pub network: String,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    pub schedule: TrainSchedule,
    pub sos_alpha: f64,
    pub sos_beta: f64,
    pub cka: CkaConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            data: BiasSpec::default(),
            dataset_file: None,
            network: "mini".to_string(),
            losses: ALL_LOSS_KINDS.to_vec(),
            seeds: vec![1, 2, 3],
            schedule: TrainSchedule::default(),
            sos_alpha: 1.0,
            sos_beta: 1.0,
            cka: CkaConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line values that override whatever the config file said.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub loss: Option<LossKind>,
    pub seed: Option<u64>,
    pub diversity: Option<f64>,
    pub tau: Option<f64>,
    pub cka_batches: Option<usize>,
    pub cka_batch_size: Option<usize>,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key}: cannot parse `{value}`"))
    })
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                if !["data", "network", "train", "cka", "experiment", "output"]
                    .contains(&section.as_str())
                {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(&section, key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("data", "num_classes") => self.data.num_classes = parse_num(section, key, value)?,
            ("data", "height") => self.data.height = parse_num(section, key, value)?,
            ("data", "width") => self.data.width = parse_num(section, key, value)?,
            ("data", "diversity") => self.data.diversity_ratio = parse_num(section, key, value)?,
            ("data", "train_count") => self.data.train_count = parse_num(section, key, value)?,
            ("data", "val_count") => self.data.val_count = parse_num(section, key, value)?,
            ("data", "test_count") => self.data.test_count = parse_num(section, key, value)?,
            ("data", "seed") => self.data.seed = parse_num(section, key, value)?,
            ("data", "file") => self.dataset_file = Some(PathBuf::from(value)),
            ("network", "preset") => self.network = value.to_string(),
            ("train", "losses") | ("experiment", "losses") => {
                let mut losses = Vec::new();
                for part in value.split(',') {
                    losses.push(LossKind::parse(part.trim())?);
                }
                self.losses = losses;
            }
            ("train", "seeds") | ("experiment", "seeds") => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_num::<u64>(section, key, part.trim())?);
                }
                self.seeds = seeds;
            }
            ("train", "batch_size") => self.schedule.batch_size = parse_num(section, key, value)?,
            ("train", "max_epochs") => self.schedule.max_epochs = parse_num(section, key, value)?,
            ("train", "patience") => self.schedule.patience = parse_num(section, key, value)?,
            ("train", "lr") => self.schedule.lr = parse_num(section, key, value)?,
            ("train", "weight_decay") => {
                self.schedule.weight_decay = parse_num(section, key, value)?
            }
            ("train", "sos_alpha") => self.sos_alpha = parse_num(section, key, value)?,
            ("train", "sos_beta") => self.sos_beta = parse_num(section, key, value)?,
            ("cka", "batches") => self.cka.batch_count = parse_num(section, key, value)?,
            ("cka", "batch_size") => self.cka.batch_size = parse_num(section, key, value)?,
            ("cka", "tau") => self.cka.tau = parse_num(section, key, value)?,
            ("output", "dir") => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` in section [{section}]"
                )))
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(out) = &ov.out {
            self.out_dir = out.clone();
        }
        if let Some(loss) = ov.loss {
            self.losses = vec![loss];
        }
        if let Some(seed) = ov.seed {
            self.seeds = vec![seed];
            self.data.seed = seed;
        }
        if let Some(d) = ov.diversity {
            self.data.diversity_ratio = d;
        }
        if let Some(t) = ov.tau {
            self.cka.tau = t;
        }
        if let Some(n) = ov.cka_batches {
            self.cka.batch_count = n;
        }
        if let Some(n) = ov.cka_batch_size {
            self.cka.batch_size = n;
        }
    }

    /// The CKA trace batch size actually used: the explicit one, or the
    /// training batch size when left at 0.
    pub fn cka_batch_size(&self) -> usize {
        if self.cka.batch_size == 0 {
            self.schedule.batch_size
        } else {
            self.cka.batch_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.schedule.validate()?;
        if self.losses.is_empty() {
            return Err(Error::Config("need at least one loss".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        for (i, loss) in self.losses.iter().enumerate() {
            if self.losses[..i].contains(loss) {
                return Err(Error::Config(format!("duplicate loss `{loss}`")));
            }
        }
        for (i, seed) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(seed) {
                return Err(Error::Config(format!(
                    "duplicate seed {seed} (runs would share a directory)"
                )));
            }
        }
        let shape = (crate::data::CHANNELS, self.data.height, self.data.width);
        NetworkConfig::by_name(&self.network, shape, self.data.num_classes)?.validate()?;
        if self.sos_alpha <= 0.0 || !self.sos_alpha.is_finite() || !self.sos_beta.is_finite() {
            return Err(Error::Config(format!(
                "sos_alpha must be positive and finite (got {}), sos_beta finite (got {})",
                self.sos_alpha, self.sos_beta
            )));
        }
        if self.cka.batch_count == 0 {
            return Err(Error::Config("cka batches must be ≥ 1".into()));
        }
        let n_b = self.cka_batch_size();
        if n_b < 4 {
            return Err(Error::Config(format!(
                "cka batch size {n_b} too small for the HSIC estimator (need ≥ 4)"
            )));
        }
        if !(0.0 < self.cka.tau && self.cka.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0,1), got {}", self.cka.tau)));
        }
        // Trace batches are drawn without replacement from the union of the
        // two test splits; for generated data its size is known up front.
        if self.dataset_file.is_none() {
            let pool = 2 * self.data.test_count;
            if self.cka.batch_count * n_b > pool {
                return Err(Error::Config(format!(
                    "cka needs {} × {n_b} samples but the mixed test pool has only {pool}",
                    self.cka.batch_count
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_the_default_config() {
        let cfg = ExperimentConfig::from_text("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn full_config_round_trips_every_section() {
        let text = "
# experiment settings
[data]
num_classes = 4
height = 8
width = 8
diversity = 0.1   # ten percent conflicting
train_count = 200
val_count = 80
test_count = 64
seed = 9

[network]
preset = micro

[train]
losses = sce, l2
seeds = 5, 6
batch_size = 32
max_epochs = 3
patience = 2
lr = 0.01
weight_decay = 0.0001
sos_alpha = 2.0
sos_beta = 0.5

[cka]
batches = 2
batch_size = 16
tau = 0.8

[output]
dir = /tmp/somewhere
";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.data.num_classes, 4);
        assert_eq!(cfg.data.diversity_ratio, 0.1);
        assert_eq!(cfg.network, "micro");
        assert_eq!(cfg.losses, vec![LossKind::Sce, LossKind::L2]);
        assert_eq!(cfg.seeds, vec![5, 6]);
        assert_eq!(cfg.schedule.batch_size, 32);
        assert_eq!(cfg.schedule.lr, 0.01);
        assert_eq!(cfg.sos_alpha, 2.0);
        assert_eq!(cfg.cka.batch_count, 2);
        assert_eq!(cfg.cka.tau, 0.8);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/somewhere"));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected_with_line_numbers() {
        let err = ExperimentConfig::from_text("[data]\nnum_classs = 10\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(ExperimentConfig::from_text("[nope]\n").is_err());
        assert!(ExperimentConfig::from_text("key_without_section = 1\n").is_err());
        assert!(ExperimentConfig::from_text("[train]\nlosses = sce, nonsense\n").is_err());
    }

    #[test]
    fn overrides_replace_config_values()
    {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            out: Some(PathBuf::from("elsewhere")),
            loss: Some(LossKind::L1),
            seed: Some(42),
            diversity: Some(0.2),
            tau: Some(0.7),
            cka_batches: Some(8),
            cka_batch_size: Some(64),
        });
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.losses, vec![LossKind::L1]);
        assert_eq!(cfg.seeds, vec![42]);
        assert_eq!(cfg.data.seed, 42);
        assert_eq!(cfg.data.diversity_ratio, 0.2);
        assert_eq!(cfg.cka.tau, 0.7);
        assert_eq!(cfg.cka.batch_count, 8);
        assert_eq!(cfg.cka.batch_size, 64);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let base = ExperimentConfig::default;
        let mut dup = base();
        dup.seeds = vec![1, 1];
        assert!(dup.validate().is_err());
        let mut dup_loss = base();
        dup_loss.losses = vec![LossKind::Sce, LossKind::Sce];
        assert!(dup_loss.validate().is_err());
        let mut no_loss = base();
        no_loss.losses.clear();
        assert!(no_loss.validate().is_err());
        let mut bad_net = base();
        bad_net.network = "resnet152".into();
        assert!(bad_net.validate().is_err());
        let mut greedy_cka = base();
        greedy_cka.cka.batch_count = 1000;
        assert!(greedy_cka.validate().is_err());
        let mut bad_tau = base();
        bad_tau.cka.tau = 1.5;
        assert!(bad_tau.validate().is_err());
        let mut tiny_cka = base();
        tiny_cka.cka.batch_size = 2;
        assert!(tiny_cka.validate().is_err());
    }

    #[test]
    fn cka_batch_size_inherits_from_training() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.cka_batch_size(), cfg.schedule.batch_size);
        cfg.cka.batch_size = 128;
        assert_eq!(cfg.cka_batch_size(), 128);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            ExperimentConfig::load("/nonexistent/biaslens.cfg"),
            Err(Error::Io { .. })
        ));
    }
}
