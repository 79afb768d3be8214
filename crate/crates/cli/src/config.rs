//! Run configuration: flat `key = value` files, overridden by command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use patchcontour::bench::{DEFAULT_THRESHOLD_COUNT, DEFAULT_TOLERANCE};
use patchcontour::convnet::{Architecture, TrainConfig};
use patchcontour::dataset::DEFAULT_THRESHOLD;
use patchcontour::inference::VotingConfig;
use patchcontour::refine::RefineConfig;
use patchcontour::ScaleIndex;

/// A bad flag, config file or config value. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Every config key with its description, in the order the resolved config is logged.
pub const KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "seed for dataset balancing, weight init, shuffling and synthetic scenes [1]",
    ),
    (
        "corpus",
        "corpus root holding <split>/<id>.ppm and <split>/<id>.gt/<k>.pgm",
    ),
    (
        "label_threshold",
        "a 16x16 tile is a boundary sample when its averaged GT sum exceeds this [10]",
    ),
    (
        "arch",
        "layer recipe file; empty means the default two-layer network",
    ),
    ("learning_rate", "SGD learning rate [0.01]"),
    ("momentum", "SGD momentum in [0, 1) [0.9]"),
    ("batch_size", "mini-batch size [32]"),
    ("epochs", "training epochs [20]"),
    (
        "weight_init_std",
        "standard deviation of initial weights [0.1]",
    ),
    (
        "stop_at_accuracy",
        "stop once training accuracy reaches this, or 'none' [none]",
    ),
    ("stride", "voting window stride in pixels, 1..=16 [4]"),
    (
        "refine_scales",
        "comma-separated pyramid levels n (factor 2^n) summed by refinement [2]",
    ),
    ("refine_patch", "refinement tile side in pixels [8]"),
    ("refine_stride", "refinement tile stride in pixels [4]"),
    (
        "tolerance",
        "match distance as a fraction of the image diagonal [0.0075]",
    ),
    (
        "thresholds",
        "number of evenly spaced benchmark thresholds [33]",
    ),
    (
        "threads",
        "worker threads, 0 for one per core; 1 gives bit-reproducible runs [0]",
    ),
];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Config keys (file lines `key = value`, `#` comments; each key is also a flag, \
         e.g. --learning-rate; flags override the file):\n",
    );
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:width$}  {d}\n"));
    }
    s.push_str("\nExit codes: 0 success, 1 usage error, 2 data error, 3 internal error.");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub label_threshold: f64,
    pub arch: Option<PathBuf>,
    pub train: TrainConfig,
    pub voting: VotingConfig,
    pub refine: RefineConfig,
    pub tolerance: f64,
    pub thresholds: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: None,
            label_threshold: DEFAULT_THRESHOLD,
            arch: None,
            train: TrainConfig::default(),
            voting: VotingConfig::default(),
            refine: RefineConfig::default(),
            tolerance: DEFAULT_TOLERANCE,
            thresholds: DEFAULT_THRESHOLD_COUNT,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| format!("bad value '{v}' for {key}: {e}"))
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "corpus" => self.corpus = optional_path(v),
            "label_threshold" => self.label_threshold = parse(key, v)?,
            "arch" => self.arch = optional_path(v),
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "weight_init_std" => self.train.weight_init_std = parse(key, v)?,
            "stop_at_accuracy" => {
                self.train.stop_at_accuracy = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "stride" => self.voting.stride = parse(key, v)?,
            "refine_scales" => {
                self.refine.scales = v
                    .split(',')
                    .map(|s| parse(key, s.trim()).map(ScaleIndex))
                    .collect::<Result<_, _>>()?
            }
            "refine_patch" => self.refine.y_patch = parse(key, v)?,
            "refine_stride" => self.refine.y_stride = parse(key, v)?,
            "tolerance" => self.tolerance = parse(key, v)?,
            "thresholds" => self.thresholds = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            _ => return Err(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        match key {
            "seed" => self.seed.to_string(),
            "corpus" => path(&self.corpus),
            "label_threshold" => self.label_threshold.to_string(),
            "arch" => path(&self.arch),
            "learning_rate" => self.train.learning_rate.to_string(),
            "momentum" => self.train.momentum.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "weight_init_std" => self.train.weight_init_std.to_string(),
            "stop_at_accuracy" => self
                .train
                .stop_at_accuracy
                .map_or_else(|| "none".into(), |a| a.to_string()),
            "stride" => self.voting.stride.to_string(),
            "refine_scales" => self
                .refine
                .scales
                .iter()
                .map(|s| s.0.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "refine_patch" => self.refine.y_patch.to_string(),
            "refine_stride" => self.refine.y_stride.to_string(),
            "tolerance" => self.tolerance.to_string(),
            "thresholds" => self.thresholds.to_string(),
            "threads" => self.threads.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Apply a config file. Unknown and repeated keys are rejected.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected key = value", i + 1))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(format!("{origin}:{}: {key} is set twice", i + 1));
            }
            seen.push(key);
            self.set(key, value)
                .map_err(|e| format!("{origin}:{}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Copy the run seed into the training config and check every section.
    pub fn finish(&mut self) -> Result<(), String> {
        self.train.seed = self.seed;
        self.train.validate().map_err(|e| e.to_string())?;
        self.voting.validate().map_err(|e| e.to_string())?;
        self.refine.validate().map_err(|e| e.to_string())?;
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err("tolerance must be positive".into());
        }
        if self.thresholds == 0 {
            return Err("thresholds must be at least 1".into());
        }
        if let Some(a) = self.train.stop_at_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err("stop_at_accuracy must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn resolved_lines(&self) -> Vec<String> {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}", self.get(k)))
            .collect()
    }

    pub fn architecture(&self) -> anyhow::Result<Architecture> {
        match &self.arch {
            None => Ok(Architecture::default_two_layer()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read recipe {}: {e}", p.display())))?;
                Architecture::parse_recipe(&text)
                    .map_err(|e| usage(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// Config overrides accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
#[command(next_help_heading = "Config overrides")]
pub struct Overrides {
    /// Run seed
    #[arg(long, value_name = "N")]
    pub seed: Option<String>,
    /// Corpus root
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<String>,
    /// Tile labeling threshold
    #[arg(long, value_name = "X")]
    pub label_threshold: Option<String>,
    /// Layer recipe file
    #[arg(long, value_name = "FILE")]
    pub arch: Option<String>,
    /// SGD learning rate
    #[arg(long, value_name = "X")]
    pub learning_rate: Option<String>,
    /// SGD momentum
    #[arg(long, value_name = "X")]
    pub momentum: Option<String>,
    /// Mini-batch size
    #[arg(long, value_name = "N")]
    pub batch_size: Option<String>,
    /// Training epochs
    #[arg(long, value_name = "N")]
    pub epochs: Option<String>,
    /// Initial weight standard deviation
    #[arg(long, value_name = "X")]
    pub weight_init_std: Option<String>,
    /// Early-stop training accuracy, or 'none'
    #[arg(long, value_name = "X")]
    pub stop_at_accuracy: Option<String>,
    /// Voting stride
    #[arg(long, value_name = "N")]
    pub stride: Option<String>,
    /// Refinement pyramid levels, comma-separated
    #[arg(long, value_name = "LIST")]
    pub refine_scales: Option<String>,
    /// Refinement tile side
    #[arg(long, value_name = "N")]
    pub refine_patch: Option<String>,
    /// Refinement tile stride
    #[arg(long, value_name = "N")]
    pub refine_stride: Option<String>,
    /// Match tolerance (fraction of the diagonal)
    #[arg(long, value_name = "X")]
    pub tolerance: Option<String>,
    /// Number of benchmark thresholds
    #[arg(long, value_name = "N")]
    pub thresholds: Option<String>,
    /// Worker threads (0 = one per core)
    #[arg(long, value_name = "N")]
    pub threads: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("seed", &self.seed),
            ("corpus", &self.corpus),
            ("label_threshold", &self.label_threshold),
            ("arch", &self.arch),
            ("learning_rate", &self.learning_rate),
            ("momentum", &self.momentum),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("weight_init_std", &self.weight_init_std),
            ("stop_at_accuracy", &self.stop_at_accuracy),
            ("stride", &self.stride),
            ("refine_scales", &self.refine_scales),
            ("refine_patch", &self.refine_patch),
            ("refine_stride", &self.refine_stride),
            ("tolerance", &self.tolerance),
            ("thresholds", &self.thresholds),
            ("threads", &self.threads),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }
}

/// Defaults, then the config file (if any), then flags.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path).map_err(usage)?;
    }
    for (k, v) in overrides.pairs() {
        cfg.set(k, v)
            .map_err(|e| usage(format!("--{}: {e}", k.replace('_', "-"))))?;
    }
    cfg.finish().map_err(usage)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_get_and_set() {
        let base = RunConfig::default();
        for (k, _) in KEYS {
            let mut c = RunConfig::default();
            c.set(k, &base.get(k)).unwrap();
            assert_eq!(c, base, "{k}");
        }
    }

    #[test]
    fn overrides_cover_every_key() {
        let v = String::from("1");
        let o = Overrides {
            seed: Some(v.clone()),
            corpus: Some(v.clone()),
            label_threshold: Some(v.clone()),
            arch: Some(v.clone()),
            learning_rate: Some(v.clone()),
            momentum: Some(v.clone()),
            batch_size: Some(v.clone()),
            epochs: Some(v.clone()),
            weight_init_std: Some(v.clone()),
            stop_at_accuracy: Some(v.clone()),
            stride: Some(v.clone()),
            refine_scales: Some(v.clone()),
            refine_patch: Some(v.clone()),
            refine_stride: Some(v.clone()),
            tolerance: Some(v.clone()),
            thresholds: Some(v.clone()),
            threads: Some(v),
        };
        let keys: Vec<&str> = o.pairs().into_iter().map(|(k, _)| k).collect();
        let all: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, all);
    }

    #[test]
    fn file_values_then_flags() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nepochs = 3\n\nrefine_scales = 1, 2 # trailing\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.refine.scales, vec![ScaleIndex(1), ScaleIndex(2)]);
        c.set("epochs", "5").unwrap();
        assert_eq!(c.train.epochs, 5);
    }

    #[test]
    fn typos_and_bad_lines_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c
            .apply_text("learning_rat = 0.1", "t")
            .unwrap_err()
            .contains("unknown config key"));
        assert!(c.apply_text("epochs 3", "t").is_err());
        assert!(c.apply_text("epochs = three", "t").is_err());
        assert!(c
            .apply_text("epochs = 1\nepochs = 2", "t")
            .unwrap_err()
            .contains("twice"));
    }

    #[test]
    fn finish_validates_sections() {
        let mut c = RunConfig::default();
        c.voting.stride = 17;
        assert!(c.finish().is_err());
        let mut c = RunConfig::default();
        c.seed = 42;
        c.finish().unwrap();
        assert_eq!(c.train.seed, 42);
    }
}
