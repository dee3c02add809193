//! Experiment configuration: a flat `key = value` file format with `#`
//! comments and cosmetic `[section]` headers, plus command-line overrides.
//!
//! Unknown keys are rejected with a nearest-key suggestion so typos surface
//! immediately. `emit` renders a config that parses back to an identical
//! value, which is what makes re-runs byte-reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fedqs_core::client::SimilarityKind;
use fedqs_core::datagen::CsvSchema;
use fedqs_core::engine::{CostModel, Hyper, Mode, SimConfig, Strategy};
use fedqs_core::numcore::ModelSpec;
use fedqs_core::{Error, Result};

/// Which classifier the experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogReg,
    Mlp,
}

/// Where the experiment's data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

/// How the source data is spread over clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionKind {
    Iid,
    Dirichlet,
    LogNormal,
}

/// Everything a run needs: protocol shape, hyperparameters, dataset,
/// partition, and output destination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub agg_updates: usize,
    pub rounds: u64,
    pub local_epochs: u32,
    pub strategy: Strategy,
    pub mode: Mode,
    pub speed_ratio: f64,
    pub activation: Option<usize>,
    pub seed: u64,

    pub lr_init: f64,
    pub lr_adjust_rate: f64,
    pub momentum_base: f64,
    pub momentum_gain: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub momentum_cap: f64,
    pub clip_bound: f64,
    pub spread_threshold: f64,
    pub similarity: SimilarityKind,
    pub momentum_carryover: bool,
    pub use_momentum: bool,
    pub use_feedback: bool,
    /// Synchronous-mode global learning rate; defaults to `lr_init`.
    pub eta_g: Option<f64>,

    pub model: ModelKind,
    pub hidden_dim: usize,

    pub dataset: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub class_sep: f64,
    pub noise_sd: f64,
    pub test_per_class: usize,
    pub csv_path: String,
    pub csv_features: Vec<String>,
    pub csv_label: String,
    pub csv_categorical: BTreeMap<String, Vec<String>>,
    /// Fraction of CSV rows held out as the test set.
    pub test_fraction: f64,

    pub partition: PartitionKind,
    pub dirichlet_x: f64,
    pub lognormal_sigma: f64,
    pub train_fraction: f64,

    pub repeats: usize,
    pub target_fraction: f64,
    pub out_dir: String,
    pub run_id: String,
}

impl Default for ExperimentConfig {
    /// Paper-scale protocol defaults with a desk-scale synthetic dataset.
    fn default() -> Self {
        ExperimentConfig {
            num_clients: 100,
            agg_updates: 10,
            rounds: 400,
            local_epochs: 2,
            strategy: Strategy::FedQsSgd,
            mode: Mode::Safl,
            speed_ratio: 50.0,
            activation: None,
            seed: 42,

            lr_init: 0.1,
            lr_adjust_rate: 0.002,
            momentum_base: 0.1,
            momentum_gain: 0.2,
            lr_min: 0.001,
            lr_max: 0.2,
            momentum_cap: 0.9,
            clip_bound: 20.0,
            spread_threshold: 0.2,
            similarity: SimilarityKind::Cosine,
            momentum_carryover: false,
            use_momentum: true,
            use_feedback: true,
            eta_g: None,

            model: ModelKind::LogReg,
            hidden_dim: 16,

            dataset: DatasetKind::Synthetic,
            classes: 10,
            dim: 20,
            per_class: 200,
            class_sep: 2.5,
            noise_sd: 1.0,
            test_per_class: 100,
            csv_path: String::new(),
            csv_features: Vec::new(),
            csv_label: String::new(),
            csv_categorical: BTreeMap::new(),
            test_fraction: 0.2,

            partition: PartitionKind::Dirichlet,
            dirichlet_x: 0.5,
            lognormal_sigma: 1.0,
            train_fraction: 0.8,

            repeats: 1,
            target_fraction: 0.95,
            out_dir: "out".to_string(),
            run_id: "run".to_string(),
        }
    }
}

impl ExperimentConfig {
    /// The preset baseline: small enough that a full comparison grid runs in
    /// seconds while keeping the heterogeneity structure intact.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            num_clients: 20,
            agg_updates: 4,
            rounds: 150,
            speed_ratio: 10.0,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "target_fraction must be in (0, 1], got {}",
                self.target_fraction
            )));
        }
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(Error::Config(format!(
                "run_id '{}' must be nonempty and filesystem-safe ([A-Za-z0-9._-])",
                self.run_id
            )));
        }
        if self.dataset == DatasetKind::Csv {
            if self.csv_path.is_empty() {
                return Err(Error::Config("csv dataset needs csv_path".into()));
            }
            if self.csv_features.is_empty() || self.csv_label.is_empty() {
                return Err(Error::Config(
                    "csv dataset needs csv_features and csv_label".into(),
                ));
            }
            if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "test_fraction must be in (0, 1), got {}",
                    self.test_fraction
                )));
            }
        }
        // Protocol-shape checks mirror the engine's so bad configs fail in
        // the config phase with exit code 1.
        if self.agg_updates == 0 || self.agg_updates > self.num_clients {
            return Err(Error::Config(format!(
                "agg_updates = {} must be in [1, num_clients = {}]",
                self.agg_updates, self.num_clients
            )));
        }
        if self.mode == Mode::Sync && self.strategy.is_fedqs() {
            return Err(Error::Config(
                "FedQS strategies run in SAFL mode only; pick mode = safl or a baseline strategy"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Engine configuration for one repeat.
    pub fn sim_config(&self, seed: u64, model: ModelSpec) -> SimConfig {
        SimConfig {
            num_clients: self.num_clients,
            agg_updates: self.agg_updates,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            strategy: self.strategy,
            mode: self.mode,
            model,
            speed_ratio: self.speed_ratio,
            hyper: Hyper {
                lr_init: self.lr_init,
                lr_adjust_rate: self.lr_adjust_rate,
                momentum_base: self.momentum_base,
                momentum_gain: self.momentum_gain,
                lr_min: self.lr_min,
                lr_max: self.lr_max,
                momentum_cap: self.momentum_cap,
                clip_bound: self.clip_bound,
                spread_threshold: self.spread_threshold,
                sim_kind: self.similarity,
                momentum_carryover: self.momentum_carryover,
                use_momentum: self.use_momentum,
                use_feedback: self.use_feedback,
                eta_g: self.eta_g.unwrap_or(self.lr_init),
            },
            cost: CostModel::default(),
            seed,
            activation: self.activation,
            validate: true,
        }
    }

    /// Model spec against the prepared data's shape.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model {
            ModelKind::LogReg => ModelSpec::LogReg {
                input_dim,
                num_classes,
            },
            ModelKind::Mlp => ModelSpec::Mlp {
                input_dim,
                hidden_dim: self.hidden_dim,
                num_classes,
            },
        }
    }

    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            feature_columns: self.csv_features.clone(),
            label_column: self.csv_label.clone(),
            categorical: self.csv_categorical.clone(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "num_clients",
    "agg_updates",
    "rounds",
    "local_epochs",
    "strategy",
    "mode",
    "speed_ratio",
    "activation",
    "seed",
    "lr_init",
    "lr_adjust_rate",
    "momentum_base",
    "momentum_gain",
    "lr_min",
    "lr_max",
    "momentum_cap",
    "clip_bound",
    "spread_threshold",
    "similarity",
    "momentum_carryover",
    "momentum",
    "feedback",
    "eta_g",
    "model",
    "hidden_dim",
    "dataset",
    "classes",
    "dim",
    "per_class",
    "class_sep",
    "noise_sd",
    "test_per_class",
    "csv_path",
    "csv_features",
    "csv_label",
    "csv_categorical",
    "test_fraction",
    "partition",
    "dirichlet_x",
    "lognormal_sigma",
    "train_fraction",
    "repeats",
    "target_fraction",
    "out_dir",
    "run_id",
];

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

fn nearest_key(key: &str) -> &'static str {
    KNOWN_KEYS
        .iter()
        .min_by_key(|candidate| levenshtein(key, candidate))
        .expect("key list is nonempty")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{}': cannot parse '{}' as {}", key, value, what)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "key '{}': cannot parse '{}' as a boolean (use on/off)",
            key, value
        ))),
    }
}

pub fn parse_strategy(value: &str) -> Result<Strategy> {
    Ok(match value.to_ascii_lowercase().as_str() {
        "fedqs-sgd" => Strategy::FedQsSgd,
        "fedqs-avg" => Strategy::FedQsAvg,
        "fedsgd" => Strategy::FedSgd,
        "fedavg" => Strategy::FedAvg,
        _ => {
            return Err(Error::Config(format!(
                "unknown strategy '{}' (expected fedqs-sgd, fedqs-avg, fedsgd, or fedavg)",
                value
            )))
        }
    })
}

pub fn parse_mode(value: &str) -> Result<Mode> {
    Ok(match value.to_ascii_lowercase().as_str() {
        "safl" => Mode::Safl,
        "sync" => Mode::Sync,
        _ => {
            return Err(Error::Config(format!(
                "unknown mode '{}' (expected safl or sync)",
                value
            )))
        }
    })
}

fn parse_similarity(value: &str) -> Result<SimilarityKind> {
    Ok(match value.to_ascii_lowercase().as_str() {
        "cosine" => SimilarityKind::Cosine,
        "euclidean" => SimilarityKind::Euclidean,
        "manhattan" => SimilarityKind::Manhattan,
        _ => {
            return Err(Error::Config(format!(
                "unknown similarity '{}' (expected cosine, euclidean, or manhattan)",
                value
            )))
        }
    })
}

fn parse_categorical(value: &str) -> Result<BTreeMap<String, Vec<String>>> {
    // Format: column:cat|cat|cat;column:cat|cat
    let mut map = BTreeMap::new();
    for entry in value.split(';').filter(|e| !e.is_empty()) {
        let (column, categories) = entry.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "csv_categorical entry '{}' must look like column:cat|cat",
                entry
            ))
        })?;
        let categories: Vec<String> = categories.split('|').map(str::to_string).collect();
        if categories.iter().any(String::is_empty) {
            return Err(Error::Config(format!(
                "csv_categorical column '{}' has an empty category",
                column
            )));
        }
        map.insert(column.to_string(), categories);
    }
    Ok(map)
}

/// Apply one `key = value` assignment to the config.
pub fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "num_clients" => cfg.num_clients = parse_num(key, value, "an integer")?,
        "agg_updates" => cfg.agg_updates = parse_num(key, value, "an integer")?,
        "rounds" => cfg.rounds = parse_num(key, value, "an integer")?,
        "local_epochs" => cfg.local_epochs = parse_num(key, value, "an integer")?,
        "strategy" => cfg.strategy = parse_strategy(value)?,
        "mode" => cfg.mode = parse_mode(value)?,
        "speed_ratio" => cfg.speed_ratio = parse_num(key, value, "a number")?,
        "activation" => {
            cfg.activation = if value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(parse_num(key, value, "an integer")?)
            }
        }
        "seed" => cfg.seed = parse_num(key, value, "an integer")?,
        "lr_init" => cfg.lr_init = parse_num(key, value, "a number")?,
        "lr_adjust_rate" => cfg.lr_adjust_rate = parse_num(key, value, "a number")?,
        "momentum_base" => cfg.momentum_base = parse_num(key, value, "a number")?,
        "momentum_gain" => cfg.momentum_gain = parse_num(key, value, "a number")?,
        "lr_min" => cfg.lr_min = parse_num(key, value, "a number")?,
        "lr_max" => cfg.lr_max = parse_num(key, value, "a number")?,
        "momentum_cap" => cfg.momentum_cap = parse_num(key, value, "a number")?,
        "clip_bound" => cfg.clip_bound = parse_num(key, value, "a number")?,
        "spread_threshold" => cfg.spread_threshold = parse_num(key, value, "a number")?,
        "similarity" => cfg.similarity = parse_similarity(value)?,
        "momentum_carryover" => cfg.momentum_carryover = parse_bool(key, value)?,
        "momentum" => cfg.use_momentum = parse_bool(key, value)?,
        "feedback" => cfg.use_feedback = parse_bool(key, value)?,
        "eta_g" => {
            cfg.eta_g = if value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(parse_num(key, value, "a number")?)
            }
        }
        "model" => {
            cfg.model = match value.to_ascii_lowercase().as_str() {
                "logreg" => ModelKind::LogReg,
                "mlp" => ModelKind::Mlp,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown model '{}' (expected logreg or mlp)",
                        value
                    )))
                }
            }
        }
        "hidden_dim" => cfg.hidden_dim = parse_num(key, value, "an integer")?,
        "dataset" => {
            cfg.dataset = match value.to_ascii_lowercase().as_str() {
                "synthetic" => DatasetKind::Synthetic,
                "csv" => DatasetKind::Csv,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown dataset '{}' (expected synthetic or csv)",
                        value
                    )))
                }
            }
        }
        "classes" => cfg.classes = parse_num(key, value, "an integer")?,
        "dim" => cfg.dim = parse_num(key, value, "an integer")?,
        "per_class" => cfg.per_class = parse_num(key, value, "an integer")?,
        "class_sep" => cfg.class_sep = parse_num(key, value, "a number")?,
        "noise_sd" => cfg.noise_sd = parse_num(key, value, "a number")?,
        "test_per_class" => cfg.test_per_class = parse_num(key, value, "an integer")?,
        "csv_path" => cfg.csv_path = value.to_string(),
        "csv_features" => {
            cfg.csv_features = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        }
        "csv_label" => cfg.csv_label = value.to_string(),
        "csv_categorical" => cfg.csv_categorical = parse_categorical(value)?,
        "test_fraction" => cfg.test_fraction = parse_num(key, value, "a number")?,
        "partition" => {
            cfg.partition = match value.to_ascii_lowercase().as_str() {
                "iid" => PartitionKind::Iid,
                "dirichlet" => PartitionKind::Dirichlet,
                "lognormal" => PartitionKind::LogNormal,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown partition '{}' (expected iid, dirichlet, or lognormal)",
                        value
                    )))
                }
            }
        }
        "dirichlet_x" => cfg.dirichlet_x = parse_num(key, value, "a number")?,
        "lognormal_sigma" => cfg.lognormal_sigma = parse_num(key, value, "a number")?,
        "train_fraction" => cfg.train_fraction = parse_num(key, value, "a number")?,
        "repeats" => cfg.repeats = parse_num(key, value, "an integer")?,
        "target_fraction" => cfg.target_fraction = parse_num(key, value, "a number")?,
        "out_dir" => cfg.out_dir = value.to_string(),
        "run_id" => cfg.run_id = value.to_string(),
        _ => {
            return Err(Error::Config(format!(
                "unknown key '{}' (did you mean '{}'?)",
                key,
                nearest_key(key)
            )))
        }
    }
    Ok(())
}

/// Parse config text on top of the given defaults.
pub fn parse_config_str(text: &str, defaults: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = defaults;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            if line.ends_with(']') && line.len() > 2 {
                continue; // section headers are cosmetic
            }
            return Err(Error::Config(format!(
                "line {}: malformed section header '{}'",
                line_no + 1,
                line
            )));
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', found '{}'",
                line_no + 1,
                line
            ))
        })?;
        apply_key(&mut cfg, key.trim(), value.trim())?;
    }
    Ok(cfg)
}

/// Parse a config file on top of the given defaults.
pub fn parse_config(path: &Path, defaults: ExperimentConfig) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_str(&text, defaults)
}

fn strategy_name(strategy: Strategy) -> &'static str {
    strategy.name()
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Safl => "safl",
        Mode::Sync => "sync",
    }
}

fn similarity_name(kind: SimilarityKind) -> &'static str {
    match kind {
        SimilarityKind::Cosine => "cosine",
        SimilarityKind::Euclidean => "euclidean",
        SimilarityKind::Manhattan => "manhattan",
    }
}

fn bool_name(value: bool) -> &'static str {
    if value {
        "on"
    } else {
        "off"
    }
}

/// Render a config as text that [`parse_config_str`] maps back to the same
/// value.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[protocol]");
    let _ = writeln!(out, "num_clients = {}", cfg.num_clients);
    let _ = writeln!(out, "agg_updates = {}", cfg.agg_updates);
    let _ = writeln!(out, "rounds = {}", cfg.rounds);
    let _ = writeln!(out, "local_epochs = {}", cfg.local_epochs);
    let _ = writeln!(out, "strategy = {}", strategy_name(cfg.strategy));
    let _ = writeln!(out, "mode = {}", mode_name(cfg.mode));
    let _ = writeln!(out, "speed_ratio = {}", cfg.speed_ratio);
    if let Some(a) = cfg.activation {
        let _ = writeln!(out, "activation = {}", a);
    }
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "\n[hyper]");
    let _ = writeln!(out, "lr_init = {}", cfg.lr_init);
    let _ = writeln!(out, "lr_adjust_rate = {}", cfg.lr_adjust_rate);
    let _ = writeln!(out, "momentum_base = {}", cfg.momentum_base);
    let _ = writeln!(out, "momentum_gain = {}", cfg.momentum_gain);
    let _ = writeln!(out, "lr_min = {}", cfg.lr_min);
    let _ = writeln!(out, "lr_max = {}", cfg.lr_max);
    let _ = writeln!(out, "momentum_cap = {}", cfg.momentum_cap);
    let _ = writeln!(out, "clip_bound = {}", cfg.clip_bound);
    let _ = writeln!(out, "spread_threshold = {}", cfg.spread_threshold);
    let _ = writeln!(out, "similarity = {}", similarity_name(cfg.similarity));
    let _ = writeln!(out, "momentum_carryover = {}", bool_name(cfg.momentum_carryover));
    let _ = writeln!(out, "momentum = {}", bool_name(cfg.use_momentum));
    let _ = writeln!(out, "feedback = {}", bool_name(cfg.use_feedback));
    if let Some(eta_g) = cfg.eta_g {
        let _ = writeln!(out, "eta_g = {}", eta_g);
    }
    let _ = writeln!(out, "\n[model]");
    let _ = writeln!(
        out,
        "model = {}",
        match cfg.model {
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp => "mlp",
        }
    );
    let _ = writeln!(out, "hidden_dim = {}", cfg.hidden_dim);
    let _ = writeln!(out, "\n[data]");
    let _ = writeln!(
        out,
        "dataset = {}",
        match cfg.dataset {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Csv => "csv",
        }
    );
    let _ = writeln!(out, "classes = {}", cfg.classes);
    let _ = writeln!(out, "dim = {}", cfg.dim);
    let _ = writeln!(out, "per_class = {}", cfg.per_class);
    let _ = writeln!(out, "class_sep = {}", cfg.class_sep);
    let _ = writeln!(out, "noise_sd = {}", cfg.noise_sd);
    let _ = writeln!(out, "test_per_class = {}", cfg.test_per_class);
    if !cfg.csv_path.is_empty() {
        let _ = writeln!(out, "csv_path = {}", cfg.csv_path);
    }
    if !cfg.csv_features.is_empty() {
        let _ = writeln!(out, "csv_features = {}", cfg.csv_features.join(","));
    }
    if !cfg.csv_label.is_empty() {
        let _ = writeln!(out, "csv_label = {}", cfg.csv_label);
    }
    if !cfg.csv_categorical.is_empty() {
        let rendered: Vec<String> = cfg
            .csv_categorical
            .iter()
            .map(|(column, cats)| format!("{}:{}", column, cats.join("|")))
            .collect();
        let _ = writeln!(out, "csv_categorical = {}", rendered.join(";"));
    }
    let _ = writeln!(out, "test_fraction = {}", cfg.test_fraction);
    let _ = writeln!(
        out,
        "partition = {}",
        match cfg.partition {
            PartitionKind::Iid => "iid",
            PartitionKind::Dirichlet => "dirichlet",
            PartitionKind::LogNormal => "lognormal",
        }
    );
    let _ = writeln!(out, "dirichlet_x = {}", cfg.dirichlet_x);
    let _ = writeln!(out, "lognormal_sigma = {}", cfg.lognormal_sigma);
    let _ = writeln!(out, "train_fraction = {}", cfg.train_fraction);
    let _ = writeln!(out, "\n[run]");
    let _ = writeln!(out, "repeats = {}", cfg.repeats);
    let _ = writeln!(out, "target_fraction = {}", cfg.target_fraction);
    let _ = writeln!(out, "out_dir = {}", cfg.out_dir);
    let _ = writeln!(out, "run_id = {}", cfg.run_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_protocol_configuration() {
        let cfg = parse_config_str("", ExperimentConfig::default()).unwrap();
        assert_eq!(cfg.num_clients, 100);
        assert_eq!(cfg.agg_updates, 10);
        assert_eq!(cfg.local_epochs, 2);
        assert_eq!(cfg.rounds, 400);
        assert_eq!(cfg.lr_init, 0.1);
        assert_eq!(cfg.lr_adjust_rate, 0.002);
        assert_eq!(cfg.momentum_base, 0.1);
        assert_eq!(cfg.momentum_gain, 0.2);
        assert_eq!(cfg.clip_bound, 20.0);
        assert_eq!(cfg.lr_min, 0.001);
        assert_eq!(cfg.lr_max, 0.2);
        assert_eq!(cfg.momentum_cap, 0.9);
        assert_eq!(cfg.speed_ratio, 50.0);
    }

    #[test]
    fn file_values_and_overrides() {
        let text = "# comment\n[protocol]\nstrategy = fedsgd\nrounds = 10\n";
        let mut cfg = parse_config_str(text, ExperimentConfig::default()).unwrap();
        assert_eq!(cfg.strategy, Strategy::FedSgd);
        assert_eq!(cfg.rounds, 10);
        // A later flag overrides the file value.
        apply_key(&mut cfg, "strategy", "fedqs-avg").unwrap();
        assert_eq!(cfg.strategy, Strategy::FedQsAvg);
    }

    #[test]
    fn unknown_key_suggests_the_nearest_valid_one() {
        let err = parse_config_str("strtegy = fedavg\n", ExperimentConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("strtegy"), "{msg}");
        assert!(msg.contains("did you mean 'strategy'"), "{msg}");
    }

    #[test]
    fn type_mismatches_name_the_key() {
        let err = parse_config_str("rounds = soon\n", ExperimentConfig::default()).unwrap_err();
        assert!(err.to_string().contains("rounds"), "{err}");
        let err = parse_config_str("momentum = maybe\n", ExperimentConfig::default()).unwrap_err();
        assert!(err.to_string().contains("boolean"), "{err}");
    }

    #[test]
    fn config_round_trips_through_emission() {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.strategy = Strategy::FedAvg;
        cfg.similarity = SimilarityKind::Manhattan;
        cfg.activation = Some(7);
        cfg.eta_g = Some(0.05);
        cfg.dataset = DatasetKind::Csv;
        cfg.csv_path = "data/adult.csv".into();
        cfg.csv_features = vec!["age".into(), "sex".into()];
        cfg.csv_label = "income".into();
        cfg.csv_categorical
            .insert("sex".into(), vec!["F".into(), "M".into()]);
        cfg.use_feedback = false;
        let text = emit_config(&cfg);
        let parsed = parse_config_str(&text, ExperimentConfig::default()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.agg_updates = 50;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.mode = Mode::Sync; // FedQS strategy + sync
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.run_id = "bad/id".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sim_config_carries_the_hyperparameters() {
        let cfg = ExperimentConfig::desk_scale();
        let sim = cfg.sim_config(7, cfg.model_spec(20, 10));
        assert_eq!(sim.seed, 7);
        assert_eq!(sim.num_clients, 20);
        assert_eq!(sim.hyper.lr_init, 0.1);
        // eta_g defaults to the initial local rate.
        assert_eq!(sim.hyper.eta_g, 0.1);
    }
}
