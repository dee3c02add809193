//! Experiment execution: data preparation, engine runs, artifact emission,
//! and cross-repeat aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedqs_core::datagen::{self, SyntheticSpec};
use fedqs_core::engine::{self, SimOutput};
use fedqs_core::metrics::{self, Summary};
use fedqs_core::numcore::LabeledDataset;
use fedqs_core::{Error, Result};

use crate::config::{DatasetKind, ExperimentConfig, PartitionKind};

// Seed derivation tags; each random purpose gets its own mixed stream.
const TAG_TRAIN_DATA: u64 = 0x11;
const TAG_TEST_DATA: u64 = 0x22;
const TAG_PARTITION: u64 = 0x33;
const TAG_SPLIT: u64 = 0x44;
const TAG_CSV_TEST: u64 = 0x55;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Per-client train/validation shards plus the shared test set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub clients: Vec<(LabeledDataset, LabeledDataset)>,
    pub testset: LabeledDataset,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Generate (or load), partition, and split the data for one repeat.
/// Strategy never enters here, so paired comparisons across strategies see
/// identical shards for a given seed.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let (source, testset, num_classes) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let train_spec = SyntheticSpec {
                num_classes: cfg.classes,
                dim: cfg.dim,
                per_class: cfg.per_class,
                class_sep: cfg.class_sep,
                noise_sd: cfg.noise_sd,
            };
            let test_spec = SyntheticSpec {
                per_class: cfg.test_per_class,
                ..train_spec
            };
            let source = datagen::gen_synthetic(&train_spec, sub_seed(seed, TAG_TRAIN_DATA))?;
            let testset = datagen::gen_synthetic(&test_spec, sub_seed(seed, TAG_TEST_DATA))?;
            (source, testset, cfg.classes)
        }
        DatasetKind::Csv => {
            let full = datagen::load_csv(Path::new(&cfg.csv_path), &cfg.csv_schema())?;
            let num_classes = full.labels.iter().copied().max().map_or(0, |m| m + 1);
            let (source, testset) = datagen::split_train_val(
                &full,
                1.0 - cfg.test_fraction,
                sub_seed(seed, TAG_CSV_TEST),
            )?;
            (source, testset, num_classes)
        }
    };
    let partition_seed = sub_seed(seed, TAG_PARTITION);
    let plan = match cfg.partition {
        PartitionKind::Iid => datagen::partition_iid(&source, cfg.num_clients, partition_seed)?,
        PartitionKind::Dirichlet => {
            datagen::partition_dirichlet(&source, cfg.num_clients, cfg.dirichlet_x, partition_seed)?
        }
        PartitionKind::LogNormal => datagen::partition_lognormal(
            &source,
            |_| 0,
            cfg.lognormal_sigma,
            cfg.num_clients,
            partition_seed,
        )?,
    };
    let shards = plan.split(&source)?;
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            if shard.len() < 2 {
                // A one-sample shard cannot be split; reuse it as its own
                // validation set.
                Ok((shard.clone(), shard))
            } else {
                datagen::split_train_val(
                    &shard,
                    cfg.train_fraction,
                    sub_seed(seed, TAG_SPLIT ^ (id as u64) << 8),
                )
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let input_dim = source.dim();
    Ok(PreparedData {
        clients,
        testset,
        input_dim,
        num_classes,
    })
}

/// Run one repeat end to end and return its trace and summary.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<(SimOutput, Summary)> {
    let data = prepare_data(cfg, seed)?;
    let model = cfg.model_spec(data.input_dim, data.num_classes);
    let sim = cfg.sim_config(seed, model);
    let output = engine::run(&sim, &data.clients, &data.testset)?;
    let summary = metrics::summarize(&output.trace, cfg.target_fraction)?;
    Ok((output, summary))
}

/// Mean and sample standard deviation of a metric across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAgg {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Repeats on which the metric was defined.
    pub defined: usize,
}

/// Mean / sample standard deviation over the defined values.
pub fn aggregate_metric(values: &[Option<f64>]) -> MetricAgg {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        return MetricAgg {
            mean: None,
            std: None,
            defined: 0,
        };
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let std = if defined.len() < 2 {
        None
    } else {
        Some(
            (defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt(),
        )
    };
    MetricAgg {
        mean: Some(mean),
        std,
        defined: defined.len(),
    }
}

/// Cross-repeat aggregate written as `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repeats: usize,
    pub metrics: BTreeMap<String, MetricAgg>,
}

pub fn aggregate_summaries(summaries: &[Summary]) -> Aggregate {
    let mut metrics = BTreeMap::new();
    let collect = |f: &dyn Fn(&Summary) -> Option<f64>| -> Vec<Option<f64>> {
        summaries.iter().map(|s| f(s)).collect()
    };
    metrics.insert(
        "best_acc".to_string(),
        aggregate_metric(&collect(&|s| Some(s.best_acc))),
    );
    metrics.insert(
        "convergence_acc".to_string(),
        aggregate_metric(&collect(&|s| Some(s.convergence_acc))),
    );
    metrics.insert(
        "t_f".to_string(),
        aggregate_metric(&collect(&|s| s.t_f.map(|t| t as f64))),
    );
    metrics.insert(
        "t_s".to_string(),
        aggregate_metric(&collect(&|s| s.t_s.map(|t| t as f64))),
    );
    metrics.insert(
        "oscillations".to_string(),
        aggregate_metric(&collect(&|s| Some(f64::from(s.oscillations)))),
    );
    metrics.insert(
        "final_vtime".to_string(),
        aggregate_metric(&collect(&|s| Some(s.final_vtime))),
    );
    Aggregate {
        repeats: summaries.len(),
        metrics,
    }
}

/// Artifacts produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<Summary>,
    pub aggregate: Aggregate,
    pub out_dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialization: {}", e)))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

/// Run every repeat of an experiment, emitting per-repeat trace/summary
/// files and a final aggregate under `out_dir/run_id/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let root = PathBuf::from(&cfg.out_dir).join(&cfg.run_id);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
    std::fs::write(root.join("config.txt"), crate::config::emit_config(cfg))
        .map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut summaries = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat as u64);
        let (output, summary) = run_once(cfg, seed)?;
        let dir = root.join(repeat.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        metrics::emit(
            &output.trace,
            &summary,
            &dir.join("trace.csv"),
            &dir.join("summary.json"),
        )?;
        summaries.push(summary);
    }
    let aggregate = aggregate_summaries(&summaries);
    write_json(&root.join("aggregate.json"), &aggregate)?;
    Ok(ExperimentReport {
        summaries,
        aggregate,
        out_dir: root,
    })
}
