//! Canned experiment presets: the staleness/heterogeneity motivation grid,
//! the four-strategy comparison, a bounds table, and one-key sweeps.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fedqs_core::bounds::{self, BoundParams, BoundStrategy};
use fedqs_core::engine::{Mode, Strategy};
use fedqs_core::metrics::{self, Summary};
use fedqs_core::{Error, Result};

use crate::config::{apply_key, ExperimentConfig, PartitionKind};
use crate::runner::{self, aggregate_metric, Aggregate, MetricAgg};

fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialization: {}", e)))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-repeat results of one grid cell.
struct CellRuns {
    summaries: Vec<Summary>,
    mean_staleness: f64,
}

/// Run one (strategy, mode, partition) configuration over paired repeats.
/// Data preparation depends only on the seed, so every strategy trains on
/// identical shards and speed assignments for a given repeat index.
fn run_cell(
    base: &ExperimentConfig,
    strategy: Strategy,
    mode: Mode,
    partition: PartitionKind,
) -> Result<CellRuns> {
    let mut cfg = base.clone();
    cfg.strategy = strategy;
    cfg.mode = mode;
    cfg.partition = partition;
    cfg.validate()?;
    let mut summaries = Vec::with_capacity(cfg.repeats);
    let mut staleness = 0.0;
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat as u64);
        let (output, summary) = runner::run_once(&cfg, seed)?;
        staleness += trace_mean_staleness(&output.trace.records);
        summaries.push(summary);
    }
    Ok(CellRuns {
        summaries,
        mean_staleness: staleness / cfg.repeats.max(1) as f64,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = values.collect();
    collected.iter().sum::<f64>() / collected.len().max(1) as f64
}

/// One cell of the motivation grid: both baseline strategies under a fixed
/// (mode, partition) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotivationCell {
    pub staleness_active: bool,
    pub heterogeneity_active: bool,
    pub mode: String,
    pub partition: String,
    pub gradient_best_acc: f64,
    pub model_best_acc: f64,
    /// |gradient - model| mean best accuracy.
    pub gap: f64,
    pub gradient_mean_staleness: f64,
    pub model_mean_staleness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotivationReport {
    pub cells: Vec<MotivationCell>,
}

impl MotivationReport {
    /// The cell with both factors active.
    pub fn both_factors(&self) -> &MotivationCell {
        self.cells
            .iter()
            .find(|c| c.staleness_active && c.heterogeneity_active)
            .expect("grid always contains the 4th cell")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<14} {:>14} {:>12} {:>8}",
            "staleness", "heterogeneity", "gradient-acc", "model-acc", "gap"
        );
        for cell in &self.cells {
            let _ = writeln!(
                out,
                "{:<10} {:<14} {:>14.4} {:>12.4} {:>8.4}",
                if cell.staleness_active { "yes" } else { "no" },
                if cell.heterogeneity_active { "yes" } else { "no" },
                cell.gradient_best_acc,
                cell.model_best_acc,
                cell.gap
            );
        }
        out
    }
}

/// The four-cell grid {sync, safl} x {iid, non-iid}, each run under both
/// baseline aggregation strategies (8 runs per repeat). Reports the
/// |gradient - model| best-accuracy gap per cell.
pub fn preset_motivation(base: &ExperimentConfig) -> Result<MotivationReport> {
    let mut cells = Vec::with_capacity(4);
    for (staleness_active, mode) in [(false, Mode::Sync), (true, Mode::Safl)] {
        for (heterogeneity_active, partition) in
            [(false, PartitionKind::Iid), (true, PartitionKind::Dirichlet)]
        {
            let grad = run_cell(base, Strategy::FedSgd, mode, partition)?;
            let model = run_cell(base, Strategy::FedAvg, mode, partition)?;
            let gradient_best_acc = mean(grad.summaries.iter().map(|s| s.best_acc));
            let model_best_acc = mean(model.summaries.iter().map(|s| s.best_acc));
            cells.push(MotivationCell {
                staleness_active,
                heterogeneity_active,
                mode: if mode == Mode::Sync { "sync" } else { "safl" }.to_string(),
                partition: if heterogeneity_active {
                    "dirichlet"
                } else {
                    "iid"
                }
                .to_string(),
                gradient_best_acc,
                model_best_acc,
                gap: (gradient_best_acc - model_best_acc).abs(),
                gradient_mean_staleness: grad.mean_staleness,
                model_mean_staleness: model.mean_staleness,
            });
        }
    }
    Ok(MotivationReport { cells })
}

/// One strategy's row in the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub best_acc: MetricAgg,
    pub convergence_acc: MetricAgg,
    pub t_f: MetricAgg,
    pub oscillations: MetricAgg,
    pub final_vtime: MetricAgg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, strategy: Strategy) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy.name())
            .expect("comparison always runs all four strategies")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>8} {:>13} {:>12}",
            "strategy", "best-acc", "conv-acc", "t_f", "oscillations", "vtime"
        );
        for row in &self.rows {
            let t_f = row
                .t_f
                .mean
                .map_or("-".to_string(), |m| format!("{:.1}", m));
            let _ = writeln!(
                out,
                "{:<10} {:>10.4} {:>10.4} {:>8} {:>13.2} {:>12.2}",
                row.strategy,
                row.best_acc.mean.unwrap_or(f64::NAN),
                row.convergence_acc.mean.unwrap_or(f64::NAN),
                t_f,
                row.oscillations.mean.unwrap_or(f64::NAN),
                row.final_vtime.mean.unwrap_or(f64::NAN),
            );
        }
        out
    }
}

/// Run all four strategies in SAFL mode on identical paired data and report
/// accuracy, convergence speed, and oscillation counts per strategy.
pub fn preset_comparison(base: &ExperimentConfig) -> Result<ComparisonReport> {
    let strategies = [
        Strategy::FedQsSgd,
        Strategy::FedSgd,
        Strategy::FedQsAvg,
        Strategy::FedAvg,
    ];
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let summaries = run_cell(base, strategy, Mode::Safl, base.partition)?.summaries;
        rows.push(ComparisonRow {
            strategy: strategy.name().to_string(),
            best_acc: aggregate_metric(
                &summaries.iter().map(|s| Some(s.best_acc)).collect::<Vec<_>>(),
            ),
            convergence_acc: aggregate_metric(
                &summaries
                    .iter()
                    .map(|s| Some(s.convergence_acc))
                    .collect::<Vec<_>>(),
            ),
            t_f: aggregate_metric(
                &summaries
                    .iter()
                    .map(|s| s.t_f.map(|t| t as f64))
                    .collect::<Vec<_>>(),
            ),
            oscillations: aggregate_metric(
                &summaries
                    .iter()
                    .map(|s| Some(f64::from(s.oscillations)))
                    .collect::<Vec<_>>(),
            ),
            final_vtime: aggregate_metric(
                &summaries
                    .iter()
                    .map(|s| Some(s.final_vtime))
                    .collect::<Vec<_>>(),
            ),
        });
    }
    Ok(ComparisonReport { rows })
}

/// Persist a motivation report under `out_dir/run_id/motivation.json`.
pub fn write_motivation(base: &ExperimentConfig, report: &MotivationReport) -> Result<PathBuf> {
    let root = PathBuf::from(&base.out_dir).join(&base.run_id);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let path = root.join("motivation.json");
    write_json(&path, report)?;
    Ok(path)
}

/// Persist a comparison report under `out_dir/run_id/comparison.json`.
pub fn write_comparison(base: &ExperimentConfig, report: &ComparisonReport) -> Result<PathBuf> {
    let root = PathBuf::from(&base.out_dir).join(&base.run_id);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let path = root.join("comparison.json");
    write_json(&path, report)?;
    Ok(path)
}

/// Grid inputs for the bounds table.
#[derive(Debug, Clone)]
pub struct BoundsGrid {
    pub thetas: Vec<f64>,
    pub epochs: Vec<u32>,
    pub ks: Vec<u32>,
    pub betas: Vec<f64>,
    pub smoothness: f64,
    pub heterogeneity: f64,
    pub grad_bound: f64,
    pub momentum_clients: u32,
    pub weight_upper: f64,
    pub weight_lower: f64,
    pub init_gap: f64,
    pub strategies: Vec<BoundStrategy>,
}

impl Default for BoundsGrid {
    fn default() -> Self {
        BoundsGrid {
            thetas: vec![0.5],
            epochs: vec![2],
            ks: vec![10],
            betas: vec![0.33],
            smoothness: 1.0,
            heterogeneity: 0.5,
            grad_bound: 20.0,
            momentum_clients: 4,
            weight_upper: 0.5,
            weight_lower: 0.0,
            init_gap: 1.0,
            strategies: vec![BoundStrategy::Sgd, BoundStrategy::Avg],
        }
    }
}

/// Evaluate the convergence constants over a hyperparameter grid and render
/// the result as CSV.
pub fn bounds_table(grid: &BoundsGrid) -> Result<String> {
    let mut out = String::from(
        "strategy,theta,local_epochs,k,beta,r,beta_lo,beta_hi,v,u,w_bound,lead_coeff,v_in_unit,interval_consistent\n",
    );
    for &strategy in &grid.strategies {
        let name = match strategy {
            BoundStrategy::Sgd => "sgd",
            BoundStrategy::Avg => "avg",
        };
        for &theta in &grid.thetas {
            for &epochs in &grid.epochs {
                for &k in &grid.ks {
                    for &beta in &grid.betas {
                        let bp = BoundParams {
                            smoothness: grid.smoothness,
                            heterogeneity: grid.heterogeneity,
                            grad_bound: grid.grad_bound,
                            local_epochs: epochs,
                            theta,
                            k,
                            beta,
                            weight_upper: grid.weight_upper,
                            weight_lower: grid.weight_lower,
                            momentum_clients: grid.momentum_clients,
                            init_gap: grid.init_gap,
                        };
                        let constants = bounds::constants(&bp, strategy)?;
                        let range = bounds::beta_range(k, constants.r, epochs, strategy);
                        let (lo, hi) = range
                            .interval
                            .map_or((String::from("-"), String::from("-")), |(lo, hi)| {
                                (lo.to_string(), hi.to_string())
                            });
                        let consistent = range
                            .midpoint_v_valid
                            .map_or("-".to_string(), |v| v.to_string());
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                            name,
                            theta,
                            epochs,
                            k,
                            beta,
                            constants.r,
                            lo,
                            hi,
                            constants.v,
                            constants.u,
                            constants.w_bound,
                            constants.lead_coeff,
                            constants.v_in_unit,
                            consistent
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sweep result: one aggregate per swept value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub key: String,
    pub entries: Vec<SweepEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub aggregate: Aggregate,
}

/// Run the base experiment once per value of a single config key, each into
/// its own run directory, and summarize the aggregates.
pub fn preset_sweep(base: &ExperimentConfig, key: &str, values: &[String]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut entries = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        apply_key(&mut cfg, key, value)?;
        cfg.run_id = format!("{}-{}-{}", base.run_id, key, sanitize(value));
        let report = runner::run_experiment(&cfg)?;
        entries.push(SweepEntry {
            value: value.clone(),
            aggregate: report.aggregate,
        });
    }
    let report = SweepReport {
        key: key.to_string(),
        entries,
    };
    let root = PathBuf::from(&base.out_dir);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
    write_json(&root.join(format!("{}-sweep.json", base.run_id)), &report)?;
    Ok(report)
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Mean staleness of a run's trace; exposed for grid reporting and tests.
pub fn trace_mean_staleness(records: &[metrics::RoundRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.mean_staleness).sum::<f64>() / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_base() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.num_clients = 5;
        cfg.agg_updates = 2;
        cfg.rounds = 6;
        cfg.classes = 3;
        cfg.dim = 4;
        cfg.per_class = 30;
        cfg.test_per_class = 15;
        cfg.repeats = 2;
        cfg.out_dir = tempfile::tempdir().unwrap().keep().display().to_string();
        cfg
    }

    #[test]
    fn motivation_grid_has_four_cells() {
        let report = preset_motivation(&tiny_base()).unwrap();
        assert_eq!(report.cells.len(), 4);
        let both = report.both_factors();
        assert!(both.staleness_active && both.heterogeneity_active);
        assert_eq!(report.cells.iter().filter(|c| c.mode == "sync").count(), 2);
        // Barrier semantics: synchronous cells never see stale updates.
        for cell in report.cells.iter().filter(|c| c.mode == "sync") {
            assert_eq!(cell.gradient_mean_staleness, 0.0);
            assert_eq!(cell.model_mean_staleness, 0.0);
        }
        let table = report.render_table();
        assert!(table.contains("gap"));
    }

    #[test]
    fn comparison_runs_all_four_strategies() {
        let report = preset_comparison(&tiny_base()).unwrap();
        assert_eq!(report.rows.len(), 4);
        for strategy in [
            Strategy::FedQsSgd,
            Strategy::FedSgd,
            Strategy::FedQsAvg,
            Strategy::FedAvg,
        ] {
            let row = report.row(strategy);
            assert!(row.best_acc.mean.unwrap() > 0.0);
        }
    }

    #[test]
    fn bounds_table_covers_the_grid() {
        let grid = BoundsGrid {
            thetas: vec![0.0, 0.5],
            betas: vec![0.2, 0.33],
            ..BoundsGrid::default()
        };
        let csv = bounds_table(&grid).unwrap();
        // Header + 2 strategies x 2 thetas x 2 betas.
        assert_eq!(csv.lines().count(), 1 + 8);
        assert!(csv.starts_with("strategy,theta"));
    }

    #[test]
    fn sweep_produces_one_entry_per_value() {
        let base = tiny_base();
        let report =
            preset_sweep(&base, "lr_init", &["0.05".to_string(), "0.1".to_string()]).unwrap();
        assert_eq!(report.entries.len(), 2);
        assert!(PathBuf::from(&base.out_dir)
            .join(format!("{}-sweep.json", base.run_id))
            .exists());
    }

    #[test]
    fn sweep_rejects_unknown_keys() {
        let base = tiny_base();
        let err = preset_sweep(&base, "lr_speed", &["1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("did you mean"), "{err}");
    }
}
