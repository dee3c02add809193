//! Evaluation metrics over simulation traces: convergence speed, stability,
//! oscillation counting, summaries, and CSV/JSON emission.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One global round's measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub vtime: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub mean_staleness: f64,
    pub num_feedback: u32,
    pub f_bar: f64,
    pub s_bar: f64,
}

/// The per-round measurement stream of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<RoundRecord>,
}

/// How many trailing rounds define the convergence accuracy.
pub const CONVERGENCE_WINDOW: usize = 20;

/// Accuracy-drop threshold (in percentage points) that counts as an
/// oscillation.
pub const OSCILLATION_THRESHOLD: f64 = 15.0;

/// Headline numbers extracted from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_acc: f64,
    /// Mean accuracy over the last [`CONVERGENCE_WINDOW`] rounds (or the
    /// whole trace when shorter).
    pub convergence_acc: f64,
    /// Target accuracy used for the speed and stability metrics.
    pub target_acc: f64,
    /// First 1-based round reaching the target, if ever.
    pub t_f: Option<u64>,
    /// First 1-based round after which accuracy never drops below the
    /// target again, if any.
    pub t_s: Option<u64>,
    pub oscillations: u32,
    pub final_vtime: f64,
}

impl Trace {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_acc).collect()
    }

    /// Render the trace as CSV (header plus one row per round). Numbers use
    /// the shortest representation that round-trips, so emission is
    /// deterministic and lossless.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("round,vtime,test_acc,test_loss,mean_staleness,num_feedback,f_bar,s_bar\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.round,
                r.vtime,
                r.test_acc,
                r.test_loss,
                r.mean_staleness,
                r.num_feedback,
                r.f_bar,
                r.s_bar
            ));
        }
        out
    }

    /// Parse a CSV produced by [`Trace::to_csv`].
    pub fn from_csv(text: &str) -> Result<Trace> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty trace CSV".into()))?;
        if header != "round,vtime,test_acc,test_loss,mean_staleness,num_feedback,f_bar,s_bar" {
            return Err(Error::Data(format!("unexpected trace header '{}'", header)));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Data(format!(
                    "trace row {}: expected 8 fields, found {}",
                    i + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Data(format!("trace row {}: bad number '{}'", i + 2, s)))
            };
            records.push(RoundRecord {
                round: fields[0]
                    .parse()
                    .map_err(|_| Error::Data(format!("trace row {}: bad round", i + 2)))?,
                vtime: parse_f(fields[1])?,
                test_acc: parse_f(fields[2])?,
                test_loss: parse_f(fields[3])?,
                mean_staleness: parse_f(fields[4])?,
                num_feedback: fields[5]
                    .parse()
                    .map_err(|_| Error::Data(format!("trace row {}: bad feedback count", i + 2)))?,
                f_bar: parse_f(fields[6])?,
                s_bar: parse_f(fields[7])?,
            });
        }
        Ok(Trace { records })
    }
}

/// Convergence speed: the smallest 1-based round index whose accuracy
/// reaches the target, or `None` if it never does.
pub fn conv_speed(accs: &[f64], target: f64) -> Option<u64> {
    accs.iter()
        .position(|&a| a >= target)
        .map(|i| (i + 1) as u64)
}

/// Stability round: the smallest 1-based round index after which accuracy
/// never drops below the target again.
pub fn stability_t_s(accs: &[f64], target: f64) -> Option<u64> {
    if accs.is_empty() || *accs.last().expect("nonempty") < target {
        return None;
    }
    match accs.iter().rposition(|&a| a < target) {
        None => Some(1),
        Some(last_below) => Some((last_below + 2) as u64),
    }
}

/// Count rounds whose accuracy drops below the previous round's by more
/// than `threshold`. Accuracies are expected on the percentage scale.
pub fn oscillations(accs: &[f64], threshold: f64) -> u32 {
    accs.windows(2)
        .filter(|w| w[0] - w[1] > threshold)
        .count() as u32
}

/// Summarize a trace: convergence accuracy over the trailing window, the
/// derived target `target_fraction * convergence_acc`, first-crossing and
/// stability rounds, and the oscillation count at the standard threshold.
pub fn summarize(trace: &Trace, target_fraction: f64) -> Result<Summary> {
    if trace.records.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty trace".into()));
    }
    let accs = trace.accuracies();
    let window = accs.len().min(CONVERGENCE_WINDOW);
    let convergence_acc = accs[accs.len() - window..].iter().sum::<f64>() / window as f64;
    let target_acc = target_fraction * convergence_acc;
    let accs_pct: Vec<f64> = accs.iter().map(|a| a * 100.0).collect();
    Ok(Summary {
        best_acc: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        convergence_acc,
        target_acc,
        t_f: conv_speed(&accs, target_acc),
        t_s: stability_t_s(&accs, target_acc),
        oscillations: oscillations(&accs_pct, OSCILLATION_THRESHOLD),
        final_vtime: trace.records.last().expect("nonempty").vtime,
    })
}

/// Write the trace CSV and the summary JSON. Both are deterministic:
/// re-emission of the same data is byte-identical.
pub fn emit(trace: &Trace, summary: &Summary, csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut csv = std::fs::File::create(csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    csv.write_all(trace.to_csv().as_bytes())
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Data(format!("summary serialization: {}", e)))?;
    let mut file = std::fs::File::create(json_path)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    file.write_all(json.as_bytes())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    file.write_all(b"\n")
        .map_err(|e| Error::io(json_path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn trace_from_accs(accs: &[f64]) -> Trace {
        Trace {
            records: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| RoundRecord {
                    round: (i + 1) as u64,
                    vtime: i as f64 * 0.5,
                    test_acc: a,
                    test_loss: 1.0 - a,
                    mean_staleness: 0.25,
                    num_feedback: 1,
                    f_bar: 0.05,
                    s_bar: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn conv_speed_finds_first_crossing() {
        assert_eq!(conv_speed(&[0.2, 0.4, 0.55], 0.5), Some(3));
        assert_eq!(conv_speed(&[0.2, 0.4], 0.9), None);
        // The first crossing counts even if accuracy dips later.
        assert_eq!(conv_speed(&[0.6, 0.4, 0.7], 0.5), Some(1));
    }

    #[test]
    fn stability_round_examples() {
        let accs = [0.6, 0.4, 0.7, 0.8];
        assert_eq!(stability_t_s(&accs, 0.5), Some(3));
        assert_eq!(conv_speed(&accs, 0.5), Some(1));
        // Monotone traces stabilize at the first crossing.
        let monotone = [0.3, 0.5, 0.6, 0.9];
        assert_eq!(stability_t_s(&monotone, 0.5), conv_speed(&monotone, 0.5));
        // A final round below target means never stable.
        assert_eq!(stability_t_s(&[0.6, 0.7, 0.4], 0.5), None);
    }

    #[test]
    fn oscillation_counting() {
        assert_eq!(oscillations(&[10.0, 30.0, 10.0, 40.0], 15.0), 1);
        assert_eq!(oscillations(&[10.0, 20.0, 30.0], 15.0), 0);
        // Drops equal to the threshold do not count; strictly greater does.
        assert_eq!(oscillations(&[30.0, 15.0], 15.0), 0);
        assert_eq!(oscillations(&[30.0, 14.9], 15.0), 1);
    }

    #[test]
    fn summarize_constant_trace() {
        let trace = trace_from_accs(&vec![0.8; 40]);
        let s = summarize(&trace, 0.95).unwrap();
        assert_relative_eq!(s.convergence_acc, 0.8, epsilon = 1e-12);
        assert_relative_eq!(s.target_acc, 0.76, epsilon = 1e-12);
        assert_eq!(s.t_f, Some(1));
        assert_eq!(s.t_s, Some(1));
        assert_eq!(s.oscillations, 0);
        assert_eq!(s.best_acc, 0.8);
    }

    #[test]
    fn summarize_supports_other_fractions_and_short_traces() {
        let trace = trace_from_accs(&vec![0.5; 19]);
        let s = summarize(&trace, 0.98).unwrap();
        // Fewer than 20 rounds: average over all of them.
        assert_relative_eq!(s.convergence_acc, 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.target_acc, 0.49, epsilon = 1e-12);
        assert!(summarize(&Trace::default(), 0.95).is_err());
    }

    #[test]
    fn t_f_never_exceeds_t_s() {
        let traces = [
            vec![0.6, 0.4, 0.7, 0.8],
            vec![0.1, 0.2, 0.3, 0.9],
            vec![0.9, 0.2, 0.9, 0.9],
        ];
        for accs in traces {
            let t_f = conv_speed(&accs, 0.5);
            let t_s = stability_t_s(&accs, 0.5);
            if let (Some(f), Some(s)) = (t_f, t_s) {
                assert!(f <= s, "t_f {f} > t_s {s} for {accs:?}");
            }
        }
    }

    #[test]
    fn emission_is_deterministic_and_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let trace = trace_from_accs(&[0.123456789012345678, 0.5]);
        let summary = summarize(&trace, 0.95).unwrap();
        let csv_path = dir.path().join("trace.csv");
        let json_path = dir.path().join("summary.json");
        emit(&trace, &summary, &csv_path, &json_path).unwrap();
        let first_csv = std::fs::read(&csv_path).unwrap();
        let first_json = std::fs::read(&json_path).unwrap();
        emit(&trace, &summary, &csv_path, &json_path).unwrap();
        assert_eq!(std::fs::read(&csv_path).unwrap(), first_csv);
        assert_eq!(std::fs::read(&json_path).unwrap(), first_json);
        // Round-trip: parsing the CSV reproduces the exact f64 values.
        let parsed = Trace::from_csv(std::str::from_utf8(&first_csv).unwrap()).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn single_round_trace_emits_two_lines() {
        let trace = trace_from_accs(&[0.4]);
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn undefined_speed_rounds_serialize_as_null() {
        let trace = trace_from_accs(&[0.1, 0.2]);
        let mut summary = summarize(&trace, 0.95).unwrap();
        summary.t_f = None;
        summary.t_s = None;
        let json = serde_json::to_string(&summary).unwrap();
        assert!(json.contains("\"t_f\":null"), "{json}");
        assert!(json.contains("\"t_s\":null"), "{json}");
        let back: Summary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, summary);
    }

    proptest! {
        #[test]
        fn oscillations_are_shift_invariant(
            accs in proptest::collection::vec(0.0f64..100.0, 2..50),
            shift in -50.0f64..50.0,
        ) {
            let shifted: Vec<f64> = accs.iter().map(|a| a + shift).collect();
            prop_assert_eq!(oscillations(&accs, 15.0), oscillations(&shifted, 15.0));
        }

        #[test]
        fn stability_never_precedes_first_crossing(
            accs in proptest::collection::vec(0.0f64..1.0, 1..60),
            target in 0.05f64..0.95,
        ) {
            if let (Some(f), Some(s)) = (conv_speed(&accs, target), stability_t_s(&accs, target)) {
                prop_assert!(f <= s);
            }
            // Monotone nondecreasing traces have t_s = t_f.
            let mut sorted = accs.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(conv_speed(&sorted, target), stability_t_s(&sorted, target));
        }
    }
}
