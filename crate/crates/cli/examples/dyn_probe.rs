// scratch: mild-skew band, sign stability over 6 base seeds
use fedqs_cli::config::{ExperimentConfig, ModelKind, PartitionKind};
use fedqs_cli::presets;

fn main() {
    for (part, x, carry, noise) in [
        (PartitionKind::Iid, 0.0, false, 1.0),
        (PartitionKind::Iid, 0.0, true, 1.0),
        (PartitionKind::Dirichlet, 5.0, false, 1.0),
        (PartitionKind::Dirichlet, 5.0, true, 1.0),
        (PartitionKind::Dirichlet, 2.0, true, 1.0),
        (PartitionKind::Dirichlet, 2.0, false, 1.0),
    ] {
        let mut npass = 0;
        let mut sums = [0.0f64; 4];
        let mut lines = Vec::new();
        for base_seed in [1u64, 42, 100, 7, 2025, 31337] {
            let mut cfg = ExperimentConfig::desk_scale();
            cfg.repeats = 5;
            cfg.seed = base_seed;
            cfg.model = ModelKind::Mlp;
            cfg.hidden_dim = 16;
            cfg.partition = part;
            cfg.dirichlet_x = x;
            cfg.class_sep = 2.5;
            cfg.noise_sd = noise;
            cfg.momentum_carryover = carry;
            let r = presets::preset_comparison(&cfg).unwrap();
            let get = |name: &str, metric: &str| -> f64 {
                let row = r.rows.iter().find(|row| row.strategy == name).unwrap();
                match metric {
                    "best" => row.best_acc.mean.unwrap(),
                    "t_f" => row.t_f.mean.unwrap_or(f64::NAN),
                    "osc" => row.oscillations.mean.unwrap(),
                    _ => unreachable!(),
                }
            };
            let d = [
                get("fedqs-avg", "best") - get("fedavg", "best"),
                get("fedqs-sgd", "best") - get("fedsgd", "best"),
                get("fedsgd", "osc") - get("fedqs-sgd", "osc"),
                get("fedavg", "t_f") - get("fedqs-avg", "t_f"),
            ];
            for (s, v) in sums.iter_mut().zip(&d) { *s += v; }
            let pass = d.iter().all(|&v| v >= 0.0);
            npass += pass as u32;
            lines.push(format!(
                "  seed={base_seed}: d_avg {:+.4} d_sgd {:+.4} d_osc {:+.1} d_tf {:+.0} => [{}{}{}{}]",
                d[0], d[1], d[2], d[3],
                (d[0] >= 0.0) as u8, (d[1] >= 0.0) as u8, (d[2] >= 0.0) as u8, (d[3] >= 0.0) as u8
            ));
        }
        println!(
            "part={part:?} x={x} carry={carry} noise={noise}: pass {npass}/6  (means: d_avg {:+.4} d_sgd {:+.4} d_osc {:+.2} d_tf {:+.1})",
            sums[0] / 6.0, sums[1] / 6.0, sums[2] / 6.0, sums[3] / 6.0
        );
        for l in lines { println!("{l}"); }
    }
}
