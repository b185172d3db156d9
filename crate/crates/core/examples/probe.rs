// Probe: candidate acceptance contexts for the learner-vs-oracle comparison.
use earlystop::conjugate::{GroupPrior, NoiseModel, PerGroup, SampleSchedule};
use earlystop::dp::{dp_solve, GridSpec};
use earlystop::dqn::{train, TrainingConfig};
use earlystop::env::ExperimentContext;
use earlystop::harness::monte_carlo_policy_value;

fn ctx(
    mu0: (f64, f64),
    sd0: f64,
    sigma: f64,
    weekly: Vec<u32>,
    cost: f64,
    hurdle: f64,
) -> ExperimentContext {
    ExperimentContext::new(
        PerGroup::new(
            GroupPrior::new(mu0.0, sd0).unwrap(),
            GroupPrior::new(mu0.1, sd0).unwrap(),
        ),
        PerGroup::new(NoiseModel::new(sigma).unwrap(), NoiseModel::new(sigma).unwrap()),
        SampleSchedule::symmetric(weekly).unwrap(),
        cost,
        hurdle,
        12,
    )
    .unwrap()
}

fn main() {
    let contexts = vec![
        ("C3-wide", ctx((0.5, 0.0), 0.28, 0.6, vec![20, 25, 25, 30], 30.0, 200.0)),
        ("C3-long", ctx((0.5, 0.0), 0.28, 0.6, vec![20, 25, 25, 30], 30.0, 200.0)),
    ];
    for (name, c) in contexts {
        let tab = dp_solve(&c, &GridSpec { cells: 60, coverage_sd: 8.0 }).unwrap();
        // How mixed is the optimal week-1 decision?
        let mut counts = [0usize; 3];
        for cell in &tab.q[0] {
            let best = if cell[0] >= cell[1] && cell[0] >= cell[2] {
                0
            } else if cell[1] >= cell[2] {
                1
            } else {
                2
            };
            counts[best] += 1;
        }
        println!(
            "{name}: week-1 optimal action cells (cont/launch/stop): {counts:?}"
        );
        let cfg = if name.ends_with("wide") {
            TrainingConfig {
                episodes: 30_000,
                hidden_widths: vec![128, 128],
                learning_rate: 4e-3,
                batch_size: 256,
                epsilon_end: 0.02,
                seed: 2024,
                ..TrainingConfig::default()
            }
        } else {
            TrainingConfig {
                episodes: 80_000,
                hidden_widths: vec![64, 64],
                learning_rate: 2e-3,
                batch_size: 256,
                epsilon_end: 0.02,
                seed: 2024,
                ..TrainingConfig::default()
            }
        };
        let t1 = std::time::Instant::now();
        let result = train(&cfg, std::slice::from_ref(&c)).unwrap();
        let train_time = t1.elapsed();
        let (mc, se) = monte_carlo_policy_value(
            &c,
            |s, cc| result.policy.act(s, cc),
            10_000,
            515,
            "acceptance/dqn-vs-dp",
        )
        .unwrap();
        println!(
            "{name}: dp {:.2} | dqn MC {:.2} se {:.2} | ratio {:.4} (se {:.4}) | margin-to-0.98 {:.2} sigma | train {:.0?}",
            tab.initial_value,
            mc,
            se,
            mc / tab.initial_value,
            se / tab.initial_value,
            (mc / tab.initial_value - 0.98) / (se / tab.initial_value),
            train_time
        );
    }
}
