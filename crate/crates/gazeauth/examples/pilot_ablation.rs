use gazeauth::harness::*;
use gazeauth::signal::{Axis, ChannelSpec, Eye};
use gazeauth::synth::{generate_dataset_in_memory, SynthConfig};
use gazeauth::training::{MinibatchSpec, TrainPlan};
use std::time::Instant;

fn main() {
    let users: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(90);
    let epochs: u32 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let synth = SynthConfig {
        n_users: users,
        master_seed: 4242,
        train_fraction: 2.0 / 3.0,
        ..SynthConfig::default()
    };
    let t0 = Instant::now();
    let dataset = generate_dataset_in_memory(&synth).unwrap();
    println!("dataset: {} users in {:.1}s", users, t0.elapsed().as_secs_f64());

    let configs = [
        ("binocular O+V", ChannelSpec::new(vec![Eye::Left, Eye::Right], vec![Axis::Optical, Axis::Visual]).unwrap()),
        ("binocular V", ChannelSpec::new(vec![Eye::Left, Eye::Right], vec![Axis::Visual]).unwrap()),
        ("monocular V", ChannelSpec::new(vec![Eye::Left], vec![Axis::Visual]).unwrap()),
    ];
    for (name, channels) in configs {
        let cfg = ExperimentConfig {
            id: name.replace(' ', "_"),
            channels,
            minibatch: MinibatchSpec { users_per_batch: 8, samples_per_user: 8 },
            plan: TrainPlan { epochs, ..TrainPlan::default() },
            seed: 99,
            far_targets: vec![0.01],
            ..ExperimentConfig::default()
        };
        let t0 = Instant::now();
        let run = run_experiment(&cfg, &dataset).unwrap();
        println!(
            "{name:>14}: EER {:6.3}%  IR {:6.2}%  d' {:.2}  (first-epoch loss {:.4} -> last {:.4})  [{:.1}s]",
            run.result.verification.eer_pct,
            run.result.identification.rank1_ir_pct,
            run.result.verification.d_prime,
            run.histories[0].first().map(|h| h.mean_loss).unwrap_or(0.0),
            run.histories[0].last().map(|h| h.mean_loss).unwrap_or(0.0),
            t0.elapsed().as_secs_f64()
        );
    }
}
