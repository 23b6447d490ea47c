//! End-to-end miniature experiment: synthesize a dataset, train the
//! embedder, evaluate verification and identification, sweep the
//! enrollment/verification duration, and run the permanence analysis.
//!
//! Sized to finish in a couple of minutes; scale n_users/epochs up for
//! more meaningful numbers.
//!
//! Run with: cargo run --release --example full_pipeline

use gazeauth::harness::{
    permanence_table, run_experiment, sweep_duration, ExperimentConfig, NetworkShape,
};
use gazeauth::permanence::{permanence_report, PermanenceConfig};
use gazeauth::synth::{generate_dataset_in_memory, SynthConfig};
use gazeauth::training::{MinibatchSpec, TrainPlan};

fn main() -> gazeauth::Result<()> {
    let synth = SynthConfig {
        n_users: 30,
        master_seed: 1,
        train_fraction: 0.6,
        ..SynthConfig::default()
    };
    let dataset = generate_dataset_in_memory(&synth)?;
    println!(
        "dataset: {} users, {} recordings",
        dataset.manifest.users.len(),
        dataset.recordings.len()
    );

    let cfg = ExperimentConfig {
        id: "mini".into(),
        network: NetworkShape {
            num_conv_layers: 4,
            growth: 8,
            dilations: vec![1, 2, 4, 8],
            embedding_dim: 32,
            ..NetworkShape::default()
        },
        minibatch: MinibatchSpec {
            users_per_batch: 6,
            samples_per_user: 6,
        },
        plan: TrainPlan {
            epochs: 10,
            ..TrainPlan::default()
        },
        far_targets: vec![0.01],
        seed: 2,
        ..ExperimentConfig::default()
    };

    let run = run_experiment(&cfg, &dataset)?;
    let r = &run.result;
    println!(
        "verification: EER {:.3}%, FRR@FAR<=1% {:.1}%, d' {:.2} ({} genuine / {} impostor)",
        r.verification.eer_pct,
        r.verification.frr_at_far[0].frr_pct,
        r.verification.d_prime,
        r.verification.n_gen,
        r.verification.n_imp
    );
    println!(
        "identification: Rank-1 IR {:.1}% over {} probes",
        r.identification.rank1_ir_pct, r.identification.n_probes
    );

    println!("duration sweep (same model, first N chunks per side):");
    for (n_e, n_v, v, i) in sweep_duration(&[(1, 1), (2, 2), (4, 4)], &cfg, &dataset)? {
        println!(
            "  {:>2}x5s enroll / {:>2}x5s verify: EER {:.3}%, IR {:.1}%",
            n_e, n_v, v.eer_pct, i.rank1_ir_pct
        );
    }

    let table = permanence_table(&cfg, &dataset, &run.artifact)?;
    let perm = permanence_report(
        &table,
        &PermanenceConfig {
            n_reference: 2000,
            ..PermanenceConfig::default()
        },
    )?;
    println!(
        "permanence: ICC min/median/max {:.3}/{:.3}/{:.3} across {} features",
        perm.icc_min, perm.icc_median, perm.icc_max, perm.n_features
    );
    Ok(())
}
