//! Train a small embedder with multi-similarity loss and the one-cycle
//! schedule, then embed two recordings of the same user and compare them.
//!
//! Uses a reduced network so it finishes in about a minute; drop the
//! overrides for the full-size architecture.
//!
//! Run with: cargo run --release --example train_embedder

use gazeauth::harness::{train_model, ExperimentConfig, NetworkShape};
use gazeauth::signal::partition_windows;
use gazeauth::synth::{generate_dataset_in_memory, SynthConfig};
use gazeauth::training::{lr_at, MinibatchSpec, TrainPlan};

fn main() -> gazeauth::Result<()> {
    let synth = SynthConfig {
        n_users: 24,
        master_seed: 3,
        train_fraction: 0.75,
        ..SynthConfig::default()
    };
    let dataset = generate_dataset_in_memory(&synth)?;

    let cfg = ExperimentConfig {
        id: "train-demo".into(),
        network: NetworkShape {
            num_conv_layers: 4,
            growth: 8,
            dilations: vec![1, 2, 4, 8],
            embedding_dim: 32,
            ..NetworkShape::default()
        },
        minibatch: MinibatchSpec {
            users_per_batch: 4,
            samples_per_user: 4,
        },
        plan: TrainPlan {
            epochs: 8,
            ..TrainPlan::default()
        },
        seed: 5,
        ..ExperimentConfig::default()
    };

    println!("one-cycle schedule over {} epochs:", cfg.plan.epochs);
    let total = 80;
    for step in [0, total * 3 / 10, total - 1] {
        println!("  step {step:>3}/{total}: lr {:.2e}", lr_at(step, total, &cfg.plan));
    }

    let (artifact, histories, n_users) = train_model(&cfg, &dataset)?;
    println!("trained on {n_users} users:");
    for h in &histories[0] {
        println!("  epoch {:>2}: mean loss {:.5} (lr {:.2e})", h.epoch, h.mean_loss, h.lr);
    }

    // Embed both random-saccade recordings of one held-out user.
    let test_user = dataset
        .manifest
        .users_in_split(gazeauth::signal::Split::Test)[0]
        .user_id
        .clone();
    let mut centroids = Vec::new();
    for rep in 1..=2 {
        let rec = dataset
            .recording(&test_user, gazeauth::signal::Task::RandomSaccade, rep)
            .expect("generated recording");
        let windows = partition_windows(rec, &artifact.channel_spec, &artifact.savgol, Some(&artifact.norm_stats))?;
        let embeddings: Vec<_> = windows
            .iter()
            .map(|w| artifact.embed_window(&w.data.view()))
            .collect::<gazeauth::Result<_>>()?;
        centroids.push(gazeauth::model::centroid_vector(&embeddings)?);
    }
    let dot: f64 = centroids[0].iter().zip(centroids[1].iter()).map(|(a, b)| a * b).sum();
    let n0 = centroids[0].iter().map(|v| v * v).sum::<f64>().sqrt();
    let n1 = centroids[1].iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "genuine cosine similarity between {test_user}'s two recordings: {:.4}",
        dot / (n0 * n1)
    );
    Ok(())
}
