//! Generate a small synthetic gaze dataset on disk and inspect the
//! manifest: per-user recordings, spatial-accuracy error, split and tier
//! assignments.
//!
//! Run with: cargo run --release --example generate_dataset

use gazeauth::signal::Split;
use gazeauth::synth::{generate_dataset, SynthConfig, TaskSpec};

fn main() -> gazeauth::Result<()> {
    let cfg = SynthConfig {
        n_users: 12,
        master_seed: 7,
        saccade_task: TaskSpec::random_saccade(20.0),
        pursuit_task: TaskSpec::smooth_pursuit(20.0),
        train_fraction: 0.5,
        ..SynthConfig::default()
    };
    let out = std::path::Path::new("out/example-dataset");
    let manifest = generate_dataset(&cfg, out)?;
    println!(
        "wrote {} users to {} ({} train / {} test)",
        manifest.users.len(),
        out.display(),
        manifest.users_in_split(Split::Train).len(),
        manifest.users_in_split(Split::Test).len(),
    );
    println!("{:<8} {:>10} {:>6} {:>6}  recordings", "user", "accuracy", "split", "tier");
    for user in &manifest.users {
        println!(
            "{:<8} {:>9.4}o {:>6} {:>6}  {}",
            user.user_id.to_string(),
            user.accuracy_error_deg,
            match user.split {
                Split::Train => "train",
                Split::Test => "test",
            },
            user.accuracy_tier.map(|t| t.to_string()).unwrap_or_default(),
            user.recordings.len(),
        );
    }
    Ok(())
}
