//! Preprocessing walkthrough: take one synthetic recording, differentiate
//! it with the Savitzky-Golay filter, clamp, cut into 5-second windows,
//! and normalize with training-set statistics.
//!
//! Run with: cargo run --release --example preprocess_windows

use gazeauth::signal::{
    compute_norm_stats, partition_windows, ChannelSpec, SavgolConfig, WINDOW_SAMPLES,
};
use gazeauth::synth::{generate_recording, generate_user, SynthConfig, TaskSpec};

fn main() -> gazeauth::Result<()> {
    let synth = SynthConfig {
        master_seed: 11,
        ..SynthConfig::default()
    };
    let user = generate_user(&synth, 0);
    let task = TaskSpec::random_saccade(20.0);
    let (recording, accuracy) = generate_recording(&user, &task, 1, 1234)?;
    println!(
        "recording {}: {} samples at {} Hz ({} s), mean accuracy error {:.3} deg",
        recording.recording_id(),
        recording.len(),
        recording.sample_rate,
        recording.duration_s(),
        accuracy
    );

    let spec = ChannelSpec::binocular_both_axes();
    let sg = SavgolConfig::default();
    let raw = partition_windows(&recording, &spec, &sg, None)?;
    println!(
        "{} channels ({:?}), {} windows of {} samples",
        spec.channel_count(),
        spec.channel_labels(),
        raw.len(),
        WINDOW_SAMPLES
    );

    let stats = compute_norm_stats(&raw)?;
    for (label, (mean, sd)) in spec
        .channel_labels()
        .iter()
        .zip(stats.mean.iter().zip(stats.sd.iter()))
    {
        println!("  {label:<8} velocity mean {mean:>9.4} deg/s, sd {sd:>9.4} deg/s");
    }

    let normalized = partition_windows(&recording, &spec, &sg, Some(&stats))?;
    let peak = normalized[0]
        .data
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("first normalized window peak |value| = {peak:.3}");
    Ok(())
}
