//! Verification metrics on a synthetic score distribution: all-pairs
//! scoring, the ROC sweep, EER, FRR at a 1-in-50000 FAR target, and
//! d-prime.
//!
//! Run with: cargo run --release --example verification_metrics

use std::collections::BTreeMap;

use gazeauth::signal::UserId;
use gazeauth::verify::{all_pairs_scores, frr_at_far, roc_and_eer, verification_report};
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> gazeauth::Result<()> {
    // Fake a population of enrolled/verified centroids: each user has a
    // base direction, the verification sample is a noisy copy.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dim = 64;
    let n_users = 400;
    let mut enroll = BTreeMap::new();
    let mut verify = BTreeMap::new();
    for u in 0..n_users {
        let id = UserId::new(format!("u{u:04}"));
        let base = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
        let probe = &base + &Array1::from_shape_fn(dim, |_| rng.gen_range(-0.9..0.9));
        enroll.insert(id.clone(), base);
        verify.insert(id, probe);
    }

    let scores = all_pairs_scores(&enroll, &verify)?;
    println!(
        "{} genuine and {} impostor pairs ({} x {} cross product)",
        scores.n_gen(),
        scores.n_imp(),
        n_users,
        n_users
    );

    let (curve, eer) = roc_and_eer(&scores)?;
    println!("ROC has {} operating points; EER = {:.3}%", curve.points.len(), 100.0 * eer);

    for target in [0.01, 1e-3, 1.0 / 50_000.0] {
        let f = frr_at_far(&scores, target)?;
        println!(
            "FRR at FAR<={:>9.6}: {:6.2}% (threshold {:.4}, achieved FAR {:.6}{})",
            target,
            100.0 * f.frr,
            f.threshold,
            f.achieved_far,
            if f.granularity_limited { ", granularity-limited" } else { "" }
        );
    }

    let (report, _) = verification_report(&scores, &[1.0 / 50_000.0])?;
    println!("d' = {:.3}", report.d_prime);
    Ok(())
}
