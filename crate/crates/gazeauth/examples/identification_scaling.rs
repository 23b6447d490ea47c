//! Identification-rate decay with gallery size: subsample galleries of
//! increasing size, report P5/P95 bands, and extrapolate the below-chance
//! gallery size by fitting scaling curves to the Rank-1 P95 points.
//!
//! Run with: cargo run --release --example identification_scaling

use std::collections::BTreeMap;

use gazeauth::identify::{fit_scaling_curve, gallery_sweep, CurveFamily, EvalPool, SweepMetric};
use gazeauth::signal::UserId;
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> gazeauth::Result<()> {
    // Synthetic embedding pool: moderate verify noise makes larger
    // galleries genuinely harder.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let dim = 32;
    let mut users = BTreeMap::new();
    for u in 0..600 {
        let id = UserId::new(format!("u{u:04}"));
        let base = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
        let probe = &base + &Array1::from_shape_fn(dim, |_| rng.gen_range(-1.1..1.1));
        users.insert(id, (base, probe));
    }
    let pool = EvalPool { users };

    let sizes = [25, 50, 100, 200, 400];
    let sweep = gallery_sweep(&pool, &sizes, 50, 99, 0.01)?;
    println!("{:>5} {:>8} {:>8} {:>8}", "N", "IR P5", "IR P95", "IR mid");
    for row in sweep.rows.iter().filter(|r| r.metric == SweepMetric::Rank1Ir) {
        println!("{:>5} {:>7.2}% {:>7.2}% {:>7.2}%", row.n, row.p5, row.p95, row.mid);
    }

    let obs: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.metric == SweepMetric::Rank1Ir)
        .map(|r| (r.n as f64, r.p95))
        .collect();
    for family in [CurveFamily::Sqrt, CurveFamily::Power, CurveFamily::Log, CurveFamily::Linear] {
        match fit_scaling_curve(&obs, family) {
            Ok(fit) => println!(
                "{:?}: coefficients {:?}, adjusted R^2 {:.4}, below-chance gallery ~ {}",
                family,
                fit.coefficients.iter().map(|c| (c * 1e4).round() / 1e4).collect::<Vec<_>>(),
                fit.r2_adj,
                fit.root
                    .map(|r| format!("{:.0} users", r))
                    .unwrap_or_else(|| "none".into())
            ),
            Err(e) => println!("{family:?}: fit failed ({e})"),
        }
    }
    Ok(())
}
