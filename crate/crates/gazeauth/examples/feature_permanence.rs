//! Embedding-feature reliability: test-retest ICC across two sessions,
//! feature intercorrelations, and the skewness/kurtosis normality screen.
//!
//! Run with: cargo run --release --example feature_permanence

use gazeauth::permanence::{
    icc, normality_screen, permanence_report, FeatureTable, IccKind, PermanenceConfig,
};
use gazeauth::signal::UserId;
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> gazeauth::Result<()> {
    // Build a feature table where session B repeats session A with small
    // perturbations: high but imperfect reliability.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n_users = 300;
    let dim = 128;
    let entries: Vec<(UserId, Array1<f64>, Array1<f64>)> = (0..n_users)
        .map(|u| {
            let a = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
            let b = &a + &Array1::from_shape_fn(dim, |_| 0.25 * rng.sample::<f64, _>(StandardNormal));
            (UserId::new(format!("u{u:04}")), a, b)
        })
        .collect();
    let table = FeatureTable::from_centroids(&entries)?;

    let report = permanence_report(&table, &PermanenceConfig::default())?;
    println!(
        "ICC over {} features: min {:.3} / median {:.3} / max {:.3}",
        report.n_features, report.icc_min, report.icc_median, report.icc_max
    );
    println!(
        "intercorrelation |r|: median {:.3}, max {:.3}",
        report.intercorr_median, report.intercorr_max
    );
    println!(
        "normality screen: {}/{} features pass (skew median {:.3}, excess kurtosis median {:.3})",
        report.normal_pass_count, report.n_features, report.skew_median, report.exkurt_median
    );

    // The two ICC forms differ when sessions shift: consistency ignores a
    // constant session offset, absolute agreement does not.
    let a: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
    println!(
        "offset sessions: ICC(3,1) consistency = {:.4}, ICC(2,1) agreement = {:.4}",
        icc(&a, &b, IccKind::Consistency31)?,
        icc(&a, &b, IccKind::Agreement21)?
    );

    // The normality screen flags a skewed feature.
    let skewed: Vec<f64> = (0..500).map(|_| -f64::ln(rng.gen::<f64>().max(1e-12))).collect();
    let r = normality_screen(&skewed, 2000, (2.5, 97.5), 7)?;
    println!(
        "exponential sample: pass={} (skewness {:.2}, excess kurtosis {:.2})",
        r.pass,
        r.skewness.unwrap_or(f64::NAN),
        r.excess_kurtosis.unwrap_or(f64::NAN)
    );
    Ok(())
}
