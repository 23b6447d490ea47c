//! All-pairs verification scoring and threshold metrics: ROC, EER,
//! FRR at a target FAR, and d-prime.
//!
//! The acceptance convention is score >= threshold (ties accept).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{linalg::general_mat_mul, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::UserId;

/// One enroll/verify comparison. Users are indices into the id tables of
/// the owning [`ScoreSet`], keeping millions of pairs compact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub enroll: u32,
    pub verify: u32,
    pub score: f64,
}

/// Labeled genuine/impostor cosine similarities for one evaluation run.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub enroll_users: Vec<UserId>,
    pub verify_users: Vec<UserId>,
    pub genuine: Vec<ScoredPair>,
    pub impostor: Vec<ScoredPair>,
}

impl ScoreSet {
    pub fn n_gen(&self) -> usize {
        self.genuine.len()
    }

    pub fn n_imp(&self) -> usize {
        self.impostor.len()
    }

    pub fn genuine_scores(&self) -> Vec<f64> {
        self.genuine.iter().map(|p| p.score).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.impostor.iter().map(|p| p.score).collect()
    }

    /// Build a set from bare score lists (provenance-free helper for
    /// metric computations on synthetic scores).
    pub fn from_scores(genuine: &[f64], impostor: &[f64]) -> Self {
        ScoreSet {
            enroll_users: Vec::new(),
            verify_users: Vec::new(),
            genuine: genuine
                .iter()
                .map(|&s| ScoredPair {
                    enroll: 0,
                    verify: 0,
                    score: s,
                })
                .collect(),
            impostor: impostor
                .iter()
                .map(|&s| ScoredPair {
                    enroll: 0,
                    verify: 0,
                    score: s,
                })
                .collect(),
        }
    }
}

/// Cosine similarity for the full enroll x verify cross product. A pair
/// is genuine iff the user ids match. Centroids with zero norm are
/// rejected, naming the user.
pub fn all_pairs_scores(
    enroll: &BTreeMap<UserId, Array1<f64>>,
    verify: &BTreeMap<UserId, Array1<f64>>,
) -> Result<ScoreSet> {
    if enroll.is_empty() || verify.is_empty() {
        return Err(Error::Data("all-pairs scoring needs nonempty enroll and verify sets".into()));
    }
    let dim = enroll.values().next().unwrap().len();
    let normalize = |side: &BTreeMap<UserId, Array1<f64>>, name: &str| -> Result<(Vec<UserId>, Array2<f64>)> {
        let mut ids = Vec::with_capacity(side.len());
        let mut mat = Array2::zeros((side.len(), dim));
        for (row, (user, vec)) in side.iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::Data(format!(
                    "{name} centroid for user {user} has dim {} != {dim}",
                    vec.len()
                )));
            }
            let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "{name} centroid for user {user} has zero or non-finite norm"
                )));
            }
            for (c, v) in vec.iter().enumerate() {
                mat[[row, c]] = v / norm;
            }
            ids.push(user.clone());
        }
        Ok((ids, mat))
    };
    let (enroll_ids, e_mat) = normalize(enroll, "enroll")?;
    let (verify_ids, v_mat) = normalize(verify, "verify")?;
    let mut sims = Array2::zeros((enroll_ids.len(), verify_ids.len()));
    general_mat_mul(1.0, &e_mat, &v_mat.t(), 0.0, &mut sims);

    // Genuine iff identical user id; resolve via the sorted verify table.
    let verify_lookup: BTreeMap<&UserId, usize> =
        verify_ids.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let mut genuine = Vec::new();
    let mut impostor = Vec::with_capacity(enroll_ids.len() * verify_ids.len());
    for (i, user) in enroll_ids.iter().enumerate() {
        let genuine_j = verify_lookup.get(user).copied();
        let row = sims.row(i);
        for (j, &score) in row.iter().enumerate() {
            let pair = ScoredPair {
                enroll: i as u32,
                verify: j as u32,
                score,
            };
            if genuine_j == Some(j) {
                genuine.push(pair);
            } else {
                impostor.push(pair);
            }
        }
    }
    Ok(ScoreSet {
        enroll_users: enroll_ids,
        verify_users: verify_ids,
        genuine,
        impostor,
    })
}

/// One ROC operating point under the score >= threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Monotone operating points swept over every distinct score, plus an
/// accept-none sentinel: the first point is (FAR=1, FRR=0) and the last
/// is (FAR=0, FRR=1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn sorted_scores(pairs: &[ScoredPair]) -> Vec<f64> {
    let mut v: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Count of elements < t in an ascending-sorted slice.
fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&x| x < t)
}

fn build_roc(scores: &ScoreSet) -> Result<RocCurve> {
    if scores.n_gen() == 0 || scores.n_imp() == 0 {
        return Err(Error::Data(format!(
            "ROC needs both classes: {} genuine, {} impostor",
            scores.n_gen(),
            scores.n_imp()
        )));
    }
    let gen = sorted_scores(&scores.genuine);
    let imp = sorted_scores(&scores.impostor);
    let n_gen = gen.len() as f64;
    let n_imp = imp.len() as f64;
    let mut thresholds: Vec<f64> = Vec::with_capacity(gen.len() + imp.len());
    thresholds.extend_from_slice(&gen);
    thresholds.extend_from_slice(&imp);
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    for &t in &thresholds {
        let far = (imp.len() - count_below(&imp, t)) as f64 / n_imp;
        let frr = count_below(&gen, t) as f64 / n_gen;
        points.push(RocPoint {
            threshold: t,
            far,
            frr,
        });
    }
    // Accept-none sentinel above the largest score.
    points.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(RocCurve { points })
}

/// Sweep the ROC and locate the equal-error point. When no threshold
/// gives FAR == FRR exactly, the crossing is linearly interpolated
/// between the adjacent operating points. Returns the EER as a fraction.
pub fn roc_and_eer(scores: &ScoreSet) -> Result<(RocCurve, f64)> {
    let curve = build_roc(scores)?;
    let eer = eer_from_points(&curve.points);
    Ok((curve, eer))
}

fn eer_from_points(points: &[RocPoint]) -> f64 {
    // far - frr starts at 1 - 0 > 0 and ends at 0 - 1 < 0; find the sign
    // change walking thresholds upward.
    let mut prev = &points[0];
    for p in points {
        let d = p.far - p.frr;
        if d == 0.0 {
            return p.far;
        }
        if d < 0.0 {
            let d1 = prev.far - prev.frr;
            let d2 = d;
            let s = d1 / (d1 - d2);
            return prev.far + s * (p.far - prev.far);
        }
        prev = p;
    }
    // Unreachable for valid curves; the sentinel has d = -1.
    prev.far
}

/// FRR at a target FAR with the conservative threshold rule: the smallest
/// swept threshold whose empirical FAR is <= the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFar {
    pub far_target: f64,
    /// FRR at the chosen threshold, as a fraction.
    pub frr: f64,
    pub threshold: f64,
    /// Empirical FAR actually achieved at the chosen threshold.
    pub achieved_far: f64,
    /// True when the impostor count cannot resolve the target
    /// (n_imp * far_target < 1), so the achieved FAR is 0.
    pub granularity_limited: bool,
}

pub fn frr_at_far(scores: &ScoreSet, far_target: f64) -> Result<FrrAtFar> {
    if scores.n_imp() == 0 {
        return Err(Error::Data("FRR@FAR needs at least one impostor score".into()));
    }
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::Config(format!("FAR target {far_target} outside [0, 1]")));
    }
    let curve = build_roc(scores)?;
    let granularity_limited = (scores.n_imp() as f64) * far_target < 1.0;
    for p in &curve.points {
        if p.far <= far_target {
            return Ok(FrrAtFar {
                far_target,
                frr: p.frr,
                threshold: p.threshold,
                achieved_far: p.far,
                granularity_limited,
            });
        }
    }
    unreachable!("sentinel point has FAR 0");
}

/// Separation of the genuine and impostor score distributions:
/// |mu1 - mu2| / sqrt((sigma1^2 + sigma2^2) / 2) with population SDs.
pub fn d_prime(scores: &ScoreSet) -> Result<f64> {
    if scores.n_gen() < 2 || scores.n_imp() < 2 {
        return Err(Error::Data(format!(
            "d-prime needs >= 2 scores per class, got {} genuine / {} impostor",
            scores.n_gen(),
            scores.n_imp()
        )));
    }
    let g = scores.genuine_scores();
    let i = scores.impostor_scores();
    let (mu1, sd1) = crate::stats::mean_sd(&g);
    let (mu2, sd2) = crate::stats::mean_sd(&i);
    let rms = ((sd1 * sd1 + sd2 * sd2) / 2.0).sqrt();
    if rms == 0.0 {
        return Err(Error::Numerical("d-prime undefined: both score SDs are zero".into()));
    }
    Ok((mu1 - mu2).abs() / rms)
}

/// FRR@FAR entry of a verification report, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFarReport {
    pub far_target: f64,
    pub frr_pct: f64,
    pub achieved_far: f64,
    pub threshold: f64,
    pub granularity_limited: bool,
}

/// Verification metrics for one evaluation run. Percent units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub eer_pct: f64,
    pub frr_at_far: Vec<FrrAtFarReport>,
    pub d_prime: f64,
    pub n_gen: usize,
    pub n_imp: usize,
}

/// Compute the full verification report for a score set.
pub fn verification_report(scores: &ScoreSet, far_targets: &[f64]) -> Result<(VerificationReport, RocCurve)> {
    let (curve, eer) = roc_and_eer(scores)?;
    let mut frr_entries = Vec::with_capacity(far_targets.len());
    for &target in far_targets {
        let f = frr_at_far(scores, target)?;
        frr_entries.push(FrrAtFarReport {
            far_target: target,
            frr_pct: 100.0 * f.frr,
            achieved_far: f.achieved_far,
            threshold: f.threshold,
            granularity_limited: f.granularity_limited,
        });
    }
    let d = d_prime(scores)?;
    Ok((
        VerificationReport {
            eer_pct: 100.0 * eer,
            frr_at_far: frr_entries,
            d_prime: d,
            n_gen: scores.n_gen(),
            n_imp: scores.n_imp(),
        },
        curve,
    ))
}

/// Export scores as CSV `enroll_user,verify_user,score,label`.
pub fn write_scores_csv(scores: &ScoreSet, path: &Path) -> Result<()> {
    let name = |ids: &[UserId], idx: u32| -> String {
        ids.get(idx as usize)
            .map(|u| u.to_string())
            .unwrap_or_default()
    };
    let mut out = String::from("enroll_user,verify_user,score,label\n");
    for p in &scores.genuine {
        out.push_str(&format!(
            "{},{},{},genuine\n",
            name(&scores.enroll_users, p.enroll),
            name(&scores.verify_users, p.verify),
            p.score
        ));
    }
    for p in &scores.impostor {
        out.push_str(&format!(
            "{},{},{},impostor\n",
            name(&scores.enroll_users, p.enroll),
            name(&scores.verify_users, p.verify),
            p.score
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn set(genuine: &[f64], impostor: &[f64]) -> ScoreSet {
        ScoreSet::from_scores(genuine, impostor)
    }

    /// Brute-force oracle: evaluate FAR/FRR at every candidate threshold
    /// by direct counting, then locate the equal-error crossing with its
    /// own interpolation.
    fn eer_oracle(genuine: &[f64], impostor: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
        thresholds.sort_unstable_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        let eval = |t: f64| -> (f64, f64) {
            let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
            let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
            (far, frr)
        };
        let mut prev = eval(thresholds[0]);
        for &t in &thresholds {
            let (far, frr) = eval(t);
            if far == frr {
                return far;
            }
            if far < frr {
                let d1 = prev.0 - prev.1;
                let d2 = far - frr;
                let s = d1 / (d1 - d2);
                return prev.0 + s * (far - prev.0);
            }
            prev = (far, frr);
        }
        unreachable!()
    }

    #[test]
    fn all_pairs_counts_and_labels() {
        // 3 enrolled x 4 verified with 2 shared users -> 2 genuine + 10
        // impostor scores.
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        let v = |x: f64| Array1::from_vec(vec![x, 1.0 - x]);
        enroll.insert(UserId::new("a"), v(0.3));
        enroll.insert(UserId::new("b"), v(0.5));
        enroll.insert(UserId::new("c"), v(0.7));
        verify.insert(UserId::new("a"), v(0.35));
        verify.insert(UserId::new("b"), v(0.55));
        verify.insert(UserId::new("d"), v(0.9));
        verify.insert(UserId::new("e"), v(0.1));
        let scores = all_pairs_scores(&enroll, &verify).unwrap();
        assert_eq!(scores.n_gen(), 2);
        assert_eq!(scores.n_imp(), 10);
        assert_eq!(scores.n_gen() + scores.n_imp(), 3 * 4);
    }

    #[test]
    fn identical_embedding_scores_one() {
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        let e = Array1::from_vec(vec![0.1, -0.4, 0.2]);
        enroll.insert(UserId::new("a"), e.clone());
        verify.insert(UserId::new("a"), e);
        let scores = all_pairs_scores(&enroll, &verify).unwrap();
        assert!((scores.genuine[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_centroid_names_user() {
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        enroll.insert(UserId::new("bad_user"), Array1::zeros(3));
        verify.insert(UserId::new("x"), Array1::from_vec(vec![1.0, 0.0, 0.0]));
        let err = all_pairs_scores(&enroll, &verify).unwrap_err();
        assert!(err.to_string().contains("bad_user"));
    }

    #[test]
    fn genuine_impostor_count_structure() {
        // n_gen = users with both recordings; n_imp = cross product minus.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        let mut both = 0;
        for u in 0..40 {
            let vec = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
            let has_enroll = u % 3 != 0;
            let has_verify = u % 4 != 0;
            if has_enroll {
                enroll.insert(UserId::new(format!("u{u:03}")), vec.clone());
            }
            if has_verify {
                verify.insert(UserId::new(format!("u{u:03}")), vec);
            }
            if has_enroll && has_verify {
                both += 1;
            }
        }
        let scores = all_pairs_scores(&enroll, &verify).unwrap();
        assert_eq!(scores.n_gen(), both);
        assert_eq!(scores.n_imp(), enroll.len() * verify.len() - both);
    }

    #[test]
    fn eer_perfect_separation() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        let (_, eer) = roc_and_eer(&s).unwrap();
        assert_eq!(eer, 0.0);
    }

    #[test]
    fn eer_one_third_example() {
        let s = set(&[0.9, 0.5, 0.3], &[0.6, 0.2, 0.1]);
        let (_, eer) = roc_and_eer(&s).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-12, "eer {eer}");
    }

    #[test]
    fn eer_identical_multisets_is_half() {
        let s = set(&[0.1, 0.4, 0.7], &[0.1, 0.4, 0.7]);
        let (_, eer) = roc_and_eer(&s).unwrap();
        assert!((eer - 0.5).abs() < 1e-9);
    }

    #[test]
    fn eer_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n_g = rng.gen_range(1..60);
            let n_i = rng.gen_range(1..60);
            // Mix continuous scores with deliberate ties.
            let gen: Vec<f64> = (0..n_g)
                .map(|_| (rng.gen_range(-10..=10) as f64) / 10.0)
                .collect();
            let imp: Vec<f64> = (0..n_i)
                .map(|_| (rng.gen_range(-10..=10) as f64) / 10.0)
                .collect();
            let s = set(&gen, &imp);
            let (_, eer) = roc_and_eer(&s).unwrap();
            let want = eer_oracle(&gen, &imp);
            assert!((eer - want).abs() < 1e-12, "eer {eer} oracle {want}");
        }
    }

    #[test]
    fn eer_invariant_under_increasing_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gen: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let imp: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, base) = roc_and_eer(&set(&gen, &imp)).unwrap();
        let f = |x: f64| (3.0 * x).tanh() + 0.1 * x;
        let gen_t: Vec<f64> = gen.iter().map(|&x| f(x)).collect();
        let imp_t: Vec<f64> = imp.iter().map(|&x| f(x)).collect();
        let (_, transformed) = roc_and_eer(&set(&gen_t, &imp_t)).unwrap();
        assert!((base - transformed).abs() < 1e-9);
    }

    #[test]
    fn roc_is_monotone_with_sentinels() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let gen: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let imp: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (curve, _) = roc_and_eer(&set(&gen, &imp)).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.far, first.frr), (1.0, 0.0));
        assert_eq!((last.far, last.frr), (0.0, 1.0));
        for w in curve.points.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
            assert!(w[0].far >= w[1].far);
            assert!(w[0].frr <= w[1].frr);
        }
    }

    #[test]
    fn frr_at_far_examples() {
        // Clean separation: FRR 0 at every target.
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        for target in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(frr_at_far(&s, target).unwrap().frr, 0.0);
        }
        // Mixed case from the contract: target 25% -> FRR 50%.
        let s = set(&[0.9, 0.2], &[0.5, 0.1]);
        let f = frr_at_far(&s, 0.25).unwrap();
        assert_eq!(f.frr, 0.5);
        assert_eq!(f.achieved_far, 0.0);
        // Accept-all threshold at target 100% -> FRR 0.
        let f = frr_at_far(&s, 1.0).unwrap();
        assert_eq!(f.frr, 0.0);
        assert_eq!(f.achieved_far, 1.0);
    }

    #[test]
    fn frr_at_far_monotone_and_granularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let gen: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let imp: Vec<f64> = (0..80).map(|_| rng.gen_range(-0.5..0.8)).collect();
        let s = set(&gen, &imp);
        let mut last = f64::INFINITY;
        for target in [0.001, 0.01, 0.05, 0.1, 0.3, 0.7, 1.0] {
            let f = frr_at_far(&s, target).unwrap();
            assert!(f.frr <= last + 1e-15, "FRR must not increase with FAR target");
            last = f.frr;
        }
        // 80 impostors cannot resolve 1-in-50000.
        let f = frr_at_far(&s, 1.0 / 50_000.0).unwrap();
        assert!(f.granularity_limited);
        assert_eq!(f.achieved_far, 0.0);
        let f = frr_at_far(&s, 0.5).unwrap();
        assert!(!f.granularity_limited);
    }

    #[test]
    fn d_prime_examples() {
        // Identical distributions -> 0.
        let s = set(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]);
        assert_eq!(d_prime(&s).unwrap(), 0.0);
        // mu 0.9/0.1, population sd 0.1/0.1 -> 8.0.
        let s = set(&[0.8, 1.0], &[0.0, 0.2]);
        assert!((d_prime(&s).unwrap() - 8.0).abs() < 1e-12);
        // Affine transform of both sets leaves d-prime unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let gen: Vec<f64> = (0..30).map(|_| rng.gen_range(0.2..1.0)).collect();
        let imp: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..0.4)).collect();
        let base = d_prime(&set(&gen, &imp)).unwrap();
        let (a, b) = (2.5, -0.7);
        let gen_t: Vec<f64> = gen.iter().map(|&x| a * x + b).collect();
        let imp_t: Vec<f64> = imp.iter().map(|&x| a * x + b).collect();
        let t = d_prime(&set(&gen_t, &imp_t)).unwrap();
        assert!((base - t).abs() < 1e-9);
        // Degenerate: both SDs zero.
        assert!(d_prime(&set(&[0.5, 0.5], &[0.2, 0.2])).is_err());
    }

    #[test]
    fn duplicate_genuine_score_moves_eer_at_most_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..50 {
            let n_g = rng.gen_range(3..40);
            let n_i = rng.gen_range(3..40);
            let gen: Vec<f64> = (0..n_g).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let imp: Vec<f64> = (0..n_i).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, base) = roc_and_eer(&set(&gen, &imp)).unwrap();
            let mut gen2 = gen.clone();
            gen2.push(gen[0]);
            let (_, bumped) = roc_and_eer(&set(&gen2, &imp)).unwrap();
            assert!(
                (base - bumped).abs() <= 1.0 / n_g as f64 + 1e-12,
                "dup moved EER {base} -> {bumped} with n_gen {n_g}"
            );
        }
    }

    #[test]
    fn scoring_is_order_independent() {
        // Insertion order cannot change a BTreeMap-backed report.
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let users: Vec<UserId> = (0..20).map(|u| UserId::new(format!("u{u:02}"))).collect();
        let vecs: Vec<Array1<f64>> = (0..20)
            .map(|_| Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let build = |order: &[usize]| {
            let mut enroll = BTreeMap::new();
            let mut verify = BTreeMap::new();
            for &i in order {
                enroll.insert(users[i].clone(), vecs[i].clone());
                verify.insert(users[i].clone(), vecs[(i + 1) % 20].clone());
            }
            let scores = all_pairs_scores(&enroll, &verify).unwrap();
            verification_report(&scores, &[0.01]).unwrap().0
        };
        let fwd: Vec<usize> = (0..20).collect();
        let mut rev = fwd.clone();
        rev.reverse();
        let a = build(&fwd);
        let b = build(&rev);
        assert_eq!(a.eer_pct, b.eer_pct);
        assert_eq!(a.d_prime, b.d_prime);
        assert_eq!(a.frr_at_far[0].frr_pct, b.frr_at_far[0].frr_pct);
    }
}
