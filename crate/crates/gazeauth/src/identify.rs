//! Closed-set Rank-1 identification, gallery-size subsampling sweeps, and
//! scaling-curve fits with below-chance extrapolation.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{linalg::general_mat_mul, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::UserId;
use crate::stats::{derive_seed, percentile_nearest_rank, solve_linear};
use crate::verify::{all_pairs_scores, frr_at_far, roc_and_eer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub rank1_ir_pct: f64,
    pub n_probes: usize,
    pub n_gallery: usize,
}

/// Closed-set Rank-1 identification: each probe (verification centroid of
/// a user present in the gallery) is matched to the gallery entry with
/// the highest cosine similarity; ties break to the smallest user id.
/// Verification users absent from the gallery are excluded.
pub fn rank1(
    enroll: &BTreeMap<UserId, Array1<f64>>,
    verify: &BTreeMap<UserId, Array1<f64>>,
) -> Result<IdentificationReport> {
    if enroll.is_empty() {
        return Err(Error::Data("identification needs a nonempty gallery".into()));
    }
    let probes: Vec<(&UserId, &Array1<f64>)> = verify
        .iter()
        .filter(|(user, _)| enroll.contains_key(*user))
        .collect();
    if probes.is_empty() {
        return Err(Error::Data("identification needs probes enrolled in the gallery".into()));
    }
    let dim = enroll.values().next().unwrap().len();
    let normalize_into = |vec: &Array1<f64>, row: &mut [f64], user: &UserId| -> Result<()> {
        if vec.len() != dim {
            return Err(Error::Data(format!("centroid dim mismatch for user {user}")));
        }
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!("zero-norm centroid for user {user}")));
        }
        for (dst, v) in row.iter_mut().zip(vec.iter()) {
            *dst = v / norm;
        }
        Ok(())
    };
    let gallery_ids: Vec<&UserId> = enroll.keys().collect();
    let mut gallery = Array2::zeros((enroll.len(), dim));
    for (i, (user, vec)) in enroll.iter().enumerate() {
        normalize_into(vec, gallery.row_mut(i).into_slice().unwrap(), user)?;
    }
    let mut probe_mat = Array2::zeros((probes.len(), dim));
    for (i, (user, vec)) in probes.iter().enumerate() {
        normalize_into(vec, probe_mat.row_mut(i).into_slice().unwrap(), user)?;
    }
    let mut sims = Array2::zeros((probes.len(), enroll.len()));
    general_mat_mul(1.0, &probe_mat, &gallery.t(), 0.0, &mut sims);
    let mut correct = 0usize;
    for (p, (user, _)) in probes.iter().enumerate() {
        // Gallery ids iterate in ascending order, so keeping strict maxima
        // breaks ties toward the smallest user id.
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, &sim) in sims.row(p).iter().enumerate() {
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        if gallery_ids[best] == *user {
            correct += 1;
        }
    }
    Ok(IdentificationReport {
        rank1_ir_pct: 100.0 * correct as f64 / probes.len() as f64,
        n_probes: probes.len(),
        n_gallery: enroll.len(),
    })
}

/// Per-user enrollment and verification centroids eligible for gallery
/// subsampling (every user has both sides).
#[derive(Debug, Clone, Default)]
pub struct EvalPool {
    pub users: BTreeMap<UserId, (Array1<f64>, Array1<f64>)>,
}

impl EvalPool {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Metric kind reported by a gallery sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Eer,
    FrrAtFar,
    Rank1Ir,
}

impl SweepMetric {
    pub fn label(&self) -> &'static str {
        match self {
            SweepMetric::Eer => "eer",
            SweepMetric::FrrAtFar => "frr_at_far",
            SweepMetric::Rank1Ir => "rank1_ir",
        }
    }
}

/// P5/P95 band (nearest-rank percentiles) and their midline for one
/// metric at one gallery size. Percent units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub metric: SweepMetric,
    pub p5: f64,
    pub p95: f64,
    pub mid: f64,
}

/// Raw per-subset measurements, kept so percentile conventions can be
/// recomputed downstream. Percent units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepMeasurement {
    pub n: usize,
    pub subset: usize,
    pub eer_pct: f64,
    pub frr_pct: f64,
    pub rank1_ir_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub raw: Vec<SweepMeasurement>,
    pub k: usize,
    pub far_target: f64,
    pub seed: u64,
}

impl SweepResult {
    /// Midline values of one metric in ascending gallery-size order.
    pub fn midline(&self, metric: SweepMetric) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.n, r.mid))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("N,metric,p5,p95,mid\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                r.metric.label(),
                r.p5,
                r.p95,
                r.mid
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn write_raw_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("N,subset,eer_pct,frr_pct,rank1_ir_pct\n");
        for m in &self.raw {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.n, m.subset, m.eer_pct, m.frr_pct, m.rank1_ir_pct
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// For each gallery size N, draw K user subsets (without replacement
/// within a subset), evaluate EER / FRR@FAR / Rank-1 IR on each, and
/// report nearest-rank P5 and P95 with their mean. Each subset's RNG
/// stream derives from (seed, N, subset index), so results do not depend
/// on evaluation order.
pub fn gallery_sweep(
    pool: &EvalPool,
    sizes: &[usize],
    k: usize,
    seed: u64,
    far_target: f64,
) -> Result<SweepResult> {
    if k == 0 {
        return Err(Error::Config("gallery sweep needs K >= 1 subsets".into()));
    }
    let mut sorted_sizes = sizes.to_vec();
    sorted_sizes.sort_unstable();
    sorted_sizes.dedup();
    if sorted_sizes.is_empty() {
        return Err(Error::Config("gallery sweep needs at least one size".into()));
    }
    if *sorted_sizes.last().unwrap() > pool.len() {
        return Err(Error::Data(format!(
            "gallery size {} exceeds eligible pool of {}",
            sorted_sizes.last().unwrap(),
            pool.len()
        )));
    }
    if sorted_sizes[0] < 2 {
        return Err(Error::Config("gallery sizes must be >= 2".into()));
    }
    let user_list: Vec<&UserId> = pool.users.keys().collect();
    // Subsets are independent: each derives its RNG stream from
    // (seed, N, subset index), so parallel and serial runs agree.
    let jobs: Vec<(usize, usize)> = sorted_sizes
        .iter()
        .flat_map(|&n| (0..k).map(move |subset| (n, subset)))
        .collect();
    let raw: Vec<SweepMeasurement> = jobs
        .par_iter()
        .map(|&(n, subset)| -> Result<SweepMeasurement> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5EEB, n as u64, subset as u64]));
            let chosen = rand::seq::index::sample(&mut rng, user_list.len(), n);
            let mut enroll = BTreeMap::new();
            let mut verify = BTreeMap::new();
            for idx in chosen.iter() {
                let user = user_list[idx];
                let (e, v) = &pool.users[user];
                enroll.insert(user.clone(), e.clone());
                verify.insert(user.clone(), v.clone());
            }
            let scores = all_pairs_scores(&enroll, &verify)?;
            let (_, eer) = roc_and_eer(&scores)?;
            let frr = frr_at_far(&scores, far_target)?;
            let ir = rank1(&enroll, &verify)?;
            Ok(SweepMeasurement {
                n,
                subset,
                eer_pct: 100.0 * eer,
                frr_pct: 100.0 * frr.frr,
                rank1_ir_pct: ir.rank1_ir_pct,
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &n in &sorted_sizes {
        let of = |f: fn(&SweepMeasurement) -> f64| -> Vec<f64> {
            raw.iter().filter(|m| m.n == n).map(f).collect()
        };
        for (metric, values) in [
            (SweepMetric::Eer, of(|m| m.eer_pct)),
            (SweepMetric::FrrAtFar, of(|m| m.frr_pct)),
            (SweepMetric::Rank1Ir, of(|m| m.rank1_ir_pct)),
        ] {
            let p5 = percentile_nearest_rank(&values, 5.0);
            let p95 = percentile_nearest_rank(&values, 95.0);
            rows.push(SweepRow {
                n,
                metric,
                p5,
                p95,
                mid: 0.5 * (p5 + p95),
            });
        }
    }
    Ok(SweepResult {
        rows,
        raw,
        k,
        far_target,
        seed,
    })
}

/// Curve family for identification-rate scaling fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    /// a*sqrt(x) + b
    Sqrt,
    /// a*x^b + c
    Power,
    /// a*ln(x) + b
    Log,
    /// a*x + b
    Linear,
}

impl CurveFamily {
    pub fn n_params(&self) -> usize {
        match self {
            CurveFamily::Power => 3,
            _ => 2,
        }
    }

    /// Evaluate the fitted curve.
    pub fn eval(&self, coeffs: &[f64], x: f64) -> f64 {
        match self {
            CurveFamily::Sqrt => coeffs[0] * x.sqrt() + coeffs[1],
            CurveFamily::Power => coeffs[0] * x.powf(coeffs[1]) + coeffs[2],
            CurveFamily::Log => coeffs[0] * x.ln() + coeffs[1],
            CurveFamily::Linear => coeffs[0] * x + coeffs[1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFit {
    pub family: CurveFamily,
    pub coefficients: Vec<f64>,
    pub r2_adj: f64,
    /// Extrapolated gallery size where the fitted curve reaches zero
    /// (below-chance estimate), when the curve crosses downward.
    pub root: Option<f64>,
}

impl CurveFit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("curve fit serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn fit_two_param(obs: &[(f64, f64)], transform: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let n = obs.len() as f64;
    let mut szz = 0.0;
    let mut sz = 0.0;
    let mut szy = 0.0;
    let mut sy = 0.0;
    for &(x, y) in obs {
        let z = transform(x);
        szz += z * z;
        sz += z;
        szy += z * y;
        sy += y;
    }
    let mut a = vec![vec![szz, sz], vec![sz, n]];
    let mut b = vec![szy, sy];
    let sol = solve_linear(&mut a, &mut b)
        .map_err(|_| Error::Numerical("degenerate design matrix in curve fit".into()))?;
    Ok((sol[0], sol[1]))
}

fn sse(family: CurveFamily, coeffs: &[f64], obs: &[(f64, f64)]) -> f64 {
    obs.iter()
        .map(|&(x, y)| {
            let r = family.eval(coeffs, x) - y;
            r * r
        })
        .sum()
}

/// Damped Gauss-Newton for a*x^b + c with multi-start over the exponent.
fn fit_power(obs: &[(f64, f64)]) -> Result<Vec<f64>> {
    let starts = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &b0 in &starts {
        // For a fixed exponent the model is linear in (a, c).
        let (a0, c0) = match fit_two_param(obs, |x| x.powf(b0)) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let mut theta = [a0, b0, c0];
        let mut lambda = 1e-3;
        let mut current = sse(CurveFamily::Power, &theta, obs);
        for _ in 0..200 {
            // J columns: x^b, a x^b ln x, 1.
            let mut jtj = vec![vec![0.0; 3]; 3];
            let mut jtr = vec![0.0; 3];
            for &(x, y) in obs {
                let xb = x.powf(theta[1]);
                let j = [xb, theta[0] * xb * x.ln(), 1.0];
                let r = theta[0] * xb + theta[2] - y;
                for p in 0..3 {
                    jtr[p] += j[p] * r;
                    for q in 0..3 {
                        jtj[p][q] += j[p] * j[q];
                    }
                }
            }
            let mut a = jtj.clone();
            for p in 0..3 {
                a[p][p] += lambda * (1.0 + jtj[p][p]);
            }
            let mut rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let delta = match solve_linear(&mut a, &mut rhs) {
                Ok(d) => d,
                Err(_) => break,
            };
            let candidate = [theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]];
            let cand_sse = sse(CurveFamily::Power, &candidate, obs);
            if cand_sse.is_finite() && cand_sse < current {
                let rel = (current - cand_sse) / current.max(1e-300);
                theta = candidate;
                current = cand_sse;
                lambda = (lambda / 3.0).max(1e-12);
                if rel < 1e-12 {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
        if best.as_ref().map(|(s, _)| current < *s).unwrap_or(true) {
            best = Some((current, theta.to_vec()));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::Numerical("power fit failed from every start".into()))
}

fn curve_root(family: CurveFamily, coeffs: &[f64], obs: &[(f64, f64)]) -> Option<f64> {
    let max_x = obs.iter().map(|&(x, _)| x).fold(f64::MIN, f64::max);
    match family {
        CurveFamily::Sqrt => {
            let (a, b) = (coeffs[0], coeffs[1]);
            if a < 0.0 && b > 0.0 {
                Some((b / -a) * (b / -a))
            } else {
                None
            }
        }
        CurveFamily::Log => {
            let (a, b) = (coeffs[0], coeffs[1]);
            if a < 0.0 {
                Some((-b / a).exp())
            } else {
                None
            }
        }
        CurveFamily::Linear => {
            let (a, b) = (coeffs[0], coeffs[1]);
            if a < 0.0 && b > 0.0 {
                Some(-b / a)
            } else {
                None
            }
        }
        CurveFamily::Power => {
            // Bisection over the extrapolation range.
            let mut lo = max_x;
            let mut hi = 1e9;
            let f = |x: f64| family.eval(coeffs, x);
            if !(f(lo) > 0.0 && f(hi) <= 0.0) {
                return None;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(0.5 * (lo + hi))
        }
    }
}

/// Fit one curve family to (gallery size, identification rate)
/// observations by least squares. The sqrt/log/linear families use the
/// closed-form linear solution on the transformed abscissa; the power
/// family uses damped Gauss-Newton with multi-start.
pub fn fit_scaling_curve(obs: &[(f64, f64)], family: CurveFamily) -> Result<CurveFit> {
    let p = family.n_params();
    if obs.len() < p + 1 {
        return Err(Error::Data(format!(
            "{family:?} fit needs at least {} observations, got {}",
            p + 1,
            obs.len()
        )));
    }
    if obs.iter().any(|&(x, _)| !(x > 0.0)) {
        return Err(Error::Data("curve fit needs positive gallery sizes".into()));
    }
    let coefficients = match family {
        CurveFamily::Sqrt => {
            let (a, b) = fit_two_param(obs, f64::sqrt)?;
            vec![a, b]
        }
        CurveFamily::Log => {
            let (a, b) = fit_two_param(obs, f64::ln)?;
            vec![a, b]
        }
        CurveFamily::Linear => {
            let (a, b) = fit_two_param(obs, |x| x)?;
            vec![a, b]
        }
        CurveFamily::Power => fit_power(obs)?,
    };
    let n = obs.len() as f64;
    let y_mean = obs.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sst: f64 = obs.iter().map(|&(_, y)| (y - y_mean) * (y - y_mean)).sum();
    if sst == 0.0 {
        return Err(Error::Numerical("curve fit undefined for constant observations".into()));
    }
    let residual = sse(family, &coefficients, obs);
    let r2 = 1.0 - residual / sst;
    let r2_adj = if obs.len() > p + 1 {
        1.0 - (1.0 - r2) * (n - 1.0) / (n - p as f64 - 1.0)
    } else {
        r2
    };
    let root = curve_root(family, &coefficients, obs).filter(|r| *r > 0.0);
    Ok(CurveFit {
        family,
        coefficients,
        r2_adj,
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn vec1(values: &[f64]) -> Array1<f64> {
        Array1::from_vec(values.to_vec())
    }

    #[test]
    fn rank1_single_user() {
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        enroll.insert(UserId::new("a"), vec1(&[1.0, 0.0]));
        verify.insert(UserId::new("a"), vec1(&[1.0, 0.0]));
        let r = rank1(&enroll, &verify).unwrap();
        assert_eq!(r.rank1_ir_pct, 100.0);
        assert_eq!((r.n_probes, r.n_gallery), (1, 1));
    }

    #[test]
    fn rank1_three_of_four() {
        // Four users; probe d lands closest to a's gallery entry.
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        enroll.insert(UserId::new("a"), vec1(&[1.0, 0.0]));
        enroll.insert(UserId::new("b"), vec1(&[0.0, 1.0]));
        enroll.insert(UserId::new("c"), vec1(&[1.0, 1.0]));
        enroll.insert(UserId::new("d"), vec1(&[-1.0, 0.0]));
        verify.insert(UserId::new("a"), vec1(&[0.9, 0.1]));
        verify.insert(UserId::new("b"), vec1(&[0.1, 0.9]));
        verify.insert(UserId::new("c"), vec1(&[0.9, 1.1]));
        verify.insert(UserId::new("d"), vec1(&[0.9, 0.0]));
        let r = rank1(&enroll, &verify).unwrap();
        assert_eq!(r.rank1_ir_pct, 75.0);
    }

    #[test]
    fn rank1_excludes_unenrolled_probes() {
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        enroll.insert(UserId::new("a"), vec1(&[1.0, 0.0]));
        verify.insert(UserId::new("a"), vec1(&[1.0, 0.1]));
        verify.insert(UserId::new("z"), vec1(&[0.0, 1.0]));
        let r = rank1(&enroll, &verify).unwrap();
        assert_eq!(r.n_probes, 1);
    }

    #[test]
    fn rank1_ties_break_to_smallest_user_id() {
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        // Identical gallery entries: the probe ties across all three.
        for id in ["m", "b", "x"] {
            enroll.insert(UserId::new(id), vec1(&[1.0, 0.0]));
        }
        verify.insert(UserId::new("b"), vec1(&[1.0, 0.0]));
        verify.insert(UserId::new("m"), vec1(&[1.0, 0.0]));
        verify.insert(UserId::new("x"), vec1(&[1.0, 0.0]));
        let r = rank1(&enroll, &verify).unwrap();
        // All three probes match "b" (smallest id); only b's probe is correct.
        assert!((r.rank1_ir_pct - 100.0 / 3.0).abs() < 1e-9);
    }

    /// Exhaustive argmax oracle with the same tie rule.
    fn rank1_oracle(
        enroll: &BTreeMap<UserId, Array1<f64>>,
        verify: &BTreeMap<UserId, Array1<f64>>,
    ) -> f64 {
        let cos = |a: &Array1<f64>, b: &Array1<f64>| {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        };
        let mut correct = 0;
        let mut total = 0;
        for (user, probe) in verify {
            if !enroll.contains_key(user) {
                continue;
            }
            total += 1;
            let mut best: Option<(&UserId, f64)> = None;
            for (gid, gvec) in enroll {
                let s = cos(probe, gvec);
                if best.map(|(_, bs)| s > bs).unwrap_or(true) {
                    best = Some((gid, s));
                }
            }
            if best.unwrap().0 == user {
                correct += 1;
            }
        }
        100.0 * correct as f64 / total as f64
    }

    #[test]
    fn rank1_matches_argmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..20 {
            let n = rng.gen_range(5..50);
            let dim = 8;
            let mut enroll = BTreeMap::new();
            let mut verify = BTreeMap::new();
            for u in 0..n {
                let id = UserId::new(format!("u{u:03}"));
                let base = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
                let probe = &base + &Array1::from_shape_fn(dim, |_| rng.gen_range(-0.6..0.6));
                enroll.insert(id.clone(), base);
                verify.insert(id, probe);
            }
            let got = rank1(&enroll, &verify).unwrap().rank1_ir_pct;
            let want = rank1_oracle(&enroll, &verify);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn rank1_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        let mut enroll = BTreeMap::new();
        let mut verify = BTreeMap::new();
        for u in 0..12 {
            let id = UserId::new(format!("u{u:03}"));
            enroll.insert(id.clone(), Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0)));
            verify.insert(id, Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0)));
        }
        let base = rank1(&enroll, &verify).unwrap().rank1_ir_pct;
        let scaled: BTreeMap<UserId, Array1<f64>> = enroll
            .iter()
            .map(|(u, v)| (u.clone(), v.mapv(|x| x * 4.2)))
            .collect();
        let r = rank1(&scaled, &verify).unwrap().rank1_ir_pct;
        assert_eq!(base, r);
    }

    #[test]
    fn nested_gallery_never_improves_per_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let mut big = BTreeMap::new();
        let mut verify = BTreeMap::new();
        for u in 0..30 {
            let id = UserId::new(format!("u{u:03}"));
            let base = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0_f64..1.0));
            let probe = &base + &Array1::from_shape_fn(6, |_| rng.gen_range(-0.8..0.8));
            big.insert(id.clone(), base);
            verify.insert(id, probe);
        }
        let small: BTreeMap<UserId, Array1<f64>> =
            big.iter().take(15).map(|(u, v)| (u.clone(), v.clone())).collect();
        let probes_small: BTreeMap<UserId, Array1<f64>> = verify
            .iter()
            .filter(|(u, _)| small.contains_key(*u))
            .map(|(u, v)| (u.clone(), v.clone()))
            .collect();
        let ir_small = rank1(&small, &probes_small).unwrap();
        let ir_big_on_small_probes = rank1(&big, &probes_small).unwrap();
        assert!(ir_big_on_small_probes.rank1_ir_pct <= ir_small.rank1_ir_pct + 1e-12);
    }

    fn toy_pool(n: usize, noise: f64, seed: u64) -> EvalPool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut users = BTreeMap::new();
        for u in 0..n {
            let id = UserId::new(format!("u{u:04}"));
            let base = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0_f64..1.0));
            let verify = &base + &Array1::from_shape_fn(8, |_| rng.gen_range(-noise..noise));
            users.insert(id, (base, verify));
        }
        EvalPool { users }
    }

    #[test]
    fn sweep_k1_band_collapses() {
        let pool = toy_pool(30, 0.3, 11);
        let result = gallery_sweep(&pool, &[10, 20], 1, 7, 0.01).unwrap();
        for row in &result.rows {
            assert_eq!(row.p5, row.p95);
            assert_eq!(row.mid, row.p5);
        }
    }

    #[test]
    fn sweep_constant_metric_band_is_flat() {
        // Zero verify noise: every probe matches its own gallery entry
        // exactly, IR is 100 for every subset.
        let pool = toy_pool(25, 1e-12, 13);
        let result = gallery_sweep(&pool, &[5, 10], 10, 3, 0.5).unwrap();
        for row in result.rows.iter().filter(|r| r.metric == SweepMetric::Rank1Ir) {
            assert_eq!(row.p5, 100.0);
            assert_eq!(row.p95, 100.0);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_validates_sizes() {
        let pool = toy_pool(30, 0.3, 17);
        let a = gallery_sweep(&pool, &[10, 20], 5, 7, 0.01).unwrap();
        let b = gallery_sweep(&pool, &[20, 10], 5, 7, 0.01).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.mid, rb.mid);
        }
        assert!(gallery_sweep(&pool, &[40], 5, 7, 0.01).is_err());
    }

    #[test]
    fn sqrt_fit_recovers_exact_coefficients_and_root() {
        let (a, b) = (-0.5, 5.0);
        let obs: Vec<(f64, f64)> = [4.0, 9.0, 16.0, 36.0, 64.0]
            .iter()
            .map(|&x| (x, a * f64::sqrt(x) + b))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Sqrt).unwrap();
        assert!((fit.coefficients[0] - a).abs() < 1e-9);
        assert!((fit.coefficients[1] - b).abs() < 1e-9);
        assert!((fit.root.unwrap() - 100.0).abs() < 1e-6);
        assert!((fit.r2_adj - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_and_linear_fits_recover_and_root() {
        let obs: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 5000.0]
            .iter()
            .map(|&x| (x, -2.0 * f64::ln(x) + 20.0))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Log).unwrap();
        assert!((fit.coefficients[0] + 2.0).abs() < 1e-9);
        assert!((fit.root.unwrap() - (10.0f64).exp()).abs() < 1e-3);

        let obs: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 9.0]
            .iter()
            .map(|&x| (x, -3.0 * x + 30.0))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Linear).unwrap();
        assert!((fit.root.unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn power_fit_recovers_planted_curve() {
        let (a, b, c) = (120.0f64, -0.35f64, -4.0f64);
        let obs: Vec<(f64, f64)> = [25.0f64, 50.0, 100.0, 250.0, 500.0, 1000.0, 2000.0]
            .iter()
            .map(|&x| (x, a * x.powf(b) + c))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Power).unwrap();
        assert!((fit.coefficients[0] - a).abs() / a < 1e-4, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] - b).abs() < 1e-4);
        assert!((fit.coefficients[2] - c).abs() < 1e-3);
        // True root: a x^b = -c -> x = (a / -c)^(-1/b).
        let true_root = (a / 4.0).powf(-1.0 / b);
        let r = fit.root.unwrap();
        assert!((r - true_root).abs() / true_root < 1e-3, "root {r} vs {true_root}");
    }

    #[test]
    fn noisy_sqrt_fit_recovers_within_tolerance() {
        let (a, b) = (-1.2, 110.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sizes = [250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0];
        let obs: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&x| (x, a * f64::sqrt(x) + b + rng.gen_range(-0.5..0.5)))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Sqrt).unwrap();
        assert!((fit.coefficients[0] - a).abs() / a.abs() < 0.05);
        assert!((fit.coefficients[1] - b).abs() / b.abs() < 0.05);
        let true_root = (b / 1.2) * (b / 1.2);
        assert!((fit.root.unwrap() - true_root).abs() / true_root < 0.10);
    }

    #[test]
    fn fit_errors_and_missing_roots() {
        // Too few observations.
        assert!(fit_scaling_curve(&[(1.0, 1.0), (2.0, 2.0)], CurveFamily::Sqrt).is_err());
        // Constant observations: SST = 0.
        let obs = vec![(1.0, 3.0), (2.0, 3.0), (3.0, 3.0)];
        assert!(fit_scaling_curve(&obs, CurveFamily::Linear).is_err());
        // Increasing curve never crosses zero downward.
        let obs: Vec<(f64, f64)> = [1.0, 4.0, 9.0, 16.0]
            .iter()
            .map(|&x| (x, 2.0 * f64::sqrt(x) + 1.0))
            .collect();
        let fit = fit_scaling_curve(&obs, CurveFamily::Sqrt).unwrap();
        assert!(fit.root.is_none());
    }
}
