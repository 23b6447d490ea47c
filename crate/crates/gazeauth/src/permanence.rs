//! Reliability analysis of embedding features across two sessions:
//! intraclass correlation, feature intercorrelations, and a
//! skewness/kurtosis normality screen against matched normal samples.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::UserId;
use crate::stats::{excess_kurtosis, median, pearson, percentile_nearest_rank, skewness};

/// Per user, two observations (sessions A and B) of the L2-normalized
/// embedding features.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub users: Vec<UserId>,
    /// n_users x n_features.
    pub session_a: Array2<f64>,
    pub session_b: Array2<f64>,
}

impl FeatureTable {
    /// Build from per-user session embeddings, L2-normalizing each vector.
    pub fn from_centroids(entries: &[(UserId, Array1<f64>, Array1<f64>)]) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Data("feature table needs at least one user".into()))?;
        let d = first.1.len();
        let mut users = Vec::with_capacity(entries.len());
        let mut a = Array2::zeros((entries.len(), d));
        let mut b = Array2::zeros((entries.len(), d));
        for (row, (user, ea, eb)) in entries.iter().enumerate() {
            if ea.len() != d || eb.len() != d {
                return Err(Error::Data(format!("embedding dim mismatch for user {user}")));
            }
            for (dst, src) in [(&mut a, ea), (&mut b, eb)] {
                let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Numerical(format!("zero-norm embedding for user {user}")));
                }
                for (c, v) in src.iter().enumerate() {
                    dst[[row, c]] = v / norm;
                }
            }
            users.push(user.clone());
        }
        let table = FeatureTable {
            users,
            session_a: a,
            session_b: b,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users.len();
        let d = self.session_a.ncols();
        if self.session_a.dim() != (n, d) || self.session_b.dim() != (n, d) {
            return Err(Error::Data("feature table shape mismatch".into()));
        }
        for (name, mat) in [("A", &self.session_a), ("B", &self.session_b)] {
            for (row, r) in mat.rows().into_iter().enumerate() {
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!(
                        "session {name} row {row} has L2 norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_features(&self) -> usize {
        self.session_a.ncols()
    }
}

/// ICC form: two-way mixed consistency ICC(3,1) or two-way random
/// absolute-agreement ICC(2,1), both single-measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccKind {
    Consistency31,
    Agreement21,
}

impl Default for IccKind {
    fn default() -> Self {
        IccKind::Consistency31
    }
}

/// Intraclass correlation of per-user session pairs from the standard
/// two-way ANOVA decomposition with k = 2 sessions.
pub fn icc(a: &[f64], b: &[f64], kind: IccKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data("icc needs equal-length session samples".into()));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::Data(format!("icc needs >= 3 users, got {n}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("icc needs finite values".into()));
    }
    let k = 2.0;
    let nf = n as f64;
    let grand = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (k * nf);
    let mean_a = a.iter().sum::<f64>() / nf;
    let mean_b = b.iter().sum::<f64>() / nf;
    let mut ss_subj = 0.0;
    let mut ss_total = 0.0;
    for i in 0..n {
        let subj_mean = (a[i] + b[i]) / k;
        ss_subj += (subj_mean - grand) * (subj_mean - grand);
        ss_total += (a[i] - grand) * (a[i] - grand) + (b[i] - grand) * (b[i] - grand);
    }
    let ss_subj = k * ss_subj;
    let ss_sess = nf * ((mean_a - grand) * (mean_a - grand) + (mean_b - grand) * (mean_b - grand));
    let ss_err = ss_total - ss_subj - ss_sess;
    let bms = ss_subj / (nf - 1.0);
    let jms = ss_sess / (k - 1.0);
    let ems = ss_err / ((nf - 1.0) * (k - 1.0));
    if bms == 0.0 && ems == 0.0 {
        return Err(Error::Numerical(
            "icc undefined: zero between- and within-subject variance".into(),
        ));
    }
    let value = match kind {
        IccKind::Consistency31 => (bms - ems) / (bms + (k - 1.0) * ems),
        IccKind::Agreement21 => {
            (bms - ems) / (bms + (k - 1.0) * ems + k * (jms - ems) / nf)
        }
    };
    Ok(value)
}

/// Reference acceptance bands for the normality screen: percentile bands
/// of skewness and excess kurtosis over `n_reference` standard-normal
/// samples of size `n_obs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityBands {
    pub n_obs: usize,
    pub skew_lo: f64,
    pub skew_hi: f64,
    pub kurt_lo: f64,
    pub kurt_hi: f64,
}

pub fn normality_reference_bands(
    n_obs: usize,
    n_reference: usize,
    band: (f64, f64),
    seed: u64,
) -> Result<NormalityBands> {
    if n_obs < 8 {
        return Err(Error::Data(format!("normality screen needs >= 8 observations, got {n_obs}")));
    }
    if n_reference == 0 {
        return Err(Error::Config("normality screen needs n_reference >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skews = Vec::with_capacity(n_reference);
    let mut kurts = Vec::with_capacity(n_reference);
    let mut sample = vec![0.0; n_obs];
    for _ in 0..n_reference {
        for v in sample.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // Standard-normal draws have zero variance with probability zero.
        skews.push(skewness(&sample).unwrap());
        kurts.push(excess_kurtosis(&sample).unwrap());
    }
    Ok(NormalityBands {
        n_obs,
        skew_lo: percentile_nearest_rank(&skews, band.0),
        skew_hi: percentile_nearest_rank(&skews, band.1),
        kurt_lo: percentile_nearest_rank(&kurts, band.0),
        kurt_hi: percentile_nearest_rank(&kurts, band.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub pass: bool,
    /// None when the sample is constant (moments undefined).
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub degenerate: bool,
}

/// Screen one feature distribution against precomputed reference bands.
pub fn normality_screen_with_bands(values: &[f64], bands: &NormalityBands) -> Result<NormalityResult> {
    if values.len() != bands.n_obs {
        return Err(Error::Data(format!(
            "normality screen: sample size {} does not match reference bands for {}",
            values.len(),
            bands.n_obs
        )));
    }
    let skew = skewness(values);
    let kurt = excess_kurtosis(values);
    match (skew, kurt) {
        (Some(s), Some(kk)) => Ok(NormalityResult {
            pass: s >= bands.skew_lo && s <= bands.skew_hi && kk >= bands.kurt_lo && kk <= bands.kurt_hi,
            skewness: Some(s),
            excess_kurtosis: Some(kk),
            degenerate: false,
        }),
        _ => Ok(NormalityResult {
            pass: false,
            skewness: None,
            excess_kurtosis: None,
            degenerate: true,
        }),
    }
}

/// Convenience wrapper drawing its own reference population.
pub fn normality_screen(
    values: &[f64],
    n_reference: usize,
    band: (f64, f64),
    seed: u64,
) -> Result<NormalityResult> {
    let bands = normality_reference_bands(values.len(), n_reference, band, seed)?;
    normality_screen_with_bands(values, &bands)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intercorrelations {
    pub median_abs: f64,
    pub max_abs: f64,
    /// Zero-variance features excluded from the pairwise grid.
    pub n_excluded: usize,
}

/// Absolute pairwise Pearson correlations between features over users
/// (session A), summarized by median and max.
pub fn intercorrelations(table: &FeatureTable) -> Result<Intercorrelations> {
    if table.n_users() < 3 {
        return Err(Error::Data("intercorrelations need >= 3 users".into()));
    }
    let d = table.n_features();
    let columns: Vec<Vec<f64>> = (0..d).map(|c| table.session_a.column(c).to_vec()).collect();
    let usable: Vec<usize> = (0..d)
        .filter(|&c| {
            let (_, sd) = crate::stats::mean_sd(&columns[c]);
            sd > 0.0
        })
        .collect();
    let n_excluded = d - usable.len();
    if n_excluded > 0 {
        log::warn!("intercorrelations: excluding {n_excluded} zero-variance features");
    }
    if usable.len() < 2 {
        return Err(Error::Data("intercorrelations need >= 2 non-constant features".into()));
    }
    let mut abs_r = Vec::with_capacity(usable.len() * (usable.len() - 1) / 2);
    for (pos, &i) in usable.iter().enumerate() {
        for &j in &usable[pos + 1..] {
            abs_r.push(pearson(&columns[i], &columns[j])?.abs());
        }
    }
    Ok(Intercorrelations {
        median_abs: median(&abs_r),
        max_abs: abs_r.iter().copied().fold(f64::MIN, f64::max),
        n_excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermanenceConfig {
    pub icc_kind: IccKind,
    pub n_reference: usize,
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for PermanenceConfig {
    fn default() -> Self {
        PermanenceConfig {
            icc_kind: IccKind::Consistency31,
            n_reference: 10_000,
            band: (2.5, 97.5),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: usize,
    pub icc: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub normal_pass: bool,
    pub degenerate: bool,
}

/// Per-feature reliability and distribution-shape summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermanenceReport {
    pub n_users: usize,
    pub n_features: usize,
    pub per_feature: Vec<FeatureRow>,
    pub icc_min: f64,
    pub icc_median: f64,
    pub icc_max: f64,
    pub intercorr_median: f64,
    pub intercorr_max: f64,
    pub normal_pass_count: usize,
    pub skew_min: f64,
    pub skew_median: f64,
    pub skew_max: f64,
    pub exkurt_min: f64,
    pub exkurt_median: f64,
    pub exkurt_max: f64,
}

impl PermanenceReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("permanence serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// CSV export `feature,icc,skew,exkurt,normal_pass`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("feature,icc,skew,exkurt,normal_pass\n");
        for row in &self.per_feature {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.feature,
                row.icc,
                row.skewness.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into()),
                row.excess_kurtosis.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into()),
                row.normal_pass
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Full permanence analysis over a feature table: per-feature ICC and
/// normality screen (session A distribution), plus intercorrelation
/// summaries. The normality reference population is drawn once and
/// shared across features (matched sample size).
pub fn permanence_report(table: &FeatureTable, cfg: &PermanenceConfig) -> Result<PermanenceReport> {
    table.validate()?;
    if table.n_users() < 3 {
        return Err(Error::Data("permanence analysis needs >= 3 users".into()));
    }
    let bands = normality_reference_bands(table.n_users(), cfg.n_reference, cfg.band, cfg.seed)?;
    let d = table.n_features();
    let mut per_feature = Vec::with_capacity(d);
    for c in 0..d {
        let a = table.session_a.column(c).to_vec();
        let b = table.session_b.column(c).to_vec();
        let icc_value = icc(&a, &b, cfg.icc_kind)?;
        let normality = normality_screen_with_bands(&a, &bands)?;
        per_feature.push(FeatureRow {
            feature: c,
            icc: icc_value,
            skewness: normality.skewness,
            excess_kurtosis: normality.excess_kurtosis,
            normal_pass: normality.pass,
            degenerate: normality.degenerate,
        });
    }
    let iccs: Vec<f64> = per_feature.iter().map(|r| r.icc).collect();
    let skews: Vec<f64> = per_feature.iter().filter_map(|r| r.skewness).collect();
    let kurts: Vec<f64> = per_feature.iter().filter_map(|r| r.excess_kurtosis).collect();
    let inter = intercorrelations(table)?;
    let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_of = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PermanenceReport {
        n_users: table.n_users(),
        n_features: d,
        icc_min: min_of(&iccs),
        icc_median: median(&iccs),
        icc_max: max_of(&iccs),
        intercorr_median: inter.median_abs,
        intercorr_max: inter.max_abs,
        normal_pass_count: per_feature.iter().filter(|r| r.normal_pass).count(),
        skew_min: min_of(&skews),
        skew_median: median(&skews),
        skew_max: max_of(&skews),
        exkurt_min: min_of(&kurts),
        exkurt_median: median(&kurts),
        exkurt_max: max_of(&kurts),
        per_feature,
    })
}
