//! Experiment orchestration: preprocess a dataset, train or load an
//! embedder, evaluate verification/identification, and run the sweep and
//! partition experiments (channel ablations, training-size and duration
//! sweeps, gallery scaling, accuracy tiers, permanence).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identify::{rank1, EvalPool, IdentificationReport};
use crate::model::{
    centroid_vector, forward_eval_batch, ModelArtifact, NetworkConfig, MODEL_FORMAT_TAG,
};
use crate::permanence::FeatureTable;
use crate::signal::{
    compute_norm_stats, partition_windows, ChannelSpec, Dataset, DatasetManifest, SavgolConfig,
    Split, Task, UserId, VelocityWindow,
};
use crate::stats::derive_seed;
use crate::training::{
    train, EpochStats, MinibatchSpec, MsLossConfig, TrainPlan, TrainSet,
};
use crate::verify::{
    all_pairs_scores, verification_report, RocCurve, ScoreSet, VerificationReport,
};

/// Network shape without the input channel count (derived from the
/// channel spec at run time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkShape {
    pub time_steps: usize,
    pub num_conv_layers: usize,
    pub growth: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkShape {
    fn default() -> Self {
        let base = NetworkConfig::with_input_channels(1);
        NetworkShape {
            time_steps: base.time_steps,
            num_conv_layers: base.num_conv_layers,
            growth: base.growth,
            kernel_size: base.kernel_size,
            dilations: base.dilations,
            embedding_dim: base.embedding_dim,
            bn_epsilon: base.bn_epsilon,
            bn_momentum: base.bn_momentum,
        }
    }
}

impl NetworkShape {
    pub fn to_config(&self, input_channels: usize) -> NetworkConfig {
        NetworkConfig {
            input_channels,
            time_steps: self.time_steps,
            num_conv_layers: self.num_conv_layers,
            growth: self.growth,
            kernel_size: self.kernel_size,
            dilations: self.dilations.clone(),
            embedding_dim: self.embedding_dim,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
        }
    }
}

/// Which recording one side of the comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideSpec {
    pub task: Task,
    pub repetition: u32,
}

/// Full experiment description: every ablation axis plus the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub id: String,
    /// Manifest path; resolved by the CLI, optional for in-memory runs.
    pub dataset: Option<PathBuf>,
    pub channels: ChannelSpec,
    pub savgol: SavgolConfig,
    pub network: NetworkShape,
    pub minibatch: MinibatchSpec,
    pub loss: MsLossConfig,
    pub plan: TrainPlan,
    /// Optional nested train-subset size (training population sweep).
    pub train_size: Option<usize>,
    /// Restrict training/testing users to one accuracy tier.
    pub train_tier: Option<usize>,
    pub test_tier: Option<usize>,
    pub enroll: SideSpec,
    pub verify: SideSpec,
    pub n_enroll_chunks: usize,
    pub n_verify_chunks: usize,
    pub far_targets: Vec<f64>,
    /// Evaluate a stored model instead of training.
    pub model_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id: "experiment".into(),
            dataset: None,
            channels: ChannelSpec::binocular_both_axes(),
            savgol: SavgolConfig::default(),
            network: NetworkShape::default(),
            minibatch: MinibatchSpec::default(),
            loss: MsLossConfig::default(),
            plan: TrainPlan::default(),
            train_size: None,
            train_tier: None,
            test_tier: None,
            enroll: SideSpec {
                task: Task::RandomSaccade,
                repetition: 1,
            },
            verify: SideSpec {
                task: Task::RandomSaccade,
                repetition: 2,
            },
            n_enroll_chunks: 4,
            n_verify_chunks: 4,
            far_targets: vec![1.0 / 50_000.0],
            model_path: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.channels.validate()?;
        self.minibatch.validate()?;
        self.loss.validate()?;
        self.plan.validate()?;
        if self.n_enroll_chunks == 0 || self.n_verify_chunks == 0 {
            return Err(Error::Config("chunk counts must be >= 1".into()));
        }
        if self.enroll == self.verify {
            return Err(Error::Config(
                "enrollment and verification must use distinct recordings".into(),
            ));
        }
        if self.far_targets.is_empty() {
            return Err(Error::Config("need at least one FAR target".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// SHA-256 of the canonical JSON serialization of a config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything reported for one experiment run. Durations are logged, not
/// stored, so identical configs reproduce identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub id: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_train_users: usize,
    pub n_test_users: usize,
    pub n_enrolled: usize,
    pub n_excluded: usize,
    pub verification: VerificationReport,
    pub identification: IdentificationReport,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("result serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("result parse {}: {e}", path.display())))
    }
}

/// One full experiment run: the report plus the heavyweight intermediate
/// products callers may want to export or reuse.
pub struct ExperimentRun {
    pub result: ExperimentResult,
    pub scores: ScoreSet,
    pub roc: RocCurve,
    pub histories: Vec<Vec<EpochStats>>,
    pub artifact: ModelArtifact,
    pub eval_pool: EvalPool,
}

/// Accuracy-tier assignment for users with both random-saccade
/// recordings: rank by (accuracy error, user id) ascending and cut at
/// ceil(q * n). Tier 0 is the lowest error.
pub fn partition_by_accuracy(
    manifest: &DatasetManifest,
    quantiles: &[f64],
) -> Result<Vec<(UserId, usize)>> {
    let mut prev = 0.0;
    for &q in quantiles {
        if !(q > prev && q < 1.0) {
            return Err(Error::Config("tier quantiles must be ascending within (0, 1)".into()));
        }
        prev = q;
    }
    let mut eligible: Vec<(&UserId, f64)> = Vec::new();
    for user in &manifest.users {
        let has_r1 = manifest.find_recording(user, Task::RandomSaccade, 1).is_some();
        let has_r2 = manifest.find_recording(user, Task::RandomSaccade, 2).is_some();
        if !(has_r1 && has_r2) {
            continue;
        }
        if !user.accuracy_error_deg.is_finite() {
            return Err(Error::Data(format!(
                "user {} is missing a spatial-accuracy value",
                user.user_id
            )));
        }
        eligible.push((&user.user_id, user.accuracy_error_deg));
    }
    if eligible.is_empty() {
        return Err(Error::Data("no users with both random-saccade recordings".into()));
    }
    eligible.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = eligible.len();
    let cuts: Vec<usize> = quantiles.iter().map(|q| (q * n as f64).ceil() as usize).collect();
    Ok(eligible
        .into_iter()
        .enumerate()
        .map(|(rank, (user, _))| {
            let tier = cuts.iter().filter(|&&c| rank >= c).count();
            (user.clone(), tier)
        })
        .collect())
}

fn tier_filter(
    dataset: &Dataset,
    tier: Option<usize>,
    quantiles: &[f64],
) -> Result<Option<BTreeMap<UserId, usize>>> {
    if tier.is_none() {
        return Ok(None);
    }
    let tiers = partition_by_accuracy(&dataset.manifest, quantiles)?;
    Ok(Some(tiers.into_iter().collect()))
}

/// Train-split users in deterministic subset order: the full list is
/// shuffled once from the seed, so size-N subsets are nested (N1 < N2
/// implies subset(N1) is a prefix of subset(N2)).
fn train_users(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<UserId>> {
    let tier_map = tier_filter(dataset, cfg.train_tier, &[1.0 / 3.0, 2.0 / 3.0])?;
    let mut users: Vec<UserId> = dataset
        .manifest
        .users_in_split(Split::Train)
        .iter()
        .filter(|u| match (&tier_map, cfg.train_tier) {
            (Some(map), Some(t)) => map.get(&u.user_id) == Some(&t),
            _ => true,
        })
        .map(|u| u.user_id.clone())
        .collect();
    users.sort();
    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7257]));
    order.shuffle(&mut rng);
    let selected: Vec<UserId> = match cfg.train_size {
        Some(n) => {
            if n > users.len() {
                return Err(Error::Data(format!(
                    "train subset {n} exceeds the {}-user train pool",
                    users.len()
                )));
            }
            order.iter().take(n).map(|&i| users[i].clone()).collect()
        }
        None => order.iter().map(|&i| users[i].clone()).collect(),
    };
    Ok(selected)
}

/// Preprocess one user's training windows (all random-saccade
/// repetitions), unnormalized.
fn user_train_windows(
    dataset: &Dataset,
    user: &UserId,
    cfg: &ExperimentConfig,
) -> Result<Vec<VelocityWindow>> {
    let mut windows = Vec::new();
    for ((uid, task, _rep), rec) in dataset.recordings.range((user.clone(), Task::RandomSaccade, 0)..) {
        if uid != user {
            break;
        }
        if *task != Task::RandomSaccade {
            continue;
        }
        windows.extend(partition_windows(rec, &cfg.channels, &cfg.savgol, None)?);
    }
    Ok(windows)
}

/// Train a model per the config (or load the referenced artifact).
pub fn train_model(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<(ModelArtifact, Vec<Vec<EpochStats>>, usize)> {
    cfg.validate()?;
    if let Some(path) = &cfg.model_path {
        let artifact = ModelArtifact::load(path)?;
        if artifact.channel_spec != cfg.channels {
            return Err(Error::Config(format!(
                "model at {} was trained with a different channel spec",
                path.display()
            )));
        }
        return Ok((artifact, Vec::new(), 0));
    }
    let users = train_users(cfg, dataset)?;
    let mut per_user: Vec<(UserId, Vec<Array2<f64>>)> = Vec::new();
    let mut raw_windows: Vec<VelocityWindow> = Vec::new();
    let mut counts: Vec<(UserId, usize)> = Vec::new();
    for user in &users {
        let windows = user_train_windows(dataset, user, cfg)?;
        if windows.is_empty() {
            log::warn!("train user {user} has no usable windows; skipping");
            continue;
        }
        counts.push((user.clone(), windows.len()));
        raw_windows.extend(windows);
    }
    if raw_windows.is_empty() {
        return Err(Error::Data("no training windows in the selected pool".into()));
    }
    let stats = compute_norm_stats(&raw_windows)?;
    let mut offset = 0;
    for (user, count) in counts {
        let mut windows = Vec::with_capacity(count);
        for w in &raw_windows[offset..offset + count] {
            let mut data = w.data.clone();
            stats.normalize_window(&mut data);
            windows.push(data);
        }
        offset += count;
        per_user.push((user, windows));
    }
    per_user.sort_by(|a, b| a.0.cmp(&b.0));
    let n_train_users = per_user.len();
    let train_set = TrainSet { users: per_user };
    let net = cfg.network.to_config(cfg.channels.channel_count());
    let mut plan = cfg.plan.clone();
    plan.seed = cfg.seed;
    let outcome = train(&train_set, &net, &cfg.minibatch, &cfg.loss, &plan)?;
    let artifact = ModelArtifact {
        format: MODEL_FORMAT_TAG.to_string(),
        config: net,
        channel_spec: cfg.channels.clone(),
        savgol: cfg.savgol,
        norm_stats: stats,
        models: outcome.models,
        epochs_completed: outcome.epochs_completed,
        train_seed: plan.seed,
    };
    Ok((artifact, outcome.history, n_train_users))
}

/// Embed the first `n_chunks` windows of one recording and average them
/// into a centroid (per-fold embeddings concatenated in fold order).
/// Returns None when the recording is missing or too short.
fn side_centroid(
    dataset: &Dataset,
    artifact: &ModelArtifact,
    user: &UserId,
    side: &SideSpec,
    n_chunks: usize,
) -> Result<Option<Array1<f64>>> {
    let Some(rec) = dataset.recording(user, side.task, side.repetition) else {
        return Ok(None);
    };
    let windows = partition_windows(rec, &artifact.channel_spec, &artifact.savgol, Some(&artifact.norm_stats))?;
    if windows.len() < n_chunks {
        return Ok(None);
    }
    let views: Vec<ArrayView2<f64>> = windows[..n_chunks].iter().map(|w| w.data.view()).collect();
    let d = artifact.config.embedding_dim;
    let mut embeddings: Vec<Array1<f64>> = vec![Array1::zeros(d * artifact.models.len()); n_chunks];
    for (f, params) in artifact.models.iter().enumerate() {
        let emb = forward_eval_batch(params, &artifact.config, &views)?;
        for (w, e) in embeddings.iter_mut().enumerate() {
            e.slice_mut(s![f * d..(f + 1) * d]).assign(&emb.row(w));
        }
    }
    Ok(Some(centroid_vector(&embeddings)?))
}

/// Test-split users eligible for evaluation under the config's tier
/// filter, sorted.
fn test_users(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<UserId>> {
    let tier_map = tier_filter(dataset, cfg.test_tier, &[1.0 / 3.0, 2.0 / 3.0])?;
    let mut users: Vec<UserId> = dataset
        .manifest
        .users_in_split(Split::Test)
        .iter()
        .filter(|u| match (&tier_map, cfg.test_tier) {
            (Some(map), Some(t)) => map.get(&u.user_id) == Some(&t),
            _ => true,
        })
        .map(|u| u.user_id.clone())
        .collect();
    users.sort();
    Ok(users)
}

/// Evaluation products: per-user centroids and exclusion accounting.
pub struct Evaluation {
    pub enroll: BTreeMap<UserId, Array1<f64>>,
    pub verify: BTreeMap<UserId, Array1<f64>>,
    pub n_test_users: usize,
    pub n_excluded: usize,
}

/// Build enrollment/verification centroids for every eligible test user.
/// Users missing either recording (or with recordings shorter than the
/// requested chunks) are excluded and counted.
pub fn evaluate_centroids(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    artifact: &ModelArtifact,
    n_enroll_chunks: usize,
    n_verify_chunks: usize,
) -> Result<Evaluation> {
    let users = test_users(cfg, dataset)?;
    // Per-user embedding is independent; results merge in user order, so
    // the output is identical for any thread count.
    let sides: Vec<(UserId, Option<Array1<f64>>, Option<Array1<f64>>)> = users
        .par_iter()
        .map(|user| -> Result<_> {
            let e = side_centroid(dataset, artifact, user, &cfg.enroll, n_enroll_chunks)?;
            let v = side_centroid(dataset, artifact, user, &cfg.verify, n_verify_chunks)?;
            Ok((user.clone(), e, v))
        })
        .collect::<Result<_>>()?;
    let mut enroll = BTreeMap::new();
    let mut verify = BTreeMap::new();
    let mut n_excluded = 0;
    for (user, e, v) in sides {
        match (e, v) {
            (Some(e), Some(v)) => {
                enroll.insert(user.clone(), e);
                verify.insert(user, v);
            }
            _ => {
                n_excluded += 1;
            }
        }
    }
    log::info!(
        "evaluation: {} users enrolled, {} excluded (missing or short recordings)",
        enroll.len(),
        n_excluded
    );
    Ok(Evaluation {
        enroll,
        verify,
        n_test_users: users.len(),
        n_excluded,
    })
}

/// Execute one experiment end to end: preprocess, train (or load),
/// embed, score, and report.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (artifact, histories, n_train_users) = train_model(cfg, dataset)?;
    let eval = evaluate_centroids(cfg, dataset, &artifact, cfg.n_enroll_chunks, cfg.n_verify_chunks)?;
    if eval.enroll.is_empty() {
        return Err(Error::Data("no test users could be enrolled".into()));
    }
    let scores = all_pairs_scores(&eval.enroll, &eval.verify)?;
    let (verification, roc) = verification_report(&scores, &cfg.far_targets)?;
    let identification = rank1(&eval.enroll, &eval.verify)?;
    let eval_pool = EvalPool {
        users: eval
            .enroll
            .iter()
            .filter_map(|(u, e)| eval.verify.get(u).map(|v| (u.clone(), (e.clone(), v.clone()))))
            .collect(),
    };
    let result = ExperimentResult {
        id: cfg.id.clone(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        n_train_users,
        n_test_users: eval.n_test_users,
        n_enrolled: eval.enroll.len(),
        n_excluded: eval.n_excluded,
        verification,
        identification,
        config: cfg.clone(),
    };
    Ok(ExperimentRun {
        result,
        scores,
        roc,
        histories,
        artifact,
        eval_pool,
    })
}

/// Train-size sweep: one model and evaluation per subset size, nested
/// subsets, fixed test set.
pub fn sweep_train_size(
    sizes: &[usize],
    base: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<Vec<(usize, ExperimentResult)>> {
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() {
        return Err(Error::Config("train-size sweep needs at least one size".into()));
    }
    let mut rows = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let mut cfg = base.clone();
        cfg.id = format!("{}_n{n}", base.id);
        cfg.train_size = Some(n);
        let run = run_experiment(&cfg, dataset)?;
        rows.push((n, run.result));
    }
    Ok(rows)
}

/// Duration sweep: train once (per the base config), then evaluate each
/// (enroll chunks, verify chunks) combination against the same model.
pub fn sweep_duration(
    combos: &[(usize, usize)],
    base: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<Vec<(usize, usize, VerificationReport, IdentificationReport)>> {
    if combos.is_empty() {
        return Err(Error::Config("duration sweep needs at least one combination".into()));
    }
    let (artifact, _, _) = train_model(base, dataset)?;
    let mut rows = Vec::with_capacity(combos.len());
    for &(n_e, n_v) in combos {
        if n_e == 0 || n_v == 0 {
            return Err(Error::Config("chunk counts must be >= 1".into()));
        }
        let eval = evaluate_centroids(base, dataset, &artifact, n_e, n_v)?;
        if eval.enroll.is_empty() {
            return Err(Error::Data(format!(
                "no test users have {n_e}/{n_v} chunks available"
            )));
        }
        let scores = all_pairs_scores(&eval.enroll, &eval.verify)?;
        let (verification, _) = verification_report(&scores, &base.far_targets)?;
        let identification = rank1(&eval.enroll, &eval.verify)?;
        rows.push((n_e, n_v, verification, identification));
    }
    Ok(rows)
}

/// Session A/B feature table for permanence analysis: centroids of the
/// two random-saccade repetitions of each eligible test user,
/// L2-normalized.
pub fn permanence_table(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    artifact: &ModelArtifact,
) -> Result<FeatureTable> {
    let users = test_users(cfg, dataset)?;
    let side_a = SideSpec {
        task: Task::RandomSaccade,
        repetition: 1,
    };
    let side_b = SideSpec {
        task: Task::RandomSaccade,
        repetition: 2,
    };
    let mut entries = Vec::new();
    for user in &users {
        let a = side_centroid(dataset, artifact, user, &side_a, cfg.n_enroll_chunks)?;
        let b = side_centroid(dataset, artifact, user, &side_b, cfg.n_verify_chunks)?;
        if let (Some(a), Some(b)) = (a, b) {
            entries.push((user.clone(), a, b));
        }
    }
    FeatureTable::from_centroids(&entries)
}

/// Write the standard output bundle of an experiment into a directory.
pub fn write_experiment_outputs(run: &ExperimentRun, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    run.result.save(&out_dir.join("result.json"))?;
    crate::verify::write_scores_csv(&run.scores, &out_dir.join("scores.csv"))?;
    run.roc.write_csv(&out_dir.join("roc.csv"))?;
    for (fold, history) in run.histories.iter().enumerate() {
        let name = if run.histories.len() == 1 {
            "loss_history.csv".to_string()
        } else {
            format!("loss_history_fold{fold}.csv")
        };
        crate::training::write_loss_history_csv(history, &out_dir.join(name))?;
    }
    run.artifact.save(&out_dir.join("model.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Axis, Eye};
    use crate::synth::{generate_dataset_in_memory, SynthConfig, TaskSpec};

    fn tiny_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            id: "tiny".into(),
            channels: ChannelSpec::new(vec![Eye::Left], vec![Axis::Visual]).unwrap(),
            network: NetworkShape {
                num_conv_layers: 2,
                growth: 4,
                dilations: vec![1, 2],
                embedding_dim: 8,
                ..NetworkShape::default()
            },
            minibatch: MinibatchSpec {
                users_per_batch: 2,
                samples_per_user: 2,
            },
            plan: TrainPlan {
                epochs: 1,
                ..TrainPlan::default()
            },
            n_enroll_chunks: 2,
            n_verify_chunks: 2,
            far_targets: vec![0.05],
            seed,
            ..ExperimentConfig::default()
        }
    }

    fn tiny_dataset(n_users: usize, seed: u64) -> Dataset {
        let cfg = SynthConfig {
            n_users,
            master_seed: seed,
            saccade_task: TaskSpec::random_saccade(10.0),
            pursuit_task: TaskSpec::smooth_pursuit(10.0),
            train_fraction: 0.5,
            ..SynthConfig::default()
        };
        generate_dataset_in_memory(&cfg).unwrap()
    }

    #[test]
    fn experiment_runs_and_accounts_for_users() {
        let dataset = tiny_dataset(8, 3);
        let cfg = tiny_config(1);
        let run = run_experiment(&cfg, &dataset).unwrap();
        let r = &run.result;
        assert_eq!(r.n_enrolled + r.n_excluded, r.n_test_users);
        assert!(r.n_enrolled >= 2);
        assert!(r.verification.eer_pct >= 0.0 && r.verification.eer_pct <= 100.0);
        assert_eq!(r.identification.n_gallery, r.n_enrolled);
        assert_eq!(r.config_hash, config_hash(&cfg));
    }

    #[test]
    fn experiment_is_deterministic() {
        let dataset = tiny_dataset(8, 3);
        let cfg = tiny_config(5);
        let a = run_experiment(&cfg, &dataset).unwrap();
        let b = run_experiment(&cfg, &dataset).unwrap();
        let ja = serde_json::to_string(&a.result).unwrap();
        let jb = serde_json::to_string(&b.result).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.artifact.models[0], b.artifact.models[0]);
    }

    #[test]
    fn chunk_counts_map_to_seconds() {
        // 4 chunks of 360 samples at 72 Hz = 20 s; a 10 s recording only
        // supports 2 chunks, so 4-chunk evaluation excludes everyone.
        let dataset = tiny_dataset(8, 3);
        let mut cfg = tiny_config(1);
        cfg.n_enroll_chunks = 4;
        cfg.n_verify_chunks = 4;
        let err = match run_experiment(&cfg, &dataset) {
            Ok(_) => panic!("expected 4-chunk evaluation to fail on 10 s recordings"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("no test users"));
    }

    #[test]
    fn config_validation_rejects_same_side() {
        let mut cfg = tiny_config(1);
        cfg.verify = cfg.enroll;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn excluded_users_are_counted() {
        let mut dataset = tiny_dataset(8, 3);
        // Drop one test user's verification recording.
        let victim = dataset
            .manifest
            .users_in_split(Split::Test)
            .first()
            .unwrap()
            .user_id
            .clone();
        dataset.recordings.remove(&(victim, Task::RandomSaccade, 2));
        let cfg = tiny_config(1);
        let run = run_experiment(&cfg, &dataset).unwrap();
        assert_eq!(run.result.n_excluded, 1);
        assert_eq!(
            run.result.n_enrolled + run.result.n_excluded,
            run.result.n_test_users
        );
    }

    #[test]
    fn partition_by_accuracy_thirds_and_ties() {
        let dataset = tiny_dataset(9, 11);
        let tiers = partition_by_accuracy(&dataset.manifest, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert_eq!(tiers.len(), 9);
        let mut counts = [0usize; 3];
        for (_, t) in &tiers {
            counts[*t] += 1;
        }
        assert_eq!(counts, [3, 3, 3]);
        // Tier medians ordered by accuracy.
        let by_user: BTreeMap<&UserId, usize> = tiers.iter().map(|(u, t)| (u, *t)).collect();
        let acc_of_tier = |tier: usize| -> Vec<f64> {
            dataset
                .manifest
                .users
                .iter()
                .filter(|u| by_user.get(&u.user_id) == Some(&tier))
                .map(|u| u.accuracy_error_deg)
                .collect()
        };
        let m0 = crate::stats::median(&acc_of_tier(0));
        let m1 = crate::stats::median(&acc_of_tier(1));
        let m2 = crate::stats::median(&acc_of_tier(2));
        assert!(m0 < m1 && m1 < m2);
    }

    #[test]
    fn partition_tie_break_is_deterministic() {
        let mut dataset = tiny_dataset(6, 11);
        for user in dataset.manifest.users.iter_mut() {
            user.accuracy_error_deg = 1.0;
        }
        let tiers = partition_by_accuracy(&dataset.manifest, &[0.5]).unwrap();
        // Equal accuracy: ranks follow user id order.
        let mut sorted = tiers.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let assigned: Vec<usize> = sorted.iter().map(|(_, t)| *t).collect();
        assert_eq!(assigned, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn train_subsets_are_nested() {
        let dataset = tiny_dataset(10, 13);
        let mut cfg = tiny_config(9);
        cfg.train_size = Some(2);
        let small = train_users(&cfg, &dataset).unwrap();
        cfg.train_size = Some(4);
        let large = train_users(&cfg, &dataset).unwrap();
        assert_eq!(small.len(), 2);
        assert_eq!(large.len(), 4);
        assert_eq!(&large[..2], &small[..]);
        cfg.train_size = Some(100);
        assert!(train_users(&cfg, &dataset).is_err());
    }

    #[test]
    fn duration_sweep_reuses_one_model() {
        let dataset = tiny_dataset(8, 3);
        let cfg = tiny_config(1);
        let rows = sweep_duration(&[(1, 1), (2, 2)], &cfg, &dataset).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, 1);
        assert_eq!(rows[1].1, 2);
    }

    #[test]
    fn permanence_table_covers_test_users() {
        let dataset = tiny_dataset(10, 3);
        let cfg = tiny_config(1);
        let (artifact, _, _) = train_model(&cfg, &dataset).unwrap();
        let table = permanence_table(&cfg, &dataset, &artifact).unwrap();
        assert_eq!(table.n_features(), 8);
        assert!(table.n_users() >= 3);
        table.validate().unwrap();
    }
}
