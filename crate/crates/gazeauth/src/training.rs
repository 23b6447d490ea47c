//! Metric-learning training: multi-similarity loss with online pair
//! mining, user-balanced minibatches, Adam, and a one-cycle cosine
//! learning-rate schedule. Optionally trains a k-fold ensemble.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    backward_batch, forward_train_batch, init_params, NetworkConfig, NetworkParams, ParamGrads,
};
use crate::signal::UserId;
use crate::stats::derive_seed;

/// Multi-similarity loss hyperparameters plus the miner margin epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsLossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for MsLossConfig {
    fn default() -> Self {
        MsLossConfig {
            alpha: 2.0,
            beta: 50.0,
            lambda: 0.5,
            epsilon: 0.1,
        }
    }
}

impl MsLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("ms loss alpha and beta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("ms loss lambda must be in [0, 1]".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Config("miner epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Minibatch shape: m = users_per_batch * samples_per_user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinibatchSpec {
    pub users_per_batch: usize,
    pub samples_per_user: usize,
}

impl MinibatchSpec {
    pub fn batch_size(&self) -> usize {
        self.users_per_batch * self.samples_per_user
    }

    pub fn validate(&self) -> Result<()> {
        if self.users_per_batch < 2 || self.samples_per_user < 2 {
            return Err(Error::Config(
                "minibatch needs >= 2 users and >= 2 samples per user (positives and negatives)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for MinibatchSpec {
    fn default() -> Self {
        MinibatchSpec {
            users_per_batch: 16,
            samples_per_user: 16,
        }
    }
}

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub epochs: u32,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    /// Fraction of total steps spent ramping up to the peak rate.
    pub warmup_frac: f64,
    pub seed: u64,
    /// 1 trains a single model on the full set; 4 trains one model per
    /// fold complement and evaluation concatenates the embeddings.
    pub ensemble_folds: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_start: 1e-4,
            lr_peak: 1e-2,
            lr_end: 1e-7,
            warmup_frac: 0.3,
            seed: 0,
            ensemble_folds: 1,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Config("warmup fraction must be in (0, 1)".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_peak > 0.0 && self.lr_end > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.ensemble_folds == 0 {
            return Err(Error::Config("ensemble_folds must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Learning rate at a given optimizer step: cosine half-wave up from
/// lr_start to lr_peak over the first warmup fraction of steps, cosine
/// half-wave down to lr_end over the remainder, continuous at the peak.
pub fn lr_at(step: usize, total_steps: usize, plan: &TrainPlan) -> f64 {
    assert!(step < total_steps, "step {step} out of range {total_steps}");
    if total_steps == 1 {
        return plan.lr_peak;
    }
    let last = (total_steps - 1) as f64;
    let peak_step = plan.warmup_frac * last;
    let t = step as f64;
    if t <= peak_step {
        if peak_step == 0.0 {
            return plan.lr_peak;
        }
        let phase = std::f64::consts::PI * t / peak_step;
        plan.lr_start + (plan.lr_peak - plan.lr_start) * (1.0 - phase.cos()) / 2.0
    } else {
        let span = last - peak_step;
        let phase = std::f64::consts::PI * (t - peak_step) / span;
        plan.lr_end + (plan.lr_peak - plan.lr_end) * (1.0 + phase.cos()) / 2.0
    }
}

/// Row-normalized cosine similarity matrix of a batch of embeddings.
/// Exactly symmetric by construction (each entry is the same dot product
/// evaluated in the same order).
pub fn cosine_similarity_matrix(embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    let m = embeddings.nrows();
    let mut normalized = embeddings.clone();
    for (i, mut row) in normalized.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "embedding {i} has zero or non-finite norm"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    let mut s = Array2::zeros((m, m));
    general_mat_mul(1.0, &normalized, &normalized.t(), 0.0, &mut s);
    Ok(s)
}

/// Per-anchor mined positive and negative pair sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairs {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl MinedPairs {
    pub fn is_empty(&self) -> bool {
        self.positives.iter().all(|p| p.is_empty()) && self.negatives.iter().all(|n| n.is_empty())
    }
}

/// Online pair miner: for anchor i keep positives with similarity below
/// the hardest negative plus epsilon, and negatives with similarity above
/// the easiest positive minus epsilon. Anchors lacking positive or
/// negative candidates contribute no mined pairs.
pub fn mine_pairs(s: &Array2<f64>, labels: &[u32], cfg: &MsLossConfig) -> Result<MinedPairs> {
    cfg.validate()?;
    let m = labels.len();
    if s.dim() != (m, m) {
        return Err(Error::Data(format!(
            "similarity matrix {:?} does not match {m} labels",
            s.dim()
        )));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if (s[[i, j]] - s[[j, i]]).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "similarity matrix asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    let distinct = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(Error::Data("pair mining needs at least 2 distinct labels".into()));
    }
    if distinct == m {
        return Err(Error::Data(
            "pair mining needs at least one label with 2 samples (no positives available)".into(),
        ));
    }
    let mut positives = vec![Vec::new(); m];
    let mut negatives = vec![Vec::new(); m];
    for i in 0..m {
        let mut max_neg = f64::NEG_INFINITY;
        let mut min_pos = f64::INFINITY;
        let mut has_pos = false;
        let mut has_neg = false;
        for k in 0..m {
            if k == i {
                continue;
            }
            if labels[k] == labels[i] {
                has_pos = true;
                min_pos = min_pos.min(s[[i, k]]);
            } else {
                has_neg = true;
                max_neg = max_neg.max(s[[i, k]]);
            }
        }
        if !has_pos || !has_neg {
            continue;
        }
        for k in 0..m {
            if k == i {
                continue;
            }
            if labels[k] == labels[i] {
                if s[[i, k]] < max_neg + cfg.epsilon {
                    positives[i].push(k);
                }
            } else if s[[i, k]] > min_pos - cfg.epsilon {
                negatives[i].push(k);
            }
        }
    }
    Ok(MinedPairs {
        positives,
        negatives,
    })
}

/// Multi-similarity loss over mined pairs:
/// L = (1/m) sum_i [ (1/a) log(1 + sum_{P_i} exp(-a (S_ik - l)))
///                 + (1/b) log(1 + sum_{N_i} exp( b (S_ik - l))) ].
/// Empty pair sets contribute log(1) = 0.
pub fn ms_loss(s: &Array2<f64>, mined: &MinedPairs, cfg: &MsLossConfig) -> f64 {
    let m = s.nrows();
    let mut total = 0.0;
    for i in 0..m {
        let mut pos_sum = 0.0;
        for &k in &mined.positives[i] {
            pos_sum += (-cfg.alpha * (s[[i, k]] - cfg.lambda)).exp();
        }
        let mut neg_sum = 0.0;
        for &k in &mined.negatives[i] {
            neg_sum += (cfg.beta * (s[[i, k]] - cfg.lambda)).exp();
        }
        total += (1.0 + pos_sum).ln() / cfg.alpha + (1.0 + neg_sum).ln() / cfg.beta;
    }
    total / m as f64
}

/// Analytic gradient of [`ms_loss`] with respect to the raw embeddings,
/// treating the mined sets as fixed. Chains through the cosine
/// similarity, so embeddings need not be normalized.
pub fn ms_loss_backward(
    embeddings: &Array2<f64>,
    s: &Array2<f64>,
    mined: &MinedPairs,
    cfg: &MsLossConfig,
) -> Array2<f64> {
    let m = embeddings.nrows();
    let d = embeddings.ncols();
    let norms: Vec<f64> = (0..m)
        .map(|i| embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut grad = Array2::zeros((m, d));
    // dL/dS_ik for each mined pair, chained through
    // dS_ik/de_i = e_k/(|e_i||e_k|) - S_ik e_i/|e_i|^2 (and symmetrically).
    let add_pair = |grad: &mut Array2<f64>, i: usize, k: usize, w: f64| {
        let sik = s[[i, k]];
        let (ni, nk) = (norms[i], norms[k]);
        for c in 0..d {
            let ei = embeddings[[i, c]];
            let ek = embeddings[[k, c]];
            grad[[i, c]] += w * (ek / (ni * nk) - sik * ei / (ni * ni));
            grad[[k, c]] += w * (ei / (ni * nk) - sik * ek / (nk * nk));
        }
    };
    for i in 0..m {
        if !mined.positives[i].is_empty() {
            let mut denom = 1.0;
            for &k in &mined.positives[i] {
                denom += (-cfg.alpha * (s[[i, k]] - cfg.lambda)).exp();
            }
            for &k in &mined.positives[i] {
                let w = -(-cfg.alpha * (s[[i, k]] - cfg.lambda)).exp() / denom / m as f64;
                add_pair(&mut grad, i, k, w);
            }
        }
        if !mined.negatives[i].is_empty() {
            let mut denom = 1.0;
            for &k in &mined.negatives[i] {
                denom += (cfg.beta * (s[[i, k]] - cfg.lambda)).exp();
            }
            for &k in &mined.negatives[i] {
                let w = (cfg.beta * (s[[i, k]] - cfg.lambda)).exp() / denom / m as f64;
                add_pair(&mut grad, i, k, w);
            }
        }
    }
    grad
}

/// Draw one user-balanced minibatch: users without replacement, then per
/// user samples without replacement when the user has enough windows and
/// with replacement otherwise (keeps the batch shape fixed).
///
/// `index` maps each user to its global window ids. Returns the selected
/// window ids and per-sample labels (the user's position in `index`).
pub fn sample_minibatch(
    index: &[(UserId, Vec<usize>)],
    spec: &MinibatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<u32>)> {
    spec.validate()?;
    if index.len() < spec.users_per_batch {
        return Err(Error::Data(format!(
            "minibatch needs {} users but the index has {}",
            spec.users_per_batch,
            index.len()
        )));
    }
    let chosen_users = rand::seq::index::sample(rng, index.len(), spec.users_per_batch);
    let mut window_ids = Vec::with_capacity(spec.batch_size());
    let mut labels = Vec::with_capacity(spec.batch_size());
    for u in chosen_users.iter() {
        let (_, windows) = &index[u];
        if windows.is_empty() {
            return Err(Error::Data(format!("user {} has no windows", index[u].0)));
        }
        if windows.len() >= spec.samples_per_user {
            for w in rand::seq::index::sample(rng, windows.len(), spec.samples_per_user).iter() {
                window_ids.push(windows[w]);
                labels.push(u as u32);
            }
        } else {
            for _ in 0..spec.samples_per_user {
                window_ids.push(windows[rng.gen_range(0..windows.len())]);
                labels.push(u as u32);
            }
        }
    }
    Ok((window_ids, labels))
}

/// Adam optimizer state: first/second moment accumulators shaped like the
/// trainable parameters, plus the step counter.
pub struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    pub step: u64,
}

#[allow(clippy::too_many_arguments)]
fn adam_tensor(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            step: 0,
        }
    }

    /// One Adam update with bias correction.
    pub fn update(&mut self, params: &mut NetworkParams, grads: &ParamGrads, lr: f64, plan: &TrainPlan) {
        self.step += 1;
        let (b1, b2, eps) = (plan.adam_beta1, plan.adam_beta2, plan.adam_eps);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (ci, conv) in params.convs.iter_mut().enumerate() {
            adam_tensor(
                conv.weight.as_slice_mut().unwrap(),
                grads.convs[ci].0.as_slice().unwrap(),
                self.m.convs[ci].0.as_slice_mut().unwrap(),
                self.v.convs[ci].0.as_slice_mut().unwrap(),
                lr, b1, b2, eps, bc1, bc2,
            );
            adam_tensor(
                conv.bias.as_slice_mut().unwrap(),
                grads.convs[ci].1.as_slice().unwrap(),
                self.m.convs[ci].1.as_slice_mut().unwrap(),
                self.v.convs[ci].1.as_slice_mut().unwrap(),
                lr, b1, b2, eps, bc1, bc2,
            );
        }
        for (bi, bn) in params.bns.iter_mut().enumerate() {
            adam_tensor(
                bn.scale.as_slice_mut().unwrap(),
                grads.bns[bi].0.as_slice().unwrap(),
                self.m.bns[bi].0.as_slice_mut().unwrap(),
                self.v.bns[bi].0.as_slice_mut().unwrap(),
                lr, b1, b2, eps, bc1, bc2,
            );
            adam_tensor(
                bn.shift.as_slice_mut().unwrap(),
                grads.bns[bi].1.as_slice().unwrap(),
                self.m.bns[bi].1.as_slice_mut().unwrap(),
                self.v.bns[bi].1.as_slice_mut().unwrap(),
                lr, b1, b2, eps, bc1, bc2,
            );
        }
        adam_tensor(
            params.fc_weight.as_slice_mut().unwrap(),
            grads.fc_weight.as_slice().unwrap(),
            self.m.fc_weight.as_slice_mut().unwrap(),
            self.v.fc_weight.as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
        adam_tensor(
            params.fc_bias.as_slice_mut().unwrap(),
            grads.fc_bias.as_slice().unwrap(),
            self.m.fc_bias.as_slice_mut().unwrap(),
            self.v.fc_bias.as_slice_mut().unwrap(),
            lr, b1, b2, eps, bc1, bc2,
        );
    }
}

/// Normalized training windows grouped per user, sorted by user id.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub users: Vec<(UserId, Vec<Array2<f64>>)>,
}

impl TrainSet {
    pub fn n_windows(&self) -> usize {
        self.users.iter().map(|(_, w)| w.len()).sum()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

pub struct TrainOutcome {
    pub models: Vec<NetworkParams>,
    /// Loss history per fold.
    pub history: Vec<Vec<EpochStats>>,
    pub epochs_completed: u32,
}

fn train_single(
    user_set: &[(UserId, Vec<Array2<f64>>)],
    config: &NetworkConfig,
    batch: &MinibatchSpec,
    loss_cfg: &MsLossConfig,
    plan: &TrainPlan,
    fold: usize,
    log_prefix: &str,
) -> Result<(NetworkParams, Vec<EpochStats>)> {
    let mut all_windows: Vec<&Array2<f64>> = Vec::new();
    let mut index: Vec<(UserId, Vec<usize>)> = Vec::new();
    for (user, windows) in user_set {
        let ids: Vec<usize> = (0..windows.len()).map(|i| all_windows.len() + i).collect();
        all_windows.extend(windows.iter());
        index.push((user.clone(), ids));
    }
    let unique = all_windows.len();
    if unique == 0 {
        return Err(Error::Data("training set has no windows".into()));
    }
    let m = batch.batch_size();
    let steps_per_epoch = unique.div_ceil(m);
    let total_steps = plan.epochs as usize * steps_per_epoch;
    let mut params = init_params(config, derive_seed(plan.seed, &[0xF0, fold as u64]))?;
    if plan.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[0xBA, fold as u64]));
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(plan.epochs as usize);
    let mut global_step = 0usize;
    for epoch in 0..plan.epochs {
        let mut loss_sum = 0.0;
        let mut last_lr = 0.0;
        for _ in 0..steps_per_epoch {
            let lr = lr_at(global_step, total_steps, plan);
            last_lr = lr;
            let (ids, labels) = sample_minibatch(&index, batch, &mut rng)?;
            let views: Vec<ArrayView2<f64>> = ids.iter().map(|&i| all_windows[i].view()).collect();
            let (emb, cache) = forward_train_batch(&mut params, config, &views)?;
            let s = cosine_similarity_matrix(&emb)?;
            let mined = mine_pairs(&s, &labels, loss_cfg)?;
            let loss = ms_loss(&s, &mined, loss_cfg);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{log_prefix}: training diverged at epoch {epoch} step {global_step}: loss {loss}, lr {lr:.3e}"
                )));
            }
            loss_sum += loss;
            let grad_emb = ms_loss_backward(&emb, &s, &mined, loss_cfg);
            let (grads, _) = backward_batch(&params, config, &cache, &grad_emb)?;
            adam.update(&mut params, &grads, lr, plan);
            global_step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / steps_per_epoch as f64,
            lr: last_lr,
        };
        log::info!(
            "{log_prefix} epoch {}/{}: mean loss {:.6}, lr {:.3e}",
            epoch + 1,
            plan.epochs,
            stats.mean_loss,
            stats.lr
        );
        history.push(stats);
    }
    Ok((params, history))
}

/// Train the embedder. With `ensemble_folds > 1`, users are split into
/// folds and one model is trained per fold complement; evaluation
/// concatenates the per-fold embeddings in fold order.
pub fn train(
    train_set: &TrainSet,
    config: &NetworkConfig,
    batch: &MinibatchSpec,
    loss_cfg: &MsLossConfig,
    plan: &TrainPlan,
) -> Result<TrainOutcome> {
    config.validate()?;
    batch.validate()?;
    loss_cfg.validate()?;
    plan.validate()?;
    if train_set.n_users() < batch.users_per_batch {
        return Err(Error::Data(format!(
            "training needs >= {} users, got {}",
            batch.users_per_batch,
            train_set.n_users()
        )));
    }
    let folds = plan.ensemble_folds;
    let mut models = Vec::with_capacity(folds);
    let mut history = Vec::with_capacity(folds);
    if folds == 1 {
        let (params, h) = train_single(&train_set.users, config, batch, loss_cfg, plan, 0, "train")?;
        models.push(params);
        history.push(h);
    } else {
        // Deterministic fold assignment: shuffle user order by seed, then
        // deal round-robin; model f trains on every user outside fold f.
        let mut order: Vec<usize> = (0..train_set.n_users()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[0xF01D]));
        order.shuffle(&mut rng);
        for fold in 0..folds {
            let subset: Vec<(UserId, Vec<Array2<f64>>)> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % folds != fold)
                .map(|(_, &u)| train_set.users[u].clone())
                .collect();
            if subset.len() < batch.users_per_batch {
                return Err(Error::Data(format!(
                    "fold {fold} complement has {} users, needs {}",
                    subset.len(),
                    batch.users_per_batch
                )));
            }
            let prefix = format!("train[fold {fold}]");
            let (params, h) = train_single(&subset, config, batch, loss_cfg, plan, fold, &prefix)?;
            models.push(params);
            history.push(h);
        }
    }
    Ok(TrainOutcome {
        models,
        history,
        epochs_completed: plan.epochs,
    })
}

/// Write loss history as CSV (`epoch,mean_loss,lr`).
pub fn write_loss_history_csv(history: &[EpochStats], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.mean_loss, h.lr));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_class_matrix(pos_sim: f64, neg_sim: f64) -> (Array2<f64>, Vec<u32>) {
        // 4 samples, classes [0,0,1,1]; within-class similarity pos_sim,
        // cross-class neg_sim.
        let labels = vec![0, 0, 1, 1];
        let mut s = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                s[[i, j]] = if i == j {
                    1.0
                } else if labels[i] == labels[j] {
                    pos_sim
                } else {
                    neg_sim
                };
            }
        }
        (s, labels)
    }

    #[test]
    fn miner_drops_easy_pairs() {
        // Positives at 1.0, negatives at 0.0: everything is easy, nothing
        // is mined (1.0 >= 0.0 + eps and 0.0 <= 1.0 - eps).
        let (s, labels) = two_class_matrix(1.0, 0.0);
        let cfg = MsLossConfig::default();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        assert!(mined.is_empty());
    }

    #[test]
    fn miner_keeps_hard_pairs() {
        // Positive at 0.4 below negative at 0.6: both mined.
        let (s, labels) = two_class_matrix(0.4, 0.6);
        let cfg = MsLossConfig::default();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        for i in 0..4 {
            assert_eq!(mined.positives[i].len(), 1, "anchor {i} positives");
            assert_eq!(mined.negatives[i].len(), 2, "anchor {i} negatives");
        }
    }

    #[test]
    fn miner_degenerate_batches_error() {
        let cfg = MsLossConfig::default();
        // Every sample its own class: no positives anywhere.
        let s = Array2::eye(3);
        assert!(mine_pairs(&s, &[0, 1, 2], &cfg).is_err());
        // Single class: fewer than 2 distinct labels.
        assert!(mine_pairs(&s, &[0, 0, 0], &cfg).is_err());
    }

    #[test]
    fn miner_sets_shrink_with_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = Array2::from_shape_fn((8, 4), |_| rng.gen_range(-1.0..1.0));
        let s = cosine_similarity_matrix(&emb).unwrap();
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let big = MsLossConfig {
            epsilon: 0.2,
            ..MsLossConfig::default()
        };
        let small = MsLossConfig {
            epsilon: 0.05,
            ..MsLossConfig::default()
        };
        let mined_big = mine_pairs(&s, &labels, &big).unwrap();
        let mined_small = mine_pairs(&s, &labels, &small).unwrap();
        for i in 0..8 {
            for k in &mined_small.positives[i] {
                assert!(mined_big.positives[i].contains(k));
            }
            for k in &mined_small.negatives[i] {
                assert!(mined_big.negatives[i].contains(k));
            }
        }
    }

    #[test]
    fn loss_zero_when_nothing_mined() {
        let (s, labels) = two_class_matrix(1.0, 0.0);
        let cfg = MsLossConfig::default();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        assert_eq!(ms_loss(&s, &mined, &cfg), 0.0);
    }

    #[test]
    fn loss_single_anchor_closed_form() {
        // One anchor with one mined positive at S = lambda and no
        // negatives, alpha = 2: per-anchor term (1/2) log 2 = 0.34657...
        let cfg = MsLossConfig::default();
        let s = array![[1.0, cfg.lambda], [cfg.lambda, 1.0]];
        let mined = MinedPairs {
            positives: vec![vec![1], vec![]],
            negatives: vec![vec![], vec![]],
        };
        let loss = ms_loss(&s, &mined, &cfg);
        // m = 2 here, so the sum holds one (1/2) log 2 term.
        let per_anchor = 2.0 * loss;
        assert!((per_anchor - 0.5 * 2.0f64.ln()).abs() < 1e-12);
        assert!((per_anchor - 0.3465735902799726).abs() < 1e-10);
    }

    /// Brute-force oracle re-evaluating the loss term by term.
    fn ms_loss_oracle(s: &Array2<f64>, mined: &MinedPairs, cfg: &MsLossConfig) -> f64 {
        let m = s.nrows();
        let mut acc = 0.0;
        for i in 0..m {
            let pos: f64 = mined.positives[i]
                .iter()
                .map(|&k| (-cfg.alpha * (s[[i, k]] - cfg.lambda)).exp())
                .sum();
            let neg: f64 = mined.negatives[i]
                .iter()
                .map(|&k| (cfg.beta * (s[[i, k]] - cfg.lambda)).exp())
                .sum();
            acc += (1.0 / cfg.alpha) * (1.0 + pos).ln() + (1.0 / cfg.beta) * (1.0 + neg).ln();
        }
        acc / m as f64
    }

    #[test]
    fn loss_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = MsLossConfig::default();
        for _ in 0..20 {
            let emb = Array2::from_shape_fn((8, 6), |_| rng.gen_range(-1.0..1.0));
            let s = cosine_similarity_matrix(&emb).unwrap();
            let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
            let mined = mine_pairs(&s, &labels, &cfg).unwrap();
            let got = ms_loss(&s, &mined, &cfg);
            let want = ms_loss_oracle(&s, &mined, &cfg);
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let emb = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-1.0..1.0));
        let labels = vec![0u32, 0, 1, 1, 2, 2, 3, 3];
        let cfg = MsLossConfig::default();
        let s = cosine_similarity_matrix(&emb).unwrap();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        let base = ms_loss(&s, &mined, &cfg);

        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let emb_p = Array2::from_shape_fn((8, 5), |(i, j)| emb[[perm[i], j]]);
        let labels_p: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
        let s_p = cosine_similarity_matrix(&emb_p).unwrap();
        let mined_p = mine_pairs(&s_p, &labels_p, &cfg).unwrap();
        let shuffled = ms_loss(&s_p, &mined_p, &cfg);
        assert!((base - shuffled).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = MsLossConfig::default();
        let emb = Array2::from_shape_fn((8, 4), |_| rng.gen_range(-1.0..1.0));
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let s = cosine_similarity_matrix(&emb).unwrap();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        assert!(!mined.is_empty(), "test needs mined pairs");
        let grad = ms_loss_backward(&emb, &s, &mined, &cfg);
        let step = 1e-6;
        for i in 0..8 {
            for c in 0..4 {
                let mut plus = emb.clone();
                plus[[i, c]] += step;
                let mut minus = emb.clone();
                minus[[i, c]] -= step;
                let lp = ms_loss(&cosine_similarity_matrix(&plus).unwrap(), &mined, &cfg);
                let lm = ms_loss(&cosine_similarity_matrix(&minus).unwrap(), &mined, &cfg);
                let fd = (lp - lm) / (2.0 * step);
                let an = grad[[i, c]];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-4, "grad[{i},{c}]: fd {fd}, analytic {an}");
            }
        }
    }

    #[test]
    fn loss_gradient_zero_when_nothing_mined() {
        let (s, labels) = two_class_matrix(1.0, 0.0);
        let cfg = MsLossConfig::default();
        let mined = mine_pairs(&s, &labels, &cfg).unwrap();
        let emb = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 + 1.0);
        let grad = ms_loss_backward(&emb, &s, &mined, &cfg);
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let emb = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
        let scaled = emb.mapv(|v| v * 3.7);
        let a = cosine_similarity_matrix(&emb).unwrap();
        let b = cosine_similarity_matrix(&scaled).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let labels = vec![0, 0, 1, 1, 2, 2];
        let cfg = MsLossConfig::default();
        let ma = mine_pairs(&a, &labels, &cfg).unwrap();
        let mb = mine_pairs(&b, &labels, &cfg).unwrap();
        assert_eq!(ma, mb);
        assert!((ms_loss(&a, &ma, &cfg) - ms_loss(&b, &mb, &cfg)).abs() < 1e-12);
    }

    fn toy_index(n_users: usize, windows_per_user: usize) -> Vec<(UserId, Vec<usize>)> {
        (0..n_users)
            .map(|u| {
                (
                    UserId::new(format!("u{u:04}")),
                    (0..windows_per_user).map(|w| u * windows_per_user + w).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn minibatch_shape_and_unique_users() {
        let index = toy_index(20, 20);
        let spec = MinibatchSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ids, labels) = sample_minibatch(&index, &spec, &mut rng).unwrap();
        assert_eq!(ids.len(), 256);
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 16);
        // Within a user with enough windows, samples are distinct.
        for label in &distinct {
            let mut user_ids: Vec<usize> = ids
                .iter()
                .zip(&labels)
                .filter(|(_, l)| *l == label)
                .map(|(i, _)| *i)
                .collect();
            user_ids.sort_unstable();
            user_ids.dedup();
            assert_eq!(user_ids.len(), 16);
        }
    }

    #[test]
    fn minibatch_fills_underpopulated_users_with_replacement() {
        let index = toy_index(2, 3);
        let spec = MinibatchSpec {
            users_per_batch: 2,
            samples_per_user: 16,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ids, _) = sample_minibatch(&index, &spec, &mut rng).unwrap();
        assert_eq!(ids.len(), 32);
        // Only 6 distinct windows exist, so repeats are forced.
        let mut d = ids.clone();
        d.sort_unstable();
        d.dedup();
        assert!(d.len() <= 6);
    }

    #[test]
    fn minibatch_is_deterministic_and_errors_when_short() {
        let index = toy_index(20, 20);
        let spec = MinibatchSpec::default();
        let a = sample_minibatch(&index, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_minibatch(&index, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let small = toy_index(8, 20);
        assert!(sample_minibatch(&small, &spec, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn lr_schedule_endpoints_and_continuity() {
        let plan = TrainPlan::default();
        let total = 101;
        assert!((lr_at(0, total, &plan) - 1e-4).abs() < 1e-15);
        assert!((lr_at(30, total, &plan) - 1e-2).abs() < 1e-12);
        assert!((lr_at(100, total, &plan) - 1e-7).abs() < 1e-12);
        // Piecewise monotone: up then down.
        for s in 0..30 {
            assert!(lr_at(s, total, &plan) < lr_at(s + 1, total, &plan));
        }
        for s in 30..100 {
            assert!(lr_at(s, total, &plan) > lr_at(s + 1, total, &plan));
        }
        // Continuity at the junction: neighbors stay close to the peak.
        assert!((lr_at(29, total, &plan) - 1e-2).abs() < 1e-3);
        assert!((lr_at(31, total, &plan) - 1e-2).abs() < 1e-3);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let cfg = NetworkConfig {
            input_channels: 2,
            time_steps: 12,
            num_conv_layers: 2,
            growth: 2,
            kernel_size: 3,
            dilations: vec![1, 2],
            embedding_dim: 4,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        };
        let mut params = init_params(&cfg, 1).unwrap();
        let before = params.clone();
        let grads = ParamGrads::zeros_like(&params);
        let plan = TrainPlan::default();
        let mut adam = AdamState::new(&params);
        adam.update(&mut params, &grads, 1e-2, &plan);
        assert_eq!(params, before);
    }

    fn smoke_train_set(n_users: usize, windows_per_user: usize, cfg: &NetworkConfig) -> TrainSet {
        // Per-user signature: a distinct sinusoid frequency/amplitude per
        // channel plus noise, so the loss has structure to learn.
        let mut users = Vec::new();
        for u in 0..n_users {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + u as u64);
            let freq = 0.05 + 0.01 * u as f64;
            let amp = 1.0 + 0.1 * (u % 7) as f64;
            let windows: Vec<Array2<f64>> = (0..windows_per_user)
                .map(|_| {
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    Array2::from_shape_fn((cfg.input_channels, cfg.time_steps), |(c, t)| {
                        amp * ((t as f64) * freq * (c + 1) as f64 + phase).sin()
                            + 0.1 * rng.gen_range(-1.0..1.0)
                    })
                })
                .collect();
            users.push((UserId::new(format!("u{u:04}")), windows));
        }
        TrainSet { users }
    }

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            input_channels: 2,
            time_steps: 24,
            num_conv_layers: 3,
            growth: 4,
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            embedding_dim: 8,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    #[test]
    fn smoke_training_reduces_loss() {
        let cfg = tiny_net();
        let set = smoke_train_set(20, 8, &cfg);
        let batch = MinibatchSpec {
            users_per_batch: 8,
            samples_per_user: 8,
        };
        let plan = TrainPlan {
            epochs: 2,
            seed: 42,
            lr_peak: 3e-3,
            ..TrainPlan::default()
        };
        let out = train(&set, &cfg, &batch, &MsLossConfig::default(), &plan).unwrap();
        assert_eq!(out.models.len(), 1);
        let h = &out.history[0];
        assert_eq!(h.len(), 2);
        assert!(
            h[1].mean_loss < h[0].mean_loss,
            "expected loss to fall: {} -> {}",
            h[0].mean_loss,
            h[1].mean_loss
        );
    }

    #[test]
    fn zero_epochs_returns_initialized_params() {
        let cfg = tiny_net();
        let set = smoke_train_set(4, 4, &cfg);
        let batch = MinibatchSpec {
            users_per_batch: 2,
            samples_per_user: 2,
        };
        let plan = TrainPlan {
            epochs: 0,
            seed: 5,
            ..TrainPlan::default()
        };
        let out = train(&set, &cfg, &batch, &MsLossConfig::default(), &plan).unwrap();
        let expected = init_params(&cfg, derive_seed(5, &[0xF0, 0])).unwrap();
        assert_eq!(out.models[0], expected);
        assert!(out.history[0].is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_net();
        let set = smoke_train_set(6, 4, &cfg);
        let batch = MinibatchSpec {
            users_per_batch: 3,
            samples_per_user: 2,
        };
        let plan = TrainPlan {
            epochs: 1,
            seed: 77,
            ..TrainPlan::default()
        };
        let a = train(&set, &cfg, &batch, &MsLossConfig::default(), &plan).unwrap();
        let b = train(&set, &cfg, &batch, &MsLossConfig::default(), &plan).unwrap();
        assert_eq!(a.models[0], b.models[0]);
    }

    #[test]
    fn ensemble_trains_one_model_per_fold() {
        let cfg = tiny_net();
        let set = smoke_train_set(8, 4, &cfg);
        let batch = MinibatchSpec {
            users_per_batch: 2,
            samples_per_user: 2,
        };
        let plan = TrainPlan {
            epochs: 1,
            seed: 7,
            ensemble_folds: 4,
            ..TrainPlan::default()
        };
        let out = train(&set, &cfg, &batch, &MsLossConfig::default(), &plan).unwrap();
        assert_eq!(out.models.len(), 4);
        // Folds see different data, so the models differ.
        assert_ne!(out.models[0], out.models[1]);
    }
}
