//! Deterministic synthetic binocular gaze generator.
//!
//! Produces desk-scale datasets with the structural properties the
//! evaluation pipeline depends on: a per-user linear optical-to-visual
//! transform (gain and angle kappa), per-user saccade dynamics and
//! colored fixation noise, random-saccade and smooth-pursuit tasks, and a
//! controllable spatial-accuracy error that drives the signal-quality
//! tiers. Everything derives from a master seed; regeneration is
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::signal::{
    write_recording_csv, Dataset, DatasetManifest, GazeRecording, ManifestRecording, ManifestUser,
    Split, Task, UserId, RAW_CHANNELS,
};
use crate::stats::derive_seed;

/// Saturation amplitude of the peak-velocity main sequence, degrees.
const MAIN_SEQUENCE_A0: f64 = 10.0;
/// Saccade duration intercept, seconds.
const SACCADE_D0: f64 = 0.020;
/// Refractory period after a saccade lands, seconds.
const SACCADE_COOLDOWN: f64 = 0.10;
/// Catch-up saccade latency during pursuit, seconds.
const CATCHUP_LATENCY: f64 = 0.13;

/// Population distributions the per-user signatures are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    /// Temporal azimuth offset of the visual axis, mirrored across eyes.
    pub kappa_az_mean_deg: f64,
    pub kappa_az_sd_deg: f64,
    pub kappa_el_mean_deg: f64,
    pub kappa_el_sd_deg: f64,
    /// Per-eye visual-axis gain: identity plus these perturbations.
    pub gain_diag_sd: f64,
    pub gain_offdiag_sd: f64,
    /// Per-eye, per-component motor gain on the conjugate gaze command
    /// (ocular motility asymmetry).
    pub motor_gain_sd: f64,
    /// Saccade main sequence: peak-velocity scale and duration slope.
    pub vmax_mean_deg_s: f64,
    pub vmax_sd_deg_s: f64,
    pub dur_slope_mean_s_per_deg: f64,
    pub dur_slope_sd_s_per_deg: f64,
    pub pursuit_gain_lo: f64,
    pub pursuit_gain_hi: f64,
    /// Log-normal fixation-noise RMS in degrees.
    pub noise_amp_log_mean: f64,
    pub noise_amp_log_sd: f64,
    /// Per-eye asymmetry factor (log-normal sd) applied to the noise RMS.
    pub noise_eye_asym_log_sd: f64,
    /// Recording-to-recording noise RMS jitter (log-normal sd), the
    /// headset-refit effect: weakens the noise-amplitude identity cue
    /// without touching the calibration cues.
    pub noise_rec_jitter_log_sd: f64,
    pub noise_exponent_lo: f64,
    pub noise_exponent_hi: f64,
    /// Log-normal spatial-accuracy bias magnitude in degrees.
    pub accuracy_log_mean: f64,
    pub accuracy_log_sd: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            kappa_az_mean_deg: 2.5,
            kappa_az_sd_deg: 1.0,
            kappa_el_mean_deg: 0.3,
            kappa_el_sd_deg: 0.5,
            gain_diag_sd: 0.09,
            gain_offdiag_sd: 0.04,
            motor_gain_sd: 0.04,
            vmax_mean_deg_s: 450.0,
            vmax_sd_deg_s: 90.0,
            dur_slope_mean_s_per_deg: 0.0025,
            dur_slope_sd_s_per_deg: 0.0008,
            pursuit_gain_lo: 0.75,
            pursuit_gain_hi: 0.98,
            noise_amp_log_mean: -2.6,
            noise_amp_log_sd: 0.6,
            noise_eye_asym_log_sd: 0.3,
            noise_rec_jitter_log_sd: 0.0,
            noise_exponent_lo: 0.4,
            noise_exponent_hi: 1.6,
            accuracy_log_mean: -0.7,
            accuracy_log_sd: 0.5,
        }
    }
}

/// Everything person-specific the generator injects into a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSignature {
    pub user_id: UserId,
    /// Angle kappa per eye: (azimuth, elevation) offset in degrees.
    pub kappa: [[f64; 2]; 2],
    /// Per-eye 2x2 gain; visual = gain * optical + kappa, exactly.
    pub gain: [[[f64; 2]; 2]; 2],
    /// Per-eye (azimuth, elevation) motor gain on the conjugate gaze.
    pub motor_gain: [[f64; 2]; 2],
    pub vmax_deg_s: f64,
    pub dur_slope_s_per_deg: f64,
    pub pursuit_gain: f64,
    /// Per-eye fixation-noise RMS in degrees.
    pub noise_amp_deg: [f64; 2],
    /// Recording-to-recording multiplier spread on the noise RMS.
    pub noise_rec_jitter_log_sd: f64,
    /// Spectral shape of the fixation noise (octave weight decay).
    pub noise_exponent: f64,
    /// Magnitude of the smooth gaze-estimation bias field, degrees.
    pub accuracy_bias_deg: f64,
    /// Per eye, per component: quadratic bias-field coefficients over
    /// normalized gaze coordinates.
    pub bias_coeffs: [[[f64; 6]; 2]; 2],
}

impl UserSignature {
    /// Peak saccade velocity for an amplitude, deg/s.
    pub fn main_sequence_peak_velocity(&self, amplitude_deg: f64) -> f64 {
        self.vmax_deg_s * (1.0 - (-amplitude_deg / MAIN_SEQUENCE_A0).exp())
    }

    /// Saccade duration for an amplitude, seconds.
    pub fn saccade_duration(&self, amplitude_deg: f64) -> f64 {
        SACCADE_D0 + self.dur_slope_s_per_deg * amplitude_deg
    }

    /// Smooth per-eye gaze-estimation bias at a gaze position.
    fn bias_at(&self, eye: usize, pos: [f64; 2], range_deg: f64) -> [f64; 2] {
        let u = pos[0] / range_deg;
        let v = pos[1] / range_deg;
        let basis = [1.0, u, v, u * u, u * v, v * v];
        let mut out = [0.0; 2];
        for comp in 0..2 {
            out[comp] = self.bias_coeffs[eye][comp]
                .iter()
                .zip(&basis)
                .map(|(c, b)| c * b)
                .sum();
        }
        out
    }
}

/// Task stimulus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    RandomSaccade {
        target_range_deg: f64,
        inter_jump_mean_s: f64,
        inter_jump_jitter_s: f64,
        latency_mean_s: f64,
        latency_sd_s: f64,
    },
    SmoothPursuit {
        frequency_hz: f64,
        amplitude_deg: f64,
        catchup_threshold_deg: f64,
    },
}

impl TaskKind {
    pub fn default_random_saccade() -> Self {
        TaskKind::RandomSaccade {
            target_range_deg: 15.0,
            inter_jump_mean_s: 1.0,
            inter_jump_jitter_s: 0.2,
            latency_mean_s: 0.2,
            latency_sd_s: 0.02,
        }
    }

    pub fn default_smooth_pursuit() -> Self {
        TaskKind::SmoothPursuit {
            frequency_hz: 0.4,
            amplitude_deg: 10.0,
            catchup_threshold_deg: 1.5,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskKind::RandomSaccade { .. } => Task::RandomSaccade,
            TaskKind::SmoothPursuit { .. } => Task::SmoothPursuit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub duration_s: f64,
    pub sample_rate: f64,
}

impl TaskSpec {
    pub fn random_saccade(duration_s: f64) -> Self {
        TaskSpec {
            kind: TaskKind::default_random_saccade(),
            duration_s,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn smooth_pursuit(duration_s: f64) -> Self {
        TaskSpec {
            kind: TaskKind::default_smooth_pursuit(),
            duration_s,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 5.0 {
            return Err(Error::Config("task duration must be >= 5 s (one window)".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let amp = match &self.kind {
            TaskKind::RandomSaccade { target_range_deg, .. } => *target_range_deg,
            TaskKind::SmoothPursuit { amplitude_deg, .. } => *amplitude_deg,
        };
        if !(amp > 0.0 && amp <= 20.0) {
            return Err(Error::Config(format!("task amplitude {amp} outside (0, 20] degrees")));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }
}

/// Synthetic dataset shape: population size, task plan, split fractions,
/// accuracy-tier quantiles, and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Recordings per user per task kind.
    pub recordings_per_task: u32,
    pub saccade_task: TaskSpec,
    pub pursuit_task: TaskSpec,
    pub train_fraction: f64,
    /// Quantile cut points for accuracy tiers (ascending, in (0, 1)).
    pub tier_quantiles: Vec<f64>,
    pub population: PopulationParams,
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            recordings_per_task: 2,
            saccade_task: TaskSpec::random_saccade(20.0),
            pursuit_task: TaskSpec::smooth_pursuit(20.0),
            train_fraction: 2.0 / 3.0,
            tier_quantiles: vec![1.0 / 3.0, 2.0 / 3.0],
            population: PopulationParams::default(),
            master_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::Config("synthetic dataset needs >= 2 users".into()));
        }
        if self.recordings_per_task == 0 {
            return Err(Error::Config("need >= 1 recording per task".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train fraction must be in [0, 1] (test gets the rest)".into()));
        }
        self.saccade_task.validate()?;
        self.pursuit_task.validate()?;
        let mut prev = 0.0;
        for &q in &self.tier_quantiles {
            if !(q > prev && q < 1.0) {
                return Err(Error::Config("tier quantiles must be ascending within (0, 1)".into()));
            }
            prev = q;
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

/// Draw one user's signature; deterministic in (master seed, user index).
pub fn generate_user(cfg: &SynthConfig, user_index: usize) -> UserSignature {
    let p = &cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[0x05E4, user_index as u64]));
    let clamp_kappa = |v: f64| v.clamp(-6.0, 6.0);
    let mut kappa = [[0.0; 2]; 2];
    for (eye, k) in kappa.iter_mut().enumerate() {
        // Temporal offset: positive azimuth for the left eye, negative for
        // the right.
        let sign = if eye == 0 { 1.0 } else { -1.0 };
        k[0] = clamp_kappa(sign * normal(&mut rng, p.kappa_az_mean_deg, p.kappa_az_sd_deg));
        k[1] = clamp_kappa(normal(&mut rng, p.kappa_el_mean_deg, p.kappa_el_sd_deg));
    }
    let mut gain = [[[0.0; 2]; 2]; 2];
    for g in gain.iter_mut() {
        for r in 0..2 {
            for c in 0..2 {
                let base = if r == c { 1.0 } else { 0.0 };
                let sd = if r == c { p.gain_diag_sd } else { p.gain_offdiag_sd };
                g[r][c] = base + normal(&mut rng, 0.0, sd);
            }
        }
    }
    let mut motor_gain = [[0.0; 2]; 2];
    for m in motor_gain.iter_mut() {
        for c in m.iter_mut() {
            *c = normal(&mut rng, 1.0, p.motor_gain_sd).max(0.5);
        }
    }
    let vmax = normal(&mut rng, p.vmax_mean_deg_s, p.vmax_sd_deg_s).max(150.0);
    let dur_slope = normal(&mut rng, p.dur_slope_mean_s_per_deg, p.dur_slope_sd_s_per_deg).max(0.0008);
    let pursuit_gain = rng.gen_range(p.pursuit_gain_lo..=p.pursuit_gain_hi);
    let amp = (normal(&mut rng, p.noise_amp_log_mean, p.noise_amp_log_sd)).exp();
    let asym = (normal(&mut rng, 0.0, p.noise_eye_asym_log_sd)).exp();
    let noise_amp_deg = [amp * asym, amp / asym];
    let noise_exponent = rng.gen_range(p.noise_exponent_lo..=p.noise_exponent_hi);
    let accuracy_bias_deg = (normal(&mut rng, p.accuracy_log_mean, p.accuracy_log_sd)).exp();
    // Quadratic bias field per eye/component, scaled so the mean error
    // magnitude over the gaze range matches the drawn accuracy bias.
    let mut bias_coeffs = [[[0.0; 6]; 2]; 2];
    for eye in 0..2 {
        for comp in 0..2 {
            for c in bias_coeffs[eye][comp].iter_mut() {
                *c = rng.sample::<f64, _>(StandardNormal);
            }
        }
        // Mean magnitude over a coarse grid of normalized coordinates.
        let mut acc = 0.0;
        let mut count = 0;
        for iu in 0..9 {
            for iv in 0..9 {
                let u = -1.0 + 0.25 * iu as f64;
                let v = -1.0 + 0.25 * iv as f64;
                let basis = [1.0, u, v, u * u, u * v, v * v];
                let bx: f64 = bias_coeffs[eye][0].iter().zip(&basis).map(|(c, b)| c * b).sum();
                let by: f64 = bias_coeffs[eye][1].iter().zip(&basis).map(|(c, b)| c * b).sum();
                acc += (bx * bx + by * by).sqrt();
                count += 1;
            }
        }
        let mean_mag = acc / count as f64;
        let scale = if mean_mag > 0.0 { accuracy_bias_deg / mean_mag } else { 0.0 };
        for comp in 0..2 {
            for c in bias_coeffs[eye][comp].iter_mut() {
                *c *= scale;
            }
        }
    }
    UserSignature {
        user_id: UserId::new(format!("u{user_index:04}")),
        kappa,
        gain,
        motor_gain,
        vmax_deg_s: vmax,
        dur_slope_s_per_deg: dur_slope,
        pursuit_gain,
        noise_amp_deg,
        noise_rec_jitter_log_sd: p.noise_rec_jitter_log_sd,
        noise_exponent,
        accuracy_bias_deg,
        bias_coeffs,
    }
}

/// Peak-to-mean velocity ratio of the sin^(2g) profile:
/// rho(g) = sqrt(pi) * Gamma(g+1) / Gamma(g+1/2).
fn profile_ratio(gamma: f64) -> f64 {
    (0.5 * std::f64::consts::PI.ln() + ln_gamma(gamma + 1.0) - ln_gamma(gamma + 0.5)).exp()
}

/// A saccade in flight: position interpolates start -> end along the
/// integrated sin^(2g) velocity profile.
struct Saccade {
    start_s: f64,
    duration_s: f64,
    from: [f64; 2],
    to: [f64; 2],
    /// Cumulative displacement fraction on a uniform grid over [0, 1].
    profile: Vec<f64>,
}

impl Saccade {
    /// Plan a saccade whose peak velocity follows the user's main
    /// sequence and whose duration follows the duration law; the profile
    /// exponent reconciles the two with the displacement constraint.
    fn plan(sig: &UserSignature, start_s: f64, from: [f64; 2], to: [f64; 2], dt: f64) -> Self {
        let amp = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
        let vp = sig.main_sequence_peak_velocity(amp).max(1.0);
        let mut duration = sig.saccade_duration(amp).max(2.0 * dt);
        // Required peak/mean ratio; keep it inside the representable
        // range of the profile family by stretching the duration.
        let mut rho = vp * duration / amp.max(1e-9);
        if rho < 1.05 {
            duration = 1.05 * amp / vp;
            rho = 1.05;
        } else if rho > 3.4 {
            duration = 3.4 * amp / vp;
            rho = 3.4;
        }
        // Solve profile_ratio(gamma) = rho by bisection.
        let (mut lo, mut hi) = (0.02, 6.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if profile_ratio(mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let gamma = 0.5 * (lo + hi);
        // Cumulative trapezoid of sin^(2g)(pi s), normalized to end at 1.
        let grid = 128;
        let mut profile = Vec::with_capacity(grid + 1);
        profile.push(0.0);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 1..=grid {
            let s = i as f64 / grid as f64;
            let v = (std::f64::consts::PI * s).sin().powf(2.0 * gamma);
            acc += 0.5 * (prev + v) / grid as f64;
            prev = v;
            profile.push(acc);
        }
        let total = *profile.last().unwrap();
        for p in profile.iter_mut() {
            *p /= total;
        }
        Saccade {
            start_s,
            duration_s: duration,
            from,
            to,
            profile,
        }
    }

    fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    fn position(&self, t_s: f64) -> [f64; 2] {
        let u = ((t_s - self.start_s) / self.duration_s).clamp(0.0, 1.0);
        let grid = self.profile.len() - 1;
        let x = u * grid as f64;
        let i = (x.floor() as usize).min(grid - 1);
        let frac = x - i as f64;
        let w = self.profile[i] * (1.0 - frac) + self.profile[i + 1] * frac;
        [
            self.from[0] + (self.to[0] - self.from[0]) * w,
            self.from[1] + (self.to[1] - self.from[1]) * w,
        ]
    }
}

/// Conjugate true-gaze trajectory for a random saccade (jumping dot) task.
fn simulate_random_saccade(
    sig: &UserSignature,
    n: usize,
    dt: f64,
    range: f64,
    inter_mean: f64,
    inter_jitter: f64,
    latency_mean: f64,
    latency_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 2]> {
    let duration = n as f64 * dt;
    // Precompute the jump schedule.
    let mut jumps: Vec<(f64, [f64; 2])> = Vec::new();
    let mut t = 0.0;
    loop {
        t += inter_mean + rng.gen_range(-inter_jitter..=inter_jitter);
        if t >= duration {
            break;
        }
        jumps.push((t, [rng.gen_range(-range..=range), rng.gen_range(-range..=range)]));
    }
    let first_target = [rng.gen_range(-range..=range), rng.gen_range(-range..=range)];

    let mut out = Vec::with_capacity(n);
    let mut eye = first_target;
    let mut in_flight: Option<Saccade> = None;
    // Pending launch: (launch time, target).
    let mut pending: Option<(f64, [f64; 2])> = None;
    let mut next_jump = 0usize;
    let mut cooldown_until = 0.0;
    for i in 0..n {
        let now = i as f64 * dt;
        while next_jump < jumps.len() && jumps[next_jump].0 <= now {
            let (jump_t, target) = jumps[next_jump];
            let latency = normal(rng, latency_mean, latency_sd).max(3.0 * dt);
            let launch = jump_t + latency;
            pending = Some((launch, target));
            next_jump += 1;
        }
        if let Some(sac) = &in_flight {
            if now >= sac.end_s() {
                eye = sac.to;
                cooldown_until = sac.end_s() + SACCADE_COOLDOWN;
                in_flight = None;
            }
        }
        if in_flight.is_none() {
            if let Some((launch, target)) = pending {
                if now >= launch && now >= cooldown_until {
                    let sac = Saccade::plan(sig, now, eye, target, dt);
                    in_flight = Some(sac);
                    pending = None;
                }
            }
        }
        let pos = match &in_flight {
            Some(sac) => sac.position(now),
            None => eye,
        };
        out.push(pos);
    }
    out
}

/// Conjugate true-gaze trajectory for a smooth pursuit (gliding dot)
/// task: the eye tracks the sinusoidal target with the user's pursuit
/// gain and fires catch-up saccades when the position error exceeds the
/// threshold.
fn simulate_smooth_pursuit(
    sig: &UserSignature,
    n: usize,
    dt: f64,
    freq: f64,
    amp: f64,
    threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 2]> {
    let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase1 = rng.gen_range(0.0..std::f64::consts::TAU);
    // Elevation runs slower and smaller than azimuth.
    let freq_el = 0.7 * freq;
    let amp_el = 0.6 * amp;
    let target = |t: f64| -> [f64; 2] {
        [
            amp * (std::f64::consts::TAU * freq * t + phase0).sin(),
            amp_el * (std::f64::consts::TAU * freq_el * t + phase1).sin(),
        ]
    };
    let target_vel = |t: f64| -> [f64; 2] {
        [
            amp * std::f64::consts::TAU * freq * (std::f64::consts::TAU * freq * t + phase0).cos(),
            amp_el * std::f64::consts::TAU * freq_el * (std::f64::consts::TAU * freq_el * t + phase1).cos(),
        ]
    };
    let mut out = Vec::with_capacity(n);
    let mut eye = target(0.0);
    let mut in_flight: Option<Saccade> = None;
    let mut pending_launch: Option<f64> = None;
    let mut cooldown_until = 0.0;
    for i in 0..n {
        let now = i as f64 * dt;
        if let Some(sac) = &in_flight {
            if now >= sac.end_s() {
                eye = sac.to;
                cooldown_until = sac.end_s() + SACCADE_COOLDOWN;
                in_flight = None;
            }
        }
        if let Some(sac) = &in_flight {
            out.push(sac.position(now));
            continue;
        }
        let tv = target_vel(now);
        eye[0] += sig.pursuit_gain * tv[0] * dt;
        eye[1] += sig.pursuit_gain * tv[1] * dt;
        let tp = target(now);
        let err = ((tp[0] - eye[0]).powi(2) + (tp[1] - eye[1]).powi(2)).sqrt();
        if err > threshold && pending_launch.is_none() && now >= cooldown_until {
            pending_launch = Some(now + CATCHUP_LATENCY);
        }
        if let Some(launch) = pending_launch {
            if now >= launch {
                let sac = Saccade::plan(sig, now, eye, target(now), dt);
                in_flight = Some(sac);
                pending_launch = None;
                out.push(in_flight.as_ref().unwrap().position(now));
                continue;
            }
        }
        out.push(eye);
    }
    out
}

/// Octave-band colored noise: white knot sequences at halved rates,
/// linearly interpolated and summed with weights 2^(-exponent*k/2), then
/// rescaled to the exact target RMS.
fn colored_noise(n: usize, rms_deg: f64, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rms_deg == 0.0 || n == 0 {
        return vec![0.0; n];
    }
    let octaves = 6;
    let mut acc = vec![0.0; n];
    for k in 0..octaves {
        let step = 1usize << k;
        let weight = (2.0f64).powf(-exponent * k as f64 / 2.0);
        let n_knots = n / step + 2;
        let knots: Vec<f64> = (0..n_knots).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (i, a) in acc.iter_mut().enumerate() {
            let pos = i / step;
            let frac = (i % step) as f64 / step as f64;
            *a += weight * (knots[pos] * (1.0 - frac) + knots[pos + 1] * frac);
        }
    }
    let rms = (acc.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let scale = rms_deg / rms;
        for a in acc.iter_mut() {
            *a *= scale;
        }
    }
    acc
}

/// Generate one recording: simulate the task's true gaze, then per eye
/// add the estimation bias field and colored noise to form the optical
/// axis, and apply the user's exact linear transform for the visual axis.
/// Returns the recording and its mean spatial-accuracy error in degrees.
pub fn generate_recording(
    sig: &UserSignature,
    task: &TaskSpec,
    repetition: u32,
    seed: u64,
) -> Result<(GazeRecording, f64)> {
    task.validate()?;
    let n = task.n_samples();
    let dt = 1.0 / task.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (true_gaze, range) = match &task.kind {
        TaskKind::RandomSaccade {
            target_range_deg,
            inter_jump_mean_s,
            inter_jump_jitter_s,
            latency_mean_s,
            latency_sd_s,
        } => (
            simulate_random_saccade(
                sig,
                n,
                dt,
                *target_range_deg,
                *inter_jump_mean_s,
                *inter_jump_jitter_s,
                *latency_mean_s,
                *latency_sd_s,
                &mut rng,
            ),
            *target_range_deg,
        ),
        TaskKind::SmoothPursuit {
            frequency_hz,
            amplitude_deg,
            catchup_threshold_deg,
        } => (
            simulate_smooth_pursuit(
                sig,
                n,
                dt,
                *frequency_hz,
                *amplitude_deg,
                *catchup_threshold_deg,
                &mut rng,
            ),
            *amplitude_deg,
        ),
    };
    let mut data = Array2::zeros((RAW_CHANNELS, n));
    let mut err_sum = 0.0;
    // Headset-refit effect: one noise-level multiplier per recording.
    // No draw when disabled, keeping the stream stable across configs.
    let rec_jitter = if sig.noise_rec_jitter_log_sd > 0.0 {
        (sig.noise_rec_jitter_log_sd * rng.sample::<f64, _>(StandardNormal)).exp()
    } else {
        1.0
    };
    for eye in 0..2 {
        let amp = sig.noise_amp_deg[eye] * rec_jitter;
        let noise_az = colored_noise(n, amp, sig.noise_exponent, &mut rng);
        let noise_el = colored_noise(n, amp, sig.noise_exponent, &mut rng);
        let base = eye * 4;
        let motor = sig.motor_gain[eye];
        for i in 0..n {
            let g = true_gaze[i];
            // The eye itself moves with the per-eye motor gain; bias and
            // noise are estimation error on top of that true position.
            let eye_pos = [motor[0] * g[0], motor[1] * g[1]];
            let bias = sig.bias_at(eye, g, range);
            let opt = [
                eye_pos[0] + bias[0] + noise_az[i],
                eye_pos[1] + bias[1] + noise_el[i],
            ];
            let gm = &sig.gain[eye];
            let vis = [
                gm[0][0] * opt[0] + gm[0][1] * opt[1] + sig.kappa[eye][0],
                gm[1][0] * opt[0] + gm[1][1] * opt[1] + sig.kappa[eye][1],
            ];
            data[[base, i]] = opt[0];
            data[[base + 1, i]] = opt[1];
            data[[base + 2, i]] = vis[0];
            data[[base + 3, i]] = vis[1];
            let e = [opt[0] - eye_pos[0], opt[1] - eye_pos[1]];
            err_sum += (e[0] * e[0] + e[1] * e[1]).sqrt();
        }
    }
    let accuracy = err_sum / (2 * n) as f64;
    let timestamps = (0..n).map(|i| i as f64 * dt).collect();
    let rec = GazeRecording::new(
        sig.user_id.clone(),
        task.kind.task(),
        repetition,
        task.sample_rate,
        timestamps,
        data,
    )?;
    Ok((rec, accuracy))
}

fn task_tag(task: Task) -> u64 {
    match task {
        Task::RandomSaccade => 1,
        Task::SmoothPursuit => 2,
    }
}

/// Generate the full dataset in memory: recordings keyed by
/// (user, task, repetition) plus the manifest with accuracy, split, and
/// tier assignments.
pub fn generate_dataset_in_memory(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut recordings = BTreeMap::new();
    let mut accuracy: BTreeMap<UserId, f64> = BTreeMap::new();
    let mut users: Vec<ManifestUser> = Vec::with_capacity(cfg.n_users);
    for idx in 0..cfg.n_users {
        let sig = generate_user(cfg, idx);
        let mut recs = Vec::new();
        let mut rs_err = Vec::new();
        for (task_spec, reps) in [
            (&cfg.saccade_task, cfg.recordings_per_task),
            (&cfg.pursuit_task, cfg.recordings_per_task),
        ] {
            let task = task_spec.kind.task();
            for rep in 1..=reps {
                let seed = derive_seed(cfg.master_seed, &[0x4EC, idx as u64, task_tag(task), rep as u64]);
                let (rec, err) = generate_recording(&sig, task_spec, rep, seed)?;
                if task == Task::RandomSaccade {
                    rs_err.push(err);
                }
                recs.push(ManifestRecording {
                    path: format!("recordings/{}_{}_r{}.csv", sig.user_id, task, rep),
                    task,
                    repetition: rep,
                });
                recordings.insert((sig.user_id.clone(), task, rep), rec);
            }
        }
        let user_accuracy = rs_err.iter().sum::<f64>() / rs_err.len().max(1) as f64;
        accuracy.insert(sig.user_id.clone(), user_accuracy);
        users.push(ManifestUser {
            user_id: sig.user_id.clone(),
            recordings: recs,
            accuracy_error_deg: user_accuracy,
            split: Split::Test,
            accuracy_tier: None,
        });
    }

    // Split assignment: seeded shuffle, first train_fraction to train.
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[0x51D]));
    order.shuffle(&mut rng);
    let n_train = (cfg.n_users as f64 * cfg.train_fraction).round() as usize;
    for &u in order.iter().take(n_train) {
        users[u].split = Split::Train;
    }

    // Accuracy tiers: rank users by (accuracy, id); tier k collects ranks
    // past ceil(q_k * n).
    let mut ranked: Vec<usize> = (0..cfg.n_users).collect();
    ranked.sort_by(|&a, &b| {
        users[a]
            .accuracy_error_deg
            .total_cmp(&users[b].accuracy_error_deg)
            .then_with(|| users[a].user_id.cmp(&users[b].user_id))
    });
    let cuts: Vec<usize> = cfg
        .tier_quantiles
        .iter()
        .map(|q| (q * cfg.n_users as f64).ceil() as usize)
        .collect();
    for (rank, &u) in ranked.iter().enumerate() {
        let tier = cuts.iter().filter(|&&c| rank >= c).count();
        users[u].accuracy_tier = Some(tier);
    }

    let manifest = DatasetManifest {
        sample_rate: cfg.saccade_task.sample_rate,
        users,
        generator: Some(
            serde_json::to_value(cfg).map_err(|e| Error::Data(format!("config serialization: {e}")))?,
        ),
    };
    Ok(Dataset {
        manifest,
        recordings,
    })
}

/// Generate a dataset and write it to disk: `manifest.json` plus one CSV
/// per recording under `recordings/`.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let dataset = generate_dataset_in_memory(cfg)?;
    let rec_dir = out_dir.join("recordings");
    std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(rec_dir.display().to_string(), e))?;
    for user in &dataset.manifest.users {
        for rec in &user.recordings {
            let loaded = dataset
                .recordings
                .get(&(user.user_id.clone(), rec.task, rec.repetition))
                .expect("generated recording present");
            write_recording_csv(loaded, &out_dir.join(&rec.path))?;
        }
    }
    dataset.manifest.save(&out_dir.join("manifest.json"))?;
    Ok(dataset.manifest)
}
