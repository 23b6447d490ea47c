//! Gaze-signal ingestion and preprocessing.
//!
//! Converts binocular optical/visual-axis position recordings into the
//! normalized velocity windows consumed by the embedding network:
//! channel selection, Savitzky-Golay differentiation, clamping,
//! non-overlapping 5-second windowing, and per-channel normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per velocity window: 5 seconds at 72 Hz.
pub const WINDOW_SAMPLES: usize = 360;

/// Velocity magnitude bound in degrees/second applied after differentiation.
pub const VELOCITY_CLAMP: f64 = 1000.0;

/// Default recording sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 72.0;

/// Opaque user identifier. Ordering is lexicographic and is used for all
/// deterministic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Self {
        UserId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Recording task kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    RandomSaccade,
    SmoothPursuit,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::RandomSaccade => f.write_str("random_saccade"),
            Task::SmoothPursuit => f.write_str("smooth_pursuit"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_saccade" | "saccade" | "sac" => Ok(Task::RandomSaccade),
            "smooth_pursuit" | "pursuit" | "pur" => Ok(Task::SmoothPursuit),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Eye {
    pub fn label(&self) -> &'static str {
        match self {
            Eye::Left => "L",
            Eye::Right => "R",
        }
    }
}

/// Gaze-axis selector. `VisualMinusOptical` is the per-eye difference of
/// the two axes, which carries the user's calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "O")]
    Optical,
    #[serde(rename = "V")]
    Visual,
    #[serde(rename = "V-O")]
    VisualMinusOptical,
}

impl Axis {
    pub fn label(&self) -> &'static str {
        match self {
            Axis::Optical => "O",
            Axis::Visual => "V",
            Axis::VisualMinusOptical => "V-O",
        }
    }
}

/// Azimuth/elevation component of an axis signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Azimuth,
    Elevation,
}

/// Raw channel order inside a [`GazeRecording`], matching the CSV column
/// order `lox,loy,lvx,lvy,rox,roy,rvx,rvy`.
pub const RAW_CHANNELS: usize = 8;

fn raw_index(eye: Eye, axis_optical: bool, comp: Component) -> usize {
    let e = match eye {
        Eye::Left => 0,
        Eye::Right => 1,
    };
    let a = if axis_optical { 0 } else { 1 };
    let c = match comp {
        Component::Azimuth => 0,
        Component::Elevation => 1,
    };
    e * 4 + a * 2 + c
}

/// One user/task recording of binocular optical and visual axis angles.
///
/// `data` rows follow [`RAW_CHANNELS`] order; columns are samples.
#[derive(Debug, Clone)]
pub struct GazeRecording {
    pub user_id: UserId,
    pub task: Task,
    pub repetition: u32,
    pub sample_rate: f64,
    pub timestamps: Vec<f64>,
    pub data: Array2<f64>,
}

impl GazeRecording {
    /// Build and validate a recording. Timestamps must be uniform at
    /// 1/sample_rate within 1e-9 s, and no channel value may be NaN/Inf.
    pub fn new(
        user_id: UserId,
        task: Task,
        repetition: u32,
        sample_rate: f64,
        timestamps: Vec<f64>,
        data: Array2<f64>,
    ) -> Result<Self> {
        let rec = GazeRecording {
            user_id,
            task,
            repetition,
            sample_rate,
            timestamps,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n == 0 {
            return Err(Error::Data(format!(
                "recording {}: empty recording",
                self.recording_id()
            )));
        }
        if self.data.nrows() != RAW_CHANNELS || self.data.ncols() != n {
            return Err(Error::Data(format!(
                "recording {}: expected {}x{} data, got {}x{}",
                self.recording_id(),
                RAW_CHANNELS,
                n,
                self.data.nrows(),
                self.data.ncols()
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Data(format!(
                "recording {}: invalid sample rate {}",
                self.recording_id(),
                self.sample_rate
            )));
        }
        let dt = 1.0 / self.sample_rate;
        for i in 1..n {
            let step = self.timestamps[i] - self.timestamps[i - 1];
            if step <= 0.0 {
                return Err(Error::Data(format!(
                    "recording {}: timestamps not strictly increasing at sample {i}",
                    self.recording_id()
                )));
            }
            if (step - dt).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "recording {}: non-uniform timestamp step {step} at sample {i} (expected {dt})",
                    self.recording_id()
                )));
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "recording {}: non-finite sample value",
                self.recording_id()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// Stable identifier used in window provenance and file names.
    pub fn recording_id(&self) -> String {
        format!("{}_{}_r{}", self.user_id, self.task, self.repetition)
    }

    pub fn raw_channel(&self, eye: Eye, axis_optical: bool, comp: Component) -> ArrayView1<'_, f64> {
        self.data.row(raw_index(eye, axis_optical, comp))
    }
}

/// Which eyes and axes feed the network. The derived channel count is
/// `2 * |eyes| * |axes|` (azimuth and elevation per selection).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub eyes: Vec<Eye>,
    pub axes: Vec<Axis>,
}

impl ChannelSpec {
    pub fn new(eyes: Vec<Eye>, axes: Vec<Axis>) -> Result<Self> {
        let spec = ChannelSpec { eyes, axes };
        spec.validate()?;
        Ok(spec)
    }

    /// Binocular optical+visual configuration (8 channels).
    pub fn binocular_both_axes() -> Self {
        ChannelSpec {
            eyes: vec![Eye::Left, Eye::Right],
            axes: vec![Axis::Optical, Axis::Visual],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eyes.is_empty() || self.axes.is_empty() {
            return Err(Error::Config("channel spec needs at least one eye and one axis".into()));
        }
        let mut eyes = self.eyes.clone();
        eyes.dedup();
        let mut se = self.eyes.clone();
        se.sort();
        se.dedup();
        if se.len() != self.eyes.len() {
            return Err(Error::Config("duplicate eye in channel spec".into()));
        }
        let mut sa = self.axes.clone();
        sa.sort();
        sa.dedup();
        if sa.len() != self.axes.len() {
            return Err(Error::Config("duplicate axis in channel spec".into()));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        2 * self.eyes.len() * self.axes.len()
    }

    /// Fixed channel ordering: eye-major, axis-minor, azimuth before
    /// elevation.
    pub fn channel_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.channel_count());
        for eye in &self.eyes {
            for axis in &self.axes {
                labels.push(format!("{}-{}-az", eye.label(), axis.label()));
                labels.push(format!("{}-{}-el", eye.label(), axis.label()));
            }
        }
        labels
    }

    /// Extract the selected position channels from a recording, in the
    /// fixed channel order. `V-O` channels are computed per eye and
    /// component as visual minus optical.
    pub fn select_positions(&self, rec: &GazeRecording) -> Result<Array2<f64>> {
        self.validate()?;
        let n = rec.len();
        let mut out = Array2::zeros((self.channel_count(), n));
        let mut row = 0;
        for &eye in &self.eyes {
            for &axis in &self.axes {
                for comp in [Component::Azimuth, Component::Elevation] {
                    match axis {
                        Axis::Optical => {
                            out.row_mut(row).assign(&rec.raw_channel(eye, true, comp));
                        }
                        Axis::Visual => {
                            out.row_mut(row).assign(&rec.raw_channel(eye, false, comp));
                        }
                        Axis::VisualMinusOptical => {
                            let o = rec.raw_channel(eye, true, comp);
                            let v = rec.raw_channel(eye, false, comp);
                            let mut dst = out.row_mut(row);
                            for i in 0..n {
                                dst[i] = v[i] - o[i];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Savitzky-Golay differentiation parameters. The filter fits a
/// `poly_order` polynomial over a centered `window_length` window and
/// returns its first derivative at the center; edges are mirror padded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavgolConfig {
    pub window_length: usize,
    pub poly_order: usize,
}

impl Default for SavgolConfig {
    fn default() -> Self {
        SavgolConfig {
            window_length: 7,
            poly_order: 2,
        }
    }
}

/// Convolution weights for the first derivative of the centered
/// least-squares polynomial fit, in window-offset order -h..=h.
pub fn savgol_derivative_coefficients(window_length: usize, poly_order: usize) -> Result<Vec<f64>> {
    if window_length % 2 == 0 || window_length == 0 {
        return Err(Error::Config(format!(
            "savgol window_length must be odd and positive, got {window_length}"
        )));
    }
    if poly_order >= window_length {
        return Err(Error::Config(format!(
            "savgol poly_order {poly_order} must be < window_length {window_length}"
        )));
    }
    let half = (window_length - 1) / 2;
    let p = poly_order + 1;
    // Fitting c solves (Phi^T Phi) c = Phi^T x with Phi[j][r] = j^r.
    // The derivative at the center is c_1, which is a fixed linear
    // functional of the window: w = Phi (Phi^T Phi)^{-1} e_1.
    if poly_order == 0 {
        // Constant fit has zero derivative everywhere.
        return Ok(vec![0.0; window_length]);
    }
    let mut gram = vec![vec![0.0; p]; p];
    for r in 0..p {
        for s in 0..p {
            let mut acc = 0.0;
            for j in -(half as i64)..=(half as i64) {
                acc += (j as f64).powi(r as i32) * (j as f64).powi(s as i32);
            }
            gram[r][s] = acc;
        }
    }
    let mut rhs = vec![0.0; p];
    rhs[1] = 1.0;
    let alpha = crate::stats::solve_linear(&mut gram, &mut rhs)?;
    let mut weights = Vec::with_capacity(window_length);
    for j in -(half as i64)..=(half as i64) {
        let mut w = 0.0;
        for (r, a) in alpha.iter().enumerate() {
            w += a * (j as f64).powi(r as i32);
        }
        weights.push(w);
    }
    Ok(weights)
}

fn mirror_index(i: i64, n: i64) -> usize {
    // Reflect about the edge samples without repeating them:
    // x[-1] = x[1], x[n] = x[n-2].
    let mut j = i;
    loop {
        if j < 0 {
            j = -j;
        } else if j >= n {
            j = 2 * (n - 1) - j;
        } else {
            return j as usize;
        }
    }
}

/// Differentiate a position sequence (degrees) into velocity
/// (degrees/second) with a Savitzky-Golay filter.
pub fn savgol_velocity(
    positions: &[f64],
    sample_rate: f64,
    window_length: usize,
    poly_order: usize,
) -> Result<Vec<f64>> {
    if positions.len() < window_length {
        return Err(Error::Data(format!(
            "sequence length {} shorter than savgol window {}",
            positions.len(),
            window_length
        )));
    }
    let weights = savgol_derivative_coefficients(window_length, poly_order)?;
    let half = (window_length as i64 - 1) / 2;
    let n = positions.len() as i64;
    let mut out = Vec::with_capacity(positions.len());
    for i in 0..n {
        let mut acc = 0.0;
        for (w_idx, w) in weights.iter().enumerate() {
            let j = i + w_idx as i64 - half;
            acc += w * positions[mirror_index(j, n)];
        }
        out.push(acc * sample_rate);
    }
    Ok(out)
}

/// Clamp a velocity sample to the +/-1000 deg/s bound.
pub fn clamp_velocity(v: f64) -> f64 {
    v.clamp(-VELOCITY_CLAMP, VELOCITY_CLAMP)
}

/// One normalized (or raw) C x 360 velocity segment.
#[derive(Debug, Clone)]
pub struct VelocityWindow {
    pub user_id: UserId,
    pub recording_id: String,
    pub window_index: usize,
    /// C x T velocities in degrees/second (or normalized units).
    pub data: Array2<f64>,
}

/// Per-channel mean and standard deviation of clamped velocities over the
/// training set. SD is the population convention (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormalizationStats {
    pub fn channel_count(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_window(&self, data: &mut Array2<f64>) {
        for (c, mut row) in data.rows_mut().into_iter().enumerate() {
            let m = self.mean[c];
            let s = self.sd[c];
            row.mapv_inplace(|v| (v - m) / s);
        }
    }

    pub fn denormalize_window(&self, data: &mut Array2<f64>) {
        for (c, mut row) in data.rows_mut().into_iter().enumerate() {
            let m = self.mean[c];
            let s = self.sd[c];
            row.mapv_inplace(|v| v * s + m);
        }
    }
}

/// Select channels, differentiate, clamp, and cut a recording into
/// non-overlapping 360-sample windows. The trailing partial window is
/// dropped; recordings shorter than one window yield an empty list.
/// When `stats` is given, windows are normalized per channel.
pub fn partition_windows(
    rec: &GazeRecording,
    spec: &ChannelSpec,
    sg: &SavgolConfig,
    stats: Option<&NormalizationStats>,
) -> Result<Vec<VelocityWindow>> {
    rec.validate()?;
    if let Some(s) = stats {
        if s.channel_count() != spec.channel_count() {
            return Err(Error::Config(format!(
                "normalization stats cover {} channels but spec selects {}",
                s.channel_count(),
                spec.channel_count()
            )));
        }
    }
    let n = rec.len();
    if n < WINDOW_SAMPLES {
        return Ok(Vec::new());
    }
    let positions = spec.select_positions(rec)?;
    let c = spec.channel_count();
    let mut velocities = Array2::zeros((c, n));
    for (ch, pos_row) in positions.rows().into_iter().enumerate() {
        let pos: Vec<f64> = pos_row.to_vec();
        let vel = savgol_velocity(&pos, rec.sample_rate, sg.window_length, sg.poly_order)?;
        let mut dst = velocities.row_mut(ch);
        for (i, v) in vel.into_iter().enumerate() {
            dst[i] = clamp_velocity(v);
        }
    }
    let n_windows = n / WINDOW_SAMPLES;
    let mut windows = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let start = w * WINDOW_SAMPLES;
        let mut data = velocities
            .slice(ndarray::s![.., start..start + WINDOW_SAMPLES])
            .to_owned();
        if let Some(s) = stats {
            s.normalize_window(&mut data);
        }
        windows.push(VelocityWindow {
            user_id: rec.user_id.clone(),
            recording_id: rec.recording_id(),
            window_index: w,
            data,
        });
    }
    Ok(windows)
}

/// Two-pass per-channel mean/SD over every window and time step.
/// Errors on a zero-variance channel, naming it.
pub fn compute_norm_stats(windows: &[VelocityWindow]) -> Result<NormalizationStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("cannot compute normalization stats on empty window set".into()))?;
    let c = first.data.nrows();
    let t = first.data.ncols();
    for w in windows {
        if w.data.nrows() != c || w.data.ncols() != t {
            return Err(Error::Data(format!(
                "window {}#{} has shape {}x{}, expected {}x{}",
                w.recording_id,
                w.window_index,
                w.data.nrows(),
                w.data.ncols(),
                c,
                t
            )));
        }
    }
    let count = (windows.len() * t) as f64;
    let mut mean = vec![0.0; c];
    for w in windows {
        for (ch, row) in w.data.rows().into_iter().enumerate() {
            mean[ch] += row.sum();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; c];
    for w in windows {
        for (ch, row) in w.data.rows().into_iter().enumerate() {
            let m = mean[ch];
            var[ch] += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    let mut sd = vec![0.0; c];
    for (ch, v) in var.iter().enumerate() {
        let s = (v / count).sqrt();
        if s <= 0.0 {
            return Err(Error::Numerical(format!(
                "channel {ch} has zero variance across the training set"
            )));
        }
        sd[ch] = s;
    }
    Ok(NormalizationStats { mean, sd })
}

// ---------------------------------------------------------------------------
// File formats: recording CSV and dataset manifest.
// ---------------------------------------------------------------------------

/// Header of the recording CSV format.
pub const RECORDING_CSV_HEADER: &str = "t,lox,loy,lvx,lvy,rox,roy,rvx,rvy";

/// Write a recording as CSV (`t` in seconds, then degrees).
pub fn write_recording_csv(rec: &GazeRecording, path: &Path) -> Result<()> {
    let mut buf = String::with_capacity(rec.len() * 96);
    buf.push_str(RECORDING_CSV_HEADER);
    buf.push('\n');
    for i in 0..rec.len() {
        buf.push_str(&format!("{}", rec.timestamps[i]));
        for ch in 0..RAW_CHANNELS {
            buf.push(',');
            buf.push_str(&format!("{}", rec.data[[ch, i]]));
        }
        buf.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a recording CSV written by [`write_recording_csv`].
pub fn read_recording_csv(
    path: &Path,
    user_id: UserId,
    task: Task,
    repetition: u32,
    sample_rate: f64,
) -> Result<GazeRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let joined = headers.iter().collect::<Vec<_>>().join(",");
        if joined != RECORDING_CSV_HEADER {
            return Err(Error::Data(format!(
                "{}: unexpected header '{joined}'",
                path.display()
            )));
        }
    }
    let mut timestamps = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); RAW_CHANNELS];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != RAW_CHANNELS + 1 {
            return Err(Error::Data(format!(
                "{}: row with {} fields",
                path.display(),
                record.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Data(format!("{}: bad float '{s}': {e}", path.display())))
        };
        timestamps.push(parse(&record[0])?);
        for ch in 0..RAW_CHANNELS {
            cols[ch].push(parse(&record[ch + 1])?);
        }
    }
    let n = timestamps.len();
    let mut data = Array2::zeros((RAW_CHANNELS, n));
    for (ch, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            data[[ch, i]] = v;
        }
    }
    GazeRecording::new(user_id, task, repetition, sample_rate, timestamps, data)
}

/// Train/test split assignment of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One recording entry in the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecording {
    pub path: String,
    pub task: Task,
    pub repetition: u32,
}

/// One user entry in the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestUser {
    pub user_id: UserId,
    pub recordings: Vec<ManifestRecording>,
    /// Mean spatial-accuracy error in degrees over the user's
    /// random-saccade recordings.
    pub accuracy_error_deg: f64,
    pub split: Split,
    /// Accuracy tier index (0 = lowest error) when the generator assigned
    /// tiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_tier: Option<usize>,
}

/// Dataset manifest: users, their recordings, accuracy, and split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_rate: f64,
    pub users: Vec<ManifestUser>,
    /// Generator parameters recorded for provenance, if synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest parse {}: {e}", path.display())))
    }

    pub fn users_in_split(&self, split: Split) -> Vec<&ManifestUser> {
        self.users.iter().filter(|u| u.split == split).collect()
    }

    /// Find a user's recording for a task repetition.
    pub fn find_recording<'a>(
        &self,
        user: &'a ManifestUser,
        task: Task,
        repetition: u32,
    ) -> Option<&'a ManifestRecording> {
        user.recordings
            .iter()
            .find(|r| r.task == task && r.repetition == repetition)
    }

    /// Load one recording relative to the manifest directory.
    pub fn load_recording(
        &self,
        base_dir: &Path,
        user: &ManifestUser,
        rec: &ManifestRecording,
    ) -> Result<GazeRecording> {
        read_recording_csv(
            &base_dir.join(&rec.path),
            user.user_id.clone(),
            rec.task,
            rec.repetition,
            self.sample_rate,
        )
    }
}

/// In-memory dataset: manifest plus loaded recordings keyed by
/// (user, task, repetition).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub recordings: BTreeMap<(UserId, Task, u32), GazeRecording>,
}

impl Dataset {
    /// Load every recording referenced by a manifest file.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path
            .parent()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut recordings = BTreeMap::new();
        for user in &manifest.users {
            for rec in &user.recordings {
                let loaded = manifest.load_recording(&base, user, rec)?;
                recordings.insert((user.user_id.clone(), rec.task, rec.repetition), loaded);
            }
        }
        Ok(Dataset {
            manifest,
            recordings,
        })
    }

    pub fn recording(&self, user: &UserId, task: Task, repetition: u32) -> Option<&GazeRecording> {
        self.recordings.get(&(user.clone(), task, repetition))
    }
}
