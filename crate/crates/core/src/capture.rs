//! Motion-data model, recording I/O, hand-speed estimation, steady-segment
//! extraction and synthetic calibration sessions.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{null_space_basis, ArmModel, HandPose, JointVector};
use crate::error::{Error, Result};
use crate::simuser::{solve_ik, IkOptions};

/// Allowed relative deviation of a sample interval from `1 / rate_hz`.
const RATE_JITTER: f64 = 0.20;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub q: JointVector,
    pub hand: HandPose,
}

impl Frame {
    /// Frame whose hand pose is the forward kinematics of `q`.
    pub fn from_config(model: &ArmModel, t: f64, q: JointVector) -> Result<Self> {
        let hand = model.forward_kinematics(&q)?;
        Ok(Frame { t, q, hand })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub frames: Vec<Frame>,
    pub rate_hz: f64,
    pub label: String,
}

impl Recording {
    /// Validates ordering, sample spacing and dimensional consistency.
    pub fn new(frames: Vec<Frame>, rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        let rec = Recording {
            frames,
            rate_hz,
            label: label.into(),
        };
        rec.validate(Path::new(&rec.label), 0)?;
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.frames.first().map_or(0, |f| f.q.len())
    }

    /// Frames `[begin, end)` as a standalone recording.
    pub fn slice(&self, begin: usize, end: usize) -> Recording {
        Recording {
            frames: self.frames[begin..end].to_vec(),
            rate_hz: self.rate_hz,
            label: format!("{}[{begin}..{end})", self.label),
        }
    }

    /// `line_base` is the file line of frame 0 (header occupies line 1 in CSV).
    fn validate(&self, path: &Path, line_base: usize) -> Result<()> {
        let line = |i: usize| line_base + i;
        let verr = |i: usize, msg: String| Error::Validation {
            path: path.to_path_buf(),
            line: line(i),
            msg,
        };
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(verr(0, format!("invalid rate {}", self.rate_hz)));
        }
        let n = self.dof();
        let nominal = 1.0 / self.rate_hz;
        for (i, f) in self.frames.iter().enumerate() {
            if !(f.t.is_finite() && f.t >= 0.0) {
                return Err(verr(i, format!("invalid timestamp {}", f.t)));
            }
            if f.q.len() != n {
                return Err(verr(i, format!("expected {n} joints, got {}", f.q.len())));
            }
            let qn = f.hand.orientation.quaternion().norm();
            if (qn - 1.0).abs() > 1e-9 {
                return Err(verr(i, format!("orientation quaternion norm {qn}")));
            }
            if i > 0 {
                let prev = self.frames[i - 1].t;
                if f.t <= prev {
                    return Err(verr(
                        i,
                        format!("timestamp {} not after previous {prev}", f.t),
                    ));
                }
                let dt = f.t - prev;
                if (dt - nominal).abs() > RATE_JITTER * nominal {
                    return Err(verr(
                        i,
                        format!("interval {dt} s deviates from 1/{} s", self.rate_hz),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("q{i}")));
    h.extend(["px", "py", "pz", "ow", "ox", "oy", "oz"].map(String::from));
    h
}

fn frame_values(f: &Frame) -> Vec<f64> {
    let o = f.hand.orientation.quaternion();
    let mut v = Vec::with_capacity(f.q.len() + 8);
    v.push(f.t);
    v.extend(f.q.iter());
    v.extend([
        f.hand.position.x,
        f.hand.position.y,
        f.hand.position.z,
        o.w,
        o.i,
        o.j,
        o.k,
    ]);
    v
}

fn frame_from_values(v: &[f64], n: usize) -> Frame {
    let p = &v[1 + n..];
    Frame {
        t: v[0],
        q: DVector::from_column_slice(&v[1..1 + n]),
        hand: HandPose {
            position: Vector3::new(p[0], p[1], p[2]),
            orientation: UnitQuaternion::new_unchecked(Quaternion::new(p[3], p[4], p[5], p[6])),
        },
    }
}

/// Median-interval rate estimate; 100 Hz for recordings with a single frame.
fn infer_rate(frames: &[Frame]) -> f64 {
    let mut dts: Vec<f64> = frames.windows(2).map(|w| w[1].t - w[0].t).collect();
    if dts.is_empty() {
        return 100.0;
    }
    dts.sort_by(f64::total_cmp);
    let med = dts[dts.len() / 2];
    if med > 0.0 {
        1.0 / med
    } else {
        100.0
    }
}

/// Load a recording from CSV (canonical) or JSON (by `.json` extension).
pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        return load_recording_json(path);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if headers.len() < 9 {
        return Err(perr(1, format!("header has {} columns", headers.len())));
    }
    let n = headers.len() - 8;
    let expected = csv_header(n);
    if headers.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(perr(
            1,
            format!("header must be '{}'", expected.join(",")),
        ));
    }
    let mut frames = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(perr(
                line,
                format!("expected {} fields, got {}", expected.len(), rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>()
                    .map_err(|_| perr(line, format!("column '{}': bad number '{s}'", expected[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        frames.push(frame_from_values(&vals, n));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rec = Recording {
        rate_hz: infer_rate(&frames),
        frames,
        label,
    };
    rec.validate(path, 2)?;
    Ok(rec)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        return save_recording_json(rec, path);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(rec.dof()))?;
    for f in &rec.frames {
        w.write_record(frame_values(f).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RecordingJson {
    label: String,
    rate_hz: f64,
    frames: Vec<serde_json::Map<String, serde_json::Value>>,
}

fn save_recording_json(rec: &Recording, path: &Path) -> Result<()> {
    let header = csv_header(rec.dof());
    let frames = rec
        .frames
        .iter()
        .map(|f| {
            header
                .iter()
                .cloned()
                .zip(frame_values(f).into_iter().map(serde_json::Value::from))
                .collect()
        })
        .collect();
    let doc = RecordingJson {
        label: rec.label.clone(),
        rate_hz: rec.rate_hz,
        frames,
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn load_recording_json(path: &Path) -> Result<Recording> {
    let doc: RecordingJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let n = doc
        .frames
        .first()
        .map_or(0, |m| m.keys().filter(|k| k.starts_with('q')).count());
    let header = csv_header(n);
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (i, m) in doc.frames.iter().enumerate() {
        let vals = header
            .iter()
            .map(|k| {
                m.get(k).and_then(|v| v.as_f64()).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i,
                    msg: format!("frame {i}: missing or non-numeric '{k}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        frames.push(frame_from_values(&vals, n));
    }
    let rec = Recording {
        frames,
        rate_hz: doc.rate_hz,
        label: doc.label,
    };
    rec.validate(path, 0)?;
    Ok(rec)
}

/// Per-frame hand speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct HandKinematics {
    /// m/s
    pub linear: Vec<f64>,
    /// rad/s
    pub angular: Vec<f64>,
}

/// Finite-difference hand velocities (central inside, one-sided at the ends)
/// smoothed by a centred moving average of `window` frames, truncated at the
/// recording boundaries.
pub fn estimate_hand_kinematics(rec: &Recording, window: usize) -> Result<HandKinematics> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    let m = rec.len();
    if m < window {
        return Err(Error::RecordingTooShort {
            label: rec.label.clone(),
            frames: m,
            window,
        });
    }
    let f = &rec.frames;
    let mut lin = Vec::with_capacity(m);
    let mut ang = Vec::with_capacity(m);
    for i in 0..m {
        let (a, b) = match i {
            0 => (0, 1),
            _ if i == m - 1 => (m - 2, m - 1),
            _ => (i - 1, i + 1),
        };
        let dt = f[b].t - f[a].t;
        lin.push((f[b].hand.position - f[a].hand.position) / dt);
        let rot = f[b].hand.orientation * f[a].hand.orientation.inverse();
        ang.push(rot.scaled_axis() / dt);
    }
    let half = window / 2;
    let smooth = |v: &[Vector3<f64>]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(m - 1);
                let sum: Vector3<f64> = v[lo..=hi].iter().sum();
                (sum / (hi - lo + 1) as f64).norm()
            })
            .collect()
    };
    Ok(HandKinematics {
        linear: smooth(&lin),
        angular: smooth(&ang),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyParams {
    /// m/s
    pub v_lin_max: f64,
    /// rad/s
    pub v_ang_max: f64,
    /// frames
    pub min_len: usize,
    /// smoothing window, frames (odd)
    pub window: usize,
}

impl Default for SteadyParams {
    fn default() -> Self {
        SteadyParams {
            v_lin_max: 0.05,
            v_ang_max: 0.10,
            min_len: 50,
            window: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadySegment {
    pub begin: usize,
    pub end: usize,
    pub mean_position: Vector3<f64>,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
}

impl SteadySegment {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.begin
    }
}

/// Maximal runs of frames with both hand speeds under threshold, at least
/// `min_len` frames long.
pub fn segment_steady(rec: &Recording, params: &SteadyParams) -> Result<Vec<SteadySegment>> {
    if !(params.v_lin_max > 0.0 && params.v_ang_max > 0.0) {
        return Err(Error::InvalidArgument("speed thresholds must be > 0".into()));
    }
    let kin = estimate_hand_kinematics(rec, params.window)?;
    let steady: Vec<bool> = kin
        .linear
        .iter()
        .zip(&kin.angular)
        .map(|(&l, &a)| l <= params.v_lin_max && a <= params.v_ang_max)
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < steady.len() {
        if !steady[i] {
            i += 1;
            continue;
        }
        let begin = i;
        while i < steady.len() && steady[i] {
            i += 1;
        }
        let end = i;
        if end - begin >= params.min_len.max(1) {
            let mean_position = rec.frames[begin..end]
                .iter()
                .map(|f| f.hand.position)
                .sum::<Vector3<f64>>()
                / (end - begin) as f64;
            out.push(SteadySegment {
                begin,
                end,
                mean_position,
                max_linear_speed: kin.linear[begin..end].iter().copied().fold(0.0, f64::max),
                max_angular_speed: kin.angular[begin..end].iter().copied().fold(0.0, f64::max),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Recorded,
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoint {
    pub label: String,
    pub recording: Recording,
    /// Commanded hand target, when known (synthetic sessions).
    pub target: Option<Vector3<f64>>,
    /// Joint configuration at the centre of the null-space sweep, when known.
    pub center_config: Option<JointVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSession {
    pub points: Vec<CalibrationPoint>,
    pub model: ArmModel,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: String,
    path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    model: Option<ArmModel>,
    #[serde(default = "recorded")]
    provenance: Provenance,
    points: Vec<ManifestEntry>,
}

fn recorded() -> Provenance {
    Provenance::Recorded
}

impl CalibrationSession {
    pub fn new(points: Vec<CalibrationPoint>, model: ArmModel, provenance: Provenance) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InsufficientData(format!(
                "calibration needs >= 4 points, got {}",
                points.len()
            )));
        }
        for p in &points {
            if p.recording.dof() != model.dof() {
                return Err(Error::DimensionMismatch {
                    expected: model.dof(),
                    got: p.recording.dof(),
                }
                .at_node(&p.label));
            }
        }
        Ok(CalibrationSession {
            points,
            model,
            provenance,
        })
    }

    /// Load from a JSON manifest listing point labels and CSV paths (relative
    /// paths resolve against the manifest's directory). Without an embedded
    /// model the default arm is assumed.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let model = match manifest.model {
            Some(m) => {
                m.validate()?;
                m
            }
            None => ArmModel::default(),
        };
        let points = manifest
            .points
            .into_iter()
            .map(|e| {
                let rec = load_recording(dir.join(&e.path)).map_err(|err| err.at_node(&e.label))?;
                Ok(CalibrationPoint {
                    label: e.label,
                    recording: rec,
                    target: None,
                    center_config: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, model, manifest.provenance)
    }

    /// Write `manifest.json` plus one CSV per point into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for p in &self.points {
            let file = PathBuf::from(format!("{}.csv", p.label));
            save_recording(&p.recording, dir.join(&file))?;
            entries.push(ManifestEntry {
                label: p.label.clone(),
                path: file,
            });
        }
        let manifest = Manifest {
            model: Some(self.model.clone()),
            provenance: self.provenance,
            points: entries,
        };
        let out = dir.join("manifest.json");
        std::fs::write(&out, serde_json::to_string_pretty(&manifest)?)?;
        Ok(out)
    }
}

/// Axis-aligned box of calibration targets, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        WorkspaceBox {
            min: [0.30, -0.15, -0.25],
            max: [0.45, 0.10, -0.05],
        }
    }
}

impl WorkspaceBox {
    pub fn center(&self) -> Vector3<f64> {
        (Vector3::from(self.min) + Vector3::from(self.max)) / 2.0
    }

    /// Calibration targets: the 8 vertices (ordered so the first four span a
    /// tetrahedron), then the upper and lower face centres, then the four side
    /// face centres. At most 14.
    pub fn targets(&self, count: usize) -> Vec<(String, Vector3<f64>)> {
        let [x0, y0, z0] = self.min;
        let [x1, y1, z1] = self.max;
        let c = self.center();
        let pts = [
            ("v000", [x0, y0, z0]),
            ("v110", [x1, y1, z0]),
            ("v101", [x1, y0, z1]),
            ("v011", [x0, y1, z1]),
            ("v100", [x1, y0, z0]),
            ("v010", [x0, y1, z0]),
            ("v001", [x0, y0, z1]),
            ("v111", [x1, y1, z1]),
            ("top", [c.x, c.y, z1]),
            ("bottom", [c.x, c.y, z0]),
            ("front", [x1, c.y, c.z]),
            ("back", [x0, c.y, c.z]),
            ("left", [c.x, y1, c.z]),
            ("right", [c.x, y0, c.z]),
        ];
        pts.iter()
            .take(count)
            .map(|(l, p)| (l.to_string(), Vector3::from(*p)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_points: usize,
    /// seconds of dwell per point
    pub dwell: f64,
    pub rate_hz: f64,
    pub workspace: WorkspaceBox,
    /// Hand orientation held at every target.
    pub orientation: [f64; 4],
    /// Maximum target displacement from the nominal vertex, metres.
    pub target_jitter: f64,
    /// Cap on the null-space excursion either side of the IK solution, in
    /// joint-space arc length (rad).
    pub max_excursion: f64,
    /// Fraction of the feasible null-space range the sweep covers.
    pub sweep_fraction: f64,
    /// Sweep periods per dwell.
    pub sweep_cycles: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_points: 10,
            dwell: 5.0,
            rate_hz: 100.0,
            workspace: WorkspaceBox::default(),
            orientation: [1.0, 0.0, 0.0, 0.0],
            target_jitter: 0.005,
            max_excursion: 0.2,
            sweep_fraction: 0.95,
            sweep_cycles: 1.0,
        }
    }
}

/// Initial guess handed to inverse kinematics for every target: elbow bent,
/// hand in front of and below the shoulder.
pub fn rest_config(model: &ArmModel) -> JointVector {
    let mut q = DVector::zeros(model.dof());
    if model.dof() == 7 {
        q.copy_from_slice(&[-0.3, 0.6, 0.8, 1.4, -0.4, 0.2, 0.0]);
    }
    model.clamp_to_limits(&mut q);
    q
}

/// Unit null-space direction at `q` with sign continuous w.r.t. `prev`
/// (canonical sign when `prev` is `None`). `None` if the null space is not
/// one-dimensional.
pub fn null_direction(model: &ArmModel, q: &JointVector, prev: Option<&JointVector>) -> Option<JointVector> {
    let j = model.jacobian(q).ok()?;
    let basis = null_space_basis(&j, 1e-9).ok()?;
    if basis.ncols() != 1 {
        return None;
    }
    let mut d: JointVector = basis.column(0).into_owned();
    if let Some(p) = prev {
        if d.dot(p) < 0.0 {
            d.neg_mut();
        }
    }
    Some(d)
}

/// Newton projection of `q` back onto the set of configurations reaching
/// `pose` exactly. Returns the final pose-error norm.
pub fn project_to_pose(model: &ArmModel, q: &mut JointVector, pose: &HandPose) -> f64 {
    let mut err_norm = f64::INFINITY;
    for _ in 0..20 {
        let cur = model.forward_kinematics(q).expect("dims checked by caller");
        let e = cur.error_to(pose);
        let e = DVector::from_column_slice(&e.as_slice()[..model.task_rows()]);
        err_norm = e.norm();
        if err_norm < 1e-14 {
            break;
        }
        let j = model.jacobian(q).expect("dims checked by caller");
        let pinv = match j.entries.clone().pseudo_inverse(1e-12) {
            Ok(p) => p,
            Err(_) => break,
        };
        *q += pinv * e;
    }
    err_norm
}

/// Walk `arc` radians of joint-space arc length along the self-motion
/// manifold through `q`, projecting back onto `pose` after every sub-step.
/// Returns `None` if the walk leaves the joint limits or hits a singularity.
pub fn null_walk(
    model: &ArmModel,
    q: &JointVector,
    dir: &JointVector,
    pose: &HandPose,
    arc: f64,
    max_step: f64,
) -> Option<(JointVector, JointVector)> {
    let steps = (arc.abs() / max_step).ceil().max(1.0) as usize;
    let h = arc / steps as f64;
    let mut q = q.clone();
    let mut d = dir.clone();
    for _ in 0..steps {
        let step_dir = null_direction(model, &q, Some(&d))?;
        q += &step_dir * h;
        project_to_pose(model, &mut q, pose);
        d = step_dir;
        if !model.within_limits(&q) {
            return None;
        }
    }
    Some((q, d))
}

/// Extent `[lo, hi]` (arc length, rad) of the feasible self-motion through
/// `q` within joint limits, capped at `cap` each side.
pub fn feasible_excursion(model: &ArmModel, q: &JointVector, pose: &HandPose, cap: f64, step: f64) -> (f64, f64) {
    let Some(d0) = null_direction(model, q, None) else {
        return (0.0, 0.0);
    };
    let mut ext = [0.0f64; 2];
    for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
        let mut cur = q.clone();
        let mut d = &d0 * sign;
        let mut s = 0.0;
        while s + step <= cap + 1e-12 {
            match null_walk(model, &cur, &d, pose, step, step) {
                Some((nq, nd)) => {
                    cur = nq;
                    d = nd;
                    s += step;
                }
                None => break,
            }
        }
        ext[k] = s;
    }
    (-ext[1], ext[0])
}

/// Synthetic calibration: for every target, reach it by inverse kinematics
/// and record `dwell` seconds of pure null-space sweeping with the hand pose
/// held fixed.
pub fn synthesize_calibration(model: &ArmModel, seed: u64, cfg: &SynthConfig) -> Result<CalibrationSession> {
    if cfg.n_points < 4 || cfg.n_points > 14 {
        return Err(Error::InvalidArgument(format!(
            "n_points must be in 4..=14, got {}",
            cfg.n_points
        )));
    }
    if !model.is_redundant() {
        return Err(Error::InvalidModel("synthetic calibration needs a redundant arm".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientation = UnitQuaternion::from_quaternion(Quaternion::new(
        cfg.orientation[0],
        cfg.orientation[1],
        cfg.orientation[2],
        cfg.orientation[3],
    ));
    let frames_per_point = (cfg.dwell * cfg.rate_hz).round() as usize;
    let step = 0.01;
    let mut points = Vec::with_capacity(cfg.n_points);
    for (label, nominal) in cfg.workspace.targets(cfg.n_points) {
        let jitter = Vector3::from_fn(|_, _| rng.gen_range(-1.0..=1.0) * cfg.target_jitter);
        let target = HandPose {
            position: nominal + jitter,
            orientation,
        };
        let q0 = solve_ik(model, &target, &rest_config(model), &IkOptions::default())
            .map_err(|e| e.at_node(&label))?;
        let (lo, hi) = feasible_excursion(model, &q0, &target, cfg.max_excursion, step);
        if hi - lo < 10.0 * step {
            return Err(Error::InsufficientData(format!(
                "null-space range {:.3} rad too small",
                hi - lo
            ))
            .at_node(&label));
        }
        let center = 0.5 * (lo + hi);
        let amp = 0.5 * cfg.sweep_fraction * (hi - lo);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let omega = std::f64::consts::TAU * cfg.sweep_cycles / cfg.dwell;
        let s_of = |t: f64| center + amp * (omega * t + phase).sin();

        let d0 = null_direction(model, &q0, None).expect("checked by feasible_excursion");
        let walk = |q: &JointVector, d: &JointVector, arc: f64| {
            null_walk(model, q, d, &target, arc, step)
                .ok_or_else(|| Error::Unreachable {
                    label: label.clone(),
                    residual: arc,
                })
        };
        let (center_q, _) = walk(&q0, &d0, center)?;
        let (mut q, mut d) = walk(&q0, &d0, s_of(0.0))?;
        let mut s = s_of(0.0);
        let mut frames = Vec::with_capacity(frames_per_point);
        for k in 0..frames_per_point {
            let t = k as f64 / cfg.rate_hz;
            let target_s = s_of(t);
            if k > 0 {
                let (nq, nd) = walk(&q, &d, target_s - s)?;
                q = nq;
                d = nd;
                s = target_s;
            }
            frames.push(Frame::from_config(model, t, q.clone())?);
        }
        points.push(CalibrationPoint {
            recording: Recording::new(frames, cfg.rate_hz, label.clone())?,
            label,
            target: Some(target.position),
            center_config: Some(center_q),
        });
    }
    CalibrationSession::new(points, model.clone(), Provenance::Synthetic { seed })
}

/// Frames of the steady segments of `rec`.
pub fn steady_frames(rec: &Recording, params: &SteadyParams) -> Result<Vec<Frame>> {
    Ok(segment_steady(rec, params)?
        .into_iter()
        .flat_map(|s| rec.frames[s.begin..s.end].to_vec())
        .collect())
}

/// Stack the joint vectors of `frames` as rows.
pub fn joint_matrix(frames: &[Frame]) -> DMatrix<f64> {
    let n = frames.first().map_or(0, |f| f.q.len());
    DMatrix::from_fn(frames.len(), n, |r, c| frames[r].q[c])
}
