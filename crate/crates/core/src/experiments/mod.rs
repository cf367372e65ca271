//! Virtual experiments: reference tracking (experiment 1), sphere radius
//! adaptation with optional simultaneous positioning (experiment 2),
//! metrics, learning-curve fitting and reports.

pub mod fit;
pub mod profile;
pub mod report;

use std::path::{Path, PathBuf};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, HandPose, JointVector};
use crate::control::ControlConfig;
use crate::error::{Error, Result};
use crate::interp::InterpolationVolume;
use crate::simuser::{run_tracking, solve_ik, IkOptions, SimUserGains, TrackingTask, TrackingTrace, LOOP_RATE_HZ};

pub use fit::{fit_learning_curve, learning_curve, FitOptions, LearningCurveFit, XMin};
pub use profile::{generate_profile, ProfileStyle, ReferenceProfile};

/// Root-mean-square error between two equal-length traces.
pub fn rmse(actual: &[f64], target: &[f64]) -> Result<f64> {
    if actual.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("rmse of empty traces".into()));
    }
    let ss: f64 = actual.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Exp1,
    Exp2,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Control value produced by null-space arm motion.
    Ikk,
    /// Value set directly (gamepad-equivalent comparison condition).
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exp2Mode {
    /// Radius only; the hand holds its start position.
    Single,
    /// Radius plus moving the hand onto the target centre.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// Control-value RMSE, 0–100 units.
    pub signal: f64,
    pub radius_cm: Option<f64>,
    pub position_cm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub experiment: Experiment,
    pub trial: String,
    pub subject: String,
    pub controller: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Exp2Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub seed: u64,
    pub t: Vec<f64>,
    pub reference: Vec<f64>,
    pub actual: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radius_reference: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radius_actual: Vec<f64>,
    pub hand: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
    pub inside_hull: Vec<bool>,
    pub rmse: TrialMetrics,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// A trial without its traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub experiment: Experiment,
    pub trial: String,
    pub subject: String,
    pub controller: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Exp2Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub seed: u64,
    pub rmse: TrialMetrics,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            experiment: self.experiment,
            trial: self.trial.clone(),
            subject: self.subject.clone(),
            controller: self.controller,
            mode: self.mode,
            profile: self.profile.clone(),
            seed: self.seed,
            rmse: self.rmse,
            success: self.success,
            failure: self.failure.clone(),
        }
    }

    /// Write the traces as CSV.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let radius = !self.radius_reference.is_empty();
        let mut header = vec![
            "t", "reference", "actual", "inside_hull", "hand_x", "hand_y", "hand_z", "target_x", "target_y", "target_z",
        ];
        if radius {
            header.extend(["radius_reference", "radius_actual"]);
        }
        w.write_record(&header)?;
        for i in 0..self.t.len() {
            let mut row = vec![
                self.t[i].to_string(),
                self.reference[i].to_string(),
                self.actual[i].to_string(),
                self.inside_hull[i].to_string(),
            ];
            row.extend(self.hand[i].iter().map(|v| v.to_string()));
            row.extend(self.target[i].iter().map(|v| v.to_string()));
            if radius {
                row.push(self.radius_reference[i].to_string());
                row.push(self.radius_actual[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Affine map of the 0–100 control value onto a sphere radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusMap {
    /// Radius at value 0.
    pub min: f64,
    /// Radius at value 100.
    pub max: f64,
}

impl Default for RadiusMap {
    fn default() -> Self {
        RadiusMap { min: 0.05, max: 0.80 }
    }
}

impl RadiusMap {
    pub fn radius(&self, value: f64) -> f64 {
        self.min + (self.max - self.min) * value / 100.0
    }

    pub fn value(&self, radius: f64) -> f64 {
        ((radius - self.min) / (self.max - self.min) * 100.0).clamp(0.0, 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    pub profile_seeds: Vec<u64>,
    pub repetitions: usize,
    /// s
    pub duration: f64,
    /// Unlogged alignment time before the profile starts, s.
    pub alignment: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            profile_seeds: vec![1, 2, 3],
            repetitions: 3,
            duration: profile::DEFAULT_DURATION,
            alignment: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    /// m
    pub initial_radius: f64,
    pub steps: usize,
    /// s per radius step
    pub step_interval: f64,
    /// s, excluded from position RMSE
    pub alignment: f64,
    pub trials: usize,
    pub radius_map: RadiusMap,
    /// Range of the target-centre offset from the hand start, m.
    pub target_offset: [f64; 2],
    /// Time the simulated hand takes to reach the target centre, s.
    pub reach_time: f64,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            initial_radius: 0.50,
            steps: 6,
            step_interval: 5.0,
            alignment: 5.0,
            trials: 3,
            radius_map: RadiusMap::default(),
            target_offset: [0.04, 0.07],
            reach_time: 2.0,
        }
    }
}

/// Radius steps and target centres for one experiment-2 session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSchedule {
    pub initial_radius: f64,
    pub step_interval: f64,
    pub alignment: f64,
    /// One list of radius steps per trial.
    pub radii: Vec<Vec<f64>>,
    /// Target centre per trial.
    pub centers: Vec<[f64; 3]>,
}

impl SphereSchedule {
    pub fn generate(cfg: &Exp2Config, start: &Vector3<f64>, volume: &InterpolationVolume, seed: u64) -> Result<Self> {
        if cfg.steps == 0 || !(cfg.step_interval > 0.0) || cfg.trials == 0 {
            return Err(Error::InvalidArgument("schedule needs steps, trials and a positive interval".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c4e);
        let lo = cfg.radius_map.min + 0.1 * (cfg.radius_map.max - cfg.radius_map.min);
        let hi = cfg.radius_map.max - 0.05 * (cfg.radius_map.max - cfg.radius_map.min);
        let mut radii = Vec::with_capacity(cfg.trials);
        let mut centers = Vec::with_capacity(cfg.trials);
        for _ in 0..cfg.trials {
            let mut steps: Vec<f64> = Vec::with_capacity(cfg.steps);
            let mut prev = cfg.initial_radius;
            while steps.len() < cfg.steps {
                let r = rng.gen_range(lo..hi);
                if (r - prev).abs() >= 0.1 * (hi - lo) {
                    steps.push(r);
                    prev = r;
                }
            }
            radii.push(steps);
            let center = loop {
                let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                if dir.norm() < 0.2 || dir.norm() > 1.0 {
                    continue;
                }
                let c = start + dir.normalize() * rng.gen_range(cfg.target_offset[0]..cfg.target_offset[1]);
                if volume.hull_side(&c) == 1 {
                    break c;
                }
            };
            centers.push(center.into());
        }
        Ok(SphereSchedule {
            initial_radius: cfg.initial_radius,
            step_interval: cfg.step_interval,
            alignment: cfg.alignment,
            radii,
            centers,
        })
    }

    pub fn duration(&self, trial: usize) -> f64 {
        self.alignment + self.step_interval * self.radii[trial].len() as f64
    }

    pub fn radius_at(&self, trial: usize, t: f64) -> f64 {
        if t < self.alignment {
            return self.initial_radius;
        }
        let steps = &self.radii[trial];
        let k = (((t - self.alignment) / self.step_interval).floor() as usize).min(steps.len() - 1);
        steps[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub gains: SimUserGains,
    pub control: ControlConfig,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1],
            gains: SimUserGains::default(),
            control: ControlConfig::default(),
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.gains.validate()?;
        cfg.control.validate()?;
        Ok(cfg)
    }
}

/// Everything a simulated trial needs.
#[derive(Debug, Clone)]
pub struct SimContext<'a> {
    pub model: &'a ArmModel,
    pub volume: &'a InterpolationVolume,
    pub gains: SimUserGains,
    pub control: ControlConfig,
}

/// Starting configuration for trials: inverse kinematics to the centroid of
/// the calibration nodes, seeded by (and keeping the orientation of) the
/// interpolated mean configuration there.
pub fn start_config(model: &ArmModel, volume: &InterpolationVolume) -> Result<JointVector> {
    let n = volume.nodes.len() as f64;
    let centroid = volume.nodes.iter().map(|b| b.position()).sum::<Vector3<f64>>() / n;
    let basis = volume.interpolate(&centroid)?;
    let seed: DVector<f64> = basis.mean.clone();
    let orientation = model
        .forward_kinematics(&seed)
        .map(|p| p.orientation)
        .unwrap_or_else(|_| UnitQuaternion::identity());
    let target = HandPose {
        position: centroid,
        orientation,
    };
    solve_ik(model, &target, &seed, &IkOptions::default()).map_err(|e| match e {
        Error::Unreachable { residual, .. } => Error::Unreachable {
            label: "start pose".into(),
            residual,
        },
        other => other,
    })
}

/// Experiment-1 task: hold the hand still and follow `profile`.
pub struct Exp1Task<'a> {
    pub profile: &'a ReferenceProfile,
    pub alignment: f64,
    pub hold: Vector3<f64>,
}

impl TrackingTask for Exp1Task<'_> {
    fn start(&self) -> f64 {
        -self.alignment
    }

    fn end(&self) -> f64 {
        self.profile.duration
    }

    fn signal_reference(&self, t: f64) -> f64 {
        self.profile.value_at(t.max(0.0))
    }

    fn hand_target(&self, _t: f64) -> Vector3<f64> {
        self.hold
    }
}

/// Experiment-2 task for one trial of a schedule.
pub struct Exp2Task<'a> {
    pub schedule: &'a SphereSchedule,
    pub trial: usize,
    pub mode: Exp2Mode,
    pub map: RadiusMap,
    pub start: Vector3<f64>,
    pub reach_time: f64,
}

impl TrackingTask for Exp2Task<'_> {
    fn start(&self) -> f64 {
        0.0
    }

    fn end(&self) -> f64 {
        self.schedule.duration(self.trial)
    }

    fn signal_reference(&self, t: f64) -> f64 {
        self.map.value(self.schedule.radius_at(self.trial, t))
    }

    fn hand_target(&self, t: f64) -> Vector3<f64> {
        match self.mode {
            Exp2Mode::Single => self.start,
            Exp2Mode::Parallel => {
                // Minimum-jerk reach onto the target centre.
                let s = (t / self.reach_time).clamp(0.0, 1.0);
                let blend = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
                let c = Vector3::from(self.schedule.centers[self.trial]);
                self.start + (c - self.start) * blend
            }
        }
    }
}

fn trial_seed(seed: u64, a: usize, b: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((a as u64) << 32) ^ b as u64
}

/// Assemble an experiment-1 result from a closed-loop trace.
pub fn exp1_result(trace: &TrackingTrace, profile: &ReferenceProfile, trial: String, subject: String, controller: ControllerKind, seed: u64) -> Result<TrialResult> {
    let mut success = !trace.diverged;
    let mut failure = trace.failure.clone();
    let expected = profile.samples.len();
    if success && trace.t.len() != expected {
        success = false;
        failure = Some(format!("trace has {} samples, expected {expected}", trace.t.len()));
    }
    let signal = if trace.t.is_empty() {
        f64::NAN
    } else {
        rmse(&trace.value, &trace.reference)?
    };
    Ok(TrialResult {
        experiment: Experiment::Exp1,
        trial,
        subject,
        controller,
        mode: None,
        profile: Some(profile.label.clone()),
        seed,
        t: trace.t.clone(),
        reference: trace.reference.clone(),
        actual: trace.value.clone(),
        radius_reference: Vec::new(),
        radius_actual: Vec::new(),
        hand: trace.hand.iter().map(|p| (*p).into()).collect(),
        target: trace.hand_target.iter().map(|p| (*p).into()).collect(),
        inside_hull: trace.inside_hull.clone(),
        rmse: TrialMetrics {
            signal,
            radius_cm: None,
            position_cm: None,
        },
        success,
        failure,
    })
}

/// Oracle trace: the value equals the reference at every tick.
fn direct_trace(task: &dyn TrackingTask, hand: Vector3<f64>) -> TrackingTrace {
    let mut trace = TrackingTrace::default();
    let first = (task.start() * LOOP_RATE_HZ).round().max(0.0) as i64;
    let last = (task.end() * LOOP_RATE_HZ).round() as i64;
    for k in first..last {
        let t = k as f64 / LOOP_RATE_HZ;
        let r = task.signal_reference(t);
        trace.t.push(t);
        trace.reference.push(r);
        trace.value.push(r);
        trace.raw.push(r);
        trace.hand.push(hand);
        trace.hand_target.push(task.hand_target(t));
        trace.inside_hull.push(true);
    }
    trace
}

/// Experiment 1: every profile seed × repetitions, in that order.
pub fn run_experiment1(ctx: &SimContext, cfg: &Exp1Config, controller: ControllerKind, seed: u64) -> Result<Vec<TrialResult>> {
    let q0 = start_config(ctx.model, ctx.volume)?;
    let hold = ctx.model.forward_kinematics(&q0)?.position;
    let mut out = Vec::new();
    for (p, &pseed) in cfg.profile_seeds.iter().enumerate() {
        let profile = generate_profile(pseed, cfg.duration, LOOP_RATE_HZ)?;
        let task = Exp1Task {
            profile: &profile,
            alignment: cfg.alignment,
            hold,
        };
        for rep in 0..cfg.repetitions {
            let user_seed = trial_seed(seed, p, rep);
            let trace = match controller {
                ControllerKind::Ikk => run_tracking(ctx.model, ctx.volume, &ctx.gains, &ctx.control, &task, &q0, user_seed)?,
                ControllerKind::Direct => direct_trace(&task, hold),
            };
            let name = format!("traj{}_rep{}", p + 1, rep + 1);
            out.push(exp1_result(&trace, &profile, name, format!("sim-{seed}"), controller, user_seed)?);
        }
    }
    Ok(out)
}

/// Experiment 2: one trial per schedule entry in the given mode.
pub fn run_experiment2(
    ctx: &SimContext,
    cfg: &Exp2Config,
    schedule: &SphereSchedule,
    mode: Exp2Mode,
    controller: ControllerKind,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    let q0 = start_config(ctx.model, ctx.volume)?;
    let start = ctx.model.forward_kinematics(&q0)?.position;
    let mut out = Vec::new();
    for trial in 0..schedule.radii.len() {
        let task = Exp2Task {
            schedule,
            trial,
            mode,
            map: cfg.radius_map,
            start,
            reach_time: cfg.reach_time,
        };
        let user_seed = trial_seed(seed, 100 + trial, mode as usize);
        let trace = match controller {
            ControllerKind::Ikk => run_tracking(ctx.model, ctx.volume, &ctx.gains, &ctx.control, &task, &q0, user_seed)?,
            ControllerKind::Direct => {
                let mut tr = direct_trace(&task, start);
                tr.hand = tr.hand_target.clone();
                tr
            }
        };
        let mode_name = match mode {
            Exp2Mode::Single => "single",
            Exp2Mode::Parallel => "parallel",
        };
        out.push(exp2_result(
            &trace,
            schedule,
            trial,
            cfg,
            mode,
            format!("{mode_name}_trial{}", trial + 1),
            format!("sim-{seed}"),
            controller,
            user_seed,
        )?);
    }
    Ok(out)
}

/// Assemble an experiment-2 result from a closed-loop trace.
#[allow(clippy::too_many_arguments)]
pub fn exp2_result(
    trace: &TrackingTrace,
    schedule: &SphereSchedule,
    trial: usize,
    cfg: &Exp2Config,
    mode: Exp2Mode,
    name: String,
    subject: String,
    controller: ControllerKind,
    seed: u64,
) -> Result<TrialResult> {
    let radius_reference: Vec<f64> = trace.t.iter().map(|&t| schedule.radius_at(trial, t)).collect();
    let radius_actual: Vec<f64> = trace.value.iter().map(|&v| cfg.radius_map.radius(v)).collect();
    let expected = (schedule.duration(trial) * LOOP_RATE_HZ).round() as usize;
    let mut success = !trace.diverged;
    let mut failure = trace.failure.clone();
    if success && trace.t.len() != expected {
        success = false;
        failure = Some(format!("trace has {} samples, expected {expected}", trace.t.len()));
    }
    let (signal, radius_cm, position_cm) = if trace.t.is_empty() {
        (f64::NAN, None, None)
    } else {
        let center = Vector3::from(schedule.centers[trial]);
        let position_cm = match mode {
            Exp2Mode::Single => None,
            Exp2Mode::Parallel => {
                let from = trace.t.partition_point(|&t| t < schedule.alignment - 1e-9);
                let d: Vec<f64> = trace.hand[from..].iter().map(|h| (h - center).norm()).collect();
                if d.is_empty() {
                    None
                } else {
                    Some(100.0 * rmse(&d, &vec![0.0; d.len()])?)
                }
            }
        };
        (
            rmse(&trace.value, &trace.reference)?,
            Some(100.0 * rmse(&radius_actual, &radius_reference)?),
            position_cm,
        )
    };
    Ok(TrialResult {
        experiment: Experiment::Exp2,
        trial: name,
        subject,
        controller,
        mode: Some(mode),
        profile: None,
        seed,
        t: trace.t.clone(),
        reference: trace.reference.clone(),
        actual: trace.value.clone(),
        radius_reference,
        radius_actual,
        hand: trace.hand.iter().map(|p| (*p).into()).collect(),
        target: trace.hand_target.iter().map(|p| (*p).into()).collect(),
        inside_hull: trace.inside_hull.clone(),
        rmse: TrialMetrics {
            signal,
            radius_cm,
            position_cm,
        },
        success,
        failure,
    })
}

/// Write `results/<exp>/<trial>.csv` for every result plus
/// `summary.md` and `summary.json` under `dir`.
pub fn write_results(dir: impl AsRef<Path>, results: &[TrialResult]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for r in results {
        let sub = dir.join(r.experiment.name());
        std::fs::create_dir_all(&sub)?;
        let path = sub.join(format!("{}.csv", r.trial));
        r.write_csv(std::fs::File::create(&path)?)?;
        written.push(path);
    }
    std::fs::create_dir_all(dir)?;
    let summaries: Vec<TrialSummary> = results.iter().map(|r| r.summary()).collect();
    let md = dir.join("summary.md");
    std::fs::write(&md, report::render(&summaries, report::Format::Markdown)?)?;
    let json = dir.join("summary.json");
    std::fs::write(&json, report::render(&summaries, report::Format::Json)?)?;
    written.push(md);
    written.push(json);
    Ok(written)
}
