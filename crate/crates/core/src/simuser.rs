//! Simulated human operator: damped-least-squares resolved-rate control with
//! a null-space term that steers the control signal while the hand holds its
//! pose.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm::{null_space_basis, ArmModel, HandPose, JointVector};
use crate::capture::{project_to_pose, Frame};
use crate::control::{evaluate_basis, ControlConfig, ControlEngine};
use crate::error::{Error, Result};
use crate::identify::SignalMode;
use crate::interp::{InterpolatedBasis, InterpolationVolume};

/// `Jᵀ (J Jᵀ + λ² I)⁻¹`, solved through a Cholesky factorisation of the
/// `r × r` damped Gram matrix.
pub fn damped_pinv(j: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be > 0, got {lambda}")));
    }
    let r = j.nrows();
    let gram = j * j.transpose() + DMatrix::identity(r, r) * (lambda * lambda);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("damped Gram matrix not positive definite".into()))?;
    // (JJᵀ+λ²I)⁻¹ J, transposed.
    Ok(chol.solve(j).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    pub max_iter: usize,
    pub lambda: f64,
    /// Largest joint change per iteration, rad.
    pub max_step: f64,
    /// Accepted pose-error norm.
    pub tol: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            max_iter: 500,
            lambda: 0.05,
            max_step: 0.2,
            tol: 1e-10,
        }
    }
}

/// Damped-least-squares inverse kinematics from `seed`, polished by undamped
/// Newton steps once close. Joint limits are enforced by clamping.
pub fn solve_ik(model: &ArmModel, target: &HandPose, seed: &JointVector, opts: &IkOptions) -> Result<JointVector> {
    let rows = model.task_rows();
    let mut q = seed.clone();
    model.clamp_to_limits(&mut q);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let cur = model.forward_kinematics(&q)?;
        let e6 = cur.error_to(target);
        let e = DVector::from_column_slice(&e6.as_slice()[..rows]);
        residual = e.norm();
        if residual < 1e-4 {
            break;
        }
        let j = model.jacobian(&q)?;
        let mut dq = damped_pinv(&j.entries, opts.lambda)? * e;
        let m = dq.amax();
        if m > opts.max_step {
            dq *= opts.max_step / m;
        }
        q += dq;
        model.clamp_to_limits(&mut q);
    }
    let mut polished = q.clone();
    let err = project_to_pose(model, &mut polished, target);
    if err <= opts.tol && model.within_limits(&polished) {
        return Ok(polished);
    }
    Err(Error::Unreachable {
        label: String::new(),
        residual: err.min(residual),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimUserGains {
    /// 1/s
    pub k_task: f64,
    /// 1/s
    pub k_null: f64,
    pub lambda: f64,
    /// rad/s, per joint
    pub speed_limit: f64,
    /// s
    pub delay: f64,
    /// relative standard deviation of the null-space speed command
    pub noise: f64,
    /// How far ahead (s) the operator reads the displayed reference.
    pub preview: f64,
}

impl Default for SimUserGains {
    fn default() -> Self {
        SimUserGains {
            k_task: 5.0,
            k_null: 8.0,
            lambda: 0.05,
            speed_limit: 2.0,
            delay: 0.15,
            noise: 0.02,
            preview: 0.25,
        }
    }
}

impl SimUserGains {
    pub fn validate(&self) -> Result<()> {
        if self.k_task < 0.0 || self.k_null < 0.0 || self.delay < 0.0 || self.noise < 0.0 || self.preview < 0.0 {
            return Err(Error::InvalidArgument("gains must be >= 0".into()));
        }
        if !(self.lambda > 0.0 && self.speed_limit > 0.0) {
            return Err(Error::InvalidArgument("damping and speed limit must be > 0".into()));
        }
        Ok(())
    }
}

/// Joint-space direction along which the control value increases, and the
/// joint displacement per control unit along it.
pub fn signal_gradient(basis: &InterpolatedBasis, q: &JointVector) -> (JointVector, f64) {
    let units_per_rad = 100.0 / basis.span();
    match basis.mode {
        SignalMode::OnePC => (basis.directions[0].clone(), 1.0 / units_per_rad),
        SignalMode::TwoPC => {
            let c = q - &basis.mean;
            let p1 = basis.directions[0].dot(&c);
            let p2 = basis.directions[1].dot(&c);
            let rho = p1.hypot(p2);
            let g = if rho > 1e-9 {
                (&basis.directions[0] * p1 + &basis.directions[1] * p2) / rho
            } else {
                basis.directions[0].clone()
            };
            (g, 1.0 / units_per_rad)
        }
    }
}

/// Outcome of one plant integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub q: JointVector,
    /// Joint limits were hit and the configuration was projected back.
    pub limit_event: bool,
}

/// The arm under resolved-rate control:
/// `q̇ = J⁺ (k_task·e + v_ff) + N Nᵀ (s · ĝ)`, clipped to the joint speed limit
/// and integrated by explicit Euler. `N` is the SVD null-space basis, `ĝ` the
/// signal-gradient direction and `s` the commanded null-space speed.
#[derive(Debug, Clone)]
pub struct ArmPlant {
    pub model: ArmModel,
    pub q: JointVector,
    /// Pose the hand is servoed to.
    pub hold: HandPose,
    pub k_task: f64,
    pub lambda: f64,
    pub speed_limit: f64,
}

impl ArmPlant {
    pub fn new(model: ArmModel, q: JointVector, gains: &SimUserGains) -> Result<Self> {
        let hold = model.forward_kinematics(&q)?;
        Ok(ArmPlant {
            model,
            q,
            hold,
            k_task: gains.k_task,
            lambda: gains.lambda,
            speed_limit: gains.speed_limit,
        })
    }

    pub fn hand(&self) -> HandPose {
        self.model.forward_kinematics(&self.q).expect("plant dims fixed at construction")
    }

    pub fn frame(&self, t: f64) -> Frame {
        Frame {
            t,
            q: self.q.clone(),
            hand: self.hand(),
        }
    }

    /// Joint velocity for a null-space speed `null_speed` along `direction`
    /// and a hand-velocity feed-forward `hand_velocity` (m/s).
    pub fn joint_velocity(
        &self,
        null_speed: f64,
        direction: &JointVector,
        hand_velocity: &Vector3<f64>,
    ) -> Result<JointVector> {
        let rows = self.model.task_rows();
        let j = self.model.jacobian(&self.q)?;
        let e6 = self.hand().error_to(&self.hold);
        let mut task = DVector::from_column_slice(&e6.as_slice()[..rows]) * self.k_task;
        task[0] += hand_velocity.x;
        task[1] += hand_velocity.y;
        task[2] += hand_velocity.z;
        let mut qdot = damped_pinv(&j.entries, self.lambda)? * task;
        if null_speed != 0.0 {
            let basis = null_space_basis(&j, 1e-9)?;
            let z = direction * null_speed;
            qdot += &basis * (basis.transpose() * z);
        }
        let m = qdot.amax();
        if m > self.speed_limit {
            qdot *= self.speed_limit / m;
        }
        Ok(qdot)
    }

    pub fn step(
        &mut self,
        null_speed: f64,
        direction: &JointVector,
        hand_velocity: &Vector3<f64>,
        dt: f64,
    ) -> Result<StepOutcome> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        let qdot = self.joint_velocity(null_speed, direction, hand_velocity)?;
        self.q += qdot * dt;
        self.hold.position += hand_velocity * dt;
        let limit_event = self.model.clamp_to_limits(&mut self.q);
        if limit_event {
            log::debug!("joint limit reached; configuration projected onto limits");
        }
        Ok(StepOutcome {
            q: self.q.clone(),
            limit_event,
        })
    }
}

/// Target of a single tracking step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackTarget {
    pub pose: HandPose,
    /// Desired control value, 0–100.
    pub signal: f64,
}

/// One noise- and delay-free resolved-rate step toward `target`.
pub fn track_step(
    model: &ArmModel,
    q: &JointVector,
    target: &TrackTarget,
    volume: &InterpolationVolume,
    gains: &SimUserGains,
    dt: f64,
) -> Result<JointVector> {
    let mut plant = ArmPlant::new(model.clone(), q.clone(), gains)?;
    plant.hold = target.pose;
    let hand = plant.hand();
    let basis = volume.interpolate(&hand.position)?;
    let (_, value) = evaluate_basis(&basis, q)?;
    let (dir, rad_per_unit) = signal_gradient(&basis, q);
    let speed = gains.k_null * (target.signal - value) * rad_per_unit;
    Ok(plant.step(speed, &dir, &Vector3::zeros(), dt)?.q)
}

/// Operator policy: reads the displayed value with a reaction delay, reads
/// the reference slightly ahead, and issues a noisy proportional null-space
/// speed command.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    pub gains: SimUserGains,
    rng: ChaCha8Rng,
    /// Displayed values, newest last; sized to the reaction delay.
    seen: VecDeque<f64>,
    delay_ticks: usize,
}

impl SimulatedUser {
    pub fn new(gains: SimUserGains, seed: u64, dt: f64) -> Self {
        let delay_ticks = (gains.delay / dt).round() as usize;
        SimulatedUser {
            gains,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: VecDeque::with_capacity(delay_ticks + 1),
            delay_ticks,
        }
    }

    /// Record the currently displayed value and return the one the operator
    /// is reacting to.
    pub fn perceive(&mut self, displayed: f64) -> f64 {
        self.seen.push_back(displayed);
        while self.seen.len() > self.delay_ticks + 1 {
            self.seen.pop_front();
        }
        self.seen[0]
    }

    /// Null-space speed (rad/s) to move the value from `perceived` toward
    /// `reference`, given `rad_per_unit` joint radians per control unit.
    pub fn command(&mut self, perceived: f64, reference: f64, rad_per_unit: f64) -> f64 {
        let nominal = self.gains.k_null * (reference - perceived) * rad_per_unit;
        let eps: f64 = StandardNormal.sample(&mut self.rng);
        let speed = nominal * (1.0 + self.gains.noise * eps);
        speed.clamp(-self.gains.speed_limit, self.gains.speed_limit)
    }
}

/// What the closed loop must do over time.
pub trait TrackingTask {
    /// First simulated time (negative for a warm-up phase that is not logged).
    fn start(&self) -> f64;
    fn end(&self) -> f64;
    /// Desired control value at `t`.
    fn signal_reference(&self, t: f64) -> f64;
    /// Hand position the operator servoes to at `t`.
    fn hand_target(&self, t: f64) -> Vector3<f64>;
}

/// Per-tick record of a closed-loop run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingTrace {
    pub t: Vec<f64>,
    pub reference: Vec<f64>,
    pub value: Vec<f64>,
    pub raw: Vec<f64>,
    pub hand: Vec<Vector3<f64>>,
    pub hand_target: Vec<Vector3<f64>>,
    pub inside_hull: Vec<bool>,
    /// Null-space speed command issued at every simulated tick, warm-up
    /// included (rad/s). Replaying these reproduces the run.
    pub null_commands: Vec<f64>,
    pub limit_events: usize,
    pub diverged: bool,
    pub failure: Option<String>,
}

/// Simulation rate (Hz) shared with the capture system and the live service.
pub const LOOP_RATE_HZ: f64 = 100.0;

/// Closed-loop simulation of `task` at 100 Hz from configuration `q0`. Ticks
/// before `t = 0` are simulated but not logged. The
/// hand target is tracked by the resolved-rate task term (position from
/// `task`, orientation held from `q0`); the control value by the operator
/// policy.
pub fn run_tracking(
    model: &ArmModel,
    volume: &InterpolationVolume,
    gains: &SimUserGains,
    control: &ControlConfig,
    task: &dyn TrackingTask,
    q0: &JointVector,
    seed: u64,
) -> Result<TrackingTrace> {
    gains.validate()?;
    let dt = 1.0 / LOOP_RATE_HZ;
    let mut plant = ArmPlant::new(model.clone(), q0.clone(), gains)?;
    let mut user = SimulatedUser::new(*gains, seed, dt);
    let mut engine = ControlEngine::new(volume, *control);
    let mut trace = TrackingTrace::default();
    let first = (task.start() * LOOP_RATE_HZ).round() as i64;
    let last = (task.end() * LOOP_RATE_HZ).round() as i64;
    let mut over_since: Option<f64> = None;
    for k in first..last {
        let t = k as f64 / LOOP_RATE_HZ;
        let logged = k >= 0;
        let frame = plant.frame(t);
        let sample = match engine.push(&frame) {
            Ok(s) => s,
            Err(e) => {
                trace.diverged = true;
                trace.failure = Some(e.to_string());
                break;
            }
        };
        let reference = task.signal_reference(t);
        let target_pos = task.hand_target(t);

        if logged {
            trace.t.push(t);
            trace.reference.push(reference);
            trace.value.push(sample.value);
            trace.raw.push(sample.raw);
            trace.hand.push(frame.hand.position);
            trace.hand_target.push(target_pos);
            trace.inside_hull.push(sample.inside_hull);
        }

        let err = (reference - sample.value).abs();
        if !err.is_finite() || !frame.q.iter().all(|v| v.is_finite()) {
            trace.diverged = true;
            trace.failure = Some(format!("non-finite state at t = {t:.2}"));
            break;
        }
        if err > 100.0 {
            let since = *over_since.get_or_insert(t);
            if t - since > 1.0 {
                trace.diverged = true;
                trace.failure = Some(format!("signal error above 100 for > 1 s at t = {t:.2}"));
                break;
            }
        } else {
            over_since = None;
        }

        let basis = engine.last_basis().expect("set by push").clone();
        let (dir, rad_per_unit) = signal_gradient(&basis, &frame.q);
        let perceived = user.perceive(sample.value);
        let ahead = task.signal_reference((t + gains.preview).min(task.end()));
        let speed = user.command(perceived, ahead, rad_per_unit);
        trace.null_commands.push(speed);

        plant.hold.position = target_pos;
        let out = plant.step(speed, &dir, &Vector3::zeros(), dt)?;
        if out.limit_event {
            trace.limit_events += 1;
        }
    }
    Ok(trace)
}
