//! One live session: arm plant, control pipeline and task clock, advanced
//! one 100 Hz tick at a time. All state mutation goes through here.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use ikk_core::experiments::{
    exp1_result, exp2_result, generate_profile, start_config, ControllerKind, Exp1Config, Exp2Config, Exp2Mode, ReferenceProfile,
    SphereSchedule, TrialResult,
};
use ikk_core::simuser::{signal_gradient, ArmPlant, TrackingTrace, LOOP_RATE_HZ};
use ikk_core::{ArmModel, ControlConfig, ControlEngine, ControlSample, Error, InterpolationVolume, JointVector, Result, SimUserGains};

use crate::protocol::{ClientBody, SessionMode, StatePayload, TaskPayload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub gains: SimUserGains,
    pub control: ControlConfig,
    /// Null-space speed for jog u = ±1, rad/s.
    pub max_jog: f64,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    /// Seconds without client input before the task clock pauses.
    pub stall_timeout: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            gains: SimUserGains::default(),
            control: ControlConfig::default(),
            max_jog: 2.0,
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            stall_timeout: 2.0,
        }
    }
}

enum Task {
    Free,
    Exp1(ReferenceProfile),
    Exp2 { schedule: SphereSchedule, mode: Exp2Mode },
}

pub struct Session<'a> {
    pub id: u64,
    model: &'a ArmModel,
    volume: &'a InterpolationVolume,
    cfg: SessionConfig,
    q0: JointVector,
    plant: ArmPlant,
    engine: ControlEngine<'a>,
    mode: SessionMode,
    task: Task,
    controller: ControllerKind,
    subject: String,
    seed: u64,
    trials: usize,
    k: i64,
    end_k: Option<i64>,
    jog: f64,
    ik: Vector3<f64>,
    direct: Option<f64>,
    trace: TrackingTrace,
    last: Option<(f64, JointVector, Vector3<f64>, ControlSample, f64)>,
    warnings: Vec<String>,
    pub paused: bool,
}

fn clamped(name: &str, v: f64, lo: f64, hi: f64, warnings: &mut Vec<String>) -> f64 {
    if !v.is_finite() {
        warnings.push(format!("{name} {v} is not finite; using 0"));
        return 0.0_f64.clamp(lo, hi);
    }
    if v < lo || v > hi {
        let c = v.clamp(lo, hi);
        warnings.push(format!("{name} {v} clamped to {c}"));
        c
    } else {
        v
    }
}

impl<'a> Session<'a> {
    pub fn new(id: u64, model: &'a ArmModel, volume: &'a InterpolationVolume, cfg: SessionConfig) -> Result<Self> {
        cfg.gains.validate()?;
        cfg.control.validate()?;
        if !(cfg.max_jog > 0.0) {
            return Err(Error::InvalidArgument(format!("max_jog must be > 0, got {}", cfg.max_jog)));
        }
        let q0 = start_config(model, volume)?;
        let plant = ArmPlant::new(model.clone(), q0.clone(), &cfg.gains)?;
        let engine = ControlEngine::new(volume, cfg.control);
        Ok(Session {
            id,
            model,
            volume,
            q0,
            plant,
            engine,
            mode: SessionMode::Free,
            task: Task::Free,
            controller: ControllerKind::Ikk,
            subject: "human".into(),
            seed: 0,
            trials: 0,
            k: 0,
            end_k: None,
            jog: 0.0,
            ik: Vector3::zeros(),
            direct: None,
            trace: TrackingTrace::default(),
            last: None,
            warnings: Vec::new(),
            paused: false,
            cfg,
        })
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn q(&self) -> &JointVector {
        &self.plant.q
    }

    pub fn time(&self) -> f64 {
        self.k as f64 / LOOP_RATE_HZ
    }

    /// Reset the arm and begin a task in `mode`.
    pub fn start(&mut self, mode: SessionMode, seed: Option<u64>, controller: Option<ControllerKind>, subject: Option<String>) -> Result<()> {
        self.plant = ArmPlant::new(self.model.clone(), self.q0.clone(), &self.cfg.gains)?;
        self.engine = ControlEngine::new(self.volume, self.cfg.control);
        self.trace = TrackingTrace::default();
        self.last = None;
        self.jog = 0.0;
        self.ik = Vector3::zeros();
        self.direct = None;
        self.mode = mode;
        self.controller = controller.unwrap_or(ControllerKind::Ikk);
        if let Some(s) = subject {
            self.subject = s;
        }
        self.seed = seed.unwrap_or(1);
        let hz = LOOP_RATE_HZ;
        match mode {
            SessionMode::Free => {
                self.task = Task::Free;
                self.k = 0;
                self.end_k = None;
            }
            SessionMode::Exp1 => {
                let profile = generate_profile(self.seed, self.cfg.exp1.duration, hz)?;
                self.k = -(self.cfg.exp1.alignment * hz).round() as i64;
                self.end_k = Some((profile.duration * hz).round() as i64);
                self.task = Task::Exp1(profile);
            }
            SessionMode::Exp2Single | SessionMode::Exp2Parallel => {
                let cfg = Exp2Config { trials: 1, ..self.cfg.exp2.clone() };
                let start = self.plant.hand().position;
                let schedule = SphereSchedule::generate(&cfg, &start, self.volume, self.seed)?;
                self.k = 0;
                self.end_k = Some((schedule.duration(0) * hz).round() as i64);
                let mode = if mode == SessionMode::Exp2Single { Exp2Mode::Single } else { Exp2Mode::Parallel };
                self.task = Task::Exp2 { schedule, mode };
            }
        }
        Ok(())
    }

    /// Apply a live input. Out-of-range values are clamped and reported in
    /// the next state message.
    pub fn apply(&mut self, body: &ClientBody) {
        match body {
            ClientBody::Jog { u } => self.jog = clamped("jog", *u, -1.0, 1.0, &mut self.warnings),
            ClientBody::IkMove { dx } => {
                let v = Vector3::from(*dx);
                if v.iter().all(|x| x.is_finite()) {
                    self.ik = v;
                } else {
                    self.warnings.push("ik_move velocity is not finite; ignored".into());
                }
            }
            ClientBody::Direct { value } => {
                if self.controller == ControllerKind::Ikk && self.mode != SessionMode::Free {
                    self.warnings.push("direct input ignored during an ikk trial".into());
                } else {
                    self.direct = Some(clamped("direct value", *value, 0.0, 100.0, &mut self.warnings));
                }
            }
            ClientBody::Hello { .. } | ClientBody::Start { .. } => {}
        }
    }

    fn reference(&self, t: f64) -> f64 {
        match &self.task {
            Task::Free => f64::NAN,
            Task::Exp1(p) => p.value_at(t.max(0.0)),
            Task::Exp2 { schedule, .. } => self.cfg.exp2.radius_map.value(schedule.radius_at(0, t)),
        }
    }

    /// Advance one loop tick. Returns a trial result when the task ends.
    pub fn tick(&mut self) -> Result<Option<TrialResult>> {
        let dt = 1.0 / LOOP_RATE_HZ;
        let t = self.time();
        let frame = self.plant.frame(t);
        let sample = match self.engine.push(&frame) {
            Ok(s) => s,
            Err(e) => {
                self.trace.diverged = true;
                self.trace.failure = Some(e.to_string());
                return self.finish();
            }
        };
        let value = self.direct.unwrap_or(sample.value);
        let reference = self.reference(t);
        let logged = self.end_k.is_some() && self.k >= 0;
        if logged {
            self.trace.t.push(t);
            self.trace.reference.push(reference);
            self.trace.value.push(value);
            self.trace.raw.push(sample.raw);
            self.trace.hand.push(frame.hand.position);
            self.trace.hand_target.push(self.plant.hold.position);
            self.trace.inside_hull.push(sample.inside_hull);
        }
        self.last = Some((t, frame.q.clone(), frame.hand.position, sample, value));
        if !frame.q.iter().all(|v| v.is_finite()) {
            self.trace.diverged = true;
            self.trace.failure = Some(format!("non-finite state at t = {t:.2}"));
            return self.finish();
        }

        let speed = self.jog * self.cfg.max_jog;
        let basis = self.engine.last_basis().expect("set by push");
        let (dir, _) = signal_gradient(basis, &frame.q);
        if self.end_k.is_some() {
            self.trace.null_commands.push(speed);
        }
        let out = self.plant.step(speed, &dir, &self.ik, dt)?;
        if out.limit_event {
            self.trace.limit_events += 1;
        }
        self.k += 1;
        if self.end_k.is_some_and(|e| self.k >= e) {
            return self.finish();
        }
        Ok(None)
    }

    fn finish(&mut self) -> Result<Option<TrialResult>> {
        let trace = std::mem::take(&mut self.trace);
        let controller = self.controller;
        let subject = self.subject.clone();
        self.trials += 1;
        let name = |kind: &str| format!("session{}_{}_{}", self.id, self.trials, kind);
        let result = match &self.task {
            Task::Free => None,
            Task::Exp1(p) => Some(exp1_result(&trace, p, name(&p.label), subject, controller, self.seed)?),
            Task::Exp2 { schedule, mode } => {
                let kind = if *mode == Exp2Mode::Single { "single" } else { "parallel" };
                Some(exp2_result(&trace, schedule, 0, &self.cfg.exp2, *mode, name(kind), subject, controller, self.seed)?)
            }
        };
        // Back to free steering from where the arm is.
        self.mode = SessionMode::Free;
        self.task = Task::Free;
        self.end_k = None;
        self.k = 0;
        self.direct = None;
        Ok(result)
    }

    /// State for the most recent tick; drains pending warnings.
    pub fn state(&mut self) -> StatePayload {
        let (t, q, hand, inside, value) = match &self.last {
            Some((t, q, hand, s, v)) => (*t, q.clone(), *hand, s.inside_hull, *v),
            None => {
                let hand = self.plant.hand().position;
                let inside = self.volume.hull_side(&hand) == 1;
                (self.time(), self.plant.q.clone(), hand, inside, self.direct.unwrap_or(f64::NAN))
            }
        };
        let value = if value.is_finite() { value } else { 50.0 };
        let task = match &self.task {
            Task::Free => TaskPayload::None,
            Task::Exp1(p) => TaskPayload::Exp1 {
                profile: p.label.clone(),
                reference: self.reference(t),
                progress: (t / p.duration).clamp(0.0, 1.0),
            },
            Task::Exp2 { schedule, .. } => TaskPayload::Exp2 {
                radius: self.cfg.exp2.radius_map.radius(value),
                target_radius: schedule.radius_at(0, t),
                center: schedule.centers[0],
                progress: (t / schedule.duration(0)).clamp(0.0, 1.0),
            },
        };
        StatePayload {
            session: self.id,
            mode: self.mode,
            t,
            q: q.iter().copied().collect(),
            hand: hand.into(),
            value,
            inside_hull: inside,
            task,
            paused: self.paused,
            warnings: std::mem::take(&mut self.warnings),
        }
    }
}
