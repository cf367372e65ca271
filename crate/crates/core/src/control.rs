//! Per-frame control signal: projection on the interpolated basis,
//! normalisation to 0–100, low-pass smoothing and slew limiting.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arm::JointVector;
use crate::capture::Frame;
use crate::error::{Error, Result};
use crate::identify::SignalMode;
use crate::interp::{InterpolatedBasis, InterpolationVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// First-order low-pass time constant, s. Zero disables smoothing.
    pub time_constant: f64,
    /// Maximum output rate, units/s. Infinite disables limiting.
    pub slew_rate: f64,
    /// Map 0 to the top of the recorded range instead of the bottom.
    pub invert: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            time_constant: 0.05,
            slew_rate: 400.0,
            invert: false,
        }
    }
}

impl ControlConfig {
    /// Pass-through: no smoothing, no slew limit.
    pub fn identity() -> Self {
        ControlConfig {
            time_constant: 0.0,
            slew_rate: f64::INFINITY,
            invert: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_constant >= 0.0) || !self.time_constant.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time constant must be finite and >= 0, got {}",
                self.time_constant
            )));
        }
        if !(self.slew_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("slew rate must be > 0, got {}", self.slew_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: f64,
    /// Projection coordinate (signed for `OnePC`, radial for `TwoPC`).
    pub raw: f64,
    /// Normalised value before smoothing.
    pub instant: f64,
    /// Output value in [0, 100].
    pub value: f64,
    pub inside_hull: bool,
    pub mode: SignalMode,
}

/// Raw projection coordinate and normalised 0–100 value of `q` on `basis`.
pub fn evaluate_basis(basis: &InterpolatedBasis, q: &JointVector) -> Result<(f64, f64)> {
    if q.len() != basis.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.mean.len(),
            got: q.len(),
        });
    }
    let span = basis.span();
    if !(span > 1e-12) {
        return Err(Error::DegenerateRange { span });
    }
    let c = q - &basis.mean;
    let raw = match basis.mode {
        SignalMode::OnePC => basis.directions[0].dot(&c),
        SignalMode::TwoPC => basis.directions[0].dot(&c).hypot(basis.directions[1].dot(&c)),
    };
    let value = 100.0 * ((raw - basis.range[0]) / span).clamp(0.0, 1.0);
    Ok((raw, value))
}

/// Unfiltered control sample for one frame.
pub fn control_signal(volume: &InterpolationVolume, frame: &Frame) -> Result<ControlSample> {
    let basis = volume.interpolate(&frame.hand.position)?;
    sample_from(&basis, frame, false)
}

fn sample_from(basis: &InterpolatedBasis, frame: &Frame, invert: bool) -> Result<ControlSample> {
    let (raw, mut value) = evaluate_basis(basis, &frame.q)?;
    if invert {
        value = 100.0 - value;
    }
    Ok(ControlSample {
        t: frame.t,
        raw,
        instant: value,
        value,
        inside_hull: basis.inside_hull,
        mode: basis.mode,
    })
}

/// Low-pass followed by slew limiting on a timestamped scalar stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFilter {
    config: ControlConfig,
    state: Option<(f64, f64, f64)>,
}

impl SignalFilter {
    pub fn new(config: ControlConfig) -> Self {
        SignalFilter { config, state: None }
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn push(&mut self, t: f64, v: f64) -> Result<f64> {
        let (x, y) = match self.state {
            None => (v, v),
            Some((prev, x, y)) => {
                if !(t > prev) {
                    return Err(Error::OutOfOrder { t, prev });
                }
                let dt = t - prev;
                let x = if self.config.time_constant > 0.0 {
                    x + (v - x) * (1.0 - (-dt / self.config.time_constant).exp())
                } else {
                    v
                };
                let step = self.config.slew_rate * dt;
                (x, y + (x - y).clamp(-step, step))
            }
        };
        self.state = Some((t, x, y));
        Ok(y.clamp(0.0, 100.0))
    }
}

/// Streaming engine over one volume; owns the filter state of one stream.
#[derive(Debug, Clone)]
pub struct ControlEngine<'a> {
    volume: &'a InterpolationVolume,
    config: ControlConfig,
    filter: SignalFilter,
    last_t: Option<f64>,
    basis: Option<InterpolatedBasis>,
}

impl<'a> ControlEngine<'a> {
    pub fn new(volume: &'a InterpolationVolume, config: ControlConfig) -> Self {
        ControlEngine {
            volume,
            config,
            filter: SignalFilter::new(config),
            last_t: None,
            basis: None,
        }
    }

    pub fn volume(&self) -> &InterpolationVolume {
        self.volume
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    /// Basis used for the most recent frame.
    pub fn last_basis(&self) -> Option<&InterpolatedBasis> {
        self.basis.as_ref()
    }

    pub fn push(&mut self, frame: &Frame) -> Result<ControlSample> {
        if let Some(prev) = self.last_t {
            if !(frame.t > prev) {
                return Err(Error::OutOfOrder { t: frame.t, prev });
            }
        }
        if frame.q.len() != self.volume.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.volume.dof(),
                got: frame.q.len(),
            });
        }
        let basis = self.volume.interpolate(&frame.hand.position)?;
        let mut sample = sample_from(&basis, frame, self.config.invert)?;
        sample.value = self.filter.push(frame.t, sample.instant)?;
        self.last_t = Some(frame.t);
        self.basis = Some(basis);
        Ok(sample)
    }
}

/// Filtered control samples for a time-ordered frame sequence.
pub fn stream(volume: &InterpolationVolume, config: ControlConfig, frames: &[Frame]) -> Result<Vec<ControlSample>> {
    config.validate()?;
    let mut engine = ControlEngine::new(volume, config);
    frames.iter().map(|f| engine.push(f)).collect()
}

/// Write `t,raw,value,inside_hull` CSV.
pub fn write_signal_csv(samples: &[ControlSample], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "raw", "value", "inside_hull"])?;
    for s in samples {
        w.write_record([
            s.t.to_string(),
            s.raw.to_string(),
            s.value.to_string(),
            s.inside_hull.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_signal_csv(samples: &[ControlSample], path: impl AsRef<Path>) -> Result<()> {
    write_signal_csv(samples, std::fs::File::create(path)?)
}
