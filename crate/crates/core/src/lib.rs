//! Implicit Kinematic Kernel: null-space identification of a redundant arm
//! from motion data, natural-neighbour interpolation of the identified
//! kernel over the hand workspace, and a real-time 0–100 control signal.

pub mod arm;
pub mod capture;
pub mod control;
pub mod error;
pub mod experiments;
pub mod identify;
pub mod interp;
pub mod simuser;

pub use arm::{ArmModel, HandPose, JacobianMatrix, JointVector, RevoluteJoint, TaskSpace};
pub use capture::{CalibrationPoint, CalibrationSession, Frame, Recording, SteadyParams};
pub use control::{ControlConfig, ControlEngine, ControlSample};
pub use error::{Error, Result};
pub use identify::{IdentifyConfig, SignalBasis, SignalMode};
pub use interp::{InterpolatedBasis, InterpolationVolume};
pub use simuser::SimUserGains;
