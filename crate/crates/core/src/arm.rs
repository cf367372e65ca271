//! Serial-chain model of the shoulder–elbow–wrist chain: forward kinematics,
//! geometric Jacobian and SVD-based null/range space extraction.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint-space configuration, radians.
pub type JointVector = DVector<f64>;

/// Which rows of the end-effector twist the Jacobian carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSpace {
    /// Linear and angular velocity (r = 6).
    #[default]
    Pose,
    /// Linear velocity only (r = 3).
    Position,
}

impl TaskSpace {
    pub fn rows(self) -> usize {
        match self {
            TaskSpace::Pose => 6,
            TaskSpace::Position => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevoluteJoint {
    /// Rotation axis in the joint's local frame (unit norm).
    pub axis: [f64; 3],
    /// Translation from this joint to the next one, expressed after this joint's rotation.
    pub offset: [f64; 3],
    /// `[min, max]` in radians.
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub joints: Vec<RevoluteJoint>,
    pub hand_offset: [f64; 3],
    #[serde(default)]
    pub task_space: TaskSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl HandPose {
    /// Six-vector error `(Δp, Δθ)` from `self` to `target`, with the rotational
    /// part as the world-frame rotation vector of `target * self⁻¹`.
    pub fn error_to(&self, target: &HandPose) -> nalgebra::Vector6<f64> {
        let dp = target.position - self.position;
        let dr = (target.orientation * self.orientation.inverse()).scaled_axis();
        nalgebra::Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }
}

/// Geometric Jacobian evaluated at `config`: `r × n`, linear rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub entries: DMatrix<f64>,
    pub config: JointVector,
}

impl JacobianMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

/// World-frame origin and axis of every joint plus the hand pose.
struct ChainState {
    origins: Vec<Vector3<f64>>,
    axes: Vec<Vector3<f64>>,
    hand: HandPose,
}

impl Default for ArmModel {
    /// 7-DoF arm: spherical shoulder (z, y, x), elbow (z), spherical wrist
    /// (x, z, y); upper arm 0.30 m, forearm 0.25 m, hand 0.08 m. The zero
    /// configuration points the straight arm along +x.
    fn default() -> Self {
        let shoulder = [-2.6, 2.6];
        let wrist = [-2.6, 2.6];
        let j = |axis: [f64; 3], offset: [f64; 3], limits: [f64; 2]| RevoluteJoint {
            axis,
            offset,
            limits,
        };
        ArmModel {
            joints: vec![
                j([0.0, 0.0, 1.0], [0.0; 3], shoulder),
                j([0.0, 1.0, 0.0], [0.0; 3], shoulder),
                j([1.0, 0.0, 0.0], [0.30, 0.0, 0.0], shoulder),
                j([0.0, 0.0, 1.0], [0.25, 0.0, 0.0], [0.0, 2.5]),
                j([1.0, 0.0, 0.0], [0.0; 3], wrist),
                j([0.0, 0.0, 1.0], [0.0; 3], wrist),
                j([0.0, 1.0, 0.0], [0.0; 3], wrist),
            ],
            hand_offset: [0.08, 0.0, 0.0],
            task_space: TaskSpace::Pose,
        }
    }
}

impl ArmModel {
    pub fn new(joints: Vec<RevoluteJoint>, hand_offset: [f64; 3]) -> Result<Self> {
        let model = ArmModel {
            joints,
            hand_offset,
            task_space: TaskSpace::Pose,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_task_space(mut self, task_space: TaskSpace) -> Self {
        self.task_space = task_space;
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: ArmModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidModel("at least one joint required".into()));
        }
        for (i, joint) in self.joints.iter().enumerate() {
            let norm = Vector3::from(joint.axis).norm();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: axis norm {norm} is not 1"
                )));
            }
            if !(joint.limits[0] < joint.limits[1]) {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: limits {:?} not increasing",
                    joint.limits
                )));
            }
        }
        Ok(())
    }

    /// Joint count `n`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Task-space dimension `r`.
    pub fn task_rows(&self) -> usize {
        self.task_space.rows()
    }

    pub fn is_redundant(&self) -> bool {
        self.dof() > self.task_rows()
    }

    /// Lengths of the non-zero link offsets, hand offset last.
    pub fn link_lengths(&self) -> Vec<f64> {
        self.joints
            .iter()
            .map(|j| j.offset)
            .chain(std::iter::once(self.hand_offset))
            .map(|o| Vector3::from(o).norm())
            .filter(|&l| l > 0.0)
            .collect()
    }

    pub fn lower_limits(&self) -> JointVector {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[0]))
    }

    pub fn upper_limits(&self) -> JointVector {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[1]))
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q.iter())
                .all(|(j, &v)| v >= j.limits[0] && v <= j.limits[1])
    }

    /// Clamp each coordinate into its limits; returns true if anything moved.
    pub fn clamp_to_limits(&self, q: &mut JointVector) -> bool {
        let mut clipped = false;
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            let c = v.clamp(j.limits[0], j.limits[1]);
            if c != *v {
                *v = c;
                clipped = true;
            }
        }
        clipped
    }

    /// Uniform sample inside the joint limits.
    pub fn random_config<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        DVector::from_iterator(
            self.dof(),
            self.joints
                .iter()
                .map(|j| rng.gen_range(j.limits[0]..=j.limits[1])),
        )
    }

    fn check_dims(&self, q: &JointVector) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    fn chain(&self, q: &JointVector) -> ChainState {
        let mut rot = UnitQuaternion::identity();
        let mut pos = Vector3::zeros();
        let mut origins = Vec::with_capacity(self.dof());
        let mut axes = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            let axis = Unit::new_unchecked(Vector3::from(joint.axis));
            origins.push(pos);
            axes.push(rot * axis.into_inner());
            rot *= UnitQuaternion::from_axis_angle(&axis, angle);
            pos += rot * Vector3::from(joint.offset);
        }
        pos += rot * Vector3::from(self.hand_offset);
        ChainState {
            origins,
            axes,
            hand: HandPose {
                position: pos,
                orientation: rot,
            },
        }
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Result<HandPose> {
        self.check_dims(q)?;
        Ok(self.chain(q).hand)
    }

    /// Revolute twist columns `(axis × (p_hand − p_joint); axis)`, truncated to
    /// the model's task space.
    pub fn jacobian(&self, q: &JointVector) -> Result<JacobianMatrix> {
        self.check_dims(q)?;
        let state = self.chain(q);
        let rows = self.task_rows();
        let mut entries = DMatrix::zeros(rows, self.dof());
        for (i, (origin, axis)) in state.origins.iter().zip(&state.axes).enumerate() {
            let lin = axis.cross(&(state.hand.position - origin));
            entries[(0, i)] = lin.x;
            entries[(1, i)] = lin.y;
            entries[(2, i)] = lin.z;
            if rows == 6 {
                entries[(3, i)] = axis.x;
                entries[(4, i)] = axis.y;
                entries[(5, i)] = axis.z;
            }
        }
        Ok(JacobianMatrix {
            entries,
            config: q.clone(),
        })
    }
}

/// Full set of `n` singular values and the `n × n` right singular basis.
///
/// Pads `J` with zero rows when `r < n` so the decomposition yields every
/// right singular vector, including the ones spanning the null space.
fn full_right_svd(j: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, n) = j.shape();
    let padded = if r < n {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (r, n)).copy_from(j);
        m
    } else {
        j.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let k = svd.singular_values.len();
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    // When r > n the thin SVD already has n values; when r < n padding gave n.
    debug_assert_eq!(k, n);
    let v = v_t.transpose();
    sigma.truncate(n);
    (sigma, v)
}

fn rank_threshold(sigma: &[f64], tol: f64) -> f64 {
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    tol * smax
}

/// Orthonormal basis (`n × dim N`) for the null space of `J`. Singular values
/// at or below `tol · σ_max` count as zero. One-dimensional bases are signed so
/// their largest-magnitude entry is positive.
pub fn null_space_basis(j: &JacobianMatrix, tol: f64) -> Result<DMatrix<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let n = j.cols();
    let (sigma, v) = full_right_svd(&j.entries);
    let thresh = rank_threshold(&sigma, tol);
    let mut idx: Vec<usize> = (0..n).filter(|&i| sigma[i] <= thresh).collect();
    // Order columns by ascending singular value for determinism.
    idx.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(n, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        basis.set_column(c, &v.column(i));
    }
    if basis.ncols() == 1 {
        canonical_sign(&mut basis.column_mut(0));
    }
    Ok(basis)
}

/// `(dim R(J), dim N(J))` from the singular spectrum; always sums to `n`.
pub fn range_null_dims(j: &JacobianMatrix, tol: f64) -> Result<(usize, usize)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let n = j.cols();
    let (sigma, _) = full_right_svd(&j.entries);
    let thresh = rank_threshold(&sigma, tol);
    let rank = sigma.iter().filter(|&&s| s > thresh).count();
    Ok((rank, n - rank))
}

/// Flip `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn canonical_sign<S>(v: &mut nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>)
where
    S: nalgebra::StorageMut<f64, nalgebra::Dyn, nalgebra::U1>,
{
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Homogeneous-transform composition, written independently of `chain`.
    fn fk_homogeneous(model: &ArmModel, q: &JointVector) -> Matrix4<f64> {
        let mut t: Matrix4<f64> = Matrix4::identity();
        for (joint, &a) in model.joints.iter().zip(q.iter()) {
            let [x, y, z] = joint.axis;
            let (s, c) = a.sin_cos();
            let v = 1.0 - c;
            // Rodrigues in closed form.
            #[rustfmt::skip]
            let rot = Matrix4::new(
                c + x * x * v,     x * y * v - z * s, x * z * v + y * s, 0.0,
                y * x * v + z * s, c + y * y * v,     y * z * v - x * s, 0.0,
                z * x * v - y * s, z * y * v + x * s, c + z * z * v,     0.0,
                0.0, 0.0, 0.0, 1.0,
            );
            let mut tr: Matrix4<f64> = Matrix4::identity();
            tr[(0, 3)] = joint.offset[0];
            tr[(1, 3)] = joint.offset[1];
            tr[(2, 3)] = joint.offset[2];
            t = t * rot * tr;
        }
        let mut tr: Matrix4<f64> = Matrix4::identity();
        tr[(0, 3)] = model.hand_offset[0];
        tr[(1, 3)] = model.hand_offset[1];
        tr[(2, 3)] = model.hand_offset[2];
        t * tr
    }

    #[test]
    fn zero_configuration_is_straight() {
        let model = ArmModel::default();
        let pose = model
            .forward_kinematics(&DVector::zeros(model.dof()))
            .unwrap();
        assert!((pose.position - Vector3::new(0.63, 0.0, 0.0)).norm() < 1e-15);
        assert!(pose.orientation.angle() < 1e-15);
        assert_eq!(model.link_lengths(), vec![0.30, 0.25, 0.08]);
    }

    #[test]
    fn planar_first_joint_half_turn_reflects_hand() {
        let model = ArmModel::new(
            vec![
                RevoluteJoint {
                    axis: [0.0, 0.0, 1.0],
                    offset: [0.4, 0.0, 0.0],
                    limits: [-4.0, 4.0],
                },
                RevoluteJoint {
                    axis: [0.0, 0.0, 1.0],
                    offset: [0.3, 0.0, 0.0],
                    limits: [-4.0, 4.0],
                },
            ],
            [0.0; 3],
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.0, 0.7]);
        let p = model.forward_kinematics(&q).unwrap().position;
        let qr = DVector::from_vec(vec![std::f64::consts::PI, 0.7]);
        let pr = model.forward_kinematics(&qr).unwrap().position;
        assert!((pr + p).norm() < 1e-12, "{p} vs {pr}");
    }

    #[test]
    fn fk_matches_homogeneous_chain() {
        let model = ArmModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = model.random_config(&mut rng);
            let pose = model.forward_kinematics(&q).unwrap();
            let t = fk_homogeneous(&model, &q);
            let p = Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]);
            assert!((pose.position - p).norm() < 1e-10);
            let r = pose.orientation.to_rotation_matrix();
            let rm = t.fixed_view::<3, 3>(0, 0);
            assert!((r.matrix() - rm).norm() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = ArmModel::default();
        let q = DVector::zeros(3);
        assert!(matches!(
            model.forward_kinematics(&q),
            Err(Error::DimensionMismatch { expected: 7, got: 3 })
        ));
        assert!(model.jacobian(&q).is_err());
    }

    #[test]
    fn zero_moment_arm_column_has_no_linear_part() {
        // Wrist joints sit at the wrist centre; with no hand offset the hand
        // coincides with their origin.
        let mut model = ArmModel::default();
        model.hand_offset = [0.0; 3];
        let q = DVector::from_vec(vec![0.2, -0.3, 0.1, 1.0, 0.4, -0.2, 0.3]);
        let j = model.jacobian(&q).unwrap();
        for c in 4..7 {
            assert!(j.entries.view((0, c), (3, 1)).norm() < 1e-15);
        }
    }

    #[test]
    fn default_model_is_redundant() {
        let model = ArmModel::default();
        assert_eq!(model.dof(), 7);
        assert!(model.is_redundant());
        assert!(!model.clone().with_task_space(TaskSpace::Position).joints.is_empty());
        assert_eq!(model.with_task_space(TaskSpace::Position).task_rows(), 3);
    }

    #[test]
    fn generic_null_space_is_one_dimensional() {
        let model = ArmModel::default();
        let q = DVector::from_vec(vec![0.3, 0.4, -0.5, 1.2, 0.3, 0.2, -0.1]);
        let j = model.jacobian(&q).unwrap();
        let b = null_space_basis(&j, 1e-9).unwrap();
        assert_eq!(b.ncols(), 1);
        assert!((b.column(0).norm() - 1.0).abs() < 1e-12);
        assert!((&j.entries * &b).norm() < 1e-12);
        assert_eq!(range_null_dims(&j, 1e-9).unwrap(), (6, 1));
    }

    #[test]
    fn six_dof_chain_has_empty_null_space() {
        let mut model = ArmModel::default();
        model.joints.remove(0);
        let q = DVector::from_vec(vec![0.3, 0.4, 1.2, 0.3, 0.2, -0.1]);
        let j = model.jacobian(&q).unwrap();
        assert_eq!(null_space_basis(&j, 1e-9).unwrap().ncols(), 0);
    }

    #[test]
    fn position_task_space_has_four_null_directions() {
        let model = ArmModel::default().with_task_space(TaskSpace::Position);
        let q = DVector::from_vec(vec![0.3, 0.4, -0.5, 1.2, 0.3, 0.2, -0.1]);
        let j = model.jacobian(&q).unwrap();
        assert_eq!(j.rows(), 3);
        let b = null_space_basis(&j, 1e-9).unwrap();
        assert_eq!(b.ncols(), 4);
        assert!((b.transpose() * &b - DMatrix::identity(4, 4)).norm() < 1e-9);
    }

    #[test]
    fn outstretched_arm_loses_rank() {
        let model = ArmModel::default();
        let q = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let j = model.jacobian(&q).unwrap();
        let (r, nul) = range_null_dims(&j, 1e-9).unwrap();
        assert!(r < 6);
        assert_eq!(r + nul, 7);
    }

    #[test]
    fn zero_matrix_dims() {
        let j = JacobianMatrix {
            entries: DMatrix::zeros(6, 7),
            config: DVector::zeros(7),
        };
        assert_eq!(range_null_dims(&j, 1e-9).unwrap(), (0, 7));
        assert_eq!(null_space_basis(&j, 1e-9).unwrap().ncols(), 7);
        assert!(null_space_basis(&j, 0.0).is_err());
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let model = ArmModel::default();
        let s = serde_json::to_string(&model).unwrap();
        assert_eq!(ArmModel::from_json_str(&s).unwrap(), model);
        let bad = r#"{"joints":[{"axis":[0,0,2],"offset":[0,0,0],"limits":[-1,1]}],"hand_offset":[0,0,0]}"#;
        assert!(ArmModel::from_json_str(bad).is_err());
        let bad = r#"{"joints":[{"axis":[0,0,1],"offset":[0,0,0],"limits":[1,1]}],"hand_offset":[0,0,0]}"#;
        assert!(ArmModel::from_json_str(bad).is_err());
        let empty = r#"{"joints":[],"hand_offset":[0,0,0]}"#;
        assert!(ArmModel::from_json_str(empty).is_err());
    }

    #[test]
    fn jacobian_is_deterministic() {
        let model = ArmModel::default();
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let a = model.jacobian(&q).unwrap();
        let b = model.jacobian(&q).unwrap();
        assert_eq!(a, b);
        let na = null_space_basis(&a, 1e-9).unwrap();
        let nb = null_space_basis(&b, 1e-9).unwrap();
        assert_eq!(na, nb);
    }
}
