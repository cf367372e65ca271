//! Natural-neighbour interpolation of signal bases over the hand workspace.

pub mod delaunay;
pub mod sibson;

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::identify::{BasisFile, SignalBasis, SignalMode};

pub use delaunay::Delaunay;
pub use sibson::{sibson_detail, SibsonDetail};

pub const VOLUME_SCHEMA: &str = "ikk-volume/1";

/// Queries closer than this (relative to the node spread) snap to the node.
const SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationVolume {
    pub nodes: Vec<SignalBasis>,
    pub mode: SignalMode,
    pub model: Option<ArmModel>,
    tri: Delaunay,
    snap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedBasis {
    pub mean: DVector<f64>,
    pub directions: Vec<DVector<f64>>,
    pub mode: SignalMode,
    pub range: [f64; 2],
    /// `(node, weight)` pairs that contributed.
    pub weights: Vec<(usize, f64)>,
    pub inside_hull: bool,
}

impl InterpolatedBasis {
    pub fn span(&self) -> f64 {
        self.range[1] - self.range[0]
    }

    fn from_node(i: usize, b: &SignalBasis, inside_hull: bool) -> Self {
        InterpolatedBasis {
            mean: b.mean.clone(),
            directions: b.directions.clone(),
            mode: b.mode,
            range: b.range,
            weights: vec![(i, 1.0)],
            inside_hull,
        }
    }
}

/// Build the volume over the node positions of `bases`.
pub fn build_volume(bases: Vec<SignalBasis>) -> Result<InterpolationVolume> {
    InterpolationVolume::build(bases, None)
}

impl InterpolationVolume {
    pub fn build(nodes: Vec<SignalBasis>, model: Option<ArmModel>) -> Result<Self> {
        let mode = nodes
            .first()
            .map(|b| b.mode)
            .ok_or_else(|| Error::Construction("need >= 4 nodes, got 0".into()))?;
        if let Some(b) = nodes.iter().find(|b| b.mode != mode) {
            return Err(Error::Construction(format!(
                "mixed signal modes: node '{}' is {:?}, node '{}' is {:?}",
                nodes[0].label, mode, b.label, b.mode
            )));
        }
        let dof = nodes[0].mean.len();
        for b in &nodes {
            if b.mean.len() != dof || b.directions.iter().any(|d| d.len() != dof) {
                return Err(Error::DimensionMismatch {
                    expected: dof,
                    got: b.mean.len(),
                }
                .at_node(&b.label));
            }
        }
        let positions: Vec<Vector3<f64>> = nodes.iter().map(|b| b.position()).collect();
        let tri = Delaunay::build(&positions)?;
        let spread = positions
            .iter()
            .flat_map(|p| positions.iter().map(move |q| (p - q).norm()))
            .fold(0.0, f64::max);
        Ok(InterpolationVolume {
            nodes,
            mode,
            model,
            tri,
            snap: SNAP * spread,
        })
    }

    pub fn from_basis_file(file: &BasisFile) -> Result<Self> {
        Self::build(file.nodes.clone(), Some(file.model.clone()))
    }

    pub fn dof(&self) -> usize {
        self.nodes[0].mean.len()
    }

    pub fn tetrahedra(&self) -> &[[usize; 4]] {
        &self.tri.tets
    }

    pub fn hull(&self) -> &[[usize; 3]] {
        &self.tri.hull
    }

    pub fn triangulation(&self) -> &Delaunay {
        &self.tri
    }

    /// `1` strictly inside the node hull, `0` on it, `-1` outside.
    pub fn hull_side(&self, q: &Vector3<f64>) -> i8 {
        self.tri.hull_side(q)
    }

    fn node_at(&self, q: &Vector3<f64>) -> Option<usize> {
        self.tri.points.iter().position(|p| (p - q).norm() <= self.snap)
    }

    /// Sibson weights, or `None` when `q` is not strictly inside the hull.
    pub fn sibson_weights(&self, q: &Vector3<f64>) -> Option<Vec<(usize, f64)>> {
        if let Some(i) = self.node_at(q) {
            return Some(vec![(i, 1.0)]);
        }
        sibson_detail(&self.tri, q).map(|d| d.weights)
    }

    /// Inverse-square-distance weights over the four nearest nodes.
    pub fn fallback_weights(&self, q: &Vector3<f64>) -> Vec<(usize, f64)> {
        let mut dist: Vec<(usize, f64)> = self.tri.points.iter().map(|p| (p - q).norm()).enumerate().collect();
        dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dist.truncate(4);
        let inv: Vec<(usize, f64)> = dist.iter().map(|&(i, d)| (i, 1.0 / (d * d))).collect();
        let total: f64 = inv.iter().map(|w| w.1).sum();
        let mut w: Vec<(usize, f64)> = inv.into_iter().map(|(i, v)| (i, v / total)).collect();
        w.sort_by_key(|p| p.0);
        w
    }

    pub fn interpolate(&self, q: &Vector3<f64>) -> Result<InterpolatedBasis> {
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite hand position".into()));
        }
        if let Some(i) = self.node_at(q) {
            return Ok(InterpolatedBasis::from_node(i, &self.nodes[i], true));
        }
        let (weights, inside_hull) = match sibson_detail(&self.tri, q) {
            Some(d) => (d.weights, true),
            None => (self.fallback_weights(q), false),
        };
        self.blend(weights, inside_hull)
    }

    fn blend(&self, weights: Vec<(usize, f64)>, inside_hull: bool) -> Result<InterpolatedBasis> {
        let n = self.dof();
        let ndir = self.nodes[0].directions.len();
        let mut mean = DVector::zeros(n);
        let mut dirs = vec![DVector::zeros(n); ndir];
        let mut range = [0.0; 2];
        for &(i, w) in &weights {
            let b = &self.nodes[i];
            mean.axpy(w, &b.mean, 1.0);
            for (acc, d) in dirs.iter_mut().zip(&b.directions) {
                acc.axpy(w, d, 1.0);
            }
            range[0] += w * b.range[0];
            range[1] += w * b.range[1];
        }
        let norm = dirs[0].norm();
        if norm < 1e-6 {
            return Err(Error::DegenerateField { norm });
        }
        dirs[0] /= norm;
        if ndir > 1 {
            let proj = dirs[1].dot(&dirs[0]);
            let d0 = dirs[0].clone();
            dirs[1].axpy(-proj, &d0, 1.0);
            let norm = dirs[1].norm();
            if norm < 1e-6 {
                return Err(Error::DegenerateField { norm });
            }
            dirs[1] /= norm;
        }
        Ok(InterpolatedBasis {
            mean,
            directions: dirs,
            mode: self.mode,
            range,
            weights,
            inside_hull,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VolumeFile {
            schema: VOLUME_SCHEMA.into(),
            mode: self.mode,
            model: self.model.clone(),
            nodes: self.nodes.clone(),
            tetrahedra: self.tri.tets.clone(),
            hull: self.tri.hull.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    /// Parse a volume document; the triangulation is rebuilt from the nodes
    /// and must match the stored tetrahedra.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: VolumeFile = serde_json::from_str(s)?;
        if file.schema != VOLUME_SCHEMA {
            return Err(Error::Schema {
                expected: VOLUME_SCHEMA.into(),
                found: file.schema,
            });
        }
        let vol = Self::build(file.nodes, file.model)?;
        if vol.mode != file.mode || vol.tri.tets != file.tetrahedra || vol.tri.hull != file.hull {
            return Err(Error::Construction(
                "stored tetrahedra do not match the rebuilt triangulation".into(),
            ));
        }
        Ok(vol)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct VolumeFile {
    schema: String,
    mode: SignalMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ArmModel>,
    nodes: Vec<SignalBasis>,
    tetrahedra: Vec<[usize; 4]>,
    hull: Vec<[usize; 3]>,
}
