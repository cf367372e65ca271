//! Kernel identification from calibration data: workspace clustering,
//! neighbourhood selection, PCA, 1-vs-2 component signal reduction,
//! projection ranges and cross-node sign alignment.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::{canonical_sign, ArmModel, JointVector};
use crate::capture::{steady_frames, CalibrationSession, Frame, SteadyParams};
use crate::error::{Error, Result};

pub const BASIS_SCHEMA: &str = "ikk-basis/1";

/// Serde adapter storing a `DVector<f64>` as a plain JSON array.
pub(crate) mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
            Ok(Vec::<Vec<f64>>::deserialize(d)?
                .into_iter()
                .map(DVector::from_vec)
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn center(&self) -> Vector3<f64> {
        (Vector3::from(self.min) + Vector3::from(self.max)) / 2.0
    }

    /// Initial centroid candidates on the box surface: 8 corners, then the
    /// face centres top, bottom, +x, −x, +y, −y, then the 12 edge midpoints.
    pub fn surface_seeds(&self) -> Vec<Vector3<f64>> {
        let [x0, y0, z0] = self.min;
        let [x1, y1, z1] = self.max;
        let c = self.center();
        let mut seeds = Vec::with_capacity(26);
        for &z in &[z0, z1] {
            for &y in &[y0, y1] {
                for &x in &[x0, x1] {
                    seeds.push(Vector3::new(x, y, z));
                }
            }
        }
        seeds.extend([
            Vector3::new(c.x, c.y, z1),
            Vector3::new(c.x, c.y, z0),
            Vector3::new(x1, c.y, c.z),
            Vector3::new(x0, c.y, c.z),
            Vector3::new(c.x, y1, c.z),
            Vector3::new(c.x, y0, c.z),
        ]);
        for &z in &[z0, z1] {
            for &y in &[y0, y1] {
                seeds.push(Vector3::new(c.x, y, z));
            }
            for &x in &[x0, x1] {
                seeds.push(Vector3::new(x, c.y, z));
            }
        }
        for &y in &[y0, y1] {
            for &x in &[x0, x1] {
                seeds.push(Vector3::new(x, y, c.z));
            }
        }
        seeds
    }
}

pub fn bounding_box(points: &[Vector3<f64>]) -> Result<BoundingBox> {
    let first = points
        .first()
        .ok_or_else(|| Error::InsufficientData("bounding box of empty point set".into()))?;
    let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    Ok(BoundingBox {
        min: lo.into(),
        max: hi.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub centroids: Vec<Vector3<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub inertia: f64,
    /// Inertia after each centroid update.
    pub inertia_trace: Vec<f64>,
}

fn nearest(p: &Vector3<f64>, centroids: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn inertia(points: &[Vector3<f64>], centroids: &[Vector3<f64>], assign: &[usize]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &a)| (p - centroids[a]).norm_squared())
        .sum()
}

/// Lloyd iterations with centroids initialised on the bounding-box surface.
pub fn kmeans(points: &[Vector3<f64>], k: usize, max_iter: usize) -> Result<ClusterSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds point count {}",
            points.len()
        )));
    }
    let bbox = bounding_box(points)?;
    let seeds = bbox.surface_seeds();
    if k > seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} box-surface seeds",
            seeds.len()
        )));
    }
    kmeans_from(points, seeds[..k].to_vec(), max_iter)
}

/// Lloyd iterations from the given initial centroids. An emptied cluster is
/// re-seeded at the point farthest from its assigned centroid.
pub fn kmeans_from(points: &[Vector3<f64>], mut centroids: Vec<Vector3<f64>>, max_iter: usize) -> Result<ClusterSet> {
    let k = centroids.len();
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= {}, got {k}",
            points.len()
        )));
    }
    let mut assign: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let mut trace = Vec::new();
    loop {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if assign.as_ref() == Some(&next) || iterations >= max_iter.max(1) {
            assign = Some(next);
            break;
        }
        let mut current = next;
        // Update step with empty-cluster re-seeding.
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&current) {
            sums[a] += p;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .zip(&current)
                    .enumerate()
                    .filter(|(_, (_, &a))| counts[a] > 1)
                    .map(|(i, (p, &a))| (i, (p - centroids[a]).norm_squared()))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i);
                if let Some(i) = far {
                    counts[current[i]] -= 1;
                    current[i] = c;
                    counts[c] = 1;
                    centroids[c] = points[i];
                }
            }
        }
        iterations += 1;
        trace.push(inertia(points, &centroids, &current));
        assign = Some(current);
    }
    let assignments = assign.expect("loop assigns before breaking");
    Ok(ClusterSet {
        inertia: inertia(points, &centroids, &assignments),
        centroids,
        assignments,
        iterations,
        inertia_trace: trace,
    })
}

/// Frames whose hand lies within `radius` of `centroid`.
pub fn select_neighborhood(frames: &[Frame], centroid: &Vector3<f64>, radius: f64) -> Result<Vec<Frame>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be > 0, got {radius}")));
    }
    let n = frames.first().map_or(0, |f| f.q.len());
    let out: Vec<Frame> = frames
        .iter()
        .filter(|f| (f.hand.position - centroid).norm() <= radius)
        .cloned()
        .collect();
    if out.len() < n + 1 {
        return Err(Error::InsufficientData(format!(
            "{} frames within {radius} m of the centroid, need > {n}",
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalBasis {
    pub mean: DVector<f64>,
    /// Orthonormal, by descending variance.
    pub components: Vec<DVector<f64>>,
    /// Eigenvalues of the sample covariance, descending.
    pub variances: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Covariance eigen-decomposition of the rows of `samples` (`m × n`, `m > n`).
/// Each component is signed so its largest-magnitude entry is positive.
pub fn pca(samples: &DMatrix<f64>) -> Result<PrincipalBasis> {
    let (m, n) = samples.shape();
    if m <= n {
        return Err(Error::InsufficientData(format!(
            "PCA needs more samples than dimensions: {m} samples, {n} dims"
        )));
    }
    let mean: DVector<f64> = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let variances: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = variances.iter().sum();
    if !(total > f64::EPSILON * mean.norm().max(1.0).powi(2)) {
        return Err(Error::ZeroVariance);
    }
    let components = order
        .iter()
        .map(|&i| {
            let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
            canonical_sign(&mut v);
            v
        })
        .collect();
    Ok(PrincipalBasis {
        mean,
        components,
        explained_variance_ratio: variances.iter().map(|v| v / total).collect(),
        variances,
    })
}

/// PCA over a list of joint vectors.
pub fn pca_of(samples: &[JointVector]) -> Result<PrincipalBasis> {
    let n = samples.first().map_or(0, |s| s.len());
    pca(&DMatrix::from_fn(samples.len(), n, |r, c| samples[r][c]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalMode {
    /// Signed projection on the first component.
    OnePC,
    /// Norm of the projection on the first two components.
    TwoPC,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalBasis {
    pub label: String,
    pub node_position: [f64; 3],
    pub mode: SignalMode,
    #[serde(with = "dvec")]
    pub mean: DVector<f64>,
    #[serde(with = "dvec::list")]
    pub directions: Vec<DVector<f64>>,
    /// `[proj_min, proj_max]` for `OnePC`, `[radial_min, radial_max]` for `TwoPC`.
    pub range: [f64; 2],
    pub explained_variance_ratio: Vec<f64>,
}

impl SignalBasis {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.node_position)
    }

    pub fn span(&self) -> f64 {
        self.range[1] - self.range[0]
    }

    /// Projection coordinate of `q`: signed for `OnePC`, radial for `TwoPC`.
    pub fn coordinate(&self, q: &JointVector) -> f64 {
        let c = q - &self.mean;
        match self.mode {
            SignalMode::OnePC => self.directions[0].dot(&c),
            SignalMode::TwoPC => self.directions[0].dot(&c).hypot(self.directions[1].dot(&c)),
        }
    }
}

/// `OnePC` when the first component explains at least `threshold` of the
/// variance (boundary inclusive), else `TwoPC`. Ranges are left at zero.
pub fn choose_signal_basis(basis: &PrincipalBasis, node_position: Vector3<f64>, threshold: f64) -> Result<SignalBasis> {
    let first = *basis
        .explained_variance_ratio
        .first()
        .ok_or_else(|| Error::InsufficientData("empty principal basis".into()))?;
    let (mode, count) = if first >= threshold {
        (SignalMode::OnePC, 1)
    } else {
        (SignalMode::TwoPC, 2)
    };
    if basis.components.len() < count {
        return Err(Error::InsufficientData(
            "two components required but only one available".into(),
        ));
    }
    Ok(SignalBasis {
        label: String::new(),
        node_position: node_position.into(),
        mode,
        mean: basis.mean.clone(),
        directions: basis.components[..count].to_vec(),
        range: [0.0, 0.0],
        explained_variance_ratio: basis.explained_variance_ratio.clone(),
    })
}

/// Min/max of the projection coordinate over `frames`.
pub fn projection_range(frames: &[Frame], basis: &SignalBasis) -> Result<SignalBasis> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "projection range needs >= 2 frames, got {}",
            frames.len()
        )));
    }
    let (lo, hi) = frames
        .iter()
        .map(|f| basis.coordinate(&f.q))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-6 {
        return Err(Error::DegenerateRange { span: hi - lo });
    }
    let mut out = basis.clone();
    out.range = [lo, hi];
    Ok(out)
}

/// Parent index of every node in the Euclidean minimum spanning tree rooted
/// at node 0 (Prim), together with the visiting order.
pub fn spanning_tree(positions: &[Vector3<f64>]) -> (Vec<Option<usize>>, Vec<usize>) {
    let m = positions.len();
    let mut parent = vec![None; m];
    let mut in_tree = vec![false; m];
    let mut best = vec![(f64::INFINITY, 0usize); m];
    let mut order = Vec::with_capacity(m);
    if m == 0 {
        return (parent, order);
    }
    best[0] = (0.0, 0);
    for _ in 0..m {
        let u = (0..m)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .expect("nodes remain");
        in_tree[u] = true;
        if u != 0 {
            parent[u] = Some(best[u].1);
        }
        order.push(u);
        for v in 0..m {
            if !in_tree[v] {
                let d = (positions[u] - positions[v]).norm();
                if d < best[v].0 {
                    best[v] = (d, u);
                }
            }
        }
    }
    (parent, order)
}

/// Flip directions so every node agrees in sign with its spanning-tree parent.
pub fn align_signs(bases: &[SignalBasis]) -> Vec<SignalBasis> {
    let mut out = bases.to_vec();
    let positions: Vec<_> = bases.iter().map(|b| b.position()).collect();
    let (parent, order) = spanning_tree(&positions);
    for &u in &order {
        let Some(p) = parent[u] else { continue };
        let (par, child) = if p < u {
            let (a, b) = out.split_at_mut(u);
            (&a[p], &mut b[0])
        } else {
            let (a, b) = out.split_at_mut(p);
            (&b[0], &mut a[u])
        };
        if par.directions[0].dot(&child.directions[0]) < 0.0 {
            child.directions[0].neg_mut();
            if child.mode == SignalMode::OnePC {
                child.range = [-child.range[1], -child.range[0]];
            }
        }
        if child.mode == SignalMode::TwoPC
            && par.directions.len() > 1
            && par.directions[1].dot(&child.directions[1]) < 0.0
        {
            child.directions[1].neg_mut();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub steady: SteadyParams,
    /// m
    pub neighborhood_radius: f64,
    pub variance_threshold: f64,
    pub kmeans_max_iter: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            steady: SteadyParams::default(),
            neighborhood_radius: 0.05,
            variance_threshold: 0.80,
            kmeans_max_iter: 100,
        }
    }
}

/// Full identification pipeline: steady-segment selection, pooled k-means
/// with one cluster per calibration point, neighbourhood PCA, signal
/// reduction, projection ranges and sign alignment. Output follows the
/// session's point order.
pub fn identify_session(session: &CalibrationSession, config: &IdentifyConfig) -> Result<Vec<SignalBasis>> {
    let mut pooled: Vec<Frame> = Vec::new();
    let mut source: Vec<usize> = Vec::new();
    for (i, p) in session.points.iter().enumerate() {
        let frames = steady_frames(&p.recording, &config.steady).map_err(|e| e.at_node(&p.label))?;
        if frames.is_empty() {
            return Err(Error::InsufficientData("no steady frames".into()).at_node(&p.label));
        }
        source.extend(std::iter::repeat(i).take(frames.len()));
        pooled.extend(frames);
    }
    let k = session.points.len();
    let positions: Vec<Vector3<f64>> = pooled.iter().map(|f| f.hand.position).collect();
    let clusters = kmeans(&positions, k, config.kmeans_max_iter)?;

    // Each cluster stands for the calibration point contributing most of its frames.
    let mut cluster_of_point = vec![None; k];
    for c in 0..k {
        let mut counts = vec![0usize; k];
        for (&a, &s) in clusters.assignments.iter().zip(&source) {
            if a == c {
                counts[s] += 1;
            }
        }
        let (point, &count) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("k >= 1");
        if count == 0 {
            continue;
        }
        if cluster_of_point[point].replace(c).is_some() {
            return Err(Error::InsufficientData("two clusters claim the same calibration point".into())
                .at_node(&session.points[point].label));
        }
    }

    let mut bases = Vec::with_capacity(k);
    for (i, p) in session.points.iter().enumerate() {
        let node = || p.label.clone();
        let c = cluster_of_point[i]
            .ok_or_else(|| Error::InsufficientData("no cluster matched this point".into()).at_node(node()))?;
        let centroid = clusters.centroids[c];
        let near = select_neighborhood(&pooled, &centroid, config.neighborhood_radius).map_err(|e| e.at_node(node()))?;
        let samples: Vec<JointVector> = near.iter().map(|f| f.q.clone()).collect();
        let pb = pca_of(&samples).map_err(|e| e.at_node(node()))?;
        let mut sb = choose_signal_basis(&pb, centroid, config.variance_threshold).map_err(|e| e.at_node(node()))?;
        sb.label = p.label.clone();
        bases.push(projection_range(&near, &sb).map_err(|e| e.at_node(node()))?);
    }
    Ok(align_signs(&bases))
}

/// The `ikk-basis/1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFile {
    pub schema: String,
    pub model: ArmModel,
    pub config: IdentifyConfig,
    pub nodes: Vec<SignalBasis>,
}

impl BasisFile {
    pub fn new(model: ArmModel, config: IdentifyConfig, nodes: Vec<SignalBasis>) -> Self {
        BasisFile {
            schema: BASIS_SCHEMA.to_string(),
            model,
            config,
            nodes,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: BasisFile = serde_json::from_str(s)?;
        if file.schema != BASIS_SCHEMA {
            return Err(Error::Schema {
                expected: BASIS_SCHEMA.into(),
                found: file.schema,
            });
        }
        file.model.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn bounding_box_cases() {
        assert!(bounding_box(&[]).is_err());
        let p = Vector3::new(1.0, -2.0, 3.0);
        let b = bounding_box(&[p]).unwrap();
        assert_eq!((b.min, b.max), (p.into(), p.into()));
        let corners: Vec<_> = (0..8)
            .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let b = bounding_box(&corners).unwrap();
        assert_eq!((b.min, b.max), ([0.0; 3], [1.0; 3]));
    }

    #[test]
    fn bounding_box_matches_one_pass_min_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..1000)
            .map(|_| Vector3::new(rng.gen(), rng.gen::<f64>() * 4.0 - 2.0, -rng.gen::<f64>()))
            .collect();
        let mut lo = [f64::MAX; 3];
        let mut hi = [f64::MIN; 3];
        for p in &pts {
            for a in 0..3 {
                if p[a] < lo[a] {
                    lo[a] = p[a];
                }
                if p[a] > hi[a] {
                    hi[a] = p[a];
                }
            }
        }
        let b = bounding_box(&pts).unwrap();
        assert_eq!((b.min, b.max), (lo, hi));
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let c = kmeans(&pts, 1, 10).unwrap();
        assert!((c.centroids[0] - Vector3::new(0.25, 0.5, 0.75)).norm() < 1e-15);
        assert!(kmeans(&pts, 5, 10).is_err());
        assert!(kmeans(&pts, 0, 10).is_err());
    }

    #[test]
    fn kmeans_rerun_from_converged_is_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vector3<f64>> = (0..300)
            .map(|i| {
                let base = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0), Vector3::new(1.0, 0.0, 0.0)][i % 3];
                base + Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * 0.02)
            })
            .collect();
        let first = kmeans(&pts, 3, 100).unwrap();
        let again = kmeans_from(&pts, first.centroids.clone(), 100).unwrap();
        assert_eq!(again.assignments, first.assignments);
        assert_eq!(again.iterations, 1);
        for w in first.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn kmeans_reseeds_empty_cluster() {
        // All points near one corner: most box-surface seeds start empty.
        let pts: Vec<Vector3<f64>> = (0..20)
            .map(|i| Vector3::new(i as f64 * 0.01, (i % 3) as f64 * 0.01, (i % 5) as f64 * 0.01))
            .collect();
        let c = kmeans(&pts, 6, 50).unwrap();
        let mut used = c.assignments.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 6);
    }

    #[test]
    fn neighborhood_selection() {
        let model = crate::arm::ArmModel::default();
        let q = crate::capture::rest_config(&model);
        let mut frames: Vec<Frame> = (0..10)
            .map(|i| Frame::from_config(&model, i as f64 * 0.01, q.clone()).unwrap())
            .collect();
        let center = frames[0].hand.position;
        let mut outlier = frames[0].clone();
        outlier.hand.position += Vector3::new(0.2, 0.0, 0.0);
        frames.push(outlier);
        let all = select_neighborhood(&frames, &center, f64::INFINITY).unwrap();
        assert_eq!(all.len(), 11);
        let near = select_neighborhood(&frames, &center, 0.05).unwrap();
        assert_eq!(near.len(), 10);
        assert!(select_neighborhood(&frames[..5], &center, 0.05).is_err());
        assert!(select_neighborhood(&frames, &center, 0.0).is_err());
    }

    #[test]
    fn rank_one_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, -2.0]).normalize();
        let samples: Vec<JointVector> = (0..200)
            .map(|_| {
                let s: f64 = rng.gen_range(-1.0..1.0);
                &dir * s + DVector::from_fn(7, |_, _| rng.gen_range(-1e-9..1e-9))
            })
            .collect();
        let pb = pca_of(&samples).unwrap();
        assert!(pb.explained_variance_ratio[0] >= 1.0 - 1e-6);
        assert!(pb.components[0].dot(&dir).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn pca_errors() {
        let same: Vec<JointVector> = (0..20).map(|_| DVector::from_element(7, 0.3)).collect();
        assert!(matches!(pca_of(&same), Err(Error::ZeroVariance)));
        let few: Vec<JointVector> = (0..7).map(|i| DVector::from_element(7, i as f64)).collect();
        assert!(matches!(pca_of(&few), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn pca_reconstructs_centered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = DMatrix::from_fn(100, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pb = pca(&data).unwrap();
        let comps = DMatrix::from_columns(&pb.components);
        for r in 0..100 {
            let c = data.row(r).transpose() - &pb.mean;
            let rec = &comps * (comps.transpose() * &c);
            assert!((rec - c).norm() < 1e-9);
        }
    }

    fn basis_with_ratios(r: &[f64]) -> PrincipalBasis {
        PrincipalBasis {
            mean: DVector::zeros(3),
            components: (0..r.len()).map(|i| DVector::from_fn(3, |j, _| (i == j) as u8 as f64)).collect(),
            variances: r.to_vec(),
            explained_variance_ratio: r.to_vec(),
        }
    }

    #[test]
    fn eighty_percent_rule() {
        let p = Vector3::zeros();
        let one = choose_signal_basis(&basis_with_ratios(&[0.85, 0.10, 0.05]), p, 0.8).unwrap();
        assert_eq!(one.mode, SignalMode::OnePC);
        assert_eq!(one.directions.len(), 1);
        let two = choose_signal_basis(&basis_with_ratios(&[0.60, 0.30, 0.10]), p, 0.8).unwrap();
        assert_eq!(two.mode, SignalMode::TwoPC);
        assert_eq!(two.directions.len(), 2);
        let edge = choose_signal_basis(&basis_with_ratios(&[0.80, 0.15, 0.05]), p, 0.8).unwrap();
        assert_eq!(edge.mode, SignalMode::OnePC);
        assert!(choose_signal_basis(&basis_with_ratios(&[0.6]), p, 0.8).is_err());
    }

    fn frames_from(qs: &[f64]) -> Vec<Frame> {
        let model = crate::arm::ArmModel::default();
        let base = crate::capture::rest_config(&model);
        qs.iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut q = base.clone();
                q[0] += s;
                Frame::from_config(&model, i as f64 * 0.01, q).unwrap()
            })
            .collect()
    }

    #[test]
    fn projection_range_cases() {
        let model = crate::arm::ArmModel::default();
        let base = crate::capture::rest_config(&model);
        let mut sb = SignalBasis {
            label: "n".into(),
            node_position: [0.0; 3],
            mode: SignalMode::OnePC,
            mean: base.clone(),
            directions: vec![DVector::from_fn(7, |i, _| (i == 0) as u8 as f64)],
            range: [0.0, 0.0],
            explained_variance_ratio: vec![1.0],
        };
        assert!(matches!(
            projection_range(&frames_from(&[0.0, 0.0, 0.0]), &sb),
            Err(Error::DegenerateRange { .. })
        ));
        let amp = 0.4;
        let sweep: Vec<f64> = (0..500)
            .map(|k| amp * (std::f64::consts::TAU * k as f64 / 500.0).sin())
            .collect();
        let r = projection_range(&frames_from(&sweep), &sb).unwrap();
        assert!((r.range[0] + amp).abs() < 0.02 * amp && (r.range[1] - amp).abs() < 0.02 * amp);
        let mut more = sweep.clone();
        more.push(0.9);
        let r2 = projection_range(&frames_from(&more), &sb).unwrap();
        assert!(r2.range[0] <= r.range[0] && r2.range[1] >= r.range[1]);
        sb.mode = SignalMode::TwoPC;
        sb.directions.push(DVector::from_fn(7, |i, _| (i == 1) as u8 as f64));
        let rr = projection_range(&frames_from(&sweep), &sb).unwrap();
        assert!(rr.range[0] >= 0.0);
    }

    fn line_nodes(signs: &[f64]) -> Vec<SignalBasis> {
        signs
            .iter()
            .enumerate()
            .map(|(i, &s)| SignalBasis {
                label: format!("n{i}"),
                node_position: [i as f64 * 0.1, 0.0, 0.0],
                mode: SignalMode::OnePC,
                mean: DVector::zeros(3),
                directions: vec![DVector::from_vec(vec![s, 0.1 * i as f64, 0.0]).normalize()],
                range: if s > 0.0 { [-1.0, 2.0] } else { [-2.0, 1.0] },
                explained_variance_ratio: vec![1.0],
            })
            .collect()
    }

    #[test]
    fn align_signs_restores_flipped_node() {
        let nodes = line_nodes(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(align_signs(&nodes), nodes);
        let mut flipped = nodes.clone();
        flipped[2].directions[0].neg_mut();
        flipped[2].range = [-nodes[2].range[1], -nodes[2].range[0]];
        let fixed = align_signs(&flipped);
        assert_eq!(fixed[2].directions[0], nodes[2].directions[0]);
        assert_eq!(fixed[2].range, nodes[2].range);
    }

    #[test]
    fn basis_file_schema_checked() {
        let f = BasisFile::new(ArmModel::default(), IdentifyConfig::default(), line_nodes(&[1.0, -1.0]));
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(BasisFile::from_json_str(&s).unwrap(), f);
        let bad = s.replace(BASIS_SCHEMA, "ikk-basis/0");
        assert!(matches!(BasisFile::from_json_str(&bad), Err(Error::Schema { .. })));
    }
}
