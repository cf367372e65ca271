//! Sibson natural-neighbour weights: the Voronoi volume a query point
//! steals from each node, computed by clipping convex polyhedra.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::delaunay::{circumsphere, insphere, Delaunay};

/// Convex polyhedron stored as a list of planar polygon faces.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    faces: Vec<Vec<Vector3<f64>>>,
    scale: f64,
}

impl Polyhedron {
    pub fn cuboid(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        let v = |i: usize| Vector3::new([lo.x, hi.x][i & 1], [lo.y, hi.y][(i >> 1) & 1], [lo.z, hi.z][(i >> 2) & 1]);
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        Polyhedron {
            faces: quads.iter().map(|q| q.iter().map(|&i| v(i)).collect()).collect(),
            scale: (hi - lo).norm(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Keep the part with `n·x <= d`.
    pub fn clip(&self, n: &Vector3<f64>, d: f64) -> Polyhedron {
        let len = n.norm();
        let (n, d) = (n / len, d / len);
        let eps = 1e-13 * self.scale;
        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut cap: Vec<Vector3<f64>> = Vec::new();
        for face in &self.faces {
            let mut out = Vec::with_capacity(face.len() + 2);
            let m = face.len();
            for k in 0..m {
                let (p, q) = (face[k], face[(k + 1) % m]);
                let (sp, sq) = (n.dot(&p) - d, n.dot(&q) - d);
                if sp <= eps {
                    out.push(p);
                    if sp >= -eps {
                        cap.push(p);
                    }
                }
                if (sp < -eps && sq > eps) || (sp > eps && sq < -eps) {
                    let x = p + (q - p) * (sp / (sp - sq));
                    out.push(x);
                    cap.push(x);
                }
            }
            if out.len() >= 3 {
                faces.push(out);
            }
        }
        if faces.is_empty() {
            return Polyhedron { faces, scale: self.scale };
        }
        // Cap polygon: dedupe and sort by angle in the cutting plane.
        let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(cap.len());
        for p in cap {
            if !pts.iter().any(|q| (q - p).norm() <= 10.0 * eps) {
                pts.push(p);
            }
        }
        if pts.len() >= 3 {
            let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let u = (pts[0] - c).normalize();
            let w = n.cross(&u);
            pts.sort_by(|a, b| {
                let (da, db) = (a - c, b - c);
                da.dot(&w).atan2(da.dot(&u)).total_cmp(&db.dot(&w).atan2(db.dot(&u)))
            });
            faces.push(pts);
        }
        Polyhedron { faces, scale: self.scale }
    }

    pub fn volume(&self) -> f64 {
        let (sum, count) = self
            .faces
            .iter()
            .flatten()
            .fold((Vector3::zeros(), 0usize), |(s, c), p| (s + p, c + 1));
        if count == 0 {
            return 0.0;
        }
        let c = sum / count as f64;
        self.faces
            .iter()
            .map(|f| {
                let mut area = Vector3::zeros();
                for k in 1..f.len() - 1 {
                    area += (f[k] - f[0]).cross(&(f[k + 1] - f[0]));
                }
                (f[0] - c).dot(&area).abs() / 6.0
            })
            .sum()
    }
}

/// Keep the half-space of points at least as close to `a` as to `b`.
fn bisector(a: &Vector3<f64>, b: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let n = b - a;
    (n, n.dot(&((a + b) / 2.0)))
}

/// Per-query natural-neighbour geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SibsonDetail {
    /// `(node, weight)` for natural neighbours, ascending node index.
    pub weights: Vec<(usize, f64)>,
    /// Unnormalised stolen volumes, same order as `weights`.
    pub stolen: Vec<f64>,
    /// Volume of the query's own Voronoi cell.
    pub cell_volume: f64,
    /// Axis-aligned bounds enclosing the query cell.
    pub cell_bounds: (Vector3<f64>, Vector3<f64>),
}

/// Sibson weights at `q`, or `None` unless `q` lies strictly inside the hull.
pub fn sibson_detail(tri: &Delaunay, q: &Vector3<f64>) -> Option<SibsonDetail> {
    if tri.hull_side(q) != 1 {
        return None;
    }
    let pts = &tri.points;
    let conflict: Vec<&[usize; 4]> = tri
        .tets
        .iter()
        .filter(|t| insphere(&pts[t[0]], &pts[t[1]], &pts[t[2]], &pts[t[3]], q) > 0.0)
        .collect();
    let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
    let mut neighbours: Vec<usize> = Vec::new();
    for t in &conflict {
        for i in 0..4 {
            let mut key = [0; 3];
            let mut k = 0;
            for (j, &v) in t.iter().enumerate() {
                if j != i {
                    key[k] = v;
                    k += 1;
                }
            }
            key.sort_unstable();
            *faces.entry(key).or_default() += 1;
        }
        neighbours.extend_from_slice(&t[..]);
    }
    neighbours.sort_unstable();
    neighbours.dedup();

    // Vertices of the query cell are circumcentres of the new tetrahedra.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (f, &count) in &faces {
        if count == 1 {
            let (c, _) = circumsphere(&pts[f[0]], &pts[f[1]], &pts[f[2]], q)?;
            lo = lo.inf(&c);
            hi = hi.sup(&c);
        }
    }
    let pad = (hi - lo).norm() * 1e-6 + 1e-12;
    lo -= Vector3::repeat(pad);
    hi += Vector3::repeat(pad);

    let mut cell = Polyhedron::cuboid(lo, hi);
    for &j in &neighbours {
        let (n, d) = bisector(q, &pts[j]);
        cell = cell.clip(&n, d);
    }
    let cell_volume = cell.volume();
    let stolen: Vec<f64> = neighbours
        .iter()
        .map(|&i| {
            let mut part = cell.clone();
            for &j in &neighbours {
                if j != i && !part.is_empty() {
                    let (n, d) = bisector(&pts[i], &pts[j]);
                    part = part.clip(&n, d);
                }
            }
            part.volume()
        })
        .collect();
    let total: f64 = stolen.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(SibsonDetail {
        weights: neighbours.iter().zip(&stolen).map(|(&i, &s)| (i, s / total)).collect(),
        stolen,
        cell_volume,
        cell_bounds: (lo, hi),
    })
}
