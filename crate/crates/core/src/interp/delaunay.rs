//! Incremental Bowyer–Watson Delaunay tetrahedralization.
//!
//! Exact orientation and insphere predicates come from `robust`. Ties
//! (cospherical sets such as the corners of a box) are broken by symbolically
//! perturbing each point's paraboloid lift, with the lowest node index
//! perturbed most. The outside of the hull is covered by ghost cells sharing
//! a vertex at infinity, so points beyond the current hull need no special
//! location step.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use robust::Coord3D;

use crate::error::{Error, Result};

pub(crate) const INF: usize = usize::MAX;

fn c3(p: &Vector3<f64>) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

pub fn orient3d(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    robust::orient3d(c3(a), c3(b), c3(c), c3(d))
}

pub fn insphere(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>, e: &Vector3<f64>) -> f64 {
    robust::insphere(c3(a), c3(b), c3(c), c3(d), c3(e))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Sign of the 5×5 lifted determinant for points `idx` (node indices into
/// `pts`), with the lift of node `k` raised by ε^(k+1). Equals the sign of
/// `insphere` whenever that is non-zero.
pub(crate) fn perturbed_insphere(pts: &[Vector3<f64>], idx: [usize; 5]) -> i8 {
    let p = idx.map(|i| &pts[i]);
    let s = sign(insphere(p[0], p[1], p[2], p[3], p[4]));
    if s != 0 {
        return s;
    }
    let mut order = [0usize, 1, 2, 3, 4];
    order.sort_by_key(|&k| idx[k]);
    for pos in order {
        let others: Vec<&Vector3<f64>> = (0..5).filter(|&k| k != pos).map(|k| p[k]).collect();
        let o = sign(orient3d(others[0], others[1], others[2], others[3]));
        if o != 0 {
            // Cofactor of the lift column (index 3) for row `pos`.
            return if (pos + 3) % 2 == 0 { o } else { -o };
        }
    }
    0
}

/// Delaunay tetrahedralization of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Delaunay {
    pub points: Vec<Vector3<f64>>,
    /// Positively oriented tetrahedra.
    pub tets: Vec<[usize; 4]>,
    /// Hull facets `[a, b, c]` with `orient3d(a, b, c, x) > 0` for `x` outside.
    pub hull: Vec<[usize; 3]>,
}

struct Builder<'a> {
    pts: &'a [Vector3<f64>],
    /// Cells; ghosts carry `INF` in slot 3.
    cells: Vec<[usize; 4]>,
    inserted: Vec<usize>,
}

impl Builder<'_> {
    fn in_conflict(&self, cell: &[usize; 4], p: usize) -> bool {
        let [a, b, c, d] = *cell;
        let pts = self.pts;
        if d != INF {
            return perturbed_insphere(pts, [a, b, c, d, p]) > 0;
        }
        let o = orient3d(&pts[a], &pts[b], &pts[c], &pts[p]);
        if o != 0.0 {
            return o > 0.0;
        }
        // On the facet plane: the ghost's circumsphere degenerates to the
        // facet circumcircle, tested through any point strictly inside.
        let q = self
            .inserted
            .iter()
            .copied()
            .find(|&q| orient3d(&pts[a], &pts[b], &pts[c], &pts[q]) < 0.0)
            .expect("a 3-D hull has interior-side vertices");
        perturbed_insphere(pts, [a, b, c, q, p]) < 0
    }

    fn insert(&mut self, p: usize) -> Result<()> {
        if let Some(&dup) = self.inserted.iter().find(|&&q| self.pts[q] == self.pts[p]) {
            return Err(Error::Construction(format!("nodes {dup} and {p} coincide")));
        }
        let (conflict, keep): (Vec<[usize; 4]>, Vec<[usize; 4]>) =
            self.cells.iter().partition(|c| self.in_conflict(c, p));
        if conflict.is_empty() {
            return Err(Error::Construction(format!("node {p} has an empty conflict region")));
        }
        let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
        for cell in &conflict {
            for i in 0..4 {
                let mut key = [0; 3];
                let mut k = 0;
                for (j, &v) in cell.iter().enumerate() {
                    if j != i {
                        key[k] = v;
                        k += 1;
                    }
                }
                key.sort_unstable();
                *faces.entry(key).or_default() += 1;
            }
        }
        let mut cells = keep;
        for cell in &conflict {
            for i in 0..4 {
                let mut key: Vec<usize> = (0..4).filter(|&j| j != i).map(|j| cell[j]).collect();
                key.sort_unstable();
                if faces[&[key[0], key[1], key[2]]] == 1 {
                    let mut next = *cell;
                    next[i] = p;
                    cells.push(next);
                }
            }
        }
        self.cells = cells;
        self.inserted.push(p);
        Ok(())
    }
}

/// Smallest singular value of the centred point cloud relative to its
/// extent; below `1e-9` the nodes are treated as coplanar.
pub fn flatness(points: &[Vector3<f64>]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let sv = cov.symmetric_eigenvalues().map(|v| v.max(0.0).sqrt());
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

impl Delaunay {
    /// Tetrahedralize `points`, inserting in index order.
    pub fn build(points: &[Vector3<f64>]) -> Result<Self> {
        let order: Vec<usize> = (0..points.len()).collect();
        Self::build_in_order(points, &order)
    }

    /// Tetrahedralize `points`, inserting in the given order. The result is
    /// the same for every order.
    pub fn build_in_order(points: &[Vector3<f64>], order: &[usize]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Construction(format!("need >= 4 nodes, got {}", points.len())));
        }
        if order.len() != points.len() {
            return Err(Error::InvalidArgument("insertion order must cover every node".into()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Construction("non-finite node position".into()));
        }
        if flatness(points) < 1e-9 {
            return Err(Error::Construction("nodes are coplanar".into()));
        }
        // Seed tetrahedron: first non-degenerate quadruple along `order`.
        let a = order[0];
        let b = *order
            .iter()
            .find(|&&i| points[i] != points[a])
            .ok_or_else(|| Error::Construction("all nodes coincide".into()))?;
        let c = *order
            .iter()
            .find(|&&i| {
                let n = (points[b] - points[a]).cross(&(points[i] - points[a]));
                n != Vector3::zeros() && {
                    // Exact collinearity: all three 2-D projections vanish.
                    let pa = [points[a], points[b], points[i]];
                    [(0, 1), (1, 2), (0, 2)].iter().any(|&(u, v)| {
                        robust::orient2d(
                            robust::Coord { x: pa[0][u], y: pa[0][v] },
                            robust::Coord { x: pa[1][u], y: pa[1][v] },
                            robust::Coord { x: pa[2][u], y: pa[2][v] },
                        ) != 0.0
                    })
                }
            })
            .ok_or_else(|| Error::Construction("nodes are collinear".into()))?;
        let d = *order
            .iter()
            .find(|&&i| orient3d(&points[a], &points[b], &points[c], &points[i]) != 0.0)
            .ok_or_else(|| Error::Construction("nodes are coplanar".into()))?;
        let mut seed = [a, b, c, d];
        if orient3d(&points[a], &points[b], &points[c], &points[d]) < 0.0 {
            seed.swap(0, 1);
        }
        let mut cells = vec![seed];
        for i in 0..4 {
            let mut f: Vec<usize> = (0..4).filter(|&j| j != i).map(|j| seed[j]).collect();
            if orient3d(&points[f[0]], &points[f[1]], &points[f[2]], &points[seed[i]]) > 0.0 {
                f.swap(0, 1);
            }
            cells.push([f[0], f[1], f[2], INF]);
        }
        let mut builder = Builder {
            pts: points,
            cells,
            inserted: seed.to_vec(),
        };
        for &p in order {
            if !seed.contains(&p) {
                builder.insert(p)?;
            }
        }
        let mut tets: Vec<[usize; 4]> = builder.cells.iter().filter(|c| c[3] != INF).copied().collect();
        let mut hull: Vec<[usize; 3]> = builder
            .cells
            .iter()
            .filter(|c| c[3] == INF)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        for t in &mut tets {
            *t = canonical_tet(*t);
        }
        for f in &mut hull {
            *f = canonical_face(*f);
        }
        tets.sort_unstable();
        hull.sort_unstable();
        Ok(Delaunay {
            points: points.to_vec(),
            tets,
            hull,
        })
    }

    /// `1` strictly inside the hull, `0` on its boundary, `-1` outside.
    pub fn hull_side(&self, q: &Vector3<f64>) -> i8 {
        let mut side = 1;
        for f in &self.hull {
            let o = orient3d(&self.points[f[0]], &self.points[f[1]], &self.points[f[2]], q);
            if o > 0.0 {
                return -1;
            }
            if o == 0.0 {
                side = 0;
            }
        }
        side
    }
}

/// Rotate an even permutation so the smallest index leads.
fn canonical_tet(t: [usize; 4]) -> [usize; 4] {
    let m = (0..4).min_by_key(|&i| t[i]).unwrap();
    // Even permutations bringing position m to the front.
    let r = match m {
        0 => t,
        1 => [t[1], t[0], t[3], t[2]],
        2 => [t[2], t[3], t[0], t[1]],
        _ => [t[3], t[2], t[1], t[0]],
    };
    // Among the cyclic rotations of the last three (even), pick the smallest second entry.
    let rots = [[r[0], r[1], r[2], r[3]], [r[0], r[2], r[3], r[1]], [r[0], r[3], r[1], r[2]]];
    *rots.iter().min().unwrap()
}

fn canonical_face(f: [usize; 3]) -> [usize; 3] {
    *[f, [f[1], f[2], f[0]], [f[2], f[0], f[1]]].iter().min().unwrap()
}

/// Circumcentre and squared radius of a tetrahedron.
pub fn circumsphere(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    let (ba, ca, da) = (b - a, c - a, d - a);
    let m = Matrix3::from_rows(&[ba.transpose(), ca.transpose(), da.transpose()]);
    let rhs = Vector3::new(ba.norm_squared(), ca.norm_squared(), da.norm_squared()) / 2.0;
    let x = m.lu().solve(&rhs)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((a + x, x.norm_squared()))
}
