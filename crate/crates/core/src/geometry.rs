//! Simplices, triangulations, point location and triangulation validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Cmp, LinearProgram, LpOutcome};

pub type Point = DVector<f64>;
pub type VertexLabel = u32;

/// Default slack on barycentric coordinates for containment tests.
pub const CONTAINMENT_TOL: f64 = 1e-9;
/// Relative threshold on the edge-matrix determinant.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Default Monte Carlo sample count for the cover check.
pub const DEFAULT_COVER_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexId(pub u32);

impl fmt::Display for SimplexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FacetRole {
    Exit,
    Restricted,
}

/// A facet together with its outward unit normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub simplex: SimplexId,
    /// Index of the vertex the facet does not contain.
    pub index: usize,
    pub normal: Point,
    pub role: FacetRole,
}

/// Convex hull of n+1 affinely independent points in R^n.
#[derive(Clone, Debug)]
pub struct Simplex {
    id: SimplexId,
    vertices: Vec<Point>,
    // inverse of the (n+1)x(n+1) matrix whose columns are [v_i; 1]
    bary: DMatrix<f64>,
}

impl Simplex {
    pub fn new(id: SimplexId, vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::DegenerateSimplex { id, detail: "needs at least two vertices".into() });
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != n) {
            return Err(Error::DegenerateSimplex {
                id,
                detail: format!("{} vertices need ambient dimension {n}, found a point of dimension {}", n + 1, v.len()),
            });
        }
        let edges = DMatrix::from_fn(n, n, |r, c| vertices[c + 1][r] - vertices[0][r]);
        let mut max_edge: f64 = 0.0;
        for (i, a) in vertices.iter().enumerate() {
            for b in &vertices[i + 1..] {
                max_edge = max_edge.max((a - b).norm());
            }
        }
        let det = edges.determinant();
        if !(det.abs() >= DEGENERACY_TOL * max_edge.powi(n as i32)) || max_edge == 0.0 {
            return Err(Error::DegenerateSimplex {
                id,
                detail: format!("vertices are affinely dependent (|det| = {:.3e}, max edge {max_edge:.3e})", det.abs()),
            });
        }
        let homog = DMatrix::from_fn(n + 1, n + 1, |r, c| if r < n { vertices[c][r] } else { 1.0 });
        let bary = homog.try_inverse().ok_or_else(|| Error::DegenerateSimplex {
            id,
            detail: "vertex matrix is singular".into(),
        })?;
        Ok(Simplex { id, vertices, bary })
    }

    pub fn id(&self) -> SimplexId {
        self.id
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Point {
        &self.vertices[i]
    }

    /// Coefficients λ with Σλ_i = 1 and Σλ_i v_i = point.
    pub fn barycentric(&self, point: &Point) -> DVector<f64> {
        let n = self.dim();
        let mut h = DVector::from_element(n + 1, 1.0);
        h.rows_mut(0, n).copy_from(point);
        &self.bary * h
    }

    pub fn contains(&self, point: &Point, tol: f64) -> bool {
        self.barycentric(point).iter().all(|&l| l >= -tol)
    }

    /// Outward unit normal of the facet opposite vertex `index`.
    pub fn facet_normal(&self, index: usize) -> Result<Point> {
        let n = self.dim();
        if index > n {
            return Err(Error::FacetIndex { id: self.id, index, dim: n });
        }
        // λ_index grows towards the opposite vertex, so its gradient points inward.
        let grad: Point = self.bary.row(index).columns(0, n).transpose();
        Ok(-grad.normalize())
    }

    pub fn facet(&self, index: usize, role: FacetRole) -> Result<Facet> {
        Ok(Facet { simplex: self.id, index, normal: self.facet_normal(index)?, role })
    }

    pub fn centroid(&self) -> Point {
        let mut c = Point::zeros(self.dim());
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len() as f64
    }

    /// Closest point of the simplex to `point` (Euclidean).
    pub fn closest_point(&self, point: &Point) -> Point {
        closest_on_hull(&self.vertices, point)
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(self.vertices.iter())
    }
}

fn bounding_box<'a>(mut points: impl Iterator<Item = &'a Point>) -> (Point, Point) {
    let first = points.next().expect("non-empty point set");
    let (mut lo, mut hi) = (first.clone(), first.clone());
    for p in points {
        for k in 0..p.len() {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn closest_on_hull(verts: &[Point], p: &Point) -> Point {
    if verts.len() == 1 {
        return verts[0].clone();
    }
    let m = verts.len() - 1;
    let e = DMatrix::from_fn(p.len(), m, |r, c| verts[c + 1][r] - verts[0][r]);
    let gram = e.transpose() * &e;
    if let Some(a) = gram.lu().solve(&(e.transpose() * (p - &verts[0]))) {
        let w0 = 1.0 - a.sum();
        if w0 >= 0.0 && a.iter().all(|&x| x >= 0.0) {
            return &verts[0] + &e * a;
        }
    }
    let mut best: Option<(f64, Point)> = None;
    for skip in 0..verts.len() {
        let sub: Vec<Point> = verts.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v.clone()).collect();
        let q = closest_on_hull(&sub, p);
        let d = (&q - p).norm();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, q));
        }
    }
    best.expect("at least one facet").1
}

/// Linear inequality c·s ≤ d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        HalfSpace { normal, offset }
    }

    pub fn value(&self, p: &Point) -> f64 {
        self.normal.iter().zip(p.iter()).map(|(c, x)| c * x).sum::<f64>() - self.offset
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.value(p) <= tol
    }
}

pub fn region_contains(region: &[HalfSpace], p: &Point, tol: f64) -> bool {
    region.iter().all(|h| h.contains(p, tol))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Simplex(SimplexId),
    Boundary,
}

/// A set of simplices over a shared vertex table.
#[derive(Clone, Debug)]
pub struct Triangulation {
    dim: usize,
    vertices: BTreeMap<VertexLabel, Point>,
    simplices: Vec<Simplex>,
    labels: Vec<Vec<VertexLabel>>,
    index: BTreeMap<SimplexId, usize>,
    adjacency: BTreeMap<(SimplexId, usize), Neighbor>,
}

impl Triangulation {
    pub fn new(vertices: BTreeMap<VertexLabel, Point>, simplices: Vec<(SimplexId, Vec<VertexLabel>)>) -> Result<Self> {
        let dim = vertices.values().next().map(|p| p.len()).unwrap_or(0);
        if let Some((l, p)) = vertices.iter().find(|(_, p)| p.len() != dim) {
            return Err(Error::Dimension(format!("vertex {l} has dimension {}, expected {dim}", p.len())));
        }
        let mut simplices = simplices;
        simplices.sort_by_key(|(id, _)| *id);
        let mut built = Vec::with_capacity(simplices.len());
        let mut labels = Vec::with_capacity(simplices.len());
        let mut index = BTreeMap::new();
        for (id, ls) in simplices {
            if index.insert(id, built.len()).is_some() {
                return Err(Error::Duplicate { what: "simplex id", value: id.0 });
            }
            if ls.len() != dim + 1 {
                return Err(Error::DegenerateSimplex {
                    id,
                    detail: format!("expected {} vertices in dimension {dim}, got {}", dim + 1, ls.len()),
                });
            }
            let pts = ls
                .iter()
                .map(|l| vertices.get(l).cloned().ok_or(Error::UnknownVertex { id, label: *l }))
                .collect::<Result<Vec<_>>>()?;
            built.push(Simplex::new(id, pts)?);
            labels.push(ls);
        }

        let mut by_facet: BTreeMap<Vec<VertexLabel>, Vec<(SimplexId, usize)>> = BTreeMap::new();
        for (s, ls) in built.iter().zip(&labels) {
            for i in 0..=dim {
                let mut key: Vec<_> = ls.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, l)| *l).collect();
                key.sort_unstable();
                by_facet.entry(key).or_default().push((s.id(), i));
            }
        }
        let mut adjacency = BTreeMap::new();
        for owners in by_facet.values() {
            for &(id, i) in owners {
                let other = owners.iter().find(|(o, _)| *o != id).map(|(o, _)| Neighbor::Simplex(*o));
                adjacency.insert((id, i), other.unwrap_or(Neighbor::Boundary));
            }
        }
        Ok(Triangulation { dim, vertices, simplices: built, labels, index, adjacency })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &BTreeMap<VertexLabel, Point> {
        &self.vertices
    }

    /// Simplices in ascending id order.
    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SimplexId> + '_ {
        self.simplices.iter().map(|s| s.id())
    }

    pub fn simplex(&self, id: SimplexId) -> Option<&Simplex> {
        self.index.get(&id).map(|&i| &self.simplices[i])
    }

    /// Global vertex labels of a simplex, in local vertex order.
    pub fn labels(&self, id: SimplexId) -> &[VertexLabel] {
        &self.labels[self.index[&id]]
    }

    pub fn neighbor(&self, id: SimplexId, facet: usize) -> Neighbor {
        self.adjacency.get(&(id, facet)).copied().unwrap_or(Neighbor::Boundary)
    }

    /// Simplex ids containing the vertex label, with the local index of that vertex.
    pub fn incident(&self, label: VertexLabel) -> Vec<(SimplexId, usize)> {
        self.simplices
            .iter()
            .zip(&self.labels)
            .filter_map(|(s, ls)| ls.iter().position(|l| *l == label).map(|i| (s.id(), i)))
            .collect()
    }

    pub fn locate(&self, point: &Point, hint: Option<SimplexId>) -> Option<SimplexId> {
        self.locate_with_tol(point, hint, CONTAINMENT_TOL)
    }

    /// Hint first if it contains the point, otherwise the lowest containing id.
    pub fn locate_with_tol(&self, point: &Point, hint: Option<SimplexId>, tol: f64) -> Option<SimplexId> {
        if let Some(s) = hint.and_then(|h| self.simplex(h)) {
            if s.contains(point, tol) {
                return Some(s.id());
            }
        }
        self.simplices.iter().find(|s| s.contains(point, tol)).map(|s| s.id())
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(self.vertices.values())
    }

    /// Closest point of the triangulated set to `point`.
    pub fn closest_point(&self, point: &Point) -> Point {
        self.simplices
            .iter()
            .map(|s| s.closest_point(point))
            .min_by(|a, b| (a - point).norm().total_cmp(&(b - point).norm()))
            .unwrap_or_else(|| point.clone())
    }

    /// Vertex label whose point is the negation of `label`'s point.
    pub fn mirror_vertex(&self, label: VertexLabel, tol: f64) -> Option<VertexLabel> {
        let p = -self.vertices.get(&label)?;
        self.vertices.iter().find(|(_, q)| (*q - &p).amax() <= tol).map(|(l, _)| *l)
    }

    /// Map each simplex to the simplex occupying its image under s ↦ −s.
    pub fn mirror_map(&self) -> Result<BTreeMap<SimplexId, SimplexId>> {
        let tol = 1e-9;
        let mut by_set: BTreeMap<Vec<VertexLabel>, SimplexId> = BTreeMap::new();
        for (s, ls) in self.simplices.iter().zip(&self.labels) {
            let mut key = ls.clone();
            key.sort_unstable();
            by_set.insert(key, s.id());
        }
        let mut map = BTreeMap::new();
        for (s, ls) in self.simplices.iter().zip(&self.labels) {
            let mut key = ls
                .iter()
                .map(|l| {
                    self.mirror_vertex(*l, tol)
                        .ok_or_else(|| Error::Asymmetric(format!("vertex {l} has no mirror image")))
                })
                .collect::<Result<Vec<_>>>()?;
            key.sort_unstable();
            let m = by_set
                .get(&key)
                .ok_or_else(|| Error::Asymmetric(format!("simplex {} has no mirror image", s.id())))?;
            map.insert(s.id(), *m);
        }
        Ok(map)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Property (i): sampled region points outside every simplex.
    Uncovered { count: usize, examples: Vec<Vec<f64>> },
    /// Property (i): a simplex centroid violates the region inequalities.
    CentroidOutside { simplex: SimplexId },
    /// Property (ii): two simplices meet in more than the hull of their shared vertices.
    Overlap { a: SimplexId, b: SimplexId, excess: f64 },
    RegionUnbounded,
    RegionEmpty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Uncovered { count, examples } => {
                write!(f, "property (i): {count} sampled region points are not covered, e.g. {:?}", examples.first())
            }
            Violation::CentroidOutside { simplex } => write!(f, "property (i): centroid of {simplex} lies outside the region"),
            Violation::Overlap { a, b, excess } => {
                write!(f, "property (ii): {a} and {b} intersect beyond their shared face (weight {excess:.3e})")
            }
            Violation::RegionUnbounded => write!(f, "region is unbounded"),
            Violation::RegionEmpty => write!(f, "region is empty"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_triangulation(tri: &Triangulation, region: &[HalfSpace], samples: usize, seed: u64) -> ValidationReport {
    let mut violations = Vec::new();
    let n = tri.dim();

    for s in tri.simplices() {
        if !region_contains(region, &s.centroid(), 1e-9) {
            violations.push(Violation::CentroidOutside { simplex: s.id() });
        }
    }

    let mut drawn = 0;
    match region_box(region, n) {
        Err(v) => violations.push(v),
        Ok((lo, hi)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut uncovered = 0;
            let mut examples = Vec::new();
            let mut attempts = 0usize;
            let mut hint = None;
            while drawn < samples && attempts < samples.saturating_mul(1000).max(1000) {
                attempts += 1;
                let p = Point::from_fn(n, |k, _| rng.random_range(lo[k]..=hi[k]));
                if !region_contains(region, &p, 0.0) {
                    continue;
                }
                drawn += 1;
                match tri.locate(&p, hint) {
                    Some(id) => hint = Some(id),
                    None => {
                        uncovered += 1;
                        if examples.len() < 8 {
                            examples.push(p.iter().copied().collect());
                        }
                    }
                }
            }
            if uncovered > 0 {
                violations.push(Violation::Uncovered { count: uncovered, examples });
            }
        }
    }

    let boxes: Vec<_> = tri.simplices().iter().map(|s| s.bounding_box()).collect();
    for (i, a) in tri.simplices().iter().enumerate() {
        for (j, b) in tri.simplices().iter().enumerate().skip(i + 1) {
            let (alo, ahi) = &boxes[i];
            let (blo, bhi) = &boxes[j];
            if (0..n).any(|k| alo[k] > bhi[k] + 1e-12 || blo[k] > ahi[k] + 1e-12) {
                continue;
            }
            if let Some(excess) = overlap_excess(tri, a, b) {
                violations.push(Violation::Overlap { a: a.id(), b: b.id(), excess });
            }
        }
    }

    ValidationReport { samples: drawn, violations }
}

fn region_box(region: &[HalfSpace], n: usize) -> Result<(Point, Point), Violation> {
    let mut lo = Point::zeros(n);
    let mut hi = Point::zeros(n);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut lp = LinearProgram::new();
            let vars: Vec<_> =
                (0..n).map(|j| lp.add_var(if j == k { sign } else { 0.0 }, f64::NEG_INFINITY, f64::INFINITY)).collect();
            for h in region {
                lp.add_row(vars.iter().zip(&h.normal).map(|(&v, &c)| (v, c)).collect(), Cmp::Le, h.offset);
            }
            match lp.solve() {
                LpOutcome::Optimal { values, .. } => {
                    if sign > 0.0 {
                        lo[k] = values[k];
                    } else {
                        hi[k] = values[k];
                    }
                }
                LpOutcome::Unbounded => return Err(Violation::RegionUnbounded),
                LpOutcome::Infeasible => return Err(Violation::RegionEmpty),
            }
        }
    }
    Ok((lo, hi))
}

/// Largest barycentric weight `a` can put on its non-shared vertices at a
/// point also in `b`; `None` when the intersection is the shared face (or empty).
fn overlap_excess(tri: &Triangulation, a: &Simplex, b: &Simplex) -> Option<f64> {
    let la = tri.labels(a.id());
    let lb: BTreeSet<_> = tri.labels(b.id()).iter().copied().collect();
    if la.iter().all(|l| lb.contains(l)) {
        return Some(1.0);
    }
    let n = a.dim();
    let mut lp = LinearProgram::new();
    let lam: Vec<_> = la.iter().map(|l| lp.add_var(if lb.contains(l) { 0.0 } else { -1.0 }, 0.0, f64::INFINITY)).collect();
    let mu: Vec<_> = (0..=n).map(|_| lp.add_var(0.0, 0.0, f64::INFINITY)).collect();
    lp.add_row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    lp.add_row(mu.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    for k in 0..n {
        let mut row: Vec<_> = lam.iter().zip(a.vertices()).map(|(&v, p)| (v, p[k])).collect();
        row.extend(mu.iter().zip(b.vertices()).map(|(&v, p)| (v, -p[k])));
        lp.add_row(row, Cmp::Eq, 0.0);
    }
    match lp.solve() {
        LpOutcome::Optimal { objective, .. } if -objective > 1e-7 => Some(-objective),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(x: f64, y: f64) -> Point {
        Point::from_vec(vec![x, y])
    }

    fn unit() -> Simplex {
        Simplex::new(SimplexId(1), vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)]).unwrap()
    }

    // Perpendicular of the facet edge, flipped away from the opposite vertex.
    fn normal_oracle(s: &Simplex, i: usize) -> Point {
        let others: Vec<_> = (0..3).filter(|&k| k != i).map(|k| s.vertex(k).clone()).collect();
        let d = &others[1] - &others[0];
        let mut h = pt(d[1], -d[0]).normalize();
        if h.dot(&(s.vertex(i) - &others[0])) > 0.0 {
            h = -h;
        }
        h
    }

    #[test]
    fn facet_normals_of_unit_triangle() {
        let s = unit();
        assert_abs_diff_eq!(s.facet_normal(2).unwrap(), pt(0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(s.facet_normal(1).unwrap(), pt(-1.0, 0.0), epsilon = 1e-12);
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(s.facet_normal(0).unwrap(), pt(r, r), epsilon = 1e-12);
        for i in 0..3 {
            assert_abs_diff_eq!(s.facet_normal(i).unwrap(), normal_oracle(&s, i), epsilon = 1e-12);
        }
    }

    #[test]
    fn facet_index_out_of_range() {
        assert!(matches!(unit().facet_normal(3), Err(Error::FacetIndex { index: 3, .. })));
    }

    #[test]
    fn degenerate_simplex_names_id() {
        let err = Simplex::new(SimplexId(7), vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(2.0, 2.0)]).unwrap_err();
        assert!(err.to_string().contains("S7"), "{err}");
        // Tiny but well-shaped simplices pass: the guard is scale-aware.
        let tiny = 1e-6;
        assert!(Simplex::new(SimplexId(8), vec![pt(0.0, 0.0), pt(tiny, 0.0), pt(0.0, tiny)]).is_ok());
    }

    #[test]
    fn barycentric_examples() {
        let s = unit();
        assert_abs_diff_eq!(s.barycentric(&pt(1.0, 0.0)), DVector::from_vec(vec![0.0, 1.0, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(s.barycentric(&pt(0.25, 0.25)), DVector::from_vec(vec![0.5, 0.25, 0.25]), epsilon = 1e-15);
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(s.barycentric(&s.centroid()), DVector::from_element(3, third), epsilon = 1e-15);
    }

    #[test]
    fn containment() {
        let s = unit();
        assert!(s.contains(&s.centroid(), 0.0));
        assert!(s.contains(&pt(0.0, 1.0), 0.0));
        assert!(!s.contains(&pt(1.0, 1.0), 1e-9));
        assert_abs_diff_eq!(s.barycentric(&pt(1.0, 1.0))[0], -1.0, epsilon = 1e-15);
    }

    fn square() -> Triangulation {
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(1.0, 1.0)), (4, pt(0.0, 1.0))]);
        Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3]), (SimplexId(2), vec![1, 3, 4])]).unwrap()
    }

    fn unit_box() -> Vec<HalfSpace> {
        vec![
            HalfSpace::new(vec![-1.0, 0.0], 0.0),
            HalfSpace::new(vec![1.0, 0.0], 1.0),
            HalfSpace::new(vec![0.0, -1.0], 0.0),
            HalfSpace::new(vec![0.0, 1.0], 1.0),
        ]
    }

    #[test]
    fn locate_tie_break() {
        let t = square();
        let mid = pt(0.5, 0.5);
        assert_eq!(t.locate(&mid, Some(SimplexId(2))), Some(SimplexId(2)));
        assert_eq!(t.locate(&mid, Some(SimplexId(1))), Some(SimplexId(1)));
        assert_eq!(t.locate(&mid, None), Some(SimplexId(1)));
        assert_eq!(t.locate(&pt(0.2, 0.7), Some(SimplexId(1))), Some(SimplexId(2)));
        assert_eq!(t.locate(&pt(1.5, 0.5), None), None);
    }

    #[test]
    fn adjacency() {
        let t = square();
        // facet of S1 opposite vertex 2 is the diagonal 1-3
        assert_eq!(t.neighbor(SimplexId(1), 1), Neighbor::Simplex(SimplexId(2)));
        assert_eq!(t.neighbor(SimplexId(1), 0), Neighbor::Boundary);
    }

    #[test]
    fn validate_square() {
        let report = validate_triangulation(&square(), &unit_box(), 2000, 1);
        assert!(report.is_valid(), "{:?}", report.violations);
        assert_eq!(report.samples, 2000);
    }

    #[test]
    fn validate_detects_shifted_overlap() {
        let vs = BTreeMap::from([
            (1, pt(0.0, 0.0)),
            (2, pt(1.0, 0.0)),
            (3, pt(1.0, 1.0)),
            (5, pt(0.1, 0.0)),
            (6, pt(1.1, 1.0)),
            (7, pt(0.1, 1.0)),
        ]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3]), (SimplexId(2), vec![5, 6, 7])]).unwrap();
        let report = validate_triangulation(&t, &unit_box(), 500, 1);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Overlap { .. })), "{:?}", report.violations);
    }

    #[test]
    fn validate_single_simplex_against_own_facets() {
        let s = unit();
        let region: Vec<_> = (0..3)
            .map(|i| {
                let h = s.facet_normal(i).unwrap();
                let p = s.vertex((i + 1) % 3);
                HalfSpace::new(h.iter().copied().collect(), h.dot(p))
            })
            .collect();
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(0.0, 1.0))]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3])]).unwrap();
        assert!(validate_triangulation(&t, &region, 1000, 3).is_valid());
    }

    #[test]
    fn uncovered_region_is_reported() {
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(1.0, 1.0))]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3])]).unwrap();
        let report = validate_triangulation(&t, &unit_box(), 1000, 3);
        assert!(matches!(report.violations[0], Violation::Uncovered { .. }));
    }

    #[test]
    fn closest_point_on_triangle() {
        let s = unit();
        assert_abs_diff_eq!(s.closest_point(&pt(2.0, 2.0)), pt(0.5, 0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(s.closest_point(&pt(-1.0, -1.0)), pt(0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(s.closest_point(&pt(0.5, -3.0)), pt(0.5, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(s.closest_point(&pt(0.2, 0.3)), pt(0.2, 0.3), epsilon = 1e-12);
    }

    #[test]
    fn mirror_of_asymmetric_set_fails() {
        assert!(matches!(square().mirror_map(), Err(Error::Asymmetric(_))));
    }
}
