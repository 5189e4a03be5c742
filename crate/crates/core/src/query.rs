//! Open-vocabulary object extraction: similarity threshold, DBSCAN, largest
//! cluster, convex-hull completion, centroid.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::SceneModel;
use crate::semantics::normalize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub similarity_threshold: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub hull_tolerance: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.6,
            dbscan_eps: 0.02,
            dbscan_min_samples: 15,
            hull_tolerance: 1e-4,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dbscan_eps > 0.0 && self.dbscan_eps.is_finite()) {
            return Err(Error::InvalidConfig("dbscan_eps must be positive".into()));
        }
        if self.dbscan_min_samples == 0 {
            return Err(Error::InvalidConfig("dbscan_min_samples must be at least 1".into()));
        }
        if !(self.hull_tolerance >= 0.0) || !self.similarity_threshold.is_finite() {
            return Err(Error::InvalidConfig("hull_tolerance must be non-negative and the threshold finite".into()));
        }
        Ok(())
    }
}

/// Indices of primitives whose decoded local feature has cosine similarity at
/// least `cfg.similarity_threshold` with `embedding`.
pub fn query_initial(scene: &SceneModel, embedding: &[f64], cfg: &QueryConfig) -> Result<Vec<usize>> {
    if embedding.len() != scene.decoder.output_dim {
        return Err(Error::DimensionMismatch(format!("query embedding has dim {}, decoder outputs {}", embedding.len(), scene.decoder.output_dim)));
    }
    let e = normalize(embedding);
    if e.iter().all(|v| *v == 0.0) {
        return Err(Error::Domain("query embedding is the zero vector".into()));
    }
    Ok(scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (local, _) = scene.decoder.decode(&p.feature);
            let sim: f64 = local.iter().zip(&e).map(|(a, b)| a * b).sum();
            (local.iter().any(|v| *v != 0.0) && sim >= cfg.similarity_threshold).then_some(i)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    /// Clusters in discovery order; members sorted ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Points in no cluster, sorted ascending.
    pub noise: Vec<usize>,
}

type Cell = (i64, i64, i64);

struct Grid<'a> {
    points: &'a [Vec3],
    eps: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vec3], eps: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell(p: &Vec3, eps: f64) -> Cell {
        ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64, (p.z / eps).floor() as i64)
    }

    /// Neighbors of point `i` within `eps`, itself included, ascending.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let c = Self::cell(p, self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        out.extend(list.iter().copied().filter(|&j| (self.points[j] - p).norm() <= self.eps));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density-based clustering with inclusive neighborhoods. Points are scanned
/// in index order; each cluster grows breadth-first from its first core point.
pub fn dbscan(points: &[Vec3], eps: f64, min_samples: usize) -> Clustering {
    assert!(eps > 0.0, "dbscan eps must be positive");
    let grid = Grid::new(points, eps);
    let neighbors: Vec<Vec<usize>> = (0..points.len()).map(|i| grid.neighbors(i)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_samples).collect();
    let mut label: Vec<Option<usize>> = vec![None; points.len()];
    let mut clusters = Vec::new();
    for i in 0..points.len() {
        if !core[i] || label[i].is_some() {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([i]);
        label[i] = Some(id);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    let noise = (0..points.len()).filter(|&i| label[i].is_none()).collect();
    Clustering { clusters, noise }
}

/// The cluster with the most members; ties go to the cluster holding the
/// smallest index.
pub fn select_target(clusters: &[Vec<usize>]) -> Result<&Vec<usize>> {
    clusters
        .iter()
        .filter(|c| !c.is_empty())
        .min_by_key(|c| (std::cmp::Reverse(c.len()), c.iter().min().copied()))
        .ok_or_else(|| Error::NoObjectFound("no cluster to select".into()))
}

/// Convex hull as outward unit-normal faces.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub vertices: Vec<Vec3>,
    /// Vertex index triples, counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
    planes: Vec<(Vec3, f64)>,
}

impl ConvexHull {
    /// Hull of `points`, or `None` when fewer than four points span a volume.
    pub fn new(points: &[Vec3]) -> Option<Self> {
        incremental_hull(points)
    }

    /// Largest signed distance of `q` from a face plane (positive outside).
    pub fn signed_distance(&self, q: &Vec3) -> f64 {
        self.planes.iter().map(|(n, d)| n.dot(q) - d).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, q: &Vec3, tol: f64) -> bool {
        self.signed_distance(q) <= tol
    }
}

fn plane_of(v: &[Vec3], f: [usize; 3]) -> (Vec3, f64) {
    let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
    let n = n / n.norm();
    (n, n.dot(&v[f[0]]))
}

/// Beneath-beyond hull: start from an extreme tetrahedron and insert the
/// remaining points in index order. Ties are broken by lowest index.
fn incremental_hull(points: &[Vec3]) -> Option<ConvexHull> {
    if points.len() < 4 {
        return None;
    }
    let extent = points.iter().map(|p| (p - points[0]).norm()).fold(0.0, f64::max);
    if extent == 0.0 {
        return None;
    }
    let eps = 1e-10 * extent.max(points.iter().map(|p| p.amax()).fold(0.0, f64::max));

    // Extreme tetrahedron: first two by max x spread, then farthest from the
    // line, then farthest from the plane.
    let argmax = |f: &dyn Fn(&Vec3) -> f64| {
        let mut best = 0;
        for i in 1..points.len() {
            if f(&points[i]) > f(&points[best]) {
                best = i;
            }
        }
        best
    };
    let mut i0 = 0;
    let mut i1 = 0;
    for axis in 0..3 {
        let lo = argmax(&|p: &Vec3| -p[axis]);
        let hi = argmax(&|p: &Vec3| p[axis]);
        if points[hi][axis] - points[lo][axis] > (points[i1] - points[i0]).norm() {
            (i0, i1) = (lo, hi);
        }
    }
    let dir = (points[i1] - points[i0]).normalize();
    let i2 = argmax(&|p: &Vec3| {
        let d = p - points[i0];
        (d - dir * d.dot(&dir)).norm()
    });
    let d2 = points[i2] - points[i0];
    if (d2 - dir * d2.dot(&dir)).norm() <= eps {
        return None;
    }
    let nrm = (points[i1] - points[i0]).cross(&d2).normalize();
    let i3 = argmax(&|p: &Vec3| (p - points[i0]).dot(&nrm).abs());
    if (points[i3] - points[i0]).dot(&nrm).abs() <= eps {
        return None;
    }

    let verts = points.to_vec();
    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for f in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let (n, d) = plane_of(&verts, f);
        faces.push(if n.dot(&interior) - d > 0.0 { [f[0], f[2], f[1]] } else { f });
    }
    let mut planes: Vec<(Vec3, f64)> = faces.iter().map(|&f| plane_of(&verts, f)).collect();

    for p in 0..points.len() {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let q = verts[p];
        let visible: Vec<bool> = planes.iter().map(|(n, d)| n.dot(&q) - d > eps).collect();
        if !visible.iter().any(|v| *v) {
            continue;
        }
        // Directed edges of visible faces whose twin lies on a hidden face.
        let mut hidden_edges = std::collections::HashSet::new();
        for (f, vis) in faces.iter().zip(&visible) {
            if !vis {
                for k in 0..3 {
                    hidden_edges.insert((f[k], f[(k + 1) % 3]));
                }
            }
        }
        let mut horizon = Vec::new();
        for (f, vis) in faces.iter().zip(&visible) {
            if *vis {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    if hidden_edges.contains(&(b, a)) {
                        horizon.push((a, b));
                    }
                }
            }
        }
        let mut kept_faces = Vec::with_capacity(faces.len());
        let mut kept_planes = Vec::with_capacity(faces.len());
        for ((f, pl), vis) in faces.iter().zip(&planes).zip(&visible) {
            if !vis {
                kept_faces.push(*f);
                kept_planes.push(*pl);
            }
        }
        for (a, b) in horizon {
            let f = [a, b, p];
            kept_planes.push(plane_of(&verts, f));
            kept_faces.push(f);
        }
        faces = kept_faces;
        planes = kept_planes;
    }
    Some(ConvexHull { vertices: verts, faces, planes })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullCompletion {
    /// Sorted union of the cluster and every primitive inside its hull.
    pub indices: Vec<usize>,
    /// The cluster spans no volume and was returned unchanged.
    pub degenerate: bool,
}

/// Adds every scene primitive whose center lies inside, or within `tol` of,
/// the convex hull of the cluster's centers.
pub fn hull_complete(cluster: &[usize], scene: &SceneModel, tol: f64) -> HullCompletion {
    let mut base: Vec<usize> = cluster.to_vec();
    base.sort_unstable();
    base.dedup();
    let pts: Vec<Vec3> = base.iter().map(|&i| scene.primitives[i].center).collect();
    let Some(hull) = ConvexHull::new(&pts) else {
        return HullCompletion {
            indices: base,
            degenerate: true,
        };
    };
    let mut indices: Vec<usize> = scene
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, p)| hull.contains(&p.center, tol))
        .map(|(i, _)| i)
        .collect();
    indices.extend(&base);
    indices.sort_unstable();
    indices.dedup();
    HullCompletion { indices, degenerate: false }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    pub initial_matches: usize,
    pub cluster_sizes: Vec<usize>,
    pub noise: usize,
    pub selected_cluster: usize,
    pub hull_degenerate: bool,
    pub hull_added: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectExtract {
    pub primitive_indices: Vec<usize>,
    pub centroid: Vec3,
    /// Axis-aligned half sizes of the member centers.
    pub extent: Vec3,
    pub diagnostics: QueryDiagnostics,
}

impl ObjectExtract {
    /// Extract with centroid and extent recomputed from `indices`.
    pub fn from_indices(scene: &SceneModel, indices: Vec<usize>, diagnostics: QueryDiagnostics) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::NoObjectFound("empty index set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= scene.len()) {
            return Err(Error::DimensionMismatch(format!("primitive index {bad} out of range for {} primitives", scene.len())));
        }
        let (centroid, extent) = centroid_extent(scene, &indices);
        Ok(Self {
            primitive_indices: indices,
            centroid,
            extent,
            diagnostics,
        })
    }
}

/// Arithmetic mean and axis-aligned half extent of the selected centers.
pub fn centroid_extent(scene: &SceneModel, indices: &[usize]) -> (Vec3, Vec3) {
    let mut sum = Vec3::zeros();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in indices {
        let c = scene.primitives[i].center;
        sum += c;
        lo = lo.inf(&c);
        hi = hi.sup(&c);
    }
    (sum / indices.len() as f64, (hi - lo) / 2.0)
}

/// Full query pipeline for one embedding.
pub fn extract_object(scene: &SceneModel, embedding: &[f64], cfg: &QueryConfig) -> Result<ObjectExtract> {
    cfg.validate()?;
    let initial = query_initial(scene, embedding, cfg)?;
    if initial.is_empty() {
        return Err(Error::NoObjectFound("no primitive passes the similarity threshold".into()));
    }
    let pts: Vec<Vec3> = initial.iter().map(|&i| scene.primitives[i].center).collect();
    let clustering = dbscan(&pts, cfg.dbscan_eps, cfg.dbscan_min_samples);
    let mapped: Vec<Vec<usize>> = clustering.clusters.iter().map(|c| c.iter().map(|&k| initial[k]).collect()).collect();
    let target = select_target(&mapped)?;
    let selected = mapped.iter().position(|c| std::ptr::eq(c, target)).expect("target comes from mapped");
    let completion = hull_complete(target, scene, cfg.hull_tolerance);
    let diagnostics = QueryDiagnostics {
        initial_matches: initial.len(),
        cluster_sizes: mapped.iter().map(Vec::len).collect(),
        noise: clustering.noise.len(),
        selected_cluster: selected,
        hull_degenerate: completion.degenerate,
        hull_added: completion.indices.len() - target.len(),
    };
    ObjectExtract::from_indices(scene, completion.indices, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use crate::scene::SplatPrimitive;
    use crate::semantics::SemanticDecoder;
    use proptest::prelude::*;

    fn scene_of(points: &[Vec3]) -> SceneModel {
        let prims = points
            .iter()
            .map(|&c| SplatPrimitive::new(c, Quat::IDENTITY, [0.01, 0.01], 0.5, [0.5; 3], 0, vec![]))
            .collect();
        SceneModel::new(prims, SemanticDecoder::zeros(0, 1, 1), [0.0; 3], 0).unwrap()
    }

    fn cube_corners() -> Vec<Vec3> {
        (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect()
    }

    #[test]
    fn dbscan_examples() {
        let one = dbscan(&[Vec3::zeros()], 0.1, 1);
        assert_eq!(one.clusters, vec![vec![0]]);
        assert!(one.noise.is_empty());

        let same = dbscan(&vec![Vec3::new(0.3, 0.3, 0.3); 20], 0.02, 15);
        assert_eq!(same.clusters, vec![(0..20).collect::<Vec<_>>()]);
        assert!(same.noise.is_empty());

        let sparse = dbscan(&[Vec3::zeros(), Vec3::x()], 0.1, 2);
        assert!(sparse.clusters.is_empty());
        assert_eq!(sparse.noise, vec![0, 1]);
    }

    #[test]
    fn select_examples() {
        let a: Vec<usize> = (10..50).collect();
        let b: Vec<usize> = (0..12).collect();
        assert_eq!(select_target(&[a.clone(), b]).unwrap(), &a);
        let c: Vec<usize> = (30..50).collect();
        let d: Vec<usize> = (5..25).collect();
        assert_eq!(select_target(&[c, d.clone()]).unwrap(), &d);
        assert!(matches!(select_target(&[]), Err(Error::NoObjectFound(_))));
    }

    #[test]
    fn hull_of_cube_contains_center_only() {
        let mut pts = cube_corners();
        pts.push(Vec3::repeat(0.5));
        pts.push(Vec3::new(0.5, 0.5, 1.5));
        let scene = scene_of(&pts);
        let r = hull_complete(&(0..8).collect::<Vec<_>>(), &scene, 1e-4);
        assert!(!r.degenerate);
        assert_eq!(r.indices, (0..9).collect::<Vec<_>>());
        let again = hull_complete(&r.indices, &scene, 1e-4);
        assert_eq!(again, r);
    }

    #[test]
    fn hull_degenerate_cases() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(0.2, 0.2, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let scene = scene_of(&pts);
        let r = hull_complete(&[0, 1, 2], &scene, 1e-4);
        assert!(r.degenerate);
        assert_eq!(r.indices, vec![0, 1, 2]);
        let r = hull_complete(&[0, 1, 2, 4], &scene, 1e-4);
        assert!(r.degenerate);
        assert_eq!(r.indices, vec![0, 1, 2, 4]);
    }

    #[test]
    fn hull_faces_are_outward() {
        let pts: Vec<Vec3> = (0..60)
            .map(|i| {
                let t = i as f64;
                Vec3::new((t * 1.3).sin(), (t * 0.7).cos(), (t * 2.1).sin() * (t * 0.3).cos())
            })
            .collect();
        let h = ConvexHull::new(&pts).unwrap();
        for p in &pts {
            assert!(h.signed_distance(p) <= 1e-9);
        }
        // Euler characteristic of a closed triangulated surface.
        let mut verts: Vec<usize> = h.faces.iter().flatten().copied().collect();
        verts.sort_unstable();
        verts.dedup();
        let edges = h.faces.len() * 3 / 2;
        assert_eq!(verts.len() + h.faces.len() - edges, 2);
    }

    proptest! {
        #[test]
        fn dbscan_permutation_invariant(seed in 0u64..500, shift in 0usize..97) {
            let mut s = seed;
            let mut pts = Vec::new();
            for i in 0..80 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let r = |k: u64| ((s >> k) & 0xffff) as f64 / 65535.0;
                let base = if i % 2 == 0 { Vec3::zeros() } else { Vec3::repeat(0.3) };
                pts.push(base + Vec3::new(r(0), r(16), r(32)) * 0.06);
            }
            let perm: Vec<usize> = (0..pts.len()).map(|i| (i * 7 + shift) % pts.len()).collect();
            let permuted: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
            let a = dbscan(&pts, 0.02, 4);
            let b = dbscan(&permuted, 0.02, 4);
            // Core-connected components are permutation invariant; border
            // points may attach to either neighbor cluster, so compare cores.
            let core_sets = |c: &Clustering, map: &dyn Fn(usize) -> usize, pts: &[Vec3]| {
                let mut sets: Vec<Vec<usize>> = c.clusters.iter().map(|cl| {
                    let mut v: Vec<usize> = cl.iter().copied()
                        .filter(|&i| pts.iter().filter(|q| (*q - pts[i]).norm() <= 0.02).count() >= 4)
                        .map(map).collect();
                    v.sort_unstable();
                    v
                }).collect();
                sets.sort();
                sets
            };
            prop_assert_eq!(core_sets(&a, &|i| i, &pts), core_sets(&b, &|i| perm[i], &permuted));
            prop_assert_eq!(a.clusters.len(), b.clusters.len());
            prop_assert_eq!(a.noise.len(), b.noise.len());
        }

        #[test]
        fn hull_completion_idempotent(seed in 0u64..300) {
            let mut s = seed;
            let pts: Vec<Vec3> = (0..40).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let r = |k: u64| ((s >> k) & 0xffff) as f64 / 65535.0;
                Vec3::new(r(0), r(16), r(32))
            }).collect();
            let scene = scene_of(&pts);
            let once = hull_complete(&(0..12).collect::<Vec<_>>(), &scene, 1e-4);
            let twice = hull_complete(&once.indices, &scene, 1e-4);
            prop_assert_eq!(once, twice);
        }
    }
}
