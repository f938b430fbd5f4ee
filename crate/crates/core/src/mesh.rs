//! Boundary-fitted triangulations of the rectangular slab with an elliptical
//! hole, plus the two meshing strategies used inside the sampler.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::MeshError;
use crate::geometry::{closest_point_with_angle, GeometryParam, Point2};
use crate::math;

/// Minimum interior angle accepted by the quality check [deg].
pub const MIN_ANGLE_DEG: f64 = 10.0;
/// Minimum edge length accepted by the quality check, in units of `dx`.
pub const MIN_EDGE_FACTOR: f64 = 0.2;
/// Required gap between the hole and the outer boundary, in units of `dx`.
pub const CLEARANCE_FACTOR: f64 = 2.0;
/// Width of the relocation band around the hole, in units of `dx`.
pub const RELOCATION_BAND_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self { x0: 0.0, y0: 0.0, x1: 100.0, y1: 100.0 }
    }
}

impl Domain {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Independent,
    Relocated { from: GeometryParam },
    RelocationFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Point2>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[u32; 3]>,
    /// Sorted indices of nodes lying on the ellipse of `built_for`.
    pub snapped: Vec<u32>,
    /// `None` for the hole-free slab.
    pub built_for: Option<GeometryParam>,
    pub dx: f64,
    pub domain: Domain,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    pub min_angle: f64,
    pub min_edge: f64,
    pub max_aspect: f64,
}

impl TriMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Point2; 3] {
        let [i, j, k] = self.triangles[t];
        [self.nodes[i as usize], self.nodes[j as usize], self.nodes[k as usize]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        signed_area(p, q, r)
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [p, q, r] = self.corners(t);
        Point2::new((p.x + q.x + r.x) / 3.0, (p.y + q.y + r.y) / 3.0)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn is_snapped(&self, node: u32) -> bool {
        self.snapped.binary_search(&node).is_ok()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges = edge_list(&self.triangles);
        edges.dedup();
        edges
    }

    /// Edges used by exactly one triangle, oriented as in that triangle.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut directed: Vec<(u32, u32, u32, u32)> = Vec::with_capacity(3 * self.triangles.len());
        for tri in &self.triangles {
            for e in 0..3 {
                let (i, j) = (tri[e], tri[(e + 1) % 3]);
                directed.push((i.min(j), i.max(j), i, j));
            }
        }
        directed.sort_unstable();
        let mut out = Vec::new();
        let mut k = 0;
        while k < directed.len() {
            let mut m = k + 1;
            while m < directed.len() && directed[m].0 == directed[k].0 && directed[m].1 == directed[k].1 {
                m += 1;
            }
            if m - k == 1 {
                out.push((directed[k].2, directed[k].3));
            }
            k = m;
        }
        out
    }

    /// V − E + T, which equals 1 minus the number of holes for a valid mesh.
    pub fn euler_characteristic(&self) -> i64 {
        self.nodes.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }
}

#[inline]
pub fn signed_area(p: Point2, q: Point2, r: Point2) -> f64 {
    0.5 * ((q.x - p.x) * (r.y - p.y) - (r.x - p.x) * (q.y - p.y))
}

fn edge_list(triangles: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut edges = Vec::with_capacity(3 * triangles.len());
    for tri in triangles {
        for e in 0..3 {
            let (i, j) = (tri[e], tri[(e + 1) % 3]);
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges
}

/// Exact minimum angle, minimum edge and maximum aspect ratio
/// (circumradius over twice the inradius, 1 for an equilateral triangle).
pub fn quality(mesh: &TriMesh) -> MeshQuality {
    let mut q = MeshQuality { min_angle: f64::INFINITY, min_edge: f64::INFINITY, max_aspect: 0.0 };
    for t in 0..mesh.triangles.len() {
        let [p0, p1, p2] = mesh.corners(t);
        let (tq, edge) = triangle_quality(p0, p1, p2);
        q.min_angle = q.min_angle.min(tq.0);
        q.max_aspect = q.max_aspect.max(tq.1);
        q.min_edge = q.min_edge.min(edge);
    }
    q
}

// ((min angle in degrees, aspect), min edge)
fn triangle_quality(p0: Point2, p1: Point2, p2: Point2) -> ((f64, f64), f64) {
    let (a, b, c) = (p1.dist(p2), p2.dist(p0), p0.dist(p1));
    let area = math::abs(signed_area(p0, p1, p2));
    let min_edge = a.min(b).min(c);
    let angle = |opp: f64, s1: f64, s2: f64| {
        let cosv = ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0);
        math::acos(cosv).to_degrees()
    };
    let min_angle = if min_edge > 0.0 { angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b)) } else { 0.0 };
    let aspect = if area > 0.0 {
        let s = 0.5 * (a + b + c);
        let inradius = area / s;
        let circumradius = a * b * c / (4.0 * area);
        circumradius / (2.0 * inradius)
    } else {
        f64::INFINITY
    };
    ((min_angle, aspect), min_edge)
}

fn grid_shape(dx: f64, domain: &Domain) -> Result<(usize, usize), MeshError> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(MeshError::InvalidSpacing { dx, extent: domain.width() });
    }
    let count = |extent: f64| -> Result<usize, MeshError> {
        let n = math::round(extent / dx);
        if n < 1.0 || math::abs(n * dx - extent) > 1e-9 * extent.max(1.0) {
            return Err(MeshError::InvalidSpacing { dx, extent });
        }
        Ok(n as usize)
    };
    Ok((count(domain.width())?, count(domain.height())?))
}

/// Hole-free structured triangulation: every cell split along its
/// lower-left to upper-right diagonal.
pub fn structured_grid(dx: f64, domain: Domain) -> Result<TriMesh, MeshError> {
    let (nx, ny) = grid_shape(dx, &domain)?;
    let (nodes, triangles) = grid_arrays(nx, ny, dx, &domain);
    Ok(TriMesh {
        nodes,
        triangles,
        snapped: Vec::new(),
        built_for: None,
        dx,
        domain,
        provenance: Provenance::Independent,
    })
}

fn grid_arrays(nx: usize, ny: usize, dx: f64, domain: &Domain) -> (Vec<Point2>, Vec<[u32; 3]>) {
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(Point2::new(domain.x0 + i as f64 * dx, domain.y0 + j as f64 * dx));
        }
    }
    let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (nodes, triangles)
}

/// Distance between the hole's bounding box and the domain edge.
pub fn hole_clearance(theta: &GeometryParam, domain: &Domain) -> f64 {
    let (hx, hy) = theta.half_extents();
    let c = theta.center;
    (c.x - hx - domain.x0).min(domain.x1 - c.x - hx).min(c.y - hy - domain.y0).min(domain.y1 - c.y - hy)
}

fn check_clearance(theta: &GeometryParam, dx: f64, domain: &Domain) -> Result<(), MeshError> {
    let clearance = hole_clearance(theta, domain);
    let required = CLEARANCE_FACTOR * dx;
    if clearance < required {
        return Err(MeshError::HoleTooCloseToDomain { clearance, required });
    }
    Ok(())
}

/// Fraction of an edge within which a cut point pulls the nearby grid node
/// onto the boundary instead of creating a new node.
pub const WARP_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Inside,
    Outside,
    OnBoundary,
}

/// Structured triangulation with the hole cut out.
///
/// Grid edges crossing the ellipse are cut at the exact intersection. A cut
/// close to a grid node moves that node onto the boundary; the remaining
/// cuts become new boundary nodes and the outside part of each crossed
/// triangle is re-triangulated.
pub fn generate_mesh(theta: &GeometryParam, dx: f64, domain: Domain) -> Result<TriMesh, MeshError> {
    theta.validate()?;
    let (nx, ny) = grid_shape(dx, &domain)?;
    check_clearance(theta, dx, &domain)?;
    let (mut nodes, cells) = grid_arrays(nx, ny, dx, &domain);
    let mut side: Vec<Side> =
        nodes.iter().map(|&p| if theta.level(p) < 1.0 { Side::Inside } else { Side::Outside }).collect();

    let crossing: Vec<(u32, u32, Point2)> = {
        let mut edges = edge_list(&cells);
        edges.dedup();
        edges
            .into_iter()
            .filter(|&(i, j)| side[i as usize] != side[j as usize])
            .map(|(i, j)| (i, j, edge_cut(theta, nodes[i as usize], nodes[j as usize])))
            .collect()
    };

    let mut warp: Vec<Option<(f64, Point2)>> = vec![None; nodes.len()];
    for &(i, j, cut) in &crossing {
        let length = nodes[i as usize].dist(nodes[j as usize]);
        for v in [i as usize, j as usize] {
            let d = nodes[v].dist(cut);
            if d < WARP_FRACTION * length && warp[v].map_or(true, |(best, _)| d < best) {
                warp[v] = Some((d, cut));
            }
        }
    }
    let mut snapped_flag = vec![false; nodes.len()];
    for (v, w) in warp.iter().enumerate() {
        if let Some((_, cut)) = w {
            nodes[v] = *cut;
            side[v] = Side::OnBoundary;
            snapped_flag[v] = true;
        }
    }

    let mut cut_node: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for &(i, j, cut) in &crossing {
        let (si, sj) = (side[i as usize], side[j as usize]);
        if si != Side::OnBoundary && sj != Side::OnBoundary {
            cut_node.insert((i, j), nodes.len() as u32);
            nodes.push(cut);
            snapped_flag.push(true);
        }
    }

    let mut kept: Vec<[u32; 3]> = Vec::with_capacity(cells.len());
    let mut poly: Vec<u32> = Vec::with_capacity(4);
    for tri in &cells {
        let s = [side[tri[0] as usize], side[tri[1] as usize], side[tri[2] as usize]];
        let any_in = s.contains(&Side::Inside);
        let any_out = s.contains(&Side::Outside);
        if (any_in && !any_out) || s.iter().all(|&x| x == Side::OnBoundary) {
            continue;
        }
        poly.clear();
        for e in 0..3 {
            let (v, w) = (tri[e], tri[(e + 1) % 3]);
            let (sv, sw) = (side[v as usize], side[w as usize]);
            if sv != Side::Inside {
                poly.push(v);
            }
            if (sv == Side::Inside && sw == Side::Outside) || (sv == Side::Outside && sw == Side::Inside) {
                poly.push(cut_node[&(v.min(w), v.max(w))]);
            }
        }
        let mut push = |t: [u32; 3]| {
            let [p, q, r] = t.map(|k| nodes[k as usize]);
            let c = Point2::new((p.x + q.x + r.x) / 3.0, (p.y + q.y + r.y) / 3.0);
            if signed_area(p, q, r) > 0.0 && theta.level(c) >= 1.0 {
                kept.push(t);
            }
        };
        match poly.len() {
            3 => push([poly[0], poly[1], poly[2]]),
            4 => {
                let (a, b, c, d) = (poly[0], poly[1], poly[2], poly[3]);
                let split_ac = [[a, b, c], [a, c, d]];
                let split_bd = [[a, b, d], [b, c, d]];
                let worst = |pair: &[[u32; 3]; 2]| {
                    pair.iter()
                        .map(|t| {
                            let [p, q, r] = t.map(|k| nodes[k as usize]);
                            triangle_quality(p, q, r).0 .0
                        })
                        .fold(f64::INFINITY, f64::min)
                };
                let best = if worst(&split_ac) >= worst(&split_bd) { split_ac } else { split_bd };
                push(best[0]);
                push(best[1]);
            }
            _ => unreachable!("clipping a triangle by one vertex side yields 3 or 4 corners"),
        }
    }
    if kept.is_empty() {
        return Err(MeshError::Empty);
    }

    let first = compact(theta, dx, domain, &nodes, &kept, &snapped_flag);
    match validate(&first, theta) {
        Ok(()) => Ok(first),
        Err(_) => {
            let (merged_nodes, merged_tris) = collapse_short_snapped(theta, dx, &nodes, &kept, &snapped_flag);
            let mesh = compact(theta, dx, domain, &merged_nodes, &merged_tris, &snapped_flag);
            validate(&mesh, theta)?;
            Ok(mesh)
        }
    }
}

/// Intersection of the segment from `p` to `q` with the ellipse, where
/// exactly one of the two endpoints is inside.
fn edge_cut(theta: &GeometryParam, p: Point2, q: Point2) -> Point2 {
    let (up, vp) = theta.local(p);
    let (uq, vq) = theta.local(q);
    let (du, dv) = (uq - up, vq - vp);
    let (ia, ib) = (1.0 / (theta.a * theta.a), 1.0 / (theta.b * theta.b));
    let qa = du * du * ia + dv * dv * ib;
    let qb = 2.0 * (up * du * ia + vp * dv * ib);
    let qc = up * up * ia + vp * vp * ib - 1.0;
    let root = math::sqrt((qb * qb - 4.0 * qa * qc).max(0.0));
    let s = if qc < 0.0 { (-qb + root) / (2.0 * qa) } else { (-qb - root) / (2.0 * qa) };
    let s = s.clamp(0.0, 1.0);
    let (u, v) = (up + s * du, vp + s * dv);
    // pull onto the ellipse exactly along the elliptic radius
    let r = math::sqrt(u * u * ia + v * v * ib);
    theta.global(u / r, v / r)
}

// Union of snapped nodes joined by edges shorter than the minimum edge
// length; each group is replaced by the projection of its mean.
fn collapse_short_snapped(
    theta: &GeometryParam,
    dx: f64,
    nodes: &[Point2],
    tris: &[[u32; 3]],
    snap: &[bool],
) -> (Vec<Point2>, Vec<[u32; 3]>) {
    let n = nodes.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }
    let limit = MIN_EDGE_FACTOR * dx;
    for (i, j) in edge_list(tris) {
        if snap[i as usize] && snap[j as usize] && nodes[i as usize].dist(nodes[j as usize]) < limit {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi as usize] = lo;
            }
        }
    }
    let mut sum = vec![(0.0f64, 0.0f64, 0usize); n];
    let mut rep = vec![0u32; n];
    for k in 0..n {
        let r = find(&mut parent, k as u32);
        rep[k] = r;
        if snap[k] {
            let s = &mut sum[r as usize];
            s.0 += nodes[k].x;
            s.1 += nodes[k].y;
            s.2 += 1;
        }
    }
    let mut out = nodes.to_vec();
    for k in 0..n {
        if rep[k] == k as u32 && sum[k].2 > 1 {
            let mean = Point2::new(sum[k].0 / sum[k].2 as f64, sum[k].1 / sum[k].2 as f64);
            out[k] = closest_point_with_angle(theta, mean).0;
        }
    }
    let tris = tris
        .iter()
        .map(|t| [rep[t[0] as usize], rep[t[1] as usize], rep[t[2] as usize]])
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    (out, tris)
}

// Drops unused nodes and renumbers.
fn compact(
    theta: &GeometryParam,
    dx: f64,
    domain: Domain,
    nodes: &[Point2],
    tris: &[[u32; 3]],
    snap: &[bool],
) -> TriMesh {
    let mut used = vec![false; nodes.len()];
    for tri in tris {
        for &k in tri {
            used[k as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; nodes.len()];
    let mut out_nodes = Vec::new();
    let mut snapped = Vec::new();
    for k in 0..nodes.len() {
        if used[k] {
            remap[k] = out_nodes.len() as u32;
            if snap[k] {
                snapped.push(out_nodes.len() as u32);
            }
            out_nodes.push(nodes[k]);
        }
    }
    let triangles = tris.iter().map(|t| t.map(|k| remap[k as usize])).collect();
    TriMesh {
        nodes: out_nodes,
        triangles,
        snapped,
        built_for: Some(*theta),
        dx,
        domain,
        provenance: Provenance::Independent,
    }
}

/// Validity and quality checks shared by generation and relocation.
pub fn validate(mesh: &TriMesh, theta: &GeometryParam) -> Result<(), MeshError> {
    if mesh.triangles.is_empty() {
        return Err(MeshError::Empty);
    }
    check_clearance(theta, mesh.dx, &mesh.domain)?;
    for t in 0..mesh.triangles.len() {
        let area = mesh.signed_area(t);
        if !(area > 0.0) {
            return Err(MeshError::Quality { metric: "signed_area", value: area, threshold: 0.0 });
        }
        let level = theta.level(mesh.centroid(t));
        if level < 1.0 {
            return Err(MeshError::Quality { metric: "centroid_level", value: level, threshold: 1.0 });
        }
    }
    let mut snapped = mesh.snapped.iter().peekable();
    for (k, &p) in mesh.nodes.iter().enumerate() {
        if snapped.peek() == Some(&&(k as u32)) {
            snapped.next();
            continue;
        }
        let level = theta.level(p);
        if level < 1.0 - 1e-12 {
            return Err(MeshError::Quality { metric: "free_node_level", value: level, threshold: 1.0 });
        }
    }
    let q = quality(mesh);
    if q.min_angle < MIN_ANGLE_DEG {
        return Err(MeshError::Quality { metric: "min_angle", value: q.min_angle, threshold: MIN_ANGLE_DEG });
    }
    let min_edge = MIN_EDGE_FACTOR * mesh.dx;
    if q.min_edge < min_edge {
        return Err(MeshError::Quality { metric: "min_edge", value: q.min_edge, threshold: min_edge });
    }
    let chi = mesh.euler_characteristic();
    if chi != 0 {
        return Err(MeshError::Topology { found: chi, expected: 0 });
    }
    Ok(())
}

/// Node Relocation: move the current mesh onto `theta_star` keeping its
/// connectivity, or regenerate when the moved mesh is not admissible.
///
/// Snapped nodes keep their parametric angle. Free nodes within a band
/// around the old boundary follow the boundary displacement at their
/// closest-point angle, damped by a smooth weight that vanishes at the
/// band edge.
pub fn relocate_mesh(base: &TriMesh, theta_star: &GeometryParam) -> Result<TriMesh, MeshError> {
    theta_star.validate()?;
    let Some(from) = base.built_for else {
        return fallback(theta_star, base);
    };
    if from == *theta_star {
        let mut same = base.clone();
        same.provenance = Provenance::Relocated { from };
        return Ok(same);
    }
    if hole_clearance(theta_star, &base.domain) < CLEARANCE_FACTOR * base.dx {
        return fallback(theta_star, base);
    }
    let band = RELOCATION_BAND_FACTOR * base.dx;
    let (hx, hy) = from.half_extents();
    let reach = (hx + band, hy + band);
    let mut nodes = base.nodes.clone();
    let mut snapped = base.snapped.iter().peekable();
    for (k, p) in nodes.iter_mut().enumerate() {
        if snapped.peek() == Some(&&(k as u32)) {
            snapped.next();
            *p = theta_star.boundary_point(from.parametric_angle(*p));
            continue;
        }
        if math::abs(p.x - from.center.x) > reach.0 || math::abs(p.y - from.center.y) > reach.1 {
            continue;
        }
        let (q, t) = closest_point_with_angle(&from, *p);
        let d = q.dist(*p);
        if d >= band {
            continue;
        }
        let s = d / band;
        let w = 1.0 - s * s * (3.0 - 2.0 * s);
        let shift = theta_star.boundary_point(t) - q;
        p.x += w * shift.x;
        p.y += w * shift.y;
    }
    let moved = TriMesh {
        nodes,
        triangles: base.triangles.clone(),
        snapped: base.snapped.clone(),
        built_for: Some(*theta_star),
        dx: base.dx,
        domain: base.domain,
        provenance: Provenance::Relocated { from },
    };
    match validate(&moved, theta_star) {
        Ok(()) => Ok(moved),
        Err(_) => fallback(theta_star, base),
    }
}

fn fallback(theta_star: &GeometryParam, base: &TriMesh) -> Result<TriMesh, MeshError> {
    let mut mesh = generate_mesh(theta_star, base.dx, base.domain)?;
    mesh.provenance = Provenance::RelocationFallback;
    Ok(mesh)
}

/// Largest node displacement between two meshes sharing connectivity.
pub fn max_displacement(a: &TriMesh, b: &TriMesh) -> Option<f64> {
    if a.nodes.len() != b.nodes.len() || a.triangles != b.triangles {
        return None;
    }
    Some(a.nodes.iter().zip(&b.nodes).map(|(p, q)| p.dist(*q)).fold(0.0, f64::max))
}

/// Uniform bucket grid over triangle bounding boxes for point location.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

/// Barycentric tolerance for points on shared edges.
const BARY_TOL: f64 = 1e-10;

impl PointLocator {
    pub fn new(mesh: &TriMesh) -> Self {
        let cell = mesh.dx.max(1e-9);
        let origin = Point2::new(mesh.domain.x0, mesh.domain.y0);
        let nx = (math::floor(mesh.domain.width() / cell) as usize).max(1) + 1;
        let ny = (math::floor(mesh.domain.height() / cell) as usize).max(1) + 1;
        let clamp_x = |v: f64| (math::floor((v - origin.x) / cell).max(0.0) as usize).min(nx - 1);
        let clamp_y = |v: f64| (math::floor((v - origin.y) / cell).max(0.0) as usize).min(ny - 1);
        let mut counts = vec![0u32; nx * ny + 1];
        let mut ranges = Vec::with_capacity(mesh.triangles.len());
        for t in 0..mesh.triangles.len() {
            let [p, q, r] = mesh.corners(t);
            let (x0, x1) = (clamp_x(p.x.min(q.x).min(r.x)), clamp_x(p.x.max(q.x).max(r.x)));
            let (y0, y1) = (clamp_y(p.y.min(q.y).min(r.y)), clamp_y(p.y.max(q.y).max(r.y)));
            ranges.push((x0, x1, y0, y1));
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    counts[cy * nx + cx + 1] += 1;
                }
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; *counts.last().unwrap() as usize];
        for (t, &(x0, x1, y0, y1)) in ranges.iter().enumerate() {
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    let slot = &mut fill[cy * nx + cx];
                    items[*slot as usize] = t as u32;
                    *slot += 1;
                }
            }
        }
        Self { origin, cell, nx, ny, start: counts, items }
    }

    /// Triangle containing `p` and its barycentric coordinates. Among
    /// several candidates (shared edges) the lowest triangle index wins.
    pub fn locate(&self, mesh: &TriMesh, p: Point2) -> Option<(usize, [f64; 3])> {
        let fx = math::floor((p.x - self.origin.x) / self.cell);
        let fy = math::floor((p.y - self.origin.y) / self.cell);
        if fx < -1.0 || fy < -1.0 || fx > self.nx as f64 || fy > self.ny as f64 {
            return None;
        }
        let cx = (fx.max(0.0) as usize).min(self.nx - 1);
        let cy = (fy.max(0.0) as usize).min(self.ny - 1);
        let cellid = cy * self.nx + cx;
        let (s, e) = (self.start[cellid] as usize, self.start[cellid + 1] as usize);
        let mut best: Option<(usize, [f64; 3])> = None;
        for &t in &self.items[s..e] {
            let t = t as usize;
            let [a, b, c] = mesh.corners(t);
            let area = signed_area(a, b, c);
            let l0 = signed_area(p, b, c) / area;
            let l1 = signed_area(a, p, c) / area;
            let l2 = 1.0 - l0 - l1;
            if l0 >= -BARY_TOL && l1 >= -BARY_TOL && l2 >= -BARY_TOL {
                match best {
                    Some((bt, _)) if bt < t => {}
                    _ => best = Some((t, [l0, l1, l2])),
                }
            }
        }
        best.map(|(t, l)| {
            let clamp = |v: f64| v.max(0.0);
            let (a, b, c) = (clamp(l[0]), clamp(l[1]), clamp(l[2]));
            let s = a + b + c;
            (t, [a / s, b / s, c / s])
        })
    }
}
