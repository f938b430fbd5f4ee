//! Catheter geometry, pseudo-electrograms, trace sampling and noise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::cell::TissueState;
use crate::error::ObserveError;
use crate::geometry::Point2;
use crate::math;
use crate::mesh::{PointLocator, TriMesh};
use crate::solver::{p1_gradients, FrameSeries};

pub const ELECTRODE_COUNT: usize = 20;

/// Electrode index (1-based) whose activations define the observation window.
pub const REFERENCE_ELECTRODE: usize = 4;

/// Catheter electrode coordinates [mm]: five arms of four electrodes.
pub const CATHETER_XY: [(f64, f64); ELECTRODE_COUNT] = [
    (27.50, 62.00),
    (32.50, 62.00),
    (37.50, 62.00),
    (42.50, 62.00),
    (25.77, 64.38),
    (27.32, 69.13),
    (28.86, 73.89),
    (30.41, 78.64),
    (22.98, 63.47),
    (18.93, 66.41),
    (14.89, 69.35),
    (10.84, 72.29),
    (22.98, 60.53),
    (18.93, 57.59),
    (14.89, 54.65),
    (10.84, 51.71),
    (25.77, 59.62),
    (27.32, 54.87),
    (28.86, 50.11),
    (30.41, 45.36),
];

/// Sampling interval of the recorded potentials [ms].
pub const DTAU: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeArray {
    /// `(x, y, z)` per electrode [mm]; tissue lies in `z = 0`.
    pub positions: Vec<[f64; 3]>,
}

/// Default electrode height above the tissue [mm], about one electrode size.
pub const ELECTRODE_HEIGHT: f64 = 1.0;

impl Default for ElectrodeArray {
    fn default() -> Self {
        Self::with_offset(0.0)
    }
}

impl ElectrodeArray {
    /// The catheter lifted `z_offset` mm above the tissue.
    pub fn with_offset(z_offset: f64) -> Self {
        Self { positions: CATHETER_XY.iter().map(|&(x, y)| [x, y, z_offset]).collect() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn xy(&self, j: usize) -> Point2 {
        Point2::new(self.positions[j][0], self.positions[j][1])
    }
}

/// Bath conductivity [mS/mm], intracellular conductivity [mS/mm] and the
/// membrane potential in mV of one unit of the dimensionless `vm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgmConstants {
    pub sigma_b: f64,
    pub sigma_i: f64,
    pub vm_scale: f64,
}

impl EgmConstants {
    /// Factor in front of the electrogram integral.
    pub fn prefactor(&self) -> f64 {
        -self.vm_scale * self.sigma_i / (4.0 * PI * self.sigma_b)
    }
}

impl Default for EgmConstants {
    fn default() -> Self {
        Self { sigma_b: 1.0, sigma_i: 0.174, vm_scale: 100.0 }
    }
}

/// How the kernel is integrated over each triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EgmQuadrature {
    /// Kernel evaluated at the centroid times the area.
    Centroid,
    /// Exact integral of the kernel over the triangle: by the gradient
    /// theorem it equals `∮ n/‖r_e − r‖ ds` along the three edges.
    #[default]
    Exact,
}

/// Kernel `(r_e − c)/‖r_e − c‖³`, in-plane components.
#[inline]
fn kernel(electrode: [f64; 3], c: Point2) -> [f64; 2] {
    let d = [electrode[0] - c.x, electrode[1] - c.y, electrode[2]];
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let r3 = r2 * math::sqrt(r2);
    [d[0] / r3, d[1] / r3]
}

#[inline]
fn asinh(x: f64) -> f64 {
    let a = math::abs(x);
    let v = math::ln(a + math::sqrt(a * a + 1.0));
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Height floor [mm] under which an electrode counts as touching an edge.
/// The contact integral of a P1 field diverges logarithmically on a mesh
/// edge, so the height is never taken below this.
pub const CONTACT_FLOOR: f64 = 1e-2;

/// `∫ ds/‖r_e − r‖` along the segment from `p` to `q`.
fn edge_inverse_distance(electrode: [f64; 3], p: Point2, q: Point2) -> f64 {
    let (dx, dy) = (q.x - p.x, q.y - p.y);
    let length = math::hypot(dx, dy);
    let (tx, ty) = (dx / length, dy / length);
    let (wx, wy) = (electrode[0] - p.x, electrode[1] - p.y);
    let s0 = wx * tx + wy * ty;
    let perp = wx * ty - wy * tx;
    let h = math::sqrt(perp * perp + electrode[2] * electrode[2]).max(CONTACT_FLOOR);
    asinh((length - s0) / h) + asinh(s0 / h)
}

/// `∫_T (r_e − r)/‖r_e − r‖³ dA`, in-plane components.
fn triangle_kernel(electrode: [f64; 3], corners: [Point2; 3], rule: EgmQuadrature, area: f64) -> [f64; 2] {
    match rule {
        EgmQuadrature::Centroid => {
            let c = Point2::new(
                (corners[0].x + corners[1].x + corners[2].x) / 3.0,
                (corners[0].y + corners[1].y + corners[2].y) / 3.0,
            );
            let w = kernel(electrode, c);
            [area * w[0], area * w[1]]
        }
        EgmQuadrature::Exact => {
            let mut acc = [0.0; 2];
            for e in 0..3 {
                let (p, q) = (corners[e], corners[(e + 1) % 3]);
                let length = p.dist(q);
                // outward normal of a counter-clockwise triangle
                let n = [(q.y - p.y) / length, -(q.x - p.x) / length];
                let f = edge_inverse_distance(electrode, p, q);
                acc[0] += f * n[0];
                acc[1] += f * n[1];
            }
            acc
        }
    }
}

/// Pseudo-electrogram of one frame at one electrode:
/// `−s σ_i/(4πσ_b) ∫ ∇vm · (r_e − r)/‖r_e − r‖³ dA` over the tissue.
pub fn pseudo_egm(
    frame: &TissueState,
    mesh: &TriMesh,
    electrode: [f64; 3],
    k: &EgmConstants,
    rule: EgmQuadrature,
) -> f64 {
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let corners = mesh.corners(t);
        let (g, area) = p1_gradients(corners);
        let mut grad = [0.0; 2];
        for a in 0..3 {
            let v = frame.vm[tri[a] as usize];
            grad[0] += v * g[a][0];
            grad[1] += v * g[a][1];
        }
        let w = triangle_kernel(electrode, corners, rule, area);
        sum += grad[0] * w[0] + grad[1] * w[1];
    }
    k.prefactor() * sum
}

/// The pseudo-electrogram is linear in `vm`; this stores one nodal weight
/// vector per electrode so that each sample is a dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct EgmOperator {
    pub weights: Vec<Vec<f64>>,
}

impl EgmOperator {
    pub fn new(mesh: &TriMesh, electrodes: &ElectrodeArray, k: &EgmConstants, rule: EgmQuadrature) -> Self {
        let n = mesh.nodes.len();
        let scale = k.prefactor();
        let mut weights = vec![vec![0.0; n]; electrodes.len()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let corners = mesh.corners(t);
            let (g, area) = p1_gradients(corners);
            for (j, e) in electrodes.positions.iter().enumerate() {
                let w = triangle_kernel(*e, corners, rule, area);
                for a in 0..3 {
                    weights[j][tri[a] as usize] += scale * (g[a][0] * w[0] + g[a][1] * w[1]);
                }
            }
        }
        Self { weights }
    }

    pub fn apply(&self, vm: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(vm).map(|(a, b)| a * b).sum();
        }
    }
}

/// Barycentric probes reading `vm` at the electrode positions.
#[derive(Debug, Clone, PartialEq)]
pub struct VmProbe {
    pub stencils: Vec<([u32; 3], [f64; 3])>,
}

impl VmProbe {
    pub fn new(mesh: &TriMesh, electrodes: &ElectrodeArray) -> Result<Self, ObserveError> {
        let locator = PointLocator::new(mesh);
        let mut stencils = Vec::with_capacity(electrodes.len());
        for j in 0..electrodes.len() {
            let p = electrodes.xy(j);
            let (t, l) = locator
                .locate(mesh, p)
                .ok_or(ObserveError::ElectrodeOffTissue { index: j + 1, x: p.x, y: p.y })?;
            stencils.push((mesh.triangles[t], l));
        }
        Ok(Self { stencils })
    }

    pub fn apply(&self, vm: &[f64], out: &mut [f64]) {
        for (o, (tri, l)) in out.iter_mut().zip(&self.stencils) {
            *o = l[0] * vm[tri[0] as usize] + l[1] * vm[tri[1] as usize] + l[2] * vm[tri[2] as usize];
        }
    }
}

/// Electrode potentials on the 4 ms grid: `values[j][k]` at `tau0 + k·dtau`.
#[derive(Debug, Clone, PartialEq)]
pub struct EgmTraces {
    pub values: Vec<Vec<f64>>,
    pub tau0: f64,
    pub dtau: f64,
    pub seed: u64,
    pub sigma2: f64,
}

impl EgmTraces {
    pub fn columns(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }

    pub fn time(&self, k: usize) -> f64 {
        self.tau0 + k as f64 * self.dtau
    }
}

/// Samples the stored frames every `dtau` ms from `t0` to the last frame.
pub fn sample_traces(
    frames: &FrameSeries,
    op: &EgmOperator,
    t0: f64,
    dtau: f64,
) -> Result<EgmTraces, ObserveError> {
    let spacing = frames.frame_spacing();
    let first = frames.frames.first().map_or(0.0, |f| f.t);
    let last = frames.frames.last().map_or(0.0, |f| f.t);
    let stride = math::round(dtau / spacing);
    let offset = math::round((t0 - first) / spacing);
    if stride < 1.0
        || math::abs(stride * spacing - dtau) > 1e-9
        || math::abs(first + offset * spacing - t0) > 1e-9
    {
        return Err(ObserveError::Misaligned { t0, dtau });
    }
    if t0 < first - 1e-9 || t0 > last + 1e-9 {
        return Err(ObserveError::WindowOutOfRange { start: first, end: last, t0, t1: last });
    }
    let (stride, offset) = (stride as usize, offset as usize);
    let count = (frames.frames.len() - 1 - offset) / stride + 1;
    let mut values = vec![Vec::with_capacity(count); op.weights.len()];
    let mut col = vec![0.0; op.weights.len()];
    for k in 0..count {
        op.apply(&frames.frames[offset + k * stride].vm, &mut col);
        for (row, v) in values.iter_mut().zip(&col) {
            row.push(*v);
        }
    }
    Ok(EgmTraces { values, tau0: t0, dtau, seed: 0, sigma2: 0.0 })
}

/// Adds i.i.d. `N(0, sigma2)` to every entry, row by row, from a
/// generator seeded with `seed`.
pub fn add_noise(traces: &EgmTraces, sigma2: f64, seed: u64) -> EgmTraces {
    let mut out = traces.clone();
    out.seed = seed;
    out.sigma2 = sigma2;
    if sigma2 == 0.0 {
        return out;
    }
    let sd = math::sqrt(sigma2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in out.values.iter_mut() {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sd * z;
        }
    }
    out
}
