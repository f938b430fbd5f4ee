//! Monodomain forward solver: P1 finite elements with a lumped mass,
//! backward-Euler diffusion via preconditioned conjugate gradients, and
//! Strang splitting with the membrane reaction.

use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{CellParams, ReactionStepper, TissueState};
use crate::error::SolverError;
use crate::geometry::Point2;
use crate::math;
use crate::mesh::TriMesh;

/// Intracellular and extracellular conductivities and membrane constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueConstants {
    /// Intracellular conductivity [mS/mm].
    pub sigma_i: f64,
    /// Extracellular conductivity [mS/mm].
    pub sigma_e: f64,
    /// Surface-to-volume ratio [1/mm].
    pub chi: f64,
    /// Membrane capacitance [µF/mm²].
    pub c_m: f64,
}

impl Default for TissueConstants {
    fn default() -> Self {
        Self { sigma_i: 0.174, sigma_e: 0.625, chi: 140.0, c_m: 0.01 }
    }
}

impl TissueConstants {
    /// Harmonic-mean conductivity over `χ·C_m` [mm²/ms].
    pub fn d_healthy(&self) -> f64 {
        let sigma = self.sigma_i * self.sigma_e / (self.sigma_i + self.sigma_e);
        sigma / (self.chi * self.c_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionField {
    /// Healthy-tissue diffusion coefficient [mm²/ms].
    pub d_healthy: f64,
    /// Conduction slowing factor in (0, 1].
    pub gamma: f64,
}

impl DiffusionField {
    pub fn new(constants: &TissueConstants, gamma: f64) -> Self {
        Self { d_healthy: constants.d_healthy(), gamma }
    }

    pub fn coefficient(&self) -> f64 {
        self.gamma * self.d_healthy
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i as usize + 1] += 1;
                last = Some((i, j));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, col, val }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n as u32).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i as u32, j as u32, v));
                }
            }
        }
        Self::from_triplets(n, t)
    }

    #[inline]
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&(j as u32)) {
            Ok(k) => self.val[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `self + alpha·diag(d)`
    pub fn add_diagonal(&self, d: &[f64], alpha: f64) -> Self {
        let mut t = Vec::with_capacity(self.val.len() + self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((r as u32, self.col[k], self.val[k]));
            }
            t.push((r as u32, r as u32, alpha * d[r]));
        }
        Self::from_triplets(self.n, t)
    }

    /// `beta·self + diag(d)`
    pub fn scaled_plus_diagonal(&self, beta: f64, d: &[f64]) -> Self {
        let mut m = self.clone();
        for v in m.val.iter_mut() {
            *v *= beta;
        }
        m.add_diagonal(d, 1.0)
    }
}

/// Stiffness matrix and lumped mass of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledOperators {
    pub stiffness: CsrMatrix,
    pub lumped_mass: Vec<f64>,
}

impl AssembledOperators {
    /// `M + dt·K`
    pub fn system(&self, dt: f64) -> CsrMatrix {
        self.stiffness.scaled_plus_diagonal(dt, &self.lumped_mass)
    }
}

/// Gradients of the three P1 basis functions and the triangle area.
#[inline]
pub fn p1_gradients(p: [Point2; 3]) -> ([[f64; 2]; 3], f64) {
    let area = 0.5 * ((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y));
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(p[j].y - p[k].y) * inv, (p[k].x - p[j].x) * inv];
    }
    (g, area)
}

pub fn assemble(mesh: &TriMesh, field: &DiffusionField) -> Result<AssembledOperators, SolverError> {
    let n = mesh.nodes.len();
    let d = field.coefficient();
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    let mut mass = vec![0.0; n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = p1_gradients(mesh.corners(t));
        if !(area > 1e-12) {
            return Err(SolverError::DegenerateTriangle { index: t, area });
        }
        for a in 0..3 {
            mass[tri[a] as usize] += area / 3.0;
            for b in 0..3 {
                let k = d * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                triplets.push((tri[a], tri[b], k));
            }
        }
    }
    Ok(AssembledOperators { stiffness: CsrMatrix::from_triplets(n, triplets), lumped_mass: mass })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable buffers for [`cg_solve_into`].
#[derive(Debug, Clone, Default)]
pub struct CgWorkspace {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradients, solving in place from the
/// initial guess in `x`. Returns the iteration count.
pub fn cg_solve_into(
    a: &CsrMatrix,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    ws: &mut CgWorkspace,
) -> Result<usize, SolverError> {
    let n = a.n;
    ws.r.resize(n, 0.0);
    ws.z.resize(n, 0.0);
    ws.p.resize(n, 0.0);
    ws.q.resize(n, 0.0);
    let b_norm = math::sqrt(dot(b, b));
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    a.matvec(x, &mut ws.q);
    for i in 0..n {
        ws.r[i] = b[i] - ws.q[i];
    }
    let target = tol * b_norm;
    let mut res = math::sqrt(dot(&ws.r, &ws.r));
    if res <= target {
        return Ok(0);
    }
    for i in 0..n {
        ws.z[i] = inv_diag[i] * ws.r[i];
        ws.p[i] = ws.z[i];
    }
    let mut rz = dot(&ws.r, &ws.z);
    let cap = 10 * n.max(1);
    for iter in 1..=cap {
        a.matvec(&ws.p, &mut ws.q);
        let pq = dot(&ws.p, &ws.q);
        if pq == 0.0 && rz == 0.0 && res < f64::MIN_POSITIVE {
            return Ok(iter);
        }
        if !(pq > 0.0) {
            return Err(SolverError::CgNotConverged { iterations: iter, residual: res / b_norm });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * ws.p[i];
            ws.r[i] -= alpha * ws.q[i];
        }
        res = math::sqrt(dot(&ws.r, &ws.r));
        if res <= target {
            return Ok(iter);
        }
        for i in 0..n {
            ws.z[i] = inv_diag[i] * ws.r[i];
        }
        let rz_new = dot(&ws.r, &ws.z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            ws.p[i] = ws.z[i] + beta * ws.p[i];
        }
    }
    Err(SolverError::CgNotConverged { iterations: cap, residual: res / b_norm })
}

/// Solves `A x = b` starting from `x0` to relative residual `tol`.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], x0: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = x0.to_vec();
    cg_solve_into(a, &inv_diag, b, &mut x, tol, &mut CgWorkspace::default())?;
    Ok(x)
}

/// Relative residual tolerance of the implicit diffusion solve.
pub const CG_TOL: f64 = 1e-8;

/// Potentials below this magnitude are set to zero before the implicit
/// solve, so that decaying tails never reach subnormal range.
pub const FLUSH_BELOW: f64 = 1e-100;

/// Backward-Euler diffusion `(M + dt·K) v_new = M v_old` for a fixed `dt`.
#[derive(Debug, Clone)]
pub struct DiffusionStepper {
    system: CsrMatrix,
    mass: Vec<f64>,
    inv_diag: Vec<f64>,
    rhs: Vec<f64>,
    ws: CgWorkspace,
    pub dt: f64,
    pub tol: f64,
    pub last_iterations: usize,
}

impl DiffusionStepper {
    pub fn new(ops: &AssembledOperators, dt: f64) -> Self {
        let system = ops.system(dt);
        let inv_diag = system.diagonal().iter().map(|d| 1.0 / d).collect();
        Self {
            system,
            mass: ops.lumped_mass.clone(),
            inv_diag,
            rhs: vec![0.0; ops.lumped_mass.len()],
            ws: CgWorkspace::default(),
            dt,
            tol: CG_TOL,
            last_iterations: 0,
        }
    }

    /// Replaces `vm` by the implicit diffusion update, warm-started from
    /// the current values.
    pub fn step(&mut self, vm: &mut [f64]) -> Result<(), SolverError> {
        for i in 0..vm.len() {
            if math::abs(vm[i]) < FLUSH_BELOW {
                vm[i] = 0.0;
            }
            self.rhs[i] = self.mass[i] * vm[i];
        }
        self.last_iterations = cg_solve_into(&self.system, &self.inv_diag, &self.rhs, vm, self.tol, &mut self.ws)?;
        Ok(())
    }
}

/// Applies `(M + dt·K)⁻¹ M` once to a state.
pub fn diffusion_step(state: &mut TissueState, ops: &AssembledOperators, dt: f64) -> Result<(), SolverError> {
    DiffusionStepper::new(ops, dt).step(&mut state.vm)
}

/// Rectangular stimulus region, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Clamps `vm` to `value` in `region` before every step starting in
/// `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    pub region: Rect,
    pub start: f64,
    pub duration: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Keep every k-th state in the returned series; 0 keeps none.
    pub store_every: usize,
}

impl ForwardOptions {
    pub fn steps(&self) -> Result<usize, SolverError> {
        if !(self.dt > 0.0 && self.t_end >= 0.0) {
            return Err(SolverError::InvalidTiming("dt must be positive and t_end non-negative"));
        }
        let n = math::round(self.t_end / self.dt);
        if math::abs(n * self.dt - self.t_end) > 1e-9 * self.t_end.max(1.0) {
            return Err(SolverError::InvalidTiming("t_end must be a multiple of dt"));
        }
        Ok(n as usize)
    }
}

/// Stored states at `t_i = t_start + i·store_every·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub frames: Vec<TissueState>,
    pub dt: f64,
    pub store_every: usize,
}

impl FrameSeries {
    pub fn frame_spacing(&self) -> f64 {
        self.dt * self.store_every as f64
    }
}

/// Everything that stays fixed across the time loop of one solve.
#[derive(Debug, Clone)]
pub struct Integrator {
    reaction: ReactionStepper,
    pub diffusion: DiffusionStepper,
    stimulus_nodes: Vec<(Stimulus, Vec<u32>)>,
    pub dt: f64,
}

impl Integrator {
    pub fn new(
        mesh: &TriMesh,
        field: &DiffusionField,
        cell: &CellParams,
        dt: f64,
        stimuli: &[Stimulus],
    ) -> Result<Self, SolverError> {
        let ops = assemble(mesh, field)?;
        let mut out = Self {
            reaction: ReactionStepper::new(*cell, 0.5 * dt),
            diffusion: DiffusionStepper::new(&ops, dt),
            stimulus_nodes: Vec::with_capacity(stimuli.len()),
            dt,
        };
        for s in stimuli {
            out.add_stimulus(mesh, *s);
        }
        Ok(out)
    }

    /// Registers another stimulus; it takes effect from the next step.
    pub fn add_stimulus(&mut self, mesh: &TriMesh, s: Stimulus) {
        let nodes = (0..mesh.nodes.len() as u32).filter(|&k| s.region.contains(mesh.nodes[k as usize])).collect();
        self.stimulus_nodes.push((s, nodes));
    }

    /// One Strang step: reaction dt/2, diffusion dt, reaction dt/2.
    /// `step_start` is the time at the beginning of the step.
    pub fn step(&mut self, state: &mut TissueState, step_start: f64) -> Result<(), SolverError> {
        for (s, nodes) in &self.stimulus_nodes {
            if step_start >= s.start - 1e-9 && step_start < s.start + s.duration - 1e-9 {
                for &k in nodes {
                    state.vm[k as usize] = s.value;
                }
            }
        }
        self.reaction.step(state);
        self.diffusion.step(&mut state.vm)?;
        self.reaction.step(state);
        Ok(())
    }
}

/// Integrates from `init` for `opts.t_end` ms. `observe(step, state)` sees
/// the initial state (step 0) and the state after every step.
#[allow(clippy::too_many_arguments)]
pub fn run_forward_with(
    mesh: &TriMesh,
    init: &TissueState,
    field: &DiffusionField,
    cell: &CellParams,
    opts: &ForwardOptions,
    stimuli: &[Stimulus],
    observe: &mut dyn FnMut(usize, &TissueState),
) -> Result<FrameSeries, SolverError> {
    let n = mesh.nodes.len();
    if init.vm.len() != n || init.h.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, found: init.vm.len().min(init.h.len()) });
    }
    let steps = opts.steps()?;
    let mut integrator = Integrator::new(mesh, field, cell, opts.dt, stimuli)?;
    let t0 = init.t;
    let mut state = init.clone();
    let mut frames = Vec::new();
    let keep = |k: usize| opts.store_every > 0 && k % opts.store_every == 0;
    if keep(0) {
        frames.push(state.clone());
    }
    observe(0, &state);
    for k in 1..=steps {
        integrator.step(&mut state, t0 + (k - 1) as f64 * opts.dt)?;
        state.t = t0 + k as f64 * opts.dt;
        if !state.vm.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite { step: k });
        }
        if keep(k) {
            frames.push(state.clone());
        }
        observe(k, &state);
    }
    Ok(FrameSeries { frames, dt: opts.dt, store_every: opts.store_every })
}

/// Integrates and stores every state.
pub fn run_forward(
    mesh: &TriMesh,
    init: &TissueState,
    field: &DiffusionField,
    cell: &CellParams,
    dt: f64,
    t_end: f64,
) -> Result<FrameSeries, SolverError> {
    let opts = ForwardOptions { dt, t_end, store_every: 1 };
    run_forward_with(mesh, init, field, cell, &opts, &[], &mut |_, _| {})
}
