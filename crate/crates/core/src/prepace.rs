//! S1–S2 prepacing that produces the rotating-wave initial condition, and
//! transfer of a stored state onto other meshes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{CellParams, TissueState};
use crate::error::PrepaceError;
use crate::features::VM_THRESHOLD;
use crate::geometry::{GeometryParam, Point2};
use crate::math;
use crate::mesh::{generate_mesh, Domain, PointLocator, TriMesh};
use crate::observe::{ElectrodeArray, VmProbe, REFERENCE_ELECTRODE};
use crate::solver::{DiffusionField, Integrator, Rect, Stimulus, TissueConstants};

/// Everything that defines one prepacing run.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepaceProtocol {
    /// Reference hole, a circle of radius 9 mm by default.
    pub theta: GeometryParam,
    pub dx: f64,
    pub dt: f64,
    pub gamma: f64,
    pub domain: Domain,
    pub tissue: TissueConstants,
    pub cell: CellParams,
    pub s1: Stimulus,
    pub s2: Option<SecondStimulus>,
    /// Periods at electrode 4 that must be observed before the steady-state
    /// test is applied.
    pub min_periods: usize,
    /// Largest allowed difference between the last two periods [ms].
    pub steady_tol: f64,
    /// The run gives up after this time [ms].
    pub max_duration: f64,
}

impl Default for PrepaceProtocol {
    fn default() -> Self {
        Self {
            theta: GeometryParam::new(9.0, 9.0, 0.0).expect("valid reference circle"),
            dx: 1.0,
            dt: 0.5,
            gamma: 0.8,
            domain: Domain::default(),
            tissue: TissueConstants::default(),
            cell: CellParams::default(),
            s1: Stimulus { region: Rect { x0: 0.0, y0: 0.0, x1: 2.0, y1: 100.0 }, start: 0.0, duration: 2.0, value: 1.0 },
            s2: Some(SecondStimulus::default()),
            min_periods: 4,
            steady_tol: 2.0,
            max_duration: 20_000.0,
        }
    }
}

/// When the second stimulus fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum S2Timing {
    /// Fixed onset [ms].
    At(f64),
    /// `interval` ms after the first upward crossing of the activation
    /// threshold at `probe`, rounded up to the next time step.
    Coupled { probe: Point2, interval: f64 },
}

/// Premature stimulus that breaks the S1 wave into a one-way wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondStimulus {
    pub region: Rect,
    pub timing: S2Timing,
    pub duration: f64,
    pub value: f64,
}

impl Default for SecondStimulus {
    /// A strip from the top of the reference hole to the upper domain edge,
    /// fired while tissue to its right is still refractory, so the wave
    /// leaves leftwards and circulates counter-clockwise.
    fn default() -> Self {
        Self {
            region: Rect { x0: 46.0, y0: 55.0, x1: 54.0, y1: 100.0 },
            timing: S2Timing::Coupled { probe: Point2::new(54.0, 80.0), interval: DEFAULT_COUPLING },
            duration: 2.0,
            value: 1.0,
        }
    }
}

/// Default S2 coupling interval [ms].
pub const DEFAULT_COUPLING: f64 = 275.0;

/// Resting tissue is declared once `max vm` falls below this after all
/// stimuli have ended.
const REST_LEVEL: f64 = 0.01;

impl PrepaceProtocol {
    fn field(&self) -> DiffusionField {
        DiffusionField::new(&self.tissue, self.gamma)
    }

    fn s2_at(&self, start: f64) -> Option<Stimulus> {
        self.s2.map(|s| Stimulus { region: s.region, start, duration: s.duration, value: s.value })
    }

    /// Protocol parameters as `key=value` lines.
    pub fn metadata(&self) -> String {
        let rect = |r: &Rect| format!("{},{},{},{}", r.x0, r.y0, r.x1, r.y1);
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        line("theta", format!("{},{},{}", self.theta.a, self.theta.b, self.theta.phi));
        line("center", format!("{},{}", self.theta.center.x, self.theta.center.y));
        line("dx", format!("{}", self.dx));
        line("dt", format!("{}", self.dt));
        line("gamma", format!("{}", self.gamma));
        line("domain", format!("{},{},{},{}", self.domain.x0, self.domain.y0, self.domain.x1, self.domain.y1));
        line("s1_region", rect(&self.s1.region));
        line("s1_start", format!("{}", self.s1.start));
        line("s1_duration", format!("{}", self.s1.duration));
        match &self.s2 {
            Some(s2) => {
                line("s2_region", rect(&s2.region));
                match s2.timing {
                    S2Timing::At(t) => line("s2_start", format!("{t}")),
                    S2Timing::Coupled { probe, interval } => {
                        line("s2_probe", format!("{},{}", probe.x, probe.y));
                        line("s2_coupling", format!("{interval}"));
                    }
                }
                line("s2_duration", format!("{}", s2.duration));
            }
            None => line("s2_region", String::from("none")),
        }
        line("steady_tol", format!("{}", self.steady_tol));
        out
    }
}

/// Reference mesh and the state at the end of prepacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub mesh: TriMesh,
    pub state: TissueState,
    /// `key=value` protocol description stored alongside the state.
    pub metadata: String,
}

/// Outcome details of a prepacing run besides the snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepaceReport {
    /// Activation times at electrode 4 [ms].
    pub activations: Vec<f64>,
    pub last_period: f64,
    pub previous_period: f64,
}

fn last_two_periods(acts: &[f64]) -> Option<(f64, f64)> {
    match acts {
        [.., a, b, c] => Some((c - b, b - a)),
        _ => None,
    }
}

/// Paces the reference mesh until the rotation period at electrode 4 is
/// steady.
pub fn run_prepacing(protocol: &PrepaceProtocol) -> Result<(Snapshot, PrepaceReport), PrepaceError> {
    let mesh = generate_mesh(&protocol.theta, protocol.dx, protocol.domain)?;
    let probe = VmProbe::new(&mesh, &ElectrodeArray::default())?;
    let reference = probe.stencils[REFERENCE_ELECTRODE - 1];
    let trigger = match protocol.s2.map(|s| s.timing) {
        Some(S2Timing::Coupled { probe: p, .. }) => {
            let at = ElectrodeArray { positions: vec![[p.x, p.y, 0.0]] };
            Some(VmProbe::new(&mesh, &at)?.stencils[0])
        }
        _ => None,
    };
    let read = |(tri, l): ([u32; 3], [f64; 3]), vm: &[f64]| {
        l[0] * vm[tri[0] as usize] + l[1] * vm[tri[1] as usize] + l[2] * vm[tri[2] as usize]
    };

    let dt = protocol.dt;
    let mut integrator = Integrator::new(&mesh, &protocol.field(), &protocol.cell, dt, &[protocol.s1])?;
    let mut stimulus_end = protocol.s1.start + protocol.s1.duration;
    let mut s2_pending = protocol.s2.is_some();
    if let Some(SecondStimulus { timing: S2Timing::At(start), .. }) = protocol.s2 {
        let s2 = protocol.s2_at(start).expect("s2 present");
        integrator.add_stimulus(&mesh, s2);
        stimulus_end = stimulus_end.max(start + s2.duration);
        s2_pending = false;
    }
    let mut state = TissueState::resting(mesh.nodes.len());
    let mut activations = Vec::new();
    let mut previous = read(reference, &state.vm);
    let mut trigger_previous = trigger.map(|t| read(t, &state.vm));
    let mut step = 0usize;
    loop {
        let t = step as f64 * dt;
        integrator.step(&mut state, t)?;
        step += 1;
        state.t = step as f64 * dt;
        if !state.vm.iter().all(|v| v.is_finite()) {
            return Err(crate::error::SolverError::NonFinite { step }.into());
        }
        if let (true, Some(stencil), Some(before)) = (s2_pending, trigger, trigger_previous) {
            let v = read(stencil, &state.vm);
            if before <= VM_THRESHOLD && v > VM_THRESHOLD {
                let Some(SecondStimulus { timing: S2Timing::Coupled { interval, .. }, .. }) = protocol.s2 else {
                    unreachable!("trigger only exists for coupled timing")
                };
                let crossing = t + (VM_THRESHOLD - before) / (v - before) * dt;
                let start = math::ceil((crossing + interval) / dt) * dt;
                let s2 = protocol.s2_at(start).expect("s2 present");
                integrator.add_stimulus(&mesh, s2);
                stimulus_end = stimulus_end.max(start + s2.duration);
                s2_pending = false;
            }
            trigger_previous = Some(v);
        }
        let v = read(reference, &state.vm);
        if previous <= VM_THRESHOLD && v > VM_THRESHOLD {
            activations.push(t + (VM_THRESHOLD - previous) / (v - previous) * dt);
            if activations.len() > protocol.min_periods {
                let (last, prev) = last_two_periods(&activations).expect("at least two periods");
                if math::abs(last - prev) < protocol.steady_tol {
                    let snapshot = Snapshot { mesh, state, metadata: protocol.metadata() };
                    let report = PrepaceReport { activations, last_period: last, previous_period: prev };
                    return Ok((snapshot, report));
                }
            }
        }
        previous = v;
        if !s2_pending && state.t > stimulus_end && step % 20 == 0 && state.max_vm() < REST_LEVEL {
            return Err(PrepaceError::NoSpiral { activations: activations.len(), max_vm: state.max_vm() });
        }
        if state.t >= protocol.max_duration {
            return Err(match last_two_periods(&activations) {
                Some((last, previous)) => PrepaceError::NotSteady { last, previous },
                None => PrepaceError::NoSpiral { activations: activations.len(), max_vm: state.max_vm() },
            });
        }
    }
}

/// Closest point on a segment and its parameter in [0, 1].
fn project_on_segment(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let s = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    let q = Point2::new(a.x + s * dx, a.y + s * dy);
    (s, p.dist(q))
}

/// Interpolates a stored state onto `target`. Nodes inside a source
/// triangle use its linear interpolant. Other nodes take the linear
/// interpolant at the closest point of the source boundary. The gate is
/// clamped to [0, 1].
pub fn transfer_state(snap: &Snapshot, target: &TriMesh) -> TissueState {
    let src = &snap.mesh;
    let locator = PointLocator::new(src);
    let mut boundary: Option<Vec<(u32, u32)>> = None;
    let n = target.nodes.len();
    let mut out = TissueState { vm: vec![0.0; n], h: vec![0.0; n], t: snap.state.t };
    for (k, &p) in target.nodes.iter().enumerate() {
        let (idx, w) = match locator.locate(src, p) {
            Some((t, l)) => {
                let tri = src.triangles[t];
                match tri.iter().position(|&i| src.nodes[i as usize] == p) {
                    Some(c) => {
                        let mut w = [0.0; 3];
                        w[c] = 1.0;
                        (tri, w)
                    }
                    None => (tri, l),
                }
            }
            None => {
                let edges = boundary.get_or_insert_with(|| src.boundary_edges());
                let mut best = (f64::INFINITY, 0u32, 0u32, 0.0);
                for &(i, j) in edges.iter() {
                    let (s, d) = project_on_segment(p, src.nodes[i as usize], src.nodes[j as usize]);
                    if d < best.0 {
                        best = (d, i, j, s);
                    }
                }
                let (_, i, j, s) = best;
                ([i, j, j], [1.0 - s, s, 0.0])
            }
        };
        let mix = |f: &[f64]| w[0] * f[idx[0] as usize] + w[1] * f[idx[1] as usize] + w[2] * f[idx[2] as usize];
        out.vm[k] = mix(&snap.state.vm);
        out.h[k] = mix(&snap.state.h).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_grid;

    fn snapshot_from(mesh: TriMesh, f: impl Fn(Point2) -> f64) -> Snapshot {
        let vm: Vec<f64> = mesh.nodes.iter().map(|&p| f(p)).collect();
        let h = vm.iter().map(|v| 1.0 - 0.5 * v).collect();
        Snapshot { mesh, state: TissueState { vm, h, t: 0.0 }, metadata: String::new() }
    }

    fn hole(a: f64, b: f64) -> GeometryParam {
        GeometryParam::new(a, b, 0.0).unwrap()
    }

    #[test]
    fn identity_transfer_is_exact() {
        let mesh = generate_mesh(&hole(9.0, 9.0), 1.0, Domain::default()).unwrap();
        let snap = snapshot_from(mesh.clone(), |p| 0.5 + 0.5 * (p.x * 0.1).sin() * (p.y * 0.07).cos());
        assert_eq!(transfer_state(&snap, &mesh), snap.state);
    }

    #[test]
    fn constants_survive_any_target() {
        let snap = snapshot_from(generate_mesh(&hole(9.0, 9.0), 1.0, Domain::default()).unwrap(), |_| 0.42);
        for target in [
            generate_mesh(&hole(10.0, 4.0), 1.0, Domain::default()).unwrap(),
            generate_mesh(&hole(14.0, 3.0), 0.5, Domain::default()).unwrap(),
        ] {
            let out = transfer_state(&snap, &target);
            assert!(out.vm.iter().all(|v| (v - 0.42).abs() < 1e-12));
            assert!(out.h.iter().all(|v| (v - 0.79).abs() < 1e-12));
        }
    }

    #[test]
    fn linear_fields_are_reproduced() {
        let src = structured_grid(1.0, Domain::default()).unwrap();
        let snap = snapshot_from(src, |p| 0.003 * p.x - 0.002 * p.y + 0.4);
        let target = generate_mesh(&hole(10.0, 4.0), 0.5, Domain::default()).unwrap();
        let out = transfer_state(&snap, &target);
        for (v, p) in out.vm.iter().zip(&target.nodes) {
            assert!((v - (0.003 * p.x - 0.002 * p.y + 0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_field_error_is_second_order_small() {
        let f = |p: Point2| 0.5 + 0.5 * (p.x / 7.0).sin() * (p.y / 9.0).cos();
        let snap = snapshot_from(generate_mesh(&hole(9.0, 9.0), 1.0, Domain::default()).unwrap(), f);
        let target = generate_mesh(&hole(9.0, 9.0), 0.5, Domain::default()).unwrap();
        let out = transfer_state(&snap, &target);
        let worst = out.vm.iter().zip(&target.nodes).map(|(v, p)| (v - f(*p)).abs()).fold(0.0, f64::max);
        // interpolation error bound h²/8 · max|f''| with |f''| ≤ 0.5/49
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn nodes_in_the_source_hole_use_the_boundary() {
        let snap = snapshot_from(generate_mesh(&hole(12.0, 12.0), 1.0, Domain::default()).unwrap(), |p| p.x / 100.0);
        let target = generate_mesh(&hole(4.0, 4.0), 1.0, Domain::default()).unwrap();
        let out = transfer_state(&snap, &target);
        let (lo, hi) = snap.state.vm.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        for (v, p) in out.vm.iter().zip(&target.nodes) {
            assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            // the source boundary sits at radius 12 around (50, 50)
            if p.dist(Point2::new(50.0, 50.0)) < 11.0 {
                let t = (p.y - 50.0).atan2(p.x - 50.0);
                assert!((v - (50.0 + 12.0 * t.cos()) / 100.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn gate_is_clamped() {
        let mesh = structured_grid(1.0, Domain { x0: 0.0, y0: 0.0, x1: 4.0, y1: 4.0 }).unwrap();
        let mut snap = snapshot_from(mesh.clone(), |_| 0.0);
        snap.state.h.iter_mut().enumerate().for_each(|(k, h)| *h = if k % 2 == 0 { 1.2 } else { -0.1 });
        let out = transfer_state(&snap, &mesh);
        assert!(out.h.iter().all(|h| (0.0..=1.0).contains(h)));
    }

    #[test]
    fn s1_alone_returns_to_rest() {
        let protocol = PrepaceProtocol { s2: None, ..Default::default() };
        match run_prepacing(&protocol) {
            Err(PrepaceError::NoSpiral { activations, max_vm }) => {
                assert_eq!(activations, 1);
                assert!(max_vm < 0.01);
            }
            other => panic!("expected NoSpiral, got {other:?}"),
        }
    }

    #[test]
    fn metadata_lists_the_protocol() {
        let m = PrepaceProtocol::default().metadata();
        assert!(m.contains("gamma=0.8\n"));
        assert!(m.contains("s1_region=0,0,2,100\n"));
        assert!(m.contains("s2_coupling=275\n"));
        let none = PrepaceProtocol { s2: None, ..Default::default() }.metadata();
        assert!(none.contains("s2_region=none\n"));
    }
}
