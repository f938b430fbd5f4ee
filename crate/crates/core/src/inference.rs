//! Prior, compressed likelihood, forward model and the estimate of the
//! discretization covariance.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
use core::sync::atomic::{AtomicU64, Ordering};

use crate::cell::{CellParams, TissueState};
use crate::error::{FeatureError, ModelError, SolverError};
use crate::features::{
    features_from_egm, features_from_vm, find_t0, upward_crossings, FeatureVector, FEATURE_LEN, VM_THRESHOLD,
};
use crate::geometry::GeometryParam;
use crate::math;
use crate::mesh::{generate_mesh, relocate_mesh, Domain, Provenance, TriMesh};
use crate::observe::{
    add_noise, EgmConstants, ELECTRODE_HEIGHT, EgmOperator, EgmQuadrature, EgmTraces, ElectrodeArray, VmProbe, DTAU,
    REFERENCE_ELECTRODE,
};
use crate::prepace::{transfer_state, Snapshot};
use crate::solver::{run_forward_with, DiffusionField, ForwardOptions, TissueConstants};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent uniform priors on `a`, `b` [mm] and `φ` [rad].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub phi: (f64, f64),
}

impl Default for Prior {
    fn default() -> Self {
        Self { a: (2.0, 16.0), b: (2.0, 16.0), phi: (-FRAC_PI_2, FRAC_PI_2) }
    }
}

impl Prior {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(x[0], self.a) && inside(x[1], self.b) && inside(x[2], self.phi)
    }

    pub fn log_density(&self, x: &[f64; 3]) -> f64 {
        if self.contains(x) {
            -math::ln((self.a.1 - self.a.0) * (self.b.1 - self.b.0) * (self.phi.1 - self.phi.0))
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn midpoint(&self) -> [f64; 3] {
        [0.5 * (self.a.0 + self.a.1), 0.5 * (self.b.0 + self.b.1), 0.5 * (self.phi.0 + self.phi.1)]
    }
}

/// Log prior of a geometry under the default prior.
pub fn log_prior(theta: &GeometryParam) -> f64 {
    Prior::default().log_density(&theta.to_array())
}

/// Diagonal measurement covariance: LAT errors of 1 ms give variance 0.1
/// on the period and 1.0 on each relative activation time.
pub fn build_sigma_eps() -> [f64; FEATURE_LEN] {
    let mut d = [1.0; FEATURE_LEN];
    d[0] = 0.1;
    d
}

/// `Σ = Σ_ε′ + Σ_d`, both diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_eps: [f64; FEATURE_LEN],
    pub sigma_d: [f64; FEATURE_LEN],
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_eps: build_sigma_eps(), sigma_d: [0.0; FEATURE_LEN] }
    }
}

impl NoiseModel {
    pub fn total(&self) -> [f64; FEATURE_LEN] {
        let mut t = [0.0; FEATURE_LEN];
        for i in 0..FEATURE_LEN {
            t[i] = self.sigma_eps[i] + self.sigma_d[i];
        }
        t
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_eps.iter().chain(&self.sigma_d).all(|v| v.is_finite() && *v >= 0.0)
            && self.total().iter().all(|v| *v > 0.0)
    }

    /// Gaussian log-density of the data features given model features.
    pub fn log_density(&self, data: &FeatureVector, model: &FeatureVector) -> f64 {
        let (y, s) = (data.to_array(), model.to_array());
        let total = self.total();
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for i in 0..FEATURE_LEN {
            let d = y[i] - s[i];
            quad += d * d / total[i];
            log_det += math::ln(total[i]);
        }
        -0.5 * quad - 0.5 * (FEATURE_LEN as f64 * LN_2PI + log_det)
    }
}

/// How a proposal's mesh is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshStrategy {
    Independent,
    NodeRelocation,
}

/// Numerical and physical settings shared by every forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dx: f64,
    pub dt: f64,
    pub gamma: f64,
    /// Length of each simulation from the prepaced state [ms].
    pub t_experiment: f64,
    pub domain: Domain,
    pub tissue: TissueConstants,
    pub cell: CellParams,
    pub egm: EgmConstants,
    pub quadrature: EgmQuadrature,
    pub electrodes: ElectrodeArray,
    /// The observation window opens this long before `T0`, rounded down to
    /// the sampling grid [ms].
    pub window_lead: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dx: 1.0,
            dt: 0.5,
            gamma: 0.8,
            t_experiment: 2000.0,
            domain: Domain::default(),
            tissue: TissueConstants::default(),
            cell: CellParams::default(),
            egm: EgmConstants::default(),
            quadrature: EgmQuadrature::default(),
            electrodes: ElectrodeArray::with_offset(ELECTRODE_HEIGHT),
            window_lead: 20.0,
        }
    }
}

impl ModelConfig {
    /// Solver steps per 4 ms sample.
    pub fn sample_stride(&self) -> Result<usize, SolverError> {
        let k = math::round(DTAU / self.dt);
        if k < 1.0 || math::abs(k * self.dt - DTAU) > 1e-9 {
            return Err(SolverError::InvalidTiming("the 4 ms sampling interval must be a multiple of dt"));
        }
        Ok(k as usize)
    }

    pub fn field(&self) -> DiffusionField {
        DiffusionField::new(&self.tissue, self.gamma)
    }
}

/// Electrode recordings of one simulation on the full 4 ms grid from t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// Transmembrane potential interpolated at each electrode.
    pub vm: Vec<Vec<f64>>,
    /// Pseudo-electrograms, when requested.
    pub egm: Option<Vec<Vec<f64>>>,
}

/// Start of the observation window and the `T0` it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub t0: f64,
    pub start: f64,
    /// Column of `start` in a [`Recording`].
    pub column: usize,
}

/// Locates `T0` at electrode 4 and opens the window `lead` ms earlier.
pub fn observation_window(vm_reference: &[f64], lead: f64) -> Result<Window, FeatureError> {
    let acts = upward_crossings(vm_reference, 0.0, DTAU, VM_THRESHOLD);
    let t0 = find_t0(&acts, REFERENCE_ELECTRODE)?;
    let column = math::floor((t0 - lead).max(0.0) / DTAU) as usize;
    Ok(Window { t0, start: column as f64 * DTAU, column })
}

fn tail(rows: &[Vec<f64>], column: usize) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r[column.min(r.len())..].to_vec()).collect()
}

/// Solves the monodomain model from the prepaced state on arbitrary meshes.
#[derive(Debug)]
pub struct ForwardModel {
    pub config: ModelConfig,
    pub snapshot: Snapshot,
    solves: AtomicU64,
}

impl ForwardModel {
    pub fn new(config: ModelConfig, snapshot: Snapshot) -> Self {
        Self { config, snapshot, solves: AtomicU64::new(0) }
    }

    /// Number of forward solves started so far.
    pub fn solve_count(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn independent_mesh(&self, theta: &GeometryParam) -> Result<TriMesh, ModelError> {
        Ok(generate_mesh(theta, self.config.dx, self.config.domain)?)
    }

    /// Mesh for `theta` under `strategy`; relocation starts from `base`
    /// when one is given.
    pub fn mesh_for(
        &self,
        theta: &GeometryParam,
        strategy: MeshStrategy,
        base: Option<&TriMesh>,
    ) -> Result<TriMesh, ModelError> {
        match (strategy, base) {
            (MeshStrategy::NodeRelocation, Some(base)) => Ok(relocate_mesh(base, theta)?),
            _ => self.independent_mesh(theta),
        }
    }

    /// Runs one experiment on `mesh` and records the electrodes.
    pub fn simulate(&self, mesh: &TriMesh, with_egm: bool) -> Result<Recording, ModelError> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let cfg = &self.config;
        let stride = cfg.sample_stride()?;
        let probe = VmProbe::new(mesh, &cfg.electrodes)?;
        let egm_op = with_egm.then(|| EgmOperator::new(mesh, &cfg.electrodes, &cfg.egm, cfg.quadrature));
        let mut init: TissueState = transfer_state(&self.snapshot, mesh);
        init.t = 0.0;
        let m = cfg.electrodes.len();
        let columns = math::floor(cfg.t_experiment / DTAU) as usize + 1;
        let mut vm = vec![Vec::with_capacity(columns); m];
        let mut egm = egm_op.as_ref().map(|_| vec![Vec::with_capacity(columns); m]);
        let mut col = vec![0.0; m];
        let opts = ForwardOptions { dt: cfg.dt, t_end: cfg.t_experiment, store_every: 0 };
        run_forward_with(mesh, &init, &cfg.field(), &cfg.cell, &opts, &[], &mut |k, s| {
            if k % stride != 0 {
                return;
            }
            probe.apply(&s.vm, &mut col);
            vm.iter_mut().zip(&col).for_each(|(r, v)| r.push(*v));
            if let (Some(op), Some(rows)) = (&egm_op, egm.as_mut()) {
                op.apply(&s.vm, &mut col);
                rows.iter_mut().zip(&col).for_each(|(r, v)| r.push(*v));
            }
        })?;
        Ok(Recording { vm, egm })
    }

    /// Characterizing quantities of the model on `mesh`.
    pub fn features(&self, mesh: &TriMesh) -> Result<FeatureVector, ModelError> {
        let rec = self.simulate(mesh, false)?;
        let w = observation_window(&rec.vm[REFERENCE_ELECTRODE - 1], self.config.window_lead)?;
        Ok(features_from_vm(&tail(&rec.vm, w.column), w.start, DTAU)?)
    }
}

/// Noisy electrograms of the true geometry and the features read from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub theta_true: GeometryParam,
    pub traces: EgmTraces,
    pub clean: EgmTraces,
    pub window: Window,
    pub features: FeatureVector,
}

/// Simulates the true geometry, cuts the observation window and adds
/// measurement noise.
pub fn generate_synthetic_data(
    model: &ForwardModel,
    theta_true: &GeometryParam,
    sigma2: f64,
    seed: u64,
) -> Result<SyntheticData, ModelError> {
    let mesh = model.independent_mesh(theta_true)?;
    let rec = model.simulate(&mesh, true)?;
    let window = observation_window(&rec.vm[REFERENCE_ELECTRODE - 1], model.config.window_lead)?;
    let egm = rec.egm.expect("electrograms were requested");
    let clean = EgmTraces { values: tail(&egm, window.column), tau0: window.start, dtau: DTAU, seed: 0, sigma2: 0.0 };
    let traces = add_noise(&clean, sigma2, seed);
    let features = features_from_egm(&traces.values, traces.tau0, traces.dtau)?;
    Ok(SyntheticData { theta_true: *theta_true, traces, clean, window, features })
}

/// One likelihood evaluation and the mesh it used.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub log_likelihood: f64,
    pub mesh: TriMesh,
    /// `None` when the model lost its reentry.
    pub features: Option<FeatureVector>,
}

impl LikelihoodEval {
    pub fn fell_back(&self) -> bool {
        self.mesh.provenance == Provenance::RelocationFallback
    }
}

/// Log-likelihood of the data features at `theta`. A lost reentry gives
/// `−∞`; numerical failures are returned as errors.
pub fn log_likelihood(
    model: &ForwardModel,
    data: &FeatureVector,
    theta: &GeometryParam,
    noise: &NoiseModel,
    strategy: MeshStrategy,
    base: Option<&TriMesh>,
) -> Result<LikelihoodEval, ModelError> {
    let mesh = model.mesh_for(theta, strategy, base)?;
    match model.features(&mesh) {
        Ok(f) => Ok(LikelihoodEval { log_likelihood: noise.log_density(data, &f), mesh, features: Some(f) }),
        Err(e) if e.is_no_reentry() => Ok(LikelihoodEval { log_likelihood: f64::NEG_INFINITY, mesh, features: None }),
        Err(e) => Err(e),
    }
}

/// Runs independent jobs, possibly in parallel, returning results in
/// index order.
pub trait BatchRunner: Sync {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchRunner for Sequential {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(job).collect()
    }
}

/// Perturbation sweep used to estimate the discretization covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaDSweep {
    /// Meshes are built for `a_ref − half_width + step·s`.
    pub half_width: f64,
    pub step: f64,
    pub count: usize,
    pub inflation: f64,
    pub decimals: i32,
}

impl Default for SigmaDSweep {
    fn default() -> Self {
        Self { half_width: 0.5, step: 0.02, count: 51, inflation: 1.3, decimals: 1 }
    }
}

impl SigmaDSweep {
    pub fn perturbed_a(&self, a_ref: f64) -> Vec<f64> {
        (0..self.count).map(|s| a_ref - self.half_width + self.step * s as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDEstimate {
    /// Inflated and rounded variances, the diagonal of `Σ_d`.
    pub diagonal: [f64; FEATURE_LEN],
    /// Plain sample variances over the successful configurations.
    pub variance: [f64; FEATURE_LEN],
    pub perturbed_a: Vec<f64>,
    pub features: Vec<Option<FeatureVector>>,
    /// Configurations whose relocation onto the reference failed and were
    /// meshed independently instead.
    pub fallbacks: Vec<usize>,
    /// Configurations that produced no features, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = (0..decimals).fold(1.0, |s, _| s * 10.0);
    math::round(v * scale) / scale
}

/// Solves the reference geometry on meshes built for perturbed long
/// semi-axes and relocated onto the reference; the spread of the features
/// estimates the discretization error.
pub fn estimate_sigma_d(
    model: &ForwardModel,
    theta_ref: &GeometryParam,
    sweep: &SigmaDSweep,
    runner: &impl BatchRunner,
) -> Result<SigmaDEstimate, ModelError> {
    let perturbed_a = sweep.perturbed_a(theta_ref.a);
    let job = |s: usize| -> Result<(bool, Result<FeatureVector, ModelError>), ModelError> {
        let mut theta = *theta_ref;
        theta.a = perturbed_a[s];
        let base = model.independent_mesh(&theta)?;
        let mesh = relocate_mesh(&base, theta_ref)?;
        let fell_back = mesh.provenance == Provenance::RelocationFallback;
        Ok((fell_back, model.features(&mesh)))
    };
    let results = runner.map(sweep.count, &job);
    let mut features = Vec::with_capacity(sweep.count);
    let mut fallbacks = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        let (fell_back, f) = r?;
        if fell_back {
            fallbacks.push(s);
        }
        match f {
            Ok(f) => features.push(Some(f)),
            Err(e) if e.is_no_reentry() => {
                failures.push((s, e.to_string()));
                features.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let ok: Vec<[f64; FEATURE_LEN]> = features.iter().flatten().map(|f| f.to_array()).collect();
    let mut variance = [0.0; FEATURE_LEN];
    if ok.len() >= 2 {
        let n = ok.len() as f64;
        for i in 0..FEATURE_LEN {
            let mean = ok.iter().map(|v| v[i]).sum::<f64>() / n;
            variance[i] = ok.iter().map(|v| (v[i] - mean) * (v[i] - mean)).sum::<f64>() / (n - 1.0);
        }
    }
    let mut diagonal = [0.0; FEATURE_LEN];
    for i in 0..FEATURE_LEN {
        diagonal[i] = round_to(variance[i] * sweep.inflation, sweep.decimals);
    }
    Ok(SigmaDEstimate { diagonal, variance, perturbed_a, features, fallbacks, failures })
}

/// One point of a likelihood scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub theta: GeometryParam,
    pub log_likelihood: f64,
    pub nodes: usize,
    pub provenance: Provenance,
}

/// Log-likelihood along a list of geometries. Under node relocation every
/// point is relocated from the same `base`.
pub fn likelihood_scan(
    model: &ForwardModel,
    data: &FeatureVector,
    noise: &NoiseModel,
    thetas: &[GeometryParam],
    strategy: MeshStrategy,
    base: Option<&TriMesh>,
    runner: &impl BatchRunner,
) -> Result<Vec<ScanPoint>, ModelError> {
    let job = |i: usize| {
        log_likelihood(model, data, &thetas[i], noise, strategy, base).map(|e| ScanPoint {
            theta: thetas[i],
            log_likelihood: e.log_likelihood,
            nodes: e.mesh.nodes.len(),
            provenance: e.mesh.provenance,
        })
    };
    runner.map(thetas.len(), &job).into_iter().collect()
}

/// Log-density of the prior volume, `−ln(14·14·π)` for the default prior.
pub fn default_log_prior_constant() -> f64 {
    -math::ln(14.0 * 14.0 * PI)
}
