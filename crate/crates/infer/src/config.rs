//! TOML run configuration. Unknown keys are rejected and every omitted key
//! takes its documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reentry_core::cell::CellParams;
use reentry_core::geometry::{GeometryParam, Point2};
use reentry_core::inference::{build_sigma_eps, MeshStrategy, ModelConfig, NoiseModel, Prior, SigmaDSweep};
use reentry_core::mesh::Domain;
use reentry_core::observe::{EgmConstants, EgmQuadrature, ElectrodeArray, ELECTRODE_HEIGHT};
use reentry_core::prepace::{PrepaceProtocol, S2Timing, SecondStimulus};
use reentry_core::sampler::{ProposalConfig, ProposalMode};
use reentry_core::solver::{Rect, Stimulus, TissueConstants};

use crate::error::InferError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for measurement noise and for the chain.
    pub seed: u64,
    /// Output directory; relative paths below are resolved against it.
    pub out: PathBuf,
    pub tissue: TissueConfig,
    pub cell: CellConfig,
    pub model: ModelSection,
    pub prepace: PrepaceConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub sigma_d: SigmaDConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub diagnose: DiagnoseConfig,
    pub scan: ScanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            tissue: TissueConfig::default(),
            cell: CellConfig::default(),
            model: ModelSection::default(),
            prepace: PrepaceConfig::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            sigma_d: SigmaDConfig::default(),
            prior: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            diagnose: DiagnoseConfig::default(),
            scan: ScanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueConfig {
    pub sigma_i: f64,
    pub sigma_e: f64,
    pub chi: f64,
    pub c_m: f64,
    /// Bath conductivity for the electrograms [mS/mm].
    pub sigma_b: f64,
}

impl Default for TissueConfig {
    fn default() -> Self {
        let t = TissueConstants::default();
        Self { sigma_i: t.sigma_i, sigma_e: t.sigma_e, chi: t.chi, c_m: t.c_m, sigma_b: EgmConstants::default().sigma_b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub tau_in: f64,
    pub tau_out: f64,
    pub tau_open: f64,
    pub tau_close: f64,
    pub v_gate: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        let c = CellParams::default();
        Self { tau_in: c.tau_in, tau_out: c.tau_out, tau_open: c.tau_open, tau_close: c.tau_close, v_gate: c.v_gate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    Exact,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dx: f64,
    pub dt: f64,
    pub gamma: f64,
    /// Simulated time per experiment [ms]; 2000 for γ ≥ 0.8 and 3000
    /// otherwise when omitted.
    pub t_experiment: Option<f64>,
    /// Lead of the observation window before `T0` [ms].
    pub window_lead: f64,
    pub quadrature: Quadrature,
    /// Height of the electrodes above the tissue plane [mm].
    pub electrode_height: f64,
    /// Membrane potential in mV of one unit of the model `vm`.
    pub vm_scale: f64,
    pub domain: [f64; 4],
    pub center: [f64; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = Domain::default();
        Self {
            dx: 1.0,
            dt: 0.5,
            gamma: 0.8,
            t_experiment: None,
            window_lead: 20.0,
            quadrature: Quadrature::Exact,
            electrode_height: ELECTRODE_HEIGHT,
            vm_scale: EgmConstants::default().vm_scale,
            domain: [d.x0, d.y0, d.x1, d.y1],
            center: [50.0, 50.0],
        }
    }
}

impl ModelSection {
    pub fn resolved_t_experiment(&self) -> f64 {
        self.t_experiment.unwrap_or(if self.gamma >= 0.8 { 2000.0 } else { 3000.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepaceConfig {
    /// Reference hole `[a, b, phi]`.
    pub theta: [f64; 3],
    /// Prepacing resolution; the model resolution when omitted.
    pub dx: Option<f64>,
    /// Conduction slowing during prepacing.
    pub gamma: f64,
    pub s1_region: [f64; 4],
    pub s1_duration: f64,
    pub s2_enabled: bool,
    pub s2_region: [f64; 4],
    /// Electrode-free probe whose S1 upstroke times the S2.
    pub s2_probe: [f64; 2],
    pub s2_coupling: f64,
    pub s2_duration: f64,
    pub min_periods: usize,
    pub steady_tol: f64,
    pub max_duration: f64,
}

impl Default for PrepaceConfig {
    fn default() -> Self {
        let p = PrepaceProtocol::default();
        let s2 = SecondStimulus::default();
        let (probe, coupling) = match s2.timing {
            S2Timing::Coupled { probe, interval } => ([probe.x, probe.y], interval),
            S2Timing::At(_) => unreachable!("the default second stimulus is coupled"),
        };
        let r = |r: Rect| [r.x0, r.y0, r.x1, r.y1];
        Self {
            theta: p.theta.to_array(),
            dx: None,
            gamma: p.gamma,
            s1_region: r(p.s1.region),
            s1_duration: p.s1.duration,
            s2_enabled: true,
            s2_region: r(s2.region),
            s2_probe: probe,
            s2_coupling: coupling,
            s2_duration: s2.duration,
            min_periods: p.min_periods,
            steady_tol: p.steady_tol,
            max_duration: p.max_duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub theta_true: [f64; 3],
    /// Variance of the additive electrogram noise.
    pub sigma2: f64,
    pub snapshot: PathBuf,
    pub traces: PathBuf,
    pub features: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            theta_true: [10.0, 4.0, 0.0],
            sigma2: 1e-6,
            snapshot: PathBuf::from("snapshot.mvsnap"),
            traces: PathBuf::from("traces.csv"),
            features: PathBuf::from("features.csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePreset {
    /// `diag(0.1, 1.0, …, 1.0)` from 1 ms activation-time errors.
    Measurement,
    /// `isotropic_variance · I`.
    Isotropic,
    /// The 21 values in `custom`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub preset: NoisePreset,
    pub isotropic_variance: f64,
    pub custom: Vec<f64>,
    /// Add the discretization covariance read from `sigma_d.output`.
    pub use_sigma_d: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { preset: NoisePreset::Measurement, isotropic_variance: 10.0, custom: Vec::new(), use_sigma_d: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaDConfig {
    /// Reference geometry; `data.theta_true` when omitted.
    pub theta_ref: Option<[f64; 3]>,
    pub half_width: f64,
    pub step: f64,
    pub count: usize,
    pub inflation: f64,
    pub decimals: i32,
    pub output: PathBuf,
}

impl Default for SigmaDConfig {
    fn default() -> Self {
        let s = SigmaDSweep::default();
        Self {
            theta_ref: None,
            half_width: s.half_width,
            step: s.step,
            count: s.count,
            inflation: s.inflation,
            decimals: s.decimals,
            output: PathBuf::from("sigma_d.json"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub phi: [f64; 2],
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = Prior::default();
        Self { a: [p.a.0, p.a.1], b: [p.b.0, p.b.1], phi: [p.phi.0, p.phi.1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Adaptive,
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Independent,
    NodeRelocation,
}

impl From<Strategy> for MeshStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Independent => MeshStrategy::Independent,
            Strategy::NodeRelocation => MeshStrategy::NodeRelocation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    A,
    B,
    Phi,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::A => 0,
            Component::B => 1,
            Component::Phi => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerTarget {
    /// Prior times the compressed likelihood of the forward model.
    Posterior,
    /// The Gaussian in `sampler.analytic`; no forward solves.
    Analytic,
}

/// Correlated Gaussian over `[a, b, phi]` for checking the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticTarget {
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

impl Default for AnalyticTarget {
    fn default() -> Self {
        Self { mean: [10.0, 4.0, 0.0], covariance: [[1.0, -0.8, 0.1], [-0.8, 1.0, 0.0], [0.1, 0.0, 0.25]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub target: SamplerTarget,
    pub analytic: AnalyticTarget,
    pub iterations: usize,
    /// Starting point `[a, b, phi]`; components that are not sampled stay
    /// at these values.
    pub x0: [f64; 3],
    /// Sampled components, in chain order.
    pub free: Vec<Component>,
    /// Proposal covariance during warm-up, one value per free component.
    pub sigma0: Vec<f64>,
    pub mode: Mode,
    pub l0: usize,
    pub s_d: f64,
    pub eps: f64,
    pub strategy: Strategy,
    pub checkpoint_every: usize,
    pub chain: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let p = ProposalConfig::<3>::adaptive([[0.0; 3]; 3]);
        Self {
            target: SamplerTarget::Posterior,
            analytic: AnalyticTarget::default(),
            iterations: 10_000,
            x0: Prior::default().midpoint(),
            free: vec![Component::A, Component::B, Component::Phi],
            sigma0: vec![0.0025, 0.0025, 0.0001],
            mode: Mode::Adaptive,
            l0: p.l0,
            s_d: p.s_d,
            eps: p.eps,
            strategy: Strategy::NodeRelocation,
            checkpoint_every: 100,
            chain: PathBuf::from("chain.csv"),
            checkpoint: PathBuf::from("checkpoint"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub burn_in: usize,
    pub bins: usize,
    pub output: PathBuf,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { burn_in: 0, bins: 30, output: PathBuf::from("diagnostics") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Scanned values run from `a_center − half_width` to
    /// `a_center + half_width`; `data.theta_true[0]` when omitted.
    pub a_center: Option<f64>,
    pub half_width: f64,
    pub count: usize,
    pub output: PathBuf,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { a_center: None, half_width: 0.3, count: 60, output: PathBuf::from("scan.csv") }
    }
}

fn rect(r: [f64; 4]) -> Rect {
    Rect { x0: r[0], y0: r[1], x1: r[2], y1: r[3] }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, InferError> {
        let text = std::fs::read_to_string(path).map_err(|e| InferError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| InferError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        let mut resolved = self.clone();
        resolved.model.t_experiment = Some(self.model.resolved_t_experiment());
        resolved.prepace.dx = Some(self.prepace_dx());
        resolved.sigma_d.theta_ref = Some(self.theta_ref_array());
        resolved.scan.a_center = Some(self.scan_center());
        toml::to_string(&resolved).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), InferError> {
        let bad = |m: String| Err(InferError::Config(m));
        let m = &self.model;
        if !(m.electrode_height >= 0.0 && m.electrode_height.is_finite()) {
            return bad(format!("model.electrode_height must be non-negative, got {}", m.electrode_height));
        }
        if !(m.vm_scale > 0.0 && m.vm_scale.is_finite()) {
            return bad(format!("model.vm_scale must be positive, got {}", m.vm_scale));
        }
        if !(m.dx > 0.0 && m.dt > 0.0 && m.gamma > 0.0 && m.gamma <= 1.0) {
            return bad(format!("model: dx, dt must be positive and gamma in (0, 1], got {m:?}"));
        }
        if self.sampler.free.is_empty() || self.sampler.free.len() > 3 {
            return bad("sampler.free must list one to three components".into());
        }
        let mut seen = [false; 3];
        for c in &self.sampler.free {
            if std::mem::replace(&mut seen[c.index()], true) {
                return bad(format!("sampler.free lists {c:?} twice"));
            }
        }
        if self.sampler.sigma0.len() != self.sampler.free.len() || self.sampler.sigma0.iter().any(|v| !(*v > 0.0)) {
            return bad("sampler.sigma0 needs one positive variance per free component".into());
        }
        if self.sampler.checkpoint_every == 0 {
            return bad("sampler.checkpoint_every must be positive".into());
        }
        if self.noise.preset == NoisePreset::Custom && self.noise.custom.len() != 21 {
            return bad(format!("noise.custom needs 21 values, got {}", self.noise.custom.len()));
        }
        if self.scan.count < 2 {
            return bad("scan.count must be at least 2".into());
        }
        for (name, t) in [("data.theta_true", self.data.theta_true), ("prepace.theta", self.prepace.theta)] {
            self.geometry(t).map_err(|e| InferError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.model.center[0], self.model.center[1])
    }

    pub fn geometry(&self, t: [f64; 3]) -> Result<GeometryParam, InferError> {
        GeometryParam::with_center(t[0], t[1], t[2], self.center()).map_err(|e| InferError::Config(e.to_string()))
    }

    pub fn domain(&self) -> Domain {
        let d = self.model.domain;
        Domain { x0: d[0], y0: d[1], x1: d[2], y1: d[3] }
    }

    pub fn tissue_constants(&self) -> TissueConstants {
        let t = self.tissue;
        TissueConstants { sigma_i: t.sigma_i, sigma_e: t.sigma_e, chi: t.chi, c_m: t.c_m }
    }

    pub fn cell_params(&self) -> CellParams {
        let c = self.cell;
        CellParams { tau_in: c.tau_in, tau_out: c.tau_out, tau_open: c.tau_open, tau_close: c.tau_close, v_gate: c.v_gate }
    }

    pub fn prepace_dx(&self) -> f64 {
        self.prepace.dx.unwrap_or(self.model.dx)
    }

    pub fn protocol(&self) -> Result<PrepaceProtocol, InferError> {
        let p = &self.prepace;
        Ok(PrepaceProtocol {
            theta: self.geometry(p.theta)?,
            dx: self.prepace_dx(),
            dt: self.model.dt,
            gamma: p.gamma,
            domain: self.domain(),
            tissue: self.tissue_constants(),
            cell: self.cell_params(),
            s1: Stimulus { region: rect(p.s1_region), start: 0.0, duration: p.s1_duration, value: 1.0 },
            s2: p.s2_enabled.then(|| SecondStimulus {
                region: rect(p.s2_region),
                timing: S2Timing::Coupled { probe: Point2::new(p.s2_probe[0], p.s2_probe[1]), interval: p.s2_coupling },
                duration: p.s2_duration,
                value: 1.0,
            }),
            min_periods: p.min_periods,
            steady_tol: p.steady_tol,
            max_duration: p.max_duration,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            dx: m.dx,
            dt: m.dt,
            gamma: m.gamma,
            t_experiment: m.resolved_t_experiment(),
            domain: self.domain(),
            tissue: self.tissue_constants(),
            cell: self.cell_params(),
            egm: EgmConstants { sigma_b: self.tissue.sigma_b, sigma_i: self.tissue.sigma_i, vm_scale: m.vm_scale },
            quadrature: match m.quadrature {
                Quadrature::Exact => EgmQuadrature::Exact,
                Quadrature::Centroid => EgmQuadrature::Centroid,
            },
            electrodes: ElectrodeArray::with_offset(m.electrode_height),
            window_lead: m.window_lead,
        }
    }

    pub fn prior(&self) -> Prior {
        let p = self.prior;
        Prior { a: (p.a[0], p.a[1]), b: (p.b[0], p.b[1]), phi: (p.phi[0], p.phi[1]) }
    }

    pub fn sigma_eps(&self) -> [f64; 21] {
        match self.noise.preset {
            NoisePreset::Measurement => build_sigma_eps(),
            NoisePreset::Isotropic => [self.noise.isotropic_variance; 21],
            NoisePreset::Custom => {
                let mut d = [0.0; 21];
                d.copy_from_slice(&self.noise.custom);
                d
            }
        }
    }

    /// Measurement covariance plus the given discretization covariance.
    pub fn noise_model(&self, sigma_d: Option<[f64; 21]>) -> NoiseModel {
        NoiseModel { sigma_eps: self.sigma_eps(), sigma_d: sigma_d.unwrap_or([0.0; 21]) }
    }

    pub fn theta_ref_array(&self) -> [f64; 3] {
        self.sigma_d.theta_ref.unwrap_or(self.data.theta_true)
    }

    pub fn sweep(&self) -> SigmaDSweep {
        let s = &self.sigma_d;
        SigmaDSweep {
            half_width: s.half_width,
            step: s.step,
            count: s.count,
            inflation: s.inflation,
            decimals: s.decimals,
        }
    }

    pub fn scan_center(&self) -> f64 {
        self.scan.a_center.unwrap_or(self.data.theta_true[0])
    }

    /// Proposal settings for `D` free components.
    pub fn proposal<const D: usize>(&self) -> ProposalConfig<D> {
        let s = &self.sampler;
        let mut sigma0 = [[0.0; D]; D];
        for (i, row) in sigma0.iter_mut().enumerate() {
            row[i] = s.sigma0[i];
        }
        ProposalConfig {
            sigma0,
            l0: s.l0,
            s_d: s.s_d,
            eps: s.eps,
            mode: match s.mode {
                Mode::Adaptive => ProposalMode::AdaptiveMetropolis,
                Mode::RandomWalk => ProposalMode::RandomWalk,
            },
        }
    }

    /// Resolves `path` against the output directory.
    pub fn path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out.join(path)
        }
    }
}
