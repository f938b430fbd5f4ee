//! The command stages: prepacing, synthetic data, discretization
//! covariance, sampling, diagnostics and likelihood scans.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use reentry_core::features::FeatureVector;
use reentry_core::geometry::ellipse_perimeter;
use reentry_core::inference::{
    estimate_sigma_d, generate_synthetic_data, likelihood_scan as scan_model, BatchRunner, ForwardModel, MeshStrategy,
    NoiseModel, SyntheticData,
};
use reentry_core::linalg::cholesky;
use reentry_core::mesh::TriMesh;
use reentry_core::prepace::{run_prepacing, PrepaceReport};
use reentry_core::sampler::{
    perimeter_structure, run_chain, summarize, AnalyticGaussian, ChainRecord, ChainState,
    Parameterization, PosteriorTarget, Target, TargetCounters,
};

use crate::config::{AnalyticTarget, RunConfig, SamplerTarget};
use crate::error::InferError;
use crate::formats::{
    chain_to_csv, features_to_csv, provenance_name, read_checkpoint, read_features, read_json, read_snapshot,
    scan_to_csv, sidecar_path, table, traces_to_csv, write_atomic, write_checkpoint, write_json, write_snapshot,
    ChainRow, Checkpoint, CheckpointState, ScanRow, SigmaDFile, SweepFailure, TraceMetadata,
};

/// Summary of a prepacing run, written next to the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepaceSummary {
    pub activations: Vec<f64>,
    pub last_period: f64,
    pub previous_period: f64,
    pub nodes: usize,
}

pub fn prepace(cfg: &RunConfig) -> Result<PrepaceReport, InferError> {
    let (snapshot, report) = run_prepacing(&cfg.protocol()?)?;
    let path = cfg.path(&cfg.data.snapshot);
    write_snapshot(&path, &snapshot)?;
    let summary = PrepaceSummary {
        activations: report.activations.clone(),
        last_period: report.last_period,
        previous_period: report.previous_period,
        nodes: snapshot.mesh.nodes.len(),
    };
    write_json(&path.with_extension("json"), &summary)?;
    Ok(report)
}

pub fn load_model(cfg: &RunConfig) -> Result<ForwardModel, InferError> {
    let snapshot = read_snapshot(&cfg.path(&cfg.data.snapshot))?;
    Ok(ForwardModel::new(cfg.model_config(), snapshot))
}

pub fn generate_data(cfg: &RunConfig) -> Result<SyntheticData, InferError> {
    let model = load_model(cfg)?;
    let theta = cfg.geometry(cfg.data.theta_true)?;
    let data = generate_synthetic_data(&model, &theta, cfg.data.sigma2, cfg.seed)?;
    let traces = cfg.path(&cfg.data.traces);
    write_atomic(&traces, traces_to_csv(&data.traces.values).as_bytes())?;
    let mc = &model.config;
    let meta = TraceMetadata {
        theta_true: cfg.data.theta_true,
        seed: cfg.seed,
        sigma2: cfg.data.sigma2,
        tau0: data.traces.tau0,
        dtau: data.traces.dtau,
        t0: data.window.t0,
        t_experiment: mc.t_experiment,
        gamma: mc.gamma,
        dx: mc.dx,
        dt: mc.dt,
        electrodes: mc.electrodes.positions.clone(),
    };
    write_json(&sidecar_path(&traces), &meta)?;
    write_atomic(&cfg.path(&cfg.data.features), features_to_csv(&[data.features]).as_bytes())?;
    Ok(data)
}

pub fn sigma_d(cfg: &RunConfig, runner: &impl BatchRunner) -> Result<SigmaDFile, InferError> {
    let model = load_model(cfg)?;
    let theta_ref = cfg.theta_ref_array();
    let sweep = cfg.sweep();
    let est = estimate_sigma_d(&model, &cfg.geometry(theta_ref)?, &sweep, runner)?;
    let mc = &model.config;
    let file = SigmaDFile {
        diagonal: est.diagonal.to_vec(),
        variance: est.variance.to_vec(),
        theta_ref,
        dx: mc.dx,
        dt: mc.dt,
        gamma: mc.gamma,
        half_width: sweep.half_width,
        step: sweep.step,
        count: sweep.count,
        inflation: sweep.inflation,
        decimals: sweep.decimals,
        perturbed_a: est.perturbed_a,
        fallbacks: est.fallbacks,
        failures: est.failures.into_iter().map(|(index, reason)| SweepFailure { index, reason }).collect(),
    };
    write_json(&cfg.path(&cfg.sigma_d.output), &file)?;
    Ok(file)
}

/// Measurement covariance plus, when configured, the stored
/// discretization covariance.
pub fn load_noise(cfg: &RunConfig) -> Result<NoiseModel, InferError> {
    let sigma_d = if cfg.noise.use_sigma_d {
        let path = cfg.path(&cfg.sigma_d.output);
        let file: SigmaDFile = read_json(&path)?;
        Some(file.diagonal_array(&path)?)
    } else {
        None
    };
    let noise = cfg.noise_model(sigma_d);
    if !noise.is_valid() {
        return Err(InferError::Config("the total covariance must have positive diagonal entries".into()));
    }
    Ok(noise)
}

pub fn load_data_features(cfg: &RunConfig) -> Result<FeatureVector, InferError> {
    let path = cfg.path(&cfg.data.features);
    let rows = read_features(&path)?;
    match rows.as_slice() {
        [f] => Ok(*f),
        _ => Err(InferError::format(&path, format!("expected one feature line, found {}", rows.len()))),
    }
}

/// Chain state that can be checkpointed alongside the rows.
pub trait CheckpointAux: Clone + Sized {
    fn mesh(&self) -> Option<&TriMesh>;
    fn from_mesh(mesh: Option<TriMesh>) -> Option<Self>;
}

impl CheckpointAux for TriMesh {
    fn mesh(&self) -> Option<&TriMesh> {
        Some(self)
    }

    fn from_mesh(mesh: Option<TriMesh>) -> Option<Self> {
        mesh
    }
}

impl CheckpointAux for () {
    fn mesh(&self) -> Option<&TriMesh> {
        None
    }

    fn from_mesh(_: Option<TriMesh>) -> Option<Self> {
        None
    }
}

/// Outcome of a sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub rows: Vec<ChainRow>,
    pub acceptance_rate: f64,
    pub fallback_count: u64,
    pub counters: TargetCounters,
    /// The run stopped early at `stop_after` and can be resumed.
    pub interrupted: bool,
    pub chain_path: PathBuf,
}

fn to_rows<const D: usize>(records: &[ChainRecord<D>], param: &Parameterization<D>) -> Vec<ChainRow> {
    records
        .iter()
        .enumerate()
        .map(|(iter, r)| ChainRow {
            iter,
            theta: param.theta(&r.x),
            log_post: r.log_post,
            accepted: r.accepted,
            fallback: r.fallback,
        })
        .collect()
}

fn strategy_label(cfg: &RunConfig) -> String {
    match cfg.sampler.target {
        SamplerTarget::Posterior => format!("{:?}", cfg.sampler.strategy),
        SamplerTarget::Analytic => "analytic".into(),
    }
}

fn free_indices<const D: usize>(cfg: &RunConfig) -> [usize; D] {
    let mut free = [0; D];
    for (k, c) in cfg.sampler.free.iter().enumerate() {
        free[k] = c.index();
    }
    free
}

#[allow(clippy::too_many_arguments)]
fn run_sampler<const D: usize, T>(
    cfg: &RunConfig,
    target: &T,
    param: &Parameterization<D>,
    resume: bool,
    stop_after: Option<usize>,
    counters: &dyn Fn(&T) -> TargetCounters,
) -> Result<SampleOutcome, InferError>
where
    T: Target<D>,
    T::Aux: CheckpointAux,
{
    let proposal = cfg.proposal::<D>();
    let cp_dir = cfg.path(&cfg.sampler.checkpoint);
    let label = strategy_label(cfg);
    let free: Vec<usize> = param.free.to_vec();
    let mut chain = if resume {
        let cp = read_checkpoint(&cp_dir)?;
        if cp.state.seed != cfg.seed || cp.state.free != free || cp.state.strategy != label {
            return Err(InferError::format(&cp_dir, "checkpoint was written with a different seed, strategy or free set"));
        }
        let word_pos: u128 =
            cp.state.word_pos.parse().map_err(|_| InferError::format(&cp_dir, "bad generator position"))?;
        let records = cp
            .rows
            .iter()
            .map(|r| ChainRecord {
                x: param.free.map(|i| r.theta[i]),
                log_post: r.log_post,
                accepted: r.accepted,
                fallback: r.fallback,
            })
            .collect();
        ChainState::restore(records, T::Aux::from_mesh(cp.mesh), cfg.seed, word_pos)
    } else {
        let x0 = param.project(&param.base);
        ChainState::start(target, x0, cfg.seed).map_err(|e| InferError::InfeasibleStart(e.log_post))?
    };
    let checkpoint = |chain: &ChainState<D, T::Aux>| {
        write_checkpoint(
            &cp_dir,
            &Checkpoint {
                rows: to_rows(&chain.records, param),
                state: CheckpointState {
                    seed: cfg.seed,
                    word_pos: chain.word_pos().to_string(),
                    iterations: chain.iterations(),
                    strategy: label.clone(),
                    free: free.clone(),
                },
                mesh: chain.current_aux.as_ref().and_then(|a| a.mesh().cloned()),
            },
        )
    };
    let total = cfg.sampler.iterations;
    let limit = stop_after.map_or(total, |s| s.min(total));
    let mut failure = None;
    let remaining = limit.saturating_sub(chain.iterations());
    run_chain(&mut chain, target, &proposal, remaining, &mut |c| {
        if c.iterations() % cfg.sampler.checkpoint_every == 0 {
            if let Err(e) = checkpoint(c) {
                failure = Some(e);
                return false;
            }
        }
        true
    });
    if let Some(e) = failure {
        return Err(e);
    }
    checkpoint(&chain)?;
    let rows = to_rows(&chain.records, param);
    let interrupted = chain.iterations() < total;
    let chain_path = cfg.path(&cfg.sampler.chain);
    if !interrupted {
        write_atomic(&chain_path, chain_to_csv(&rows).as_bytes())?;
    }
    Ok(SampleOutcome {
        rows,
        acceptance_rate: chain.acceptance_rate(),
        fallback_count: chain.fallback_count,
        counters: counters(target),
        interrupted,
        chain_path,
    })
}

fn sample_d<const D: usize>(
    cfg: &RunConfig,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<SampleOutcome, InferError> {
    let base = cfg.geometry(cfg.sampler.x0)?;
    let param = Parameterization { free: free_indices::<D>(cfg), base };
    match cfg.sampler.target {
        SamplerTarget::Posterior => {
            let model = load_model(cfg)?;
            let data = load_data_features(cfg)?;
            let noise = load_noise(cfg)?;
            let mut target = PosteriorTarget::new(&model, data, noise, cfg.sampler.strategy.into(), param);
            target.prior = cfg.prior();
            run_sampler(cfg, &target, &param, resume, stop_after, &|t| t.counters())
        }
        SamplerTarget::Analytic => {
            let target = analytic_target::<D>(&cfg.sampler.analytic, &param.free)?;
            run_sampler(cfg, &target, &param, resume, stop_after, &|_| TargetCounters::default())
        }
    }
}

/// The configured Gaussian restricted to the free components.
fn analytic_target<const D: usize>(a: &AnalyticTarget, free: &[usize; D]) -> Result<AnalyticGaussian<D>, InferError> {
    let mut mean = [0.0; D];
    let mut cov = [[0.0; D]; D];
    for (i, &fi) in free.iter().enumerate() {
        mean[i] = a.mean[fi];
        for (j, &fj) in free.iter().enumerate() {
            cov[i][j] = a.covariance[fi][fj];
        }
    }
    if cholesky(&cov).is_none() {
        return Err(InferError::Config("sampler.analytic.covariance must be positive definite".into()));
    }
    Ok(AnalyticGaussian::new(mean, &cov).expect("factor checked above"))
}

/// Runs or resumes the chain. `stop_after` ends the run early after that
/// many iterations, leaving a checkpoint to resume from.
pub fn sample(cfg: &RunConfig, resume: bool, stop_after: Option<usize>) -> Result<SampleOutcome, InferError> {
    match cfg.sampler.free.len() {
        1 => sample_d::<1>(cfg, resume, stop_after),
        2 => sample_d::<2>(cfg, resume, stop_after),
        3 => sample_d::<3>(cfg, resume, stop_after),
        n => Err(InferError::Config(format!("cannot sample {n} components"))),
    }
}

/// Headline statistics of the diagnostics run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub iterations: usize,
    pub acceptance_rate: f64,
    pub mean: [f64; 3],
    pub variance: [f64; 3],
    pub iat: [f64; 3],
    pub map: [f64; 3],
    pub ab_correlation: f64,
    pub variance_along_perimeter_gradient: f64,
    pub variance_along_perimeter_level_set: f64,
    pub output: PathBuf,
}

const COMPONENTS: [&str; 3] = ["a", "b", "phi"];

pub fn diagnose(cfg: &RunConfig) -> Result<DiagnosticsReport, InferError> {
    let chain_path = cfg.path(&cfg.sampler.chain);
    let rows = crate::formats::read_chain(&chain_path)?;
    if rows.len() < 2 {
        return Err(InferError::format(&chain_path, "diagnostics need at least two chain rows"));
    }
    let records: Vec<ChainRecord<3>> = rows
        .iter()
        .map(|r| ChainRecord { x: r.theta, log_post: r.log_post, accepted: r.accepted, fallback: r.fallback })
        .collect();
    let chain = ChainState::<3, ()>::restore(records, None, 0, 0);
    let burn_in = cfg.diagnose.burn_in.min(rows.len() - 2);
    let s = summarize(&chain, burn_in);
    let kept = &rows[burn_in..];
    let ab: Vec<[f64; 2]> = kept.iter().map(|r| [r.theta[0], r.theta[1]]).collect();
    let ps = perimeter_structure(&ab);
    let dir = cfg.path(&cfg.diagnose.output);
    let f = |v: f64| v.to_string();

    let summary = table(
        &["quantity", "value"],
        [
            ("iterations", f(s.iterations as f64)),
            ("burn_in", f(burn_in as f64)),
            ("acceptance_rate", f(s.acceptance_rate)),
            ("fallback_count", f(s.fallback_count as f64)),
            ("map_a", f(s.map[0])),
            ("map_b", f(s.map[1])),
            ("map_phi", f(s.map[2])),
            ("map_log_post", f(s.map_log_post)),
            ("ab_correlation", f(ps.correlation)),
            ("perimeter_gradient_a", f(ps.gradient[0])),
            ("perimeter_gradient_b", f(ps.gradient[1])),
            ("variance_along_perimeter_gradient", f(ps.variance_along_gradient)),
            ("variance_along_perimeter_level_set", f(ps.variance_along_level_set)),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v]),
    );
    write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;

    let components = table(
        &["component", "mean", "variance", "iat", "mc_standard_error", "map"],
        (0..3).map(|i| {
            vec![COMPONENTS[i].into(), f(s.mean[i]), f(s.variance[i]), f(s.iat[i]), f(s.standard_error[i]), f(s.map[i])]
        }),
    );
    write_atomic(&dir.join("components.csv"), components.as_bytes())?;

    let covariance = table(
        &["component", "a", "b", "phi"],
        (0..3).map(|i| {
            let mut row = vec![COMPONENTS[i].to_string()];
            row.extend(s.covariance[i].iter().map(|v| f(*v)));
            row
        }),
    );
    write_atomic(&dir.join("covariance.csv"), covariance.as_bytes())?;

    for (i, name) in COMPONENTS.iter().enumerate() {
        let values: Vec<f64> = kept.iter().map(|r| r.theta[i]).collect();
        let h = reentry_core::sampler::Histogram::new(&values, cfg.diagnose.bins);
        let edges = h.edges();
        let text = table(
            &["bin_lo", "bin_hi", "count"],
            h.counts.iter().enumerate().map(|(k, c)| vec![f(edges[k]), f(edges[k + 1]), c.to_string()]),
        );
        write_atomic(&dir.join(format!("histogram_{name}.csv")), text.as_bytes())?;
    }

    let scatter = table(
        &["iter", "a", "b", "perimeter"],
        kept.iter().map(|r| {
            vec![r.iter.to_string(), f(r.theta[0]), f(r.theta[1]), f(ellipse_perimeter(r.theta[0], r.theta[1]))]
        }),
    );
    write_atomic(&dir.join("ab_scatter.csv"), scatter.as_bytes())?;

    Ok(DiagnosticsReport {
        iterations: s.iterations,
        acceptance_rate: s.acceptance_rate,
        mean: s.mean,
        variance: s.variance,
        iat: s.iat,
        map: s.map,
        ab_correlation: ps.correlation,
        variance_along_perimeter_gradient: ps.variance_along_gradient,
        variance_along_perimeter_level_set: ps.variance_along_level_set,
        output: dir,
    })
}

/// Equally spaced long semi-axes of the scan.
pub fn scan_values(cfg: &RunConfig) -> Vec<f64> {
    let (c, h, n) = (cfg.scan_center(), cfg.scan.half_width, cfg.scan.count);
    (0..n).map(|k| c - h + 2.0 * h * k as f64 / (n - 1) as f64).collect()
}

/// Log-likelihood over the scanned `a` under independent meshing and
/// under relocation from the mesh at the scan centre.
pub fn likelihood_scan(cfg: &RunConfig, runner: &impl BatchRunner) -> Result<Vec<ScanRow>, InferError> {
    let model = load_model(cfg)?;
    let data = load_data_features(cfg)?;
    let noise = load_noise(cfg)?;
    let [_, b, phi] = cfg.data.theta_true;
    let thetas = scan_values(cfg).into_iter().map(|a| cfg.geometry([a, b, phi])).collect::<Result<Vec<_>, _>>()?;
    let base = model.independent_mesh(&cfg.geometry([cfg.scan_center(), b, phi])?)?;
    let mut rows = Vec::new();
    for (name, strategy) in [("independent", MeshStrategy::Independent), ("node-relocation", MeshStrategy::NodeRelocation)] {
        for p in scan_model(&model, &data, &noise, &thetas, strategy, Some(&base), runner)? {
            rows.push(ScanRow {
                strategy: name.into(),
                theta: p.theta.to_array(),
                log_likelihood: p.log_likelihood,
                nodes: p.nodes,
                provenance: provenance_name(&p.provenance).into(),
            });
        }
    }
    write_atomic(&cfg.path(&cfg.scan.output), scan_to_csv(&rows).as_bytes())?;
    Ok(rows)
}
