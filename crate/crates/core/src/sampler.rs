//! Adaptive Metropolis sampling with a meshing-strategy-aware accept step,
//! plus chain diagnostics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::features::FeatureVector;
use crate::geometry::{ellipse_perimeter, GeometryParam};
use crate::inference::{log_likelihood, ForwardModel, MeshStrategy, NoiseModel, Prior};
use crate::linalg::{cholesky, lower_mul, lower_solve, Welford};
use crate::math;
use crate::mesh::TriMesh;

/// Adaptive-proposal defaults.
pub const DEFAULT_L0: usize = 100;
pub const DEFAULT_SD: f64 = 1.152;
pub const DEFAULT_EPS: f64 = 1e-4;

/// Result of evaluating the posterior at a proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<A> {
    pub log_post: f64,
    /// State to carry forward if the proposal is accepted, such as its mesh.
    pub aux: Option<A>,
    /// The requested strategy could not be honoured and a fallback was used.
    pub fallback: bool,
}

/// An unnormalised log-posterior over `D` parameters.
pub trait Target<const D: usize> {
    type Aux: Clone;

    /// Log prior; `−∞` marks a proposal rejected without evaluation.
    fn log_prior(&self, x: &[f64; D]) -> f64;

    /// Log posterior at `x`. `current` is the accepted state's aux value.
    fn evaluate(&self, x: &[f64; D], current: Option<&Self::Aux>) -> Evaluation<Self::Aux>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    RandomWalk,
    AdaptiveMetropolis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig<const D: usize> {
    pub sigma0: [[f64; D]; D],
    pub l0: usize,
    pub s_d: f64,
    pub eps: f64,
    pub mode: ProposalMode,
}

impl<const D: usize> ProposalConfig<D> {
    pub fn adaptive(sigma0: [[f64; D]; D]) -> Self {
        Self { sigma0, l0: DEFAULT_L0, s_d: DEFAULT_SD, eps: DEFAULT_EPS, mode: ProposalMode::AdaptiveMetropolis }
    }

    pub fn random_walk(sigma0: [[f64; D]; D]) -> Self {
        Self { mode: ProposalMode::RandomWalk, ..Self::adaptive(sigma0) }
    }

    pub fn is_valid(&self) -> bool {
        let symmetric = (0..D).all(|i| (0..D).all(|j| self.sigma0[i][j] == self.sigma0[j][i]));
        symmetric && cholesky(&self.sigma0).is_some() && self.l0 >= 1 && self.s_d > 0.0 && self.eps >= 0.0
    }
}

/// One stored chain entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRecord<const D: usize> {
    pub x: [f64; D],
    pub log_post: f64,
    /// Whether this state was reached by accepting a proposal.
    pub accepted: bool,
    /// Whether the proposal evaluated at this iteration used a fallback
    /// mesh.
    pub fallback: bool,
}

/// Everything needed to continue a chain bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<const D: usize, A> {
    pub records: Vec<ChainRecord<D>>,
    pub current_aux: Option<A>,
    pub seed: u64,
    rng: ChaCha8Rng,
    pub stats: Welford<D>,
    pub accepted_count: u64,
    pub fallback_count: u64,
    /// Proposals rejected by the prior without evaluation.
    pub prior_rejections: u64,
    /// Steps whose adaptive covariance was not positive definite.
    pub covariance_fallbacks: u64,
}

/// Returned when the starting point has no posterior mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfeasibleStart {
    pub log_post: f64,
}

/// ChaCha stream reserved for proposals and acceptance draws.
pub const CHAIN_STREAM: u64 = 1;

fn chain_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHAIN_STREAM);
    rng
}

impl<const D: usize, A: Clone> ChainState<D, A> {
    /// Evaluates the starting point and seeds the generator.
    pub fn start<T: Target<D, Aux = A>>(target: &T, x0: [f64; D], seed: u64) -> Result<Self, InfeasibleStart> {
        let lp = target.log_prior(&x0);
        let eval = if lp.is_finite() {
            target.evaluate(&x0, None)
        } else {
            Evaluation { log_post: lp, aux: None, fallback: false }
        };
        if !eval.log_post.is_finite() {
            return Err(InfeasibleStart { log_post: eval.log_post });
        }
        let mut stats = Welford::default();
        stats.push(&x0);
        Ok(Self {
            records: vec![ChainRecord { x: x0, log_post: eval.log_post, accepted: true, fallback: eval.fallback }],
            current_aux: eval.aux,
            seed,
            rng: chain_rng(seed),
            stats,
            accepted_count: 0,
            fallback_count: eval.fallback as u64,
            prior_rejections: 0,
            covariance_fallbacks: 0,
        })
    }

    /// Rebuilds a chain from stored records and generator position.
    pub fn restore(records: Vec<ChainRecord<D>>, current_aux: Option<A>, seed: u64, word_pos: u128) -> Self {
        let mut rng = chain_rng(seed);
        rng.set_word_pos(word_pos);
        let mut stats = Welford::default();
        records.iter().for_each(|r| stats.push(&r.x));
        let accepted_count = records.iter().skip(1).filter(|r| r.accepted).count() as u64;
        let fallback_count = records.iter().filter(|r| r.fallback).count() as u64;
        Self {
            records,
            current_aux,
            seed,
            rng,
            stats,
            accepted_count,
            fallback_count,
            prior_rejections: 0,
            covariance_fallbacks: 0,
        }
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Completed iterations, not counting the starting point.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn current(&self) -> &ChainRecord<D> {
        self.records.last().expect("a chain always holds its starting point")
    }

    pub fn samples(&self) -> Vec<[f64; D]> {
        self.records.iter().map(|r| r.x).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations() == 0 {
            0.0
        } else {
            self.accepted_count as f64 / self.iterations() as f64
        }
    }

    /// Proposal covariance for the next step.
    pub fn proposal_covariance(&self, cfg: &ProposalConfig<D>) -> [[f64; D]; D] {
        self.proposal_factor(cfg).0
    }

    /// Covariance, its factor, and `false` when the adaptive estimate had to
    /// be replaced by `sigma0`.
    fn proposal_factor(&self, cfg: &ProposalConfig<D>) -> ([[f64; D]; D], [[f64; D]; D], bool) {
        let sigma0_factor = || cholesky(&cfg.sigma0).expect("sigma0 must be positive definite");
        let l = self.iterations();
        if cfg.mode == ProposalMode::RandomWalk || l <= cfg.l0 {
            return (cfg.sigma0, sigma0_factor(), true);
        }
        let mut c = self.stats.covariance();
        for (i, row) in c.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= cfg.s_d;
            }
            row[i] += cfg.eps;
        }
        match cholesky(&c) {
            Some(l) => (c, l, true),
            None => (cfg.sigma0, sigma0_factor(), false),
        }
    }

    /// Draws the next proposal. Always consumes `D` normals.
    pub fn propose(&mut self, cfg: &ProposalConfig<D>) -> [f64; D] {
        let (_, l, ok) = self.proposal_factor(cfg);
        if !ok {
            self.covariance_fallbacks += 1;
        }
        let mut z = [0.0; D];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        let step = lower_mul(&l, &z);
        let mut x = self.current().x;
        for i in 0..D {
            x[i] += step[i];
        }
        x
    }

    /// One Metropolis–Hastings iteration. Always consumes `D` normals and
    /// one uniform, so the generator position depends only on the count of
    /// completed iterations.
    pub fn step<T: Target<D, Aux = A>>(&mut self, target: &T, cfg: &ProposalConfig<D>) -> &ChainRecord<D> {
        let proposal = self.propose(cfg);
        let u: f64 = Open01.sample(&mut self.rng);
        let current = *self.current();
        let lp = target.log_prior(&proposal);
        let (eval, evaluated) = if lp.is_finite() {
            (target.evaluate(&proposal, self.current_aux.as_ref()), true)
        } else {
            self.prior_rejections += 1;
            (Evaluation { log_post: f64::NEG_INFINITY, aux: None, fallback: false }, false)
        };
        let fallback = evaluated && eval.fallback;
        if fallback {
            self.fallback_count += 1;
        }
        let delta = eval.log_post - current.log_post;
        let accept = evaluated && !delta.is_nan() && math::ln(u) < delta;
        let record = if accept {
            self.accepted_count += 1;
            if eval.aux.is_some() {
                self.current_aux = eval.aux;
            }
            ChainRecord { x: proposal, log_post: eval.log_post, accepted: true, fallback }
        } else {
            ChainRecord { x: current.x, log_post: current.log_post, accepted: false, fallback }
        };
        self.stats.push(&record.x);
        self.records.push(record);
        self.current()
    }
}

/// Runs `n` further iterations, calling `hook` after every iteration.
/// The hook may stop the run early by returning `false`.
pub fn run_chain<const D: usize, T: Target<D>>(
    chain: &mut ChainState<D, T::Aux>,
    target: &T,
    cfg: &ProposalConfig<D>,
    n: usize,
    hook: &mut dyn FnMut(&ChainState<D, T::Aux>) -> bool,
) {
    for _ in 0..n {
        chain.step(target, cfg);
        if !hook(chain) {
            break;
        }
    }
}

/// Correlated Gaussian log-density with an unbounded flat prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussian<const D: usize> {
    pub mean: [f64; D],
    factor: [[f64; D]; D],
}

impl<const D: usize> AnalyticGaussian<D> {
    pub fn new(mean: [f64; D], cov: &[[f64; D]; D]) -> Option<Self> {
        Some(Self { mean, factor: cholesky(cov)? })
    }
}

impl<const D: usize> Target<D> for AnalyticGaussian<D> {
    type Aux = ();

    fn log_prior(&self, _x: &[f64; D]) -> f64 {
        0.0
    }

    fn evaluate(&self, x: &[f64; D], _current: Option<&()>) -> Evaluation<()> {
        let mut d = [0.0; D];
        for i in 0..D {
            d[i] = x[i] - self.mean[i];
        }
        let y = lower_solve(&self.factor, &d);
        Evaluation { log_post: -0.5 * y.iter().map(|v| v * v).sum::<f64>(), aux: None, fallback: false }
    }
}

/// Which geometry components the chain moves; the rest stay at `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameterization<const D: usize> {
    /// Indices into `[a, b, phi]`.
    pub free: [usize; D],
    pub base: GeometryParam,
}

impl<const D: usize> Parameterization<D> {
    pub fn theta(&self, x: &[f64; D]) -> [f64; 3] {
        let mut t = self.base.to_array();
        for (k, &i) in self.free.iter().enumerate() {
            t[i] = x[k];
        }
        t
    }

    pub fn project(&self, theta: &GeometryParam) -> [f64; D] {
        let t = theta.to_array();
        let mut x = [0.0; D];
        for (k, &i) in self.free.iter().enumerate() {
            x[k] = t[i];
        }
        x
    }
}

impl Parameterization<3> {
    pub fn full(base: GeometryParam) -> Self {
        Self { free: [0, 1, 2], base }
    }
}

/// Posterior over the hole geometry: uniform prior times the compressed
/// feature likelihood of the forward model.
#[derive(Debug)]
pub struct PosteriorTarget<'a, const D: usize> {
    pub model: &'a ForwardModel,
    pub data: FeatureVector,
    pub noise: NoiseModel,
    pub prior: Prior,
    pub strategy: MeshStrategy,
    pub parameterization: Parameterization<D>,
    evaluated: AtomicU64,
    invariant_violations: AtomicU64,
    lost_reentry: AtomicU64,
    incidents: AtomicU64,
}

impl<'a, const D: usize> PosteriorTarget<'a, D> {
    pub fn new(
        model: &'a ForwardModel,
        data: FeatureVector,
        noise: NoiseModel,
        strategy: MeshStrategy,
        parameterization: Parameterization<D>,
    ) -> Self {
        Self {
            model,
            data,
            noise,
            prior: Prior::default(),
            strategy,
            parameterization,
            evaluated: AtomicU64::new(0),
            invariant_violations: AtomicU64::new(0),
            lost_reentry: AtomicU64::new(0),
            incidents: AtomicU64::new(0),
        }
    }

    pub fn counters(&self) -> TargetCounters {
        TargetCounters {
            evaluated: self.evaluated.load(Ordering::Relaxed),
            invariant_violations: self.invariant_violations.load(Ordering::Relaxed),
            lost_reentry: self.lost_reentry.load(Ordering::Relaxed),
            incidents: self.incidents.load(Ordering::Relaxed),
        }
    }
}

/// Evaluation bookkeeping of a [`PosteriorTarget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TargetCounters {
    pub evaluated: u64,
    /// Feature vectors whose relative activation times did not sum to zero.
    pub invariant_violations: u64,
    pub lost_reentry: u64,
    /// Numerical failures mapped to a rejected proposal.
    pub incidents: u64,
}

/// `Σ rellat = 0` and a positive finite period.
pub fn features_consistent(f: &FeatureVector) -> bool {
    let sum: f64 = f.rellat.iter().sum();
    let scale: f64 = f.rellat.iter().map(|v| math::abs(*v)).sum::<f64>().max(1.0);
    f.period.is_finite() && f.period > 0.0 && math::abs(sum) <= 1e-9 * scale
}

impl<const D: usize> Target<D> for PosteriorTarget<'_, D> {
    type Aux = TriMesh;

    fn log_prior(&self, x: &[f64; D]) -> f64 {
        self.prior.log_density(&self.parameterization.theta(x))
    }

    fn evaluate(&self, x: &[f64; D], current: Option<&TriMesh>) -> Evaluation<TriMesh> {
        let t = self.parameterization.theta(x);
        let lp = self.prior.log_density(&t);
        let rejected = Evaluation { log_post: f64::NEG_INFINITY, aux: None, fallback: false };
        let Ok(theta) = GeometryParam::with_center(t[0], t[1], t[2], self.parameterization.base.center) else {
            return rejected;
        };
        self.evaluated.fetch_add(1, Ordering::Relaxed);
        match log_likelihood(self.model, &self.data, &theta, &self.noise, self.strategy, current) {
            Ok(eval) => {
                match &eval.features {
                    Some(f) if !features_consistent(f) => {
                        self.invariant_violations.fetch_add(1, Ordering::Relaxed);
                    }
                    None => {
                        self.lost_reentry.fetch_add(1, Ordering::Relaxed);
                    }
                    _ => {}
                }
                let fallback = self.strategy == MeshStrategy::NodeRelocation && eval.fell_back();
                Evaluation { log_post: eval.log_likelihood + lp, aux: Some(eval.mesh), fallback }
            }
            Err(_) => {
                self.incidents.fetch_add(1, Ordering::Relaxed);
                rejected
            }
        }
    }
}

/// Integrated autocorrelation time by Geyer's initial monotone sequence
/// estimator.
pub fn integrated_autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return 1.0;
    }
    let rho = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let mut g = rho(2 * m) + rho(2 * m + 1);
        if g <= 0.0 {
            break;
        }
        g = g.min(prev);
        prev = g;
        tau += 2.0 * g;
        m += 1;
    }
    tau.max(1.0)
}

/// Summary statistics of a chain after discarding `burn_in` states.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary<const D: usize> {
    pub iterations: usize,
    pub acceptance_rate: f64,
    pub mean: [f64; D],
    pub variance: [f64; D],
    pub covariance: [[f64; D]; D],
    pub iat: [f64; D],
    /// Monte-Carlo standard error of the mean, `sqrt(var·τ/n)`.
    pub standard_error: [f64; D],
    /// Earliest state with the largest log posterior.
    pub map: [f64; D],
    pub map_log_post: f64,
    pub fallback_count: u64,
}

pub fn summarize<const D: usize, A: Clone>(chain: &ChainState<D, A>, burn_in: usize) -> ChainSummary<D> {
    let kept = &chain.records[burn_in.min(chain.records.len() - 1)..];
    let mut w = Welford::<D>::default();
    kept.iter().for_each(|r| w.push(&r.x));
    let covariance = w.covariance();
    let mut variance = [0.0; D];
    let mut iat = [0.0; D];
    let mut standard_error = [0.0; D];
    for i in 0..D {
        variance[i] = covariance[i][i];
        let series: Vec<f64> = kept.iter().map(|r| r.x[i]).collect();
        iat[i] = integrated_autocorrelation_time(&series);
        standard_error[i] = math::sqrt(variance[i] * iat[i] / kept.len() as f64);
    }
    let mut best = 0;
    for (k, r) in chain.records.iter().enumerate() {
        if r.log_post > chain.records[best].log_post {
            best = k;
        }
    }
    ChainSummary {
        iterations: chain.iterations(),
        acceptance_rate: chain.acceptance_rate(),
        mean: w.mean,
        variance,
        covariance,
        iat,
        standard_error,
        map: chain.records[best].x,
        map_log_post: chain.records[best].log_post,
        fallback_count: chain.fallback_count,
    }
}

/// Pearson correlation of two equally long series.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mut w = Welford::<2>::default();
    x.iter().zip(y).for_each(|(a, b)| w.push(&[*a, *b]));
    let c = w.covariance();
    c[0][1] / math::sqrt(c[0][0] * c[1][1])
}

/// Spread of `(a, b)` samples along and across the gradient of the
/// perimeter at the sample mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerimeterStructure {
    pub correlation: f64,
    pub mean: [f64; 2],
    /// Unit gradient of the perimeter in the `(a, b)` plane.
    pub gradient: [f64; 2],
    pub variance_along_gradient: f64,
    pub variance_along_level_set: f64,
}

pub fn perimeter_structure(ab: &[[f64; 2]]) -> PerimeterStructure {
    let mut w = Welford::<2>::default();
    ab.iter().for_each(|p| w.push(p));
    let c = w.covariance();
    let [a, b] = w.mean;
    let h = 1e-4 * (a + b);
    let ga = (ellipse_perimeter(a + h, b) - ellipse_perimeter(a - h, b)) / (2.0 * h);
    let gb = (ellipse_perimeter(a, b + h) - ellipse_perimeter(a, b - h)) / (2.0 * h);
    let norm = math::hypot(ga, gb);
    let g = [ga / norm, gb / norm];
    let o = [-g[1], g[0]];
    let quad = |u: [f64; 2]| u[0] * u[0] * c[0][0] + 2.0 * u[0] * u[1] * c[0][1] + u[1] * u[1] * c[1][1];
    PerimeterStructure {
        correlation: c[0][1] / math::sqrt(c[0][0] * c[1][1]),
        mean: w.mean,
        gradient: g,
        variance_along_gradient: quad(g),
        variance_along_level_set: quad(o),
    }
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into
/// the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let mut counts = vec![0; bins];
        let width = hi - lo;
        for v in values {
            let k = if width > 0.0 { math::floor((v - lo) / width * bins as f64) as usize } else { 0 };
            counts[k.min(bins - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|k| self.lo + (self.hi - self.lo) * k as f64 / n as f64).collect()
    }
}

/// Human-readable name of a strategy.
pub fn strategy_name(s: MeshStrategy) -> String {
    match s {
        MeshStrategy::Independent => "independent".into(),
        MeshStrategy::NodeRelocation => "node-relocation".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diagonal, identity};
    use approx::assert_abs_diff_eq;
    use core::cell::Cell;

    /// Flat target inside a box that counts evaluations.
    struct BoxTarget {
        calls: Cell<u64>,
    }

    impl Target<1> for BoxTarget {
        type Aux = u64;
        fn log_prior(&self, x: &[f64; 1]) -> f64 {
            if x[0].abs() <= 1.0 { 0.0 } else { f64::NEG_INFINITY }
        }
        fn evaluate(&self, x: &[f64; 1], current: Option<&u64>) -> Evaluation<u64> {
            self.calls.set(self.calls.get() + 1);
            Evaluation { log_post: -x[0] * x[0], aux: Some(current.copied().unwrap_or(0) + 1), fallback: false }
        }
    }

    fn gaussian3() -> ([f64; 3], [[f64; 3]; 3]) {
        ([1.0, -2.0, 0.5], [[1.0, 0.6, 0.2], [0.6, 2.0, -0.3], [0.2, -0.3, 0.5]])
    }

    #[test]
    fn warm_up_uses_sigma0() {
        let t = AnalyticGaussian::new([0.0; 2], &identity()).unwrap();
        let cfg = ProposalConfig::adaptive(diagonal(&[0.3, 0.7]));
        let mut chain = ChainState::start(&t, [0.0; 2], 1).unwrap();
        run_chain(&mut chain, &t, &cfg, 50, &mut |_| true);
        assert_eq!(chain.proposal_covariance(&cfg), cfg.sigma0);
    }

    #[test]
    fn constant_chain_gives_regularisation_only() {
        let records = vec![ChainRecord { x: [3.0, 1.0, 0.2], log_post: 0.0, accepted: false, fallback: false }; 111];
        let chain = ChainState::<3, ()>::restore(records, None, 0, 0);
        let cfg = ProposalConfig::adaptive(diagonal(&[1.0; 3]));
        let c = chain.proposal_covariance(&cfg);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(c[i][j], if i == j { 1e-4 } else { 0.0 }, epsilon = 1e-18);
            }
        }
    }

    #[test]
    fn proposal_covariance_tracks_target() {
        let (mean, cov) = gaussian3();
        let l = cholesky(&cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<ChainRecord<3>> = (0..100_000)
            .map(|_| {
                let z = [0; 3].map(|_: i32| StandardNormal.sample(&mut rng));
                let s = lower_mul(&l, &z);
                ChainRecord { x: [mean[0] + s[0], mean[1] + s[1], mean[2] + s[2]], log_post: 0.0, accepted: true, fallback: false }
            })
            .collect();
        let mut chain = ChainState::<3, ()>::restore(records, None, 9, 0);
        let cfg = ProposalConfig::adaptive(diagonal(&[1.0; 3]));
        let origin = chain.current().x;
        let mut w = Welford::<3>::default();
        for _ in 0..100_000 {
            let p = chain.propose(&cfg);
            w.push(&[p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]);
        }
        let emp = w.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let expected = DEFAULT_SD * cov[i][j] + if i == j { DEFAULT_EPS } else { 0.0 };
                let scale = DEFAULT_SD * math::sqrt(cov[i][i] * cov[j][j]);
                assert!((emp[i][j] - expected).abs() < 0.1 * scale, "({i},{j}) {} vs {expected}", emp[i][j]);
            }
        }
    }

    #[test]
    fn out_of_prior_is_rejected_without_evaluation() {
        let t = BoxTarget { calls: Cell::new(0) };
        let cfg = ProposalConfig::random_walk([[100.0]]);
        let mut chain = ChainState::start(&t, [0.0], 3).unwrap();
        assert_eq!(t.calls.get(), 1);
        let mut outside = 0;
        for _ in 0..200 {
            let before = t.calls.get();
            let x = chain.current().x;
            let r = *chain.step(&t, &cfg);
            if t.calls.get() == before {
                outside += 1;
                assert!(!r.accepted);
                assert_eq!(r.x, x);
            }
        }
        assert!(outside > 150);
        assert_eq!(chain.prior_rejections, outside);
    }

    #[test]
    fn aux_follows_accepted_proposals_only() {
        let t = BoxTarget { calls: Cell::new(0) };
        let cfg = ProposalConfig::random_walk([[0.25]]);
        let mut chain = ChainState::start(&t, [0.0], 4).unwrap();
        run_chain(&mut chain, &t, &cfg, 300, &mut |_| true);
        assert_eq!(chain.current_aux, Some(chain.accepted_count + 1));
    }

    #[test]
    fn equal_log_post_always_accepts() {
        struct Flat;
        impl Target<1> for Flat {
            type Aux = ();
            fn log_prior(&self, _: &[f64; 1]) -> f64 {
                0.0
            }
            fn evaluate(&self, _: &[f64; 1], _: Option<&()>) -> Evaluation<()> {
                Evaluation { log_post: -3.0, aux: None, fallback: false }
            }
        }
        let mut chain = ChainState::start(&Flat, [0.0], 8).unwrap();
        run_chain(&mut chain, &Flat, &ProposalConfig::random_walk([[1.0]]), 500, &mut |_| true);
        assert_eq!(chain.accepted_count, 500);
    }

    #[test]
    fn acceptance_ratio_matches_likelihood_ratio() {
        struct Two;
        impl Target<1> for Two {
            type Aux = ();
            fn log_prior(&self, _: &[f64; 1]) -> f64 {
                0.0
            }
            fn evaluate(&self, x: &[f64; 1], _: Option<&()>) -> Evaluation<()> {
                Evaluation { log_post: if x[0] == 0.0 { 0.0 } else { 0.25f64.ln() }, aux: None, fallback: false }
            }
        }
        let cfg = ProposalConfig::random_walk([[1.0]]);
        let mut accepted = 0;
        let trials = 40_000;
        for s in 0..trials {
            let mut chain = ChainState::start(&Two, [0.0], s).unwrap();
            chain.step(&Two, &cfg);
            accepted += chain.accepted_count;
        }
        let rate = accepted as f64 / trials as f64;
        assert!((rate - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / trials as f64).sqrt(), "{rate}");
    }

    #[test]
    fn infeasible_start_is_reported() {
        let t = BoxTarget { calls: Cell::new(0) };
        assert!(ChainState::start(&t, [2.0], 0).is_err());
    }

    #[test]
    fn restore_continues_bit_exactly() {
        let (mean, cov) = gaussian3();
        let t = AnalyticGaussian::new(mean, &cov).unwrap();
        let cfg = ProposalConfig::adaptive(diagonal(&[0.5; 3]));
        let mut full = ChainState::start(&t, [0.0; 3], 77).unwrap();
        run_chain(&mut full, &t, &cfg, 400, &mut |_| true);
        let mut part = ChainState::start(&t, [0.0; 3], 77).unwrap();
        run_chain(&mut part, &t, &cfg, 250, &mut |_| true);
        let mut resumed = ChainState::<3, ()>::restore(part.records.clone(), None, 77, part.word_pos());
        run_chain(&mut resumed, &t, &cfg, 150, &mut |_| true);
        assert_eq!(resumed.records, full.records);
        assert_eq!(resumed.accepted_count, full.accepted_count);
    }

    #[test]
    fn hook_can_stop_the_run() {
        let t = AnalyticGaussian::new([0.0], &[[1.0]]).unwrap();
        let mut chain = ChainState::start(&t, [0.0], 2).unwrap();
        run_chain(&mut chain, &t, &ProposalConfig::random_walk([[1.0]]), 100, &mut |c| c.iterations() < 10);
        assert_eq!(chain.iterations(), 10);
    }

    #[test]
    fn iat_of_ar1_matches_closed_form() {
        // AR(1) with coefficient r has τ = (1 + r)/(1 − r)
        let r: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = r * x + (1.0 - r * r).sqrt() * z;
                x
            })
            .collect();
        let tau = integrated_autocorrelation_time(&series);
        assert!((tau - 9.0).abs() < 0.9, "{tau}");
        let iid: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!((integrated_autocorrelation_time(&iid) - 1.0).abs() < 0.1);
    }

    #[test]
    fn map_prefers_earliest_tie() {
        let rec = |x: f64, lp: f64| ChainRecord { x: [x], log_post: lp, accepted: true, fallback: false };
        let chain = ChainState::<1, ()>::restore(vec![rec(0.0, -2.0), rec(1.0, -1.0), rec(2.0, -1.0), rec(3.0, -5.0)], None, 0, 0);
        let s = summarize(&chain, 0);
        assert_eq!(s.map, [1.0]);
        assert_eq!(s.map_log_post, -1.0);
        assert_eq!(s.acceptance_rate, 1.0);
    }

    #[test]
    fn perimeter_structure_of_a_level_set() {
        // points spread along the constant-perimeter curve through (10, 4)
        let p0 = ellipse_perimeter(10.0, 4.0);
        let ab: Vec<[f64; 2]> = (0..41)
            .map(|k| {
                let a = 9.8 + 0.01 * k as f64;
                let (mut lo, mut hi) = (0.5, 10.0);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if ellipse_perimeter(a, mid) < p0 { lo = mid } else { hi = mid }
                }
                [a, 0.5 * (lo + hi)]
            })
            .collect();
        let s = perimeter_structure(&ab);
        assert!(s.correlation < -0.99);
        assert!(s.variance_along_gradient < 1e-3 * s.variance_along_level_set, "{s:?}");
        assert!(s.gradient[0] > 0.0 && s.gradient[1] > 0.0);
    }

    #[test]
    fn histogram_counts() {
        let h = Histogram::new(&[1.0, 1.0, 1.0], 5);
        assert_eq!(h.counts.iter().sum::<u64>(), 3);
        assert_eq!(h.counts[0], 3);
        let h = Histogram::new(&[0.0, 0.5, 1.0, 0.25], 2);
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges(), vec![0.0, 0.5, 1.0]);
        assert_abs_diff_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]), 0.9986, epsilon = 1e-3);
    }

    #[test]
    fn parameterization_round_trip() {
        let base = GeometryParam::new(10.0, 4.0, 0.0).unwrap();
        let p = Parameterization { free: [0], base };
        assert_eq!(p.theta(&[11.0]), [11.0, 4.0, 0.0]);
        assert_eq!(p.project(&base), [10.0]);
        assert_eq!(Parameterization::full(base).theta(&[1.0, 2.0, 0.3]), [1.0, 2.0, 0.3]);
    }
}
