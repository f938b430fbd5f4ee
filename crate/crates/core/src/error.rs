use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("semi-axis {name} must be positive and finite, got {value}")]
    NonPositiveAxis { name: &'static str, value: f64 },
    #[error("inclination {0} outside (-pi, pi]")]
    AngleOutOfRange(f64),
    #[error("hole centre is not finite")]
    NonFiniteCenter,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("grid spacing {dx} does not divide the domain ({extent} mm)")]
    InvalidSpacing { dx: f64, extent: f64 },
    #[error("hole clearance to the domain edge is {clearance:.3} mm, need at least {required:.3} mm")]
    HoleTooCloseToDomain { clearance: f64, required: f64 },
    #[error("mesh quality check failed: {metric} = {value:.6} violates threshold {threshold:.6}")]
    Quality { metric: &'static str, value: f64, threshold: f64 },
    #[error("mesh topology check failed: Euler characteristic {found}, expected {expected}")]
    Topology { found: i64, expected: i64 },
    #[error("mesh has no triangles")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("triangle {index} is degenerate (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("conjugate gradients stopped after {iterations} iterations with relative residual {residual:e}")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("non-finite potential detected at step {step}")]
    NonFinite { step: usize },
    #[error("state has {found} entries but the mesh has {expected} nodes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid time step configuration: {0}")]
    InvalidTiming(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("no reentry: electrode {electrode} has {found} qualifying activations, need {needed}")]
    NoReentry { electrode: usize, found: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserveError {
    #[error("electrode {index} at ({x}, {y}) is not covered by conducting tissue")]
    ElectrodeOffTissue { index: usize, x: f64, y: f64 },
    #[error("observation start {t0} ms is not on the {dtau} ms sampling grid of the stored frames")]
    Misaligned { t0: f64, dtau: f64 },
    #[error("frames cover [{start}, {end}] ms, observation window needs [{t0}, {t1}] ms")]
    WindowOutOfRange { start: f64, end: f64, t0: f64, t1: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrepaceError {
    #[error("no spiral formed: electrode 4 saw {activations} activation(s), final max vm {max_vm:.4}; adjust the S2 timing or region")]
    NoSpiral { activations: usize, max_vm: f64 },
    #[error("rotation did not reach steady state: last periods {last:.2} and {previous:.2} ms")]
    NotSteady { last: f64, previous: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
}

/// Failure of one forward-model evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
}

impl ModelError {
    /// Failures that mean "this parameter is incompatible with reentrant data"
    /// rather than a numerical breakdown.
    pub fn is_no_reentry(&self) -> bool {
        matches!(self, ModelError::Feature(_) | ModelError::Observe(ObserveError::ElectrodeOffTissue { .. }))
    }
}
