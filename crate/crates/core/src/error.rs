use thiserror::Error;

/// Every failure the library reports. Variants carry enough context to
/// locate the offending stage without re-running it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degenerate stencil at cell ({ix}, {iy}): mask thinner than 3 cells along axis {axis}")]
    DegenerateStencil { ix: usize, iy: usize, axis: usize },
    #[error("parity error: {0}")]
    Parity(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("positivity violation: {0}")]
    PositivityViolation(String),
    #[error("not a solution: residual {residual:.3e} exceeds {threshold:.3e}")]
    NotASolution { residual: f64, threshold: f64 },
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("packing failure: uncovered point ({x:.4}, {y:.4}) at distance {distance:.4} > net radius {net:.4}")]
    PackingFailure { x: f64, y: f64, distance: f64, net: f64 },
    #[error("eigen-solver stagnated after {iterations} iterations (last change {change:.3e})")]
    EigenStagnation { iterations: usize, change: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("smallness violation: contraction factor {q:.4} is not below 1/2")]
    SmallnessViolation { q: f64 },
    #[error("support error: {0}")]
    Support(String),
    #[error("invalid multiplier: sup |mu| = {0:.4} >= 1")]
    InvalidMultiplier(f64),
    #[error("Beltrami iteration diverged: {0}")]
    Divergence(String),
    #[error("renormalization error: {0}")]
    Renormalization(String),
    #[error("inversion error: Newton failed on {failed} of {total} cells")]
    Inversion { failed: usize, total: usize },
    #[error("gauge failure: {stage} residual {residual:.3e} exceeds {threshold:.3e}")]
    Gauge { stage: &'static str, residual: f64, threshold: f64 },
    #[error("separation error: {0}")]
    Separation(String),
    #[error("origin singularity: {0}")]
    OriginSingularity(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("weight error: {0}")]
    Weight(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
