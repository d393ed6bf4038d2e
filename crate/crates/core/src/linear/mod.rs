//! Linear value-function approximation for robust policy evaluation.

mod assumption;
mod features;
mod kernel;
mod rpvi;

pub use assumption::{check_assumption2, DominanceReport};
pub use features::FeatureMap;
pub use kernel::{d_norm, ExplorationKernel, ProjectionWeights};
pub(crate) use rpvi::iterate_weights;
pub use rpvi::{
    contraction_probe, project, rpvi_exact, ProjectedBellman, Projector, RpviOptions, RpviSolution, WeightVector,
    DIVERGENCE_THRESHOLD,
};
