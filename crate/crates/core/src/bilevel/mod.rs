//! Bilevel loss design on a small differentiable classifier.
//!
//! The inner problem trains a [`ToyModel`] under the CAP loss with heavy-ball
//! SGD; the outer problem updates the CAP weights `W` by the exact gradient
//! of the validation surrogate through `T` unrolled inner steps. The searched
//! strategies are then used to retrain from scratch on all training data.

pub mod dual;
pub mod hypergrad;
pub mod model;
pub mod search;

pub use hypergrad::{validation_surrogate, Hypergrad, UnrollProblem};
pub use model::{forward_backward, inner_step, BatchGrad, InnerConfig, ModelKind, SgdState, ToyModel};
pub use search::{
    retrain, run_bilevel, search_phase, test_metrics, AttributeSet, BilevelConfig, BilevelResult, EpochTrace, LrDecay,
    OuterConfig, SearchResult,
};
