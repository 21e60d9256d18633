//! Gaussian processes with weighted-log covariance kernels for animal
//! movement tracks: kernel evaluation, exact likelihood fitting, model
//! comparison, held-out prediction and stationarity diagnostics.

pub mod diagnostics;
pub mod error;
pub mod family;
pub mod fit;
pub mod gaussian;
pub mod grid;
pub mod kernels;
pub mod optim;
pub mod predict;
pub mod quadrature;
pub mod telemetry;
pub mod weight_expr;

pub use error::{Error, ErrorKind, Result};
pub use grid::TimeGrid;
pub use kernels::{Kernel, KernelModel, WeightFunction};
pub use family::{FamilyRegistry, ModelFamily};
pub use fit::{fit_mle, Anchor, FitOptions, FitResult};
pub use predict::{predict_held_out, ErrorMetric, PredictOptions, Prediction};
pub use telemetry::Trajectory;
