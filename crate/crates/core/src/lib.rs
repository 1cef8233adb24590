//! Level-set tracing on the first Heisenberg group.
//!
//! The crate is organised bottom-up:
//!
//! - [`hgroup`]: group law, dilations, gauges and the homogeneous distance;
//! - [`sewing`]: Hölder norms, germs, the sewing integrator and Young integrals;
//! - [`field`]: maps `F: H -> R²` with their horizontal gradients, Taylor
//!   remainders, Hölder constants and blow-ups;
//! - [`lsde`]: the fixed-point solver for the level set differential equation
//!   and its validators;
//! - [`measure`]: horizontal Jacobian, spherical Hausdorff estimates, Federer
//!   density, the area identity for traced curves and the coarea check.

pub mod error;
pub mod field;
pub mod hgroup;
pub mod lsde;
pub mod measure;
pub mod sewing;

mod rng;

pub use error::{Error, Result};

pub use field::{FieldModel, GradientMode, Mat2};
pub use hgroup::{GeometryConstants, HPoint, MetricConfig};
pub use lsde::{SolverConfig, Trace};
pub use sewing::{Germ, SampledFunction};
