//! Treatment-effect computation over interacted linear models.
//!
//! An experiment is fit once as `y = α + Xβ₁ + Wβ₂ + (X·W)β₃ + ε`, and every
//! query (average, conditional, heterogeneous, per-period, relative, ranking)
//! is answered by applying a baseline or delta vector to the coefficient
//! estimates and their covariance.
//!
//! ```
//! use effect_core::{absolute, data::{Dataset, Record}, design::ModelSpec, fit::{fit, CovarianceKind}};
//!
//! let rows = [(1.0, "0"), (3.0, "0"), (4.0, "1"), (6.0, "1")]
//!     .iter()
//!     .map(|(y, a)| Record { outcome: *y, arm: a.to_string(), covariates: vec![], unit_id: None, period: None })
//!     .collect();
//! let data = Dataset::new(vec![], rows).unwrap();
//! let spec = ModelSpec::new("0").with_covariance(CovarianceKind::Classical);
//! let (model, _warnings) = fit(&data, &spec).unwrap();
//! let ate = absolute::ate(&model, &data, "1", "0").unwrap();
//! assert!((ate.estimate - 3.0).abs() < 1e-12);
//! assert!((ate.std_error - 2f64.sqrt()).abs() < 1e-12);
//! ```

pub mod absolute;
pub mod data;
pub mod design;
pub mod error;
pub mod fit;
mod linalg;
pub mod normal;
pub mod ranking;
pub mod relative;
pub mod vectors;

#[cfg(feature = "verify")]
pub mod verify;

pub use error::{EngineError, Result};
pub use linalg::RANK_TOL;
