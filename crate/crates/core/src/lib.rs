//! Toolkit for coupled wave / Klein-Gordon systems in two space dimensions
//! with cubic interactions.
//!
//! The crate is organized around one object, [`nonlinearity::SystemSpec`]:
//! a list of field components (massive Klein-Gordon ones first, massless wave
//! ones after) together with a cubic interaction tensor and optional
//! higher-order terms. Everything else consumes that object:
//!
//! * [`conditions`] decides the classical null condition exactly and checks or
//!   searches for the positivity certificate behind the weak null condition
//!   (condition (W), "KMS condition" below).
//! * [`profile`] integrates the asymptotic profile system transported along
//!   outgoing characteristics, including its variational (linearized) form.
//! * [`simulator`] runs the full PDE system with second-order finite
//!   differences and classical RK4, in planar or radially symmetric mode, and
//!   extracts profile data along characteristic rays for comparison.
//! * [`diagnostics`] provides hyperbolic vector fields, weighted decay norms,
//!   decay-exponent fits, null forms, and scattering deficits.
//! * [`presets`] holds ready-made example systems exercised by the test suite
//!   and the command-line front end.

/// Version tag carried by every serialized record this workspace emits.
pub const SCHEMA_VERSION: &str = "1";

pub mod conditions;
pub mod diagnostics;
pub mod error;
pub mod nonlinearity;
pub mod presets;
pub mod profile;
pub mod simulator;

pub use error::{Error, Result};
