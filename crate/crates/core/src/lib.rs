//! Morris-Shore reduction of two coupled level sets into independent two-state
//! systems, with an effective Hamiltonian for slightly non-degenerate levels.
//!
//! A typical pipeline:
//!
//! ```
//! use morris_shore::models::{self, ModelSpec};
//! use morris_shore::nondegenerate::analyze;
//!
//! let sys = models::build(&ModelSpec::lambda(1.25, 1.37, 0.01)).unwrap();
//! let analysis = analyze(&sys).unwrap();
//! assert_eq!(analysis.decomposition.rank(), 1);
//! println!("{}", analysis.effective.h_eff);
//! ```

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod models;
pub mod ms_core;
pub mod nondegenerate;

pub use error::{Error, Result};
