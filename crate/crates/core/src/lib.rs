//! Lifted tree-reweighted variational inference.
//!
//! Upper bounds on the log-partition function of symmetric templated MRFs,
//! computed over node/edge orbits instead of the ground graph. Typical flow:
//!
//! ```
//! use lifted_trw::{fixtures, model, symmetry, spanning, trw, polytope::OuterBound};
//!
//! let m = model::parse_model(fixtures::COMPLETE_GRAPH).unwrap();
//! let g = model::ground(&m, 6, -0.5).unwrap();
//! let lg = symmetry::compute_orbits(&g).unwrap();
//! let rho = spanning::init_rho_uniform(&lg, &g).unwrap();
//! let res = trw::frank_wolfe(&lg, &g, OuterBound::Local, &rho, &trw::FwOptions::default()).unwrap();
//! assert!(res.bound.is_finite());
//! ```

pub mod error;
pub mod fixtures;
pub mod lpsolve;
pub mod model;
pub mod oracle;
pub mod polytope;
pub mod spanning;
pub mod symmetry;
pub mod trw;
pub mod validate;

pub use error::{Error, Result};
