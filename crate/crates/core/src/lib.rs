//! Two-dimensional TM inverse scattering workbench.
//!
//! The crate covers the whole pipeline from a permittivity map to a
//! reconstruction:
//!
//! * [`config`] builds the measurement geometry and incident fields,
//! * [`operators`] discretizes the Green's operators and solves the forward problem,
//! * [`spectral`] splits the induced current into its deterministic and
//!   ambiguous parts and computes the back-propagation starting point,
//! * [`som`] is the classical subspace-based optimization,
//! * [`somnet`] is its unrolled, trainable counterpart built on the
//!   reverse-mode engine in [`autodiff`],
//! * [`data`] generates datasets, parses MNIST files and computes metrics,
//! * [`io`] holds the binary/CSV/PGM persistence formats.
//!
//! The time convention is `exp(-iωt)`, so outgoing waves are Hankel functions
//! of the first kind and a unit line source radiates `(i/4) H0(k0 ρ)`.
//!
//! A narrative guide with runnable snippets lives in the `book/` directory at
//! the workspace root; its code blocks are compiled as doc-tests of this crate.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod som;
pub mod somnet;
pub mod spectral;
pub mod specialfn;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Column-major complex matrix used for fields, currents and operators.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/subspace.md")]
    mod subspace {}
    #[doc = include_str!("../../../book/src/som.md")]
    mod som {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/somnet.md")]
    mod somnet {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
