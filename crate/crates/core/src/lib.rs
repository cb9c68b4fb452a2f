//! Exact verification engine for local zeta integrals of principal series
//! representations on small general linear groups.
//!
//! The engine stratifies integrals over a p-adic group into valuation
//! shells, sums each shell in closed form over the exact coefficient field
//! `Q(i)[r]/(r^2 - q)`, and assembles the results as rational functions of
//! `Y = q^{-s/2}`.  A second, independent path truncates the same integrals
//! numerically over `Complex<f64>`.  Agreement of the two paths, and exact
//! identities between assembled rational functions, are the verification
//! currency of the companion command line tool.
//!
//! The crate is `no_std` with `alloc`; everything requiring an operating
//! system (files, clocks, argument parsing) lives in the companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(any(feature = "std", test))]
extern crate std;

pub mod chars;
pub mod err;
pub mod field;
pub mod integrals;
pub mod iwasawa;
pub mod matrix;
pub mod padicint;
pub mod ratfun;
pub mod section;
pub mod schwartz;
pub mod series;

pub use chars::{CharTuple, MultChar, TwistedChar};
pub use err::{Error, Result};
pub use integrals::{
    godement_eval, jacquet_whittaker, lambda_open_orbit, lambda_open_orbit_at, omega_strip,
    one_minus_s_char, rs_z, rs_z_at, s_char, tate_zeta, tate_zeta_at, StripInterval,
};
pub use matrix::{make_w, make_z, Mat};
pub use field::{Prime, Rat};
pub use ratfun::{Poly, RatFun, Scalar};
pub use schwartz::{Lattice, RowTensor, SchwartzSpan, SchwartzTerm};
pub use section::{SectionEvaluator, SectionExpr, SectionKind, TwistedTuple};
