//! Bi-unitary connections on four-graph squares, their fusion data, the
//! projector matrix product operators built from them, and flat fields of
//! strings.

pub mod connection;
pub mod decomp;
pub mod graphs;
pub mod linalg;
pub mod cli;
pub mod mpo;
pub mod report;
pub mod strings;

pub use num_complex::Complex64 as C64;
