//! Smooth Feshbach renormalization group on a discretized Fock space.

pub mod error;
pub mod exec;
pub mod feshbach;
pub mod fockgrid;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod rgloop;
pub mod verify;
pub mod wick;

pub use error::{Result, SrgError};
