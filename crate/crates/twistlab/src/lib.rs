//! A numerical laboratory for twist maps of annuli and tori: energy
//! functionals over incompressible maps, winding-number homotopy classes, the
//! energy-reducing symmetrisation operator, Euler-Lagrange residual checks and
//! weighted elliptic boundary-value solves on tori.

pub mod energy;
pub mod error;
pub mod euler_lagrange;
pub mod grid;
pub mod maps;
pub mod symmetrise;
pub mod topology;
pub mod torus;
pub mod verify;

pub use error::{Error, Result};
