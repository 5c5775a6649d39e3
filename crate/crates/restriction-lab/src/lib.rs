//! A numerical workbench for restriction-type estimates on the plane curve
//! `(xi, xi^d)`, `d >= 3`: curve-adapted frequency tilings and their dual
//! tube lattices, wave-packet decompositions built from Fejer bumps, exact
//! torus mean values of the associated exponential sums, polynomial
//! partitioning into cells and wall, and the tangential/transverse tube
//! classification against an algebraic variety.
//!
//! Everything here measures; nothing proves. Each quantity from the theory
//! is exposed as a computable functional with an independent oracle or a
//! property battery next to it, sized so the whole suite runs on a desk in
//! minutes.
//!
//! The narrative guide under `book/` walks through the concepts; its code
//! snippets are compiled and run as doctests of this crate (see [`guide`]).

pub mod battery;
pub mod error;
pub mod field;
pub mod geom;
pub mod guide;
pub mod lab;
pub mod norms;
pub mod polypart;
pub mod tiles;
pub mod variety;
pub mod wavepacket;

pub use error::{Error, Result};
