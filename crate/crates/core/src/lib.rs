//! Monodomain forward model of a reentrant wave around an elliptical
//! obstacle, electrogram features, and an adapted Metropolis–Hastings
//! sampler for the obstacle's shape.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod geometry;
pub mod math;
pub mod mesh;
pub mod cell;
pub mod solver;
pub mod features;
pub mod observe;
pub mod prepace;
pub mod inference;
pub mod sampler;
