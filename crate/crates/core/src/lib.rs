//! Reach control synthesis of piecewise affine feedback on triangulated
//! polytopes, and simulation of the resulting hybrid closed loop.
//!
//! The pipeline: build a [`geometry::Triangulation`] with exit/restricted
//! facet roles, solve the invariance conditions jointly with
//! [`synthesis::synthesize_mode`], then integrate the closed loop with
//! [`executor::run`]. [`case_study`] constructs the side-to-side maneuver.

pub mod case_study;
pub mod error;
pub mod executor;
pub mod files;
pub mod geometry;
pub mod lp;
pub mod synthesis;

pub use error::{Error, Result};
