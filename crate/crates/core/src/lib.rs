//! Core algorithms for cooperative multi-robot object pushing.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the whole
//! decision pipeline of a pushing episode:
//!
//! - [`geometry`]: object footprints, candidate contact points, signed
//!   distances and frame transforms.
//! - [`planner`]: clearance-aware costmap, A* object path, polyline
//!   simplification, target direction and angular tolerance.
//! - [`selection`]: evaluation of pushing configurations, exhaustive search,
//!   initializer-seeded local search and the naive passthrough.
//! - [`assignment`]: order-preserving robot to contact-point matching and
//!   switch planning.
//! - [`sim`]: fixed-step quasi-static world, robot controllers and the
//!   closed-loop episode runner.
//!
//! IO, networking, scenario files and the command-line front end live in the
//! `conpose` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod geometry;
pub mod math;
pub mod planner;
pub mod selection;
pub mod sim;

pub use geometry::{CandidateSet, ContactPoint, Footprint, WorldContact};
pub use math::{Pose, Vec2};
