//! Table-tennis rally simulator with a hierarchical skill controller.
//!
//! Modules, bottom up: [`ballistics`] (flight and contact physics),
//! [`dataset`] (initial ball-state corpus), [`optimizer`] (evolution
//! strategies), [`skills`] (low-level strokes), [`descriptors`] (per-skill
//! nearest-neighbour performance tables), [`hlc`] (skill selection and bandit
//! adaptation) and [`matchsim`] (scripted opponents and match rules).
//! [`config`] holds the run configuration shared by the command line.

pub mod ballistics;
pub mod config;
pub mod dataset;
pub mod descriptors;
pub mod hlc;
pub mod matchsim;
pub mod optimizer;
pub mod skills;
pub mod vec3;

pub use vec3::{Vec2, Vec3};
