//! Distributed market-clearing controllers coupled to flux-decay generator
//! networks.
//!
//! The crate models a transmission network of third-order generators, a
//! social-welfare problem over supply, demand and line flows, and a family of
//! primal-dual price controllers that close the loop. It integrates the
//! interconnection, locates its equilibria, checks them against an independent
//! convex solver and reports passivity and convergence diagnostics.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controllers;
pub mod error;
pub mod io;
pub mod linalg;
pub mod par;
pub mod physical;
pub mod runner;
pub mod simulator;
pub mod topology;
pub mod welfare;

pub use controllers::{Controller, ControllerParams, ControllerState, Variant};
pub use error::{Error, ErrorKind, Result, ValidationError};
pub use io::Scenario;
pub use physical::{PhysicalModel, PhysicalParams, PhysicalState};
pub use simulator::{ClosedLoop, ClosedLoopState, Equilibrium, IntegratorConfig, Layout, Scheme, Trajectory};
pub use topology::Graph;
pub use welfare::{KktPoint, WelfareProblem};
