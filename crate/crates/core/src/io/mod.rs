//! Scenario files and run artifacts.

mod output;
mod scenario;

pub use output::{columns, read_trajectory_csv, rows, write_json, write_trajectory, Format, DIAGNOSTIC_COLUMNS};
pub use scenario::{
    perturb_state, BoundsSpec, ControllerSpec, InitialSpec, MarketSpec, QuadraticSpec, Scenario, Start, TopologySpec,
};
