//! Shared-control social navigation for a wheelchair-style robot.

// `!(x > 0.0)` deliberately rejects NaN; numeric kernels index parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::should_implement_trait)]

pub mod bridge;
pub mod costmap;
pub mod crowd_sim;
pub mod global_planner;
pub mod gridworld;
pub mod harness;
pub mod local_planner;
pub mod perception;
