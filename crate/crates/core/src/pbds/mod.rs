//! Task maps, pullback of task-space systems, and their weighted
//! least-squares combination over a tree of task spaces.
//!
//! Only leaves carry user-defined systems. An internal node combines its
//! children in its own chart and hands the result to its parent as a desired
//! acceleration, so a chain of surjective maps gives the same base
//! acceleration as pre-composing every leaf map.

mod map;
mod tree;

pub use map::{CustomMap, TaskMap};
pub use tree::{
    combine, NodePayload, NodeReport, PbdsTree, PullbackTerm, Regularization, Resolution, TaskField, TaskNode,
    TaskRole,
};
