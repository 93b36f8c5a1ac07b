//! Dense reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its nodes. Backward rules
//! are expressed with the same primitives, so a gradient computed with
//! `create_graph = true` is itself differentiable; that is what the exact
//! meta-gradient relies on.

mod backward;
mod gradcheck;
mod graph;

pub use backward::Gradients;
pub use gradcheck::{grad_check, grad_check_many, GradCheck, GradCheckReport};
pub use graph::{Graph, Var};
