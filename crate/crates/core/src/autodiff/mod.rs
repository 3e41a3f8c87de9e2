//! Reverse-mode differentiation over the op set the detection back-end uses.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport, GradFault};
pub use graph::{Gradients, Graph, Var};
