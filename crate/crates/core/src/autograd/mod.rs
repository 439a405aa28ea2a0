//! A small reverse-mode automatic differentiation engine over dense `f64`
//! matrices. Every forward pass records onto a fresh [`Graph`]; calling
//! [`Graph::backward`] on a scalar node yields [`Grads`] keyed by the
//! [`ParamStore`] that owns the trainable arrays.

mod graph;
mod matrix;
mod optim;
mod params;

pub use graph::{Graph, Var};
pub use matrix::{argmax, log_softmax, log_sum_exp, softmax, Matrix};
pub use optim::Adam;
pub use params::{Grads, ParamId, ParamStore};
