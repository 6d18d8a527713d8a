//! Dense-tensor reverse-mode differentiation.
//!
//! Every trainable computation in the crate is expressed as operations on a
//! [`Graph`]. Parameters live in a [`ParamStore`] and are copied into each
//! per-minibatch graph as leaves; after [`Graph::backward`] their gradients
//! are folded back with [`ParamStore::accumulate`] and consumed by [`Adam`].

mod gradcheck;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, DEFAULT_STEP};
pub use graph::{BackwardArgs, BackwardFn, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{precision, set_precision, Precision, Tensor};



#[cfg(test)]
mod tests;
