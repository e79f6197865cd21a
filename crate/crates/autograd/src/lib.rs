//! Minimal reverse-mode automatic differentiation on dense CPU tensors.
//!
//! A [`Graph`] records primitive applications in topological order while the
//! forward pass runs; [`Graph::backward`] then walks the record in reverse and
//! produces exact gradients for every leaf that asked for one. Parameters live
//! outside the tape in a [`ParamStore`] so a fresh tape can be recorded per
//! training step while optimizer state persists.
//!
//! ```
//! use corelnet_autograd::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(Tensor::from_f64([2], &[1.0, -1.0]).unwrap());
//! let r = g.relu(x).unwrap();
//! let loss = g.l1_norm(r).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap(), &[1.0, 0.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Attrs, Gradients, Graph, Primitive, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
