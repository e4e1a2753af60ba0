//! Budget-constrained mini-batch bounds on discrete optimal transport.

pub mod batch_matrix;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod image;
pub mod io;
pub mod lower;
pub mod measures;
pub mod methods;
pub mod ot;
pub mod testing;
pub mod tree;
pub mod upper;

pub use error::{Error, Result};
pub use exec::Execution;
pub use measures::{BatchPartition, EmpiricalMeasure, GroundCost};
