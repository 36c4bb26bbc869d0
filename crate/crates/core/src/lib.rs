#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod car;
pub mod cli;
pub mod covstruct;
pub mod error;
pub mod identify;
pub mod init;
pub mod io;
pub mod linalg;
pub mod mle;
pub mod rng;
pub mod select;
pub mod shrink;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
