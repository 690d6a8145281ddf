//! Zero-shot classification by synthesizing unseen-class features as
//! predicted visual prototypes plus adversarially generated residuals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod gan;
pub mod matrix;
pub mod pipeline;
pub mod prototype;

pub use error::{AfrError, Result};
pub use matrix::Matrix;
