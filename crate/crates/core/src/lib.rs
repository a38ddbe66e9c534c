// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barycenter;
pub mod bench;
pub mod clustering;
pub mod error;
pub mod init;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod measure;
pub mod pw;
pub mod shapes;
pub mod transport;

pub use error::{Error, Result};
