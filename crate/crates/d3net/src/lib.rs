//! From-scratch f64 numerical library for densely connected multidilated
//! convolution blocks: forward/backward kernels, D2/D3 block composition,
//! symbolic receptive-field and blind-spot analysis with a brute-force
//! impulse oracle, finite-difference gradient checking, backbone assembly
//! with parameter counting, and a toy long-range prediction task.

pub mod blocks;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod rf;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::Tensor;
