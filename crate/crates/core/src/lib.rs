//! Kalman filtering, RTS smoothing and RTSNet, a smoother whose forward and
//! backward gains are produced by small recurrent networks trained end to end.

pub mod classic;
pub mod container;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod neural;
pub mod rtsnet;
pub mod ssmodel;
pub mod training;

pub use error::{Error, Result};
