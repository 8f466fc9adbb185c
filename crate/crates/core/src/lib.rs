//! Exact computations on finite measure spaces for mixed weak-type norms,
//! rectangle functionals and K-functionals of the couple
//! `(L_{p1,∞}(μ1; L_q(μ2)), L_{p2,∞}(μ2; L_q(μ1)))`.

pub mod condexp;
pub mod error;
pub mod gen;
pub mod instance;
pub mod interp;
pub mod kernelop;
pub mod kfun;
pub mod lorentz;
pub mod lp;
pub mod measure;
pub mod rectangle;
pub mod verify;

pub use error::{Error, Result};
