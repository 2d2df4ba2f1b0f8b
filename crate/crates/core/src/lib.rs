pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod eicircuit;
pub mod eiinit;
pub mod eiprop;
pub mod error;
pub mod network;
pub mod neuron;
pub mod param;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
