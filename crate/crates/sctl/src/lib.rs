//! Spectral CT reconstruction toolkit.
//!
//! Multi-energy fan-beam simulation, tensor-dictionary sparse coding,
//! image-gradient l0 smoothing, and the split-Bregman reconstruction
//! drivers that combine them, plus image-quality metrics and basis-material
//! decomposition.

pub mod commands;
pub mod config;
pub mod dict;
pub mod error;
pub mod fbp;
pub mod fft;
pub mod l0grad;
pub mod metrics;
pub mod patch;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod simulate;
pub mod tensor;
pub mod tensorfile;
pub mod unmix;

pub use error::{Result, SctlError};
