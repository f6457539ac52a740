// SPDX-License-Identifier: Apache-2.0

//! Electron spin echo envelope modulation of an NV centre coupled to its ¹⁴N.

pub mod analysis;
pub mod config;
pub mod dsl;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod perturbation;
pub mod propagation;
pub mod sequences;
pub mod spin;

pub use error::{Error, Result};
