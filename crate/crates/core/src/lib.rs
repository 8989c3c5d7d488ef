//! wpse-core: a numerical laboratory for weighted point set embeddings.
//!
//! The crate studies contrastive representation learning on synthetic finite
//! worlds where every population quantity is computable in closed form. It
//! provides, in dependency order:
//!
//! - `kernel`: linear, Gaussian, IMQ, and combination kernels;
//! - `rff`: random Fourier feature approximations of the shift-invariant
//!   kernels;
//! - `pointset`: weighted point sets, their exact similarity, and the
//!   concatenated embedding that approximates it;
//! - `world`: finite joint distributions with label structure, PMI tables,
//!   mutual information, and the KL quantities entering excess-risk bounds;
//! - `infonce`: the symmetric InfoNCE objective, batch and population forms,
//!   with exact population gradients;
//! - `classifier`: mean classifiers, softmax classification loss, linear
//!   probes, and excess-risk reports;
//! - `trainer`: projected gradient training of point set models against the
//!   population objective;
//! - `analysis`: the rank ceiling of bilinear similarities and the
//!   universality sweep that shows point sets escaping it.
//!
//! Everything is deterministic given explicit seeds; no global RNG state.

pub mod analysis;
pub mod classifier;
pub mod error;
pub mod infonce;
pub mod kernel;
pub mod pointset;
pub mod rff;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
