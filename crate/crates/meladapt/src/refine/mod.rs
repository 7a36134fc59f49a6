//! Learned refinement of approximately converted mel spectrograms.
//!
//! The entry point is a config-conditioned U-Net ([`unet::RefineNet`]) that
//! takes a converted mel (in the common value space) plus the target config's
//! feature encoding and predicts a residual correction. Training
//! ([`train`]) runs on pairs produced by [`train::prepare_training_set`];
//! weights round-trip through a small self-describing binary format
//! ([`weights`]).

mod nn;
mod unet;
mod weights;

pub mod train;

pub use nn::{l1_loss, masked_l1_loss, Mode, TensorMut, TensorVisitor};
pub use unet::{refine_convert, NetworkShape, RefineNet};
pub use weights::{read_weights, write_weights};
