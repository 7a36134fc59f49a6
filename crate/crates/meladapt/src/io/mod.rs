//! On-disk formats: 16-bit PCM WAV audio and the MELT mel container.

mod melt;
mod wav;

pub use melt::{read_melt, write_melt};
pub use wav::{read_wav, write_wav};
