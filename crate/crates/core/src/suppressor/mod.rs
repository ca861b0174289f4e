//! Target-conditioned suppression network.
//!
//! Complex convolutional encoder, LSTM bottleneck modulated by FiLM from the
//! fused conditioning vector, mirrored transposed-conv decoder with skip
//! concatenation, and a bounded complex ratio mask applied to the input STFT.

mod config;
mod forward;
mod model;

pub use config::SuppressorConfig;
pub use forward::{apply_mask_into, LstmCarry, Workspace};
pub use model::{init_model, MaskOverride, SuppressorModel};

use crate::audio::{Waveform, MODEL_RATE};
use crate::error::{Error, Result};

impl SuppressorModel<f32> {
    /// Attenuates the conditioned targets in a 16 kHz waveform. The output
    /// has the input's length.
    pub fn suppress(&self, wave: &Waveform, e_fused: &[f32]) -> Result<Waveform> {
        let mut ws = Workspace::new(&self.config)?;
        self.suppress_with(&mut ws, wave, e_fused)
    }

    /// [`suppress`](Self::suppress) with a caller-held workspace.
    pub fn suppress_with(&self, ws: &mut Workspace<f32>, wave: &Waveform, e_fused: &[f32]) -> Result<Waveform> {
        if wave.sample_rate != MODEL_RATE {
            return Err(Error::InvalidRate(wave.sample_rate));
        }
        self.run(ws, &wave.samples, wave.sample_rate, e_fused, None)?;
        Waveform::new(ws.output.clone(), wave.sample_rate)
    }
}
