//! Neural primitives with hand-written reverse passes.
//!
//! Each primitive is a pair of free functions: a forward that writes into a
//! caller-provided buffer, and a backward that consumes the forward's saved
//! inputs/outputs and accumulates parameter gradients. Buffers are reused
//! across calls so steady-state inference does not allocate.

mod act;
mod checkpoint;
mod conv;
mod film;
mod linear;
mod lstm;
mod norm;
mod optim;
mod params;
mod tensor;

pub use act::{prelu_backward, prelu_forward, sigmoid, silu, silu_backward, silu_grad, silu_scalar};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{complex_conv2d, complex_conv2d_backward, ConvGeom, ConvKind, ConvScratch};
pub use film::{film, film_backward, film_rows, film_rows_backward};
pub use linear::{linear_backward, linear_forward};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmDims, LstmState};
pub use norm::{layer_norm_backward, layer_norm_forward, LayerNormCache};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{Grads, ParamSet};
pub use tensor::Tensor;
