//! Numerical kernels for adapting a diffusion transformer to ultra-high
//! resolution: rotary position encoding with base rescaling, temperature
//! scaled attention, the flow-matching objective and a frequency-focused
//! auxiliary loss with its analytic gradient.
//!
//! Tensors are `ndarray` arrays of `f64`. Spectral routines treat the last two
//! axes as `H × W` and every leading axis as a channel.

mod attention;
mod flow_matching;
pub mod oracle;
mod rope;
pub mod selftest;
mod spectral;

pub use attention::{attention_entropy, attention_temperature, attention_temperature_with, scaled_attention, scaled_attention_with, softmax_rows, LogBase};
pub use flow_matching::{flow_interpolate, flow_matching_loss, interpolation_endpoint, predicted_target, Endpoint, Reduction};
pub use rope::{apply_rope, apply_rope_2d, rescale_rope_base, rope_frequencies, IndexOrigin, RopeConfig, TokenGrid};
pub use spectral::{
    dft2_ortho, fixed_weight_loss, focus_intensity, frequency_loss, frequency_weights, idft2_ortho, loss_weights, spectral_discrepancy, total_loss, LossParts,
    SpectralLossConfig, WeightGradient,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("head dimension {0} must be even and positive")]
    HeadDim(usize),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("row {0} is not a probability distribution")]
    NotStochastic(usize),
    #[error("empty input")]
    Empty,
}

pub(crate) fn same_shape(a: &[usize], b: &[usize]) -> Result<(), NumericsError> {
    if a != b {
        return Err(NumericsError::Shape(a.to_vec(), b.to_vec()));
    }
    Ok(())
}

pub(crate) fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> Result<(), NumericsError> {
    if it.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}
