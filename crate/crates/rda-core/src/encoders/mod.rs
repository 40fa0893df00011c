//! Encoder boundary: the trait every embedding producer implements, the
//! oracle-testable random-feature target, the trainable convolutional
//! surrogate, Adam, the black-box wrapper, and checkpoint persistence.

mod adam;
mod blackbox;
mod checkpoint;
mod conv;
mod random_feature;
pub mod simclr;

pub use adam::{gradient_step, AdamState};
pub use blackbox::BlackBoxTarget;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{ConvDescriptor, ConvEncoder, ForwardTape};
pub use random_feature::RandomFeatureEncoder;

use ndarray::{Array2, Array3};

use crate::error::{RdaError, Result};

/// A fixed-function embedding producer.
///
/// Implementations are deterministic given their parameters and inputs and
/// always emit vectors of `dim()` entries.
pub trait EncoderInterface: Send + Sync {
    fn dim(&self) -> usize;

    /// (H, W, C) shape this encoder expects.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Encode a batch of images into a (batch, dim) matrix.
    fn encode_batch(&self, images: &[Array3<f64>]) -> Result<Array2<f64>>;

    /// Stable digest over parameters; changes when any parameter changes.
    fn fingerprint(&self) -> [u8; 32];
}

pub(crate) fn check_batch_shapes(
    images: &[Array3<f64>],
    expected: (usize, usize, usize),
) -> Result<()> {
    if images.is_empty() {
        return Err(RdaError::data("empty batch"));
    }
    for (i, img) in images.iter().enumerate() {
        let s = img.shape();
        if (s[0], s[1], s[2]) != expected {
            return Err(RdaError::data(format!(
                "batch image {i} has shape {:?}, encoder expects {:?}",
                (s[0], s[1], s[2]),
                expected
            )));
        }
    }
    Ok(())
}
