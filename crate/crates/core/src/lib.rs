//! Writer identification from handwriting images.
//!
//! Local descriptors are activations of a small CNN applied to 32x32 patches
//! centered on ink contours. They are whitened, encoded per document as a GMM
//! supervector (or VLAD / Fisher vector), and compared by cosine distance.

pub mod cnn;
pub mod encoding;
pub mod error;
pub mod format;
pub mod gmm;
pub mod imaging;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod whitening;

pub use error::{Error, Result};
