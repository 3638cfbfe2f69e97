//! Dense sliding-window detection: a small convolutional classifier is
//! converted to fully-convolutional form and swept over an image pyramid;
//! the resulting score maps become boxes that are suppressed, optionally
//! refined by box regression, and evaluated against ground truth.

pub mod bbox;
pub mod detector;
pub mod error;
pub mod eval;
pub mod image;
pub mod model_io;
pub mod nms;
pub mod nnet;
pub mod overlay;
pub mod pyramid;
pub mod regressor;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
