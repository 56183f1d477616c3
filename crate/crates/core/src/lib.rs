//! Matching of image pairs with strong nonlinear intensity differences.
//!
//! Keypoints come from phase congruency ([`pc`]), which ignores contrast;
//! candidate correspondences are scored by a small 2-channel convolutional
//! network ([`convnet`]) trained on aligned patch pairs ([`dataset`]); and
//! [`matcher`] selects mutual-best pairs and verifies them geometrically.

pub mod cli;
pub mod convnet;
pub mod dataset;
pub mod eval;
pub mod fft;
pub mod geometry;
pub mod imaging;
pub mod matcher;
pub mod pc;
pub mod rng;
