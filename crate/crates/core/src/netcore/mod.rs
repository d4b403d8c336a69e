//! Dense matrices, the layered network, and the checkpoint format.

pub mod checkpoint;
mod matrix;
mod network;

pub use matrix::Matrix;
pub use network::{
    forward_probs, softmax, Activation, Affine, Classifier, DenseLayer, FeatureExtractor,
    FeatureTrace, ForwardPass, GradientSet, Network,
};
