//! Minimal differentiable CNN with hand-written backward passes.

mod extractor;
pub mod gradcheck;
mod ops;
mod params;
mod probe;
mod scalar;

pub use extractor::{
    conv_out_side, init_params, ConvBlock, ExtractorOutput, FeatureExtractor, FeatureExtractorConfig, ForwardPass,
    Gradients, Tensor4, CHUNK,
};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, LossEval};
pub use ops::{cosine_sim, l2_normalize, log_sum_exp, norm, softmax, Embedding, NORM_EPS};
pub use params::{Param, ParamSet, ParamSpec};
pub use probe::LinearProbe;
pub use scalar::Scalar;
