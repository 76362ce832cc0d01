//! The trainable fusion network: per-modality projection, bidirectional
//! cross-attention, feature fusion and a two-layer prediction head, with an
//! analytic backward pass.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use backward::{backward, fuse_features_backward, Gradients};
pub use config::{AblationFlags, FusionConfig, FusionSegment, NormPlacement, TokenMode};
pub use forward::{
    cross_attention_layer, forward, fuse_features, predict_head, project, replay_forward,
    structure_signature, ForwardTrace, Mode,
};
pub use params::{
    count_params, init_params, Attention, CrossLayer, FeedForward, FusionParams, Head, Linear,
    Norm, ParamCount, Projection, StreamBlock,
};
