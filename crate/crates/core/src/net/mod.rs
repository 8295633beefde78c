//! The association network.
//!
//! Per frame, each detection's corners (2D and 3D) are embedded by a small
//! point-set encoder and its re-id vector and category by linear maps; the
//! two are fused and propagated among the objects of the frame by stacked
//! self-attention (spatial flow). Previous-frame features are made
//! time-aware by appending the time gap (motion modeling) and queried by the
//! current frame through stacked cross-attention (temporal flow). The scaled
//! scores of one cross-attention layer, mapped entrywise by a small
//! feed-forward net and bordered by learned birth/death logits, form the
//! affinity matrix. Prediction heads read the aggregated features.
//!
//! No positional encodings are used, so every stage is equivariant to the
//! order of detections within a frame.

mod config;
mod input;
mod model;
mod params;

pub use config::NetConfig;
pub use input::FrameInput;
pub use model::{
    dual_softmax, AffinityMatrix, AffinityVar, AssocNet, EncodedFrame, FrameFeatures, Graph, HeadVars,
    HeadsOutput, PairOutput, TemporalOutput, PAD_LOGIT,
};
pub use params::{ParamId, ParamStore};
