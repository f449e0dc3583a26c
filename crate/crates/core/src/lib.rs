//! Dense pixel-level feature learning by distilling optical flow.
//!
//! A frozen patch encoder feeds a small trainable convolutional decoder that
//! produces per-pixel features. For every sampled frame pair, a ridge
//! regression solved on the EMA-teacher features yields a linear map from
//! features to flow; the student is trained to reconstruct the flow crop
//! through that fixed map. Synthetic sprite videos with exact ground-truth
//! flow make the whole pipeline testable end to end, and VOS-style linear and
//! KNN probes measure the learned representation.

pub mod cli;
pub mod dataio;
pub mod decoder;
pub mod distill;
pub mod encoder;
pub mod gradcheck;
pub mod numerics;
pub mod probes;
pub mod viz;
