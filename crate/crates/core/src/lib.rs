//! Environmental sound deepfake detection back-end.
//!
//! Layered self-supervised features (`L × T × D`) are aggregated with learned
//! softmax layer weights into separate key and value streams, pooled by
//! multi-head factorized attention, and classified as bonafide or spoof.
//! Training optionally jitters value-stream instance statistics (DSU) to
//! simulate unseen generators. Evaluation reports equal error rates and
//! supports score-level fusion.

pub mod autodiff;
pub mod dsu;
pub mod error;
pub mod eval;
pub mod features;
pub mod mhfa;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use eval::{compute_eer, fuse_scores, FusionSpec, ScoreRecord};
pub use features::{FeatureStack, Label, ManifestEntry, Split, SynthConfig};
pub use mhfa::{MhfaConfig, MhfaParams, Mode};
pub use tensor::{Scalar, Tensor};
pub use trainer::TrainConfig;
