//! Detection scores, equal error rate and score-level fusion.

mod eer;
mod fusion;
mod score;

pub use eer::{compute_eer, eer_from_scores, Eer};
pub use fusion::{fuse_scores, FusionSpec, Normalize};
pub use score::{read_score_file, score_dataset, write_score_file, ScoreRecord};
