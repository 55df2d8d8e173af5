//! Evaluation metrics: alignment-based spectral distortion, pitch and
//! transcript error rates, listening-test aggregation, and embedding scores.

mod cluster;
mod dtw;
mod listening;
mod pca;
mod pitch;
mod similarity;
mod wer;

pub use cluster::{centroid_accuracy, centroid_accuracy_points};
pub use dtw::{dtw_align, mcd, Alignment};
pub use listening::{bws_scores, bws_tally, mos_summary, read_bws_trials, read_ratings, BwsTally, BwsTrial, MosSummary};
pub use pca::{pca2, Pca2};
pub use pitch::{ffe, F0Track, DEFAULT_GROSS_THRESHOLD};
pub use similarity::{cosine_similarity, mean_cosine_similarity};
pub use wer::{wer, WerResult};
