//! Detection of activity self-reports in geotagged short-text posts and
//! inference of user home locations from their check-in behavior.
//!
//! The pipeline has two halves. The text half normalizes posts, filters them
//! through a keyword list, and runs a three-stage cascade of linear SVMs that
//! narrows "mentions the activity" to "author is doing it" to "doing it right
//! now". The mobility half turns each user's posts into an hourly location
//! trace over a square grid, derives per-cell features (check-in shares,
//! late-night behavior, last destinations, hourly profiles, and PageRank
//! scores over the movement graph), and scores candidate home cells with a
//! linear model. Analysis utilities build density heatmaps, correlate them
//! with external point tables, and histogram post-to-home distances. A
//! deterministic synthetic world generator provides ground truth for testing
//! every stage.

pub mod analysis;
pub mod cascade;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod homeloc;
pub mod mobility;
pub mod svm;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
