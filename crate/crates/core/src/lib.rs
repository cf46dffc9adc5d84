//! Compound facial expression recognition over per-frame video features.
//!
//! The pipeline samples a three-scale temporal pyramid around every frame,
//! runs a small transformer encoder with a 7-way compound-class head and a
//! valence/arousal sign head over each sequence, averages the per-scale
//! scores and finally gates the label through the valence/arousal signs.
//!
//! ```text
//! votes.csv ──curation──▶ manifest.jsonl ──trainer──▶ checkpoint
//!                                                        │
//! features/*.tlhn ──pyramid──▶ 3×15 frames ──model──▶ fuse ──gate──▶ labels
//!                                                                      │
//!                                                        eval ◀── truth.csv
//! ```

pub mod cli;
pub mod curation;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod label_space;
pub mod model;
pub mod pyramid;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
