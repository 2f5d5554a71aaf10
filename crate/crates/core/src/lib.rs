//! Desk-scale lab for angle-based indoor localization.
//!
//! A client inside a polygonal room measures angles of arrival from a handful
//! of physical access points and from their first-order wall reflections,
//! modeled as virtual anchors mirrored across the walls. Angle *differences*
//! (ADoA) cancel the client's unknown heading, so a feature vector of ADoA
//! values identifies position without any orientation input.
//!
//! The crate covers the full loop:
//!
//! * [`geometry`]: rooms, anchor rosters, exact angle-of-arrival with
//!   visibility and first-order reflection checks.
//! * [`features`]: noisy measurement synthesis, ADoA feature vectors,
//!   random-waypoint trajectories, dataset assembly and CSV round-trip.
//! * [`nn`]: a small fully-connected regressor (two hidden layers, ReLU,
//!   inverted dropout, Adam) trained on ADoA features, plus grid tuning.
//! * [`geoloc`]: geometric ADoA least-squares localizer, used both as a
//!   baseline and as a labeler when ground truth is unavailable.
//! * [`eval`]: error summaries, CDFs, and multi-configuration experiments.
//!
//! Angles are radians in (-pi, pi], positions are meters, throughout.

pub mod eval;
pub mod features;
pub mod geoloc;
pub mod geometry;
pub mod nn;
pub mod seeding;
pub mod util;

use std::path::PathBuf;

/// Crate-wide error. `code()` gives the stable short identifier used by
/// front-ends when reporting failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Scenario or room geometry is invalid (non-simple polygon, clockwise
    /// winding, AP outside the room, bad pruning parameters, ...).
    #[error("{0}")]
    Scenario(String),
    /// A query point that must lie inside the room does not.
    #[error("client ({0}, {1}) lies outside the room")]
    OutsideRoom(f64, f64),
    /// Too few valid readings or usable anchors to form a fix.
    #[error("{0}")]
    Unlocalizable(String),
    /// Array or matrix dimensions disagree.
    #[error("{0}")]
    Shape(String),
    /// A NaN or infinity reached a numeric kernel.
    #[error("{0}")]
    NonFinite(String),
    /// An input collection that must be non-empty is empty.
    #[error("{0}")]
    Empty(String),
    /// Dataset-level failure (excessive dropped points, schema mismatch,
    /// anchor-count mismatch between artifacts).
    #[error("{0}")]
    Dataset(String),
    /// Training could not proceed (degenerate split, diverged loss).
    #[error("{0}")]
    Train(String),
    /// File system failure, with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed JSON or CSV.
    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Scenario(_) => "scenario",
            Error::OutsideRoom(..) => "outside-room",
            Error::Unlocalizable(_) => "unlocalizable",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "nonfinite",
            Error::Empty(_) => "empty",
            Error::Dataset(_) => "dataset",
            Error::Train(_) => "train",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
