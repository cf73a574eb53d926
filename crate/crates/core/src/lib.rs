//! Face tracking with cascade likelihood maps carried along optical flow.
//!
//! A boosted LBP cascade scores image windows by the number of stages they
//! pass. Windows that get far enough vote into a per-pixel likelihood map,
//! which is propagated between frames with dense Farnebäck flow and refreshed
//! by the detector every few frames. Faces are the connected regions of the
//! map above a threshold.
//!
//! ```
//! use facetrack::cascade::parse_standard_xml;
//! use facetrack::imgcore::Frame;
//! use facetrack::tracker::{Tracker, TrackerConfig};
//!
//! let xml = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/lbpcascade_frontalface.xml"))?;
//! let model = parse_standard_xml(&xml)?;
//! let mut tracker = Tracker::with_cascade(&model, TrackerConfig::default())?;
//! let result = tracker.step(&Frame::filled(160, 120, 128)?)?;
//! assert!(result.refreshed && result.faces.is_empty());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! The guide in `book/` covers each stage in more depth.

pub mod cascade;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod imgcore;
pub mod io;
pub mod likelihood;
pub mod tracker;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cascade.md")]
    mod cascade {}
    #[doc = include_str!("../../../book/src/scanning.md")]
    mod scanning {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/tracker.md")]
    mod tracker {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
