//! Detection and repair of quality defects in text-attributed graphs.

pub mod act;
pub mod cluster;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod graph;
pub mod io;
pub mod issue;
pub mod learn;
pub mod llm;
pub mod par;
pub mod perturb;
pub mod pipeline;
pub mod plan;
pub mod rng;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use graph::{NodeRecord, Split, TextAttributedGraph};
pub use issue::Issue;
