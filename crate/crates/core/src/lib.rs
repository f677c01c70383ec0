//! Lane-change decision analytics for highway drone trajectory recordings.
//!
//! The library covers the full pipeline: parsing drone-recorded trajectory
//! CSVs ([`ingest`]), detecting lane-change events from lane-id transitions
//! and marking crossings ([`extract`]), deriving per-frame interaction
//! features and observation windows ([`features`], [`dataset`]), clustering
//! drivers into styles ([`clustering`]), applying style-conditioned fuzzy
//! feature transforms ([`fuzzy`]), training random-forest and
//! convolutional-recurrent classifiers ([`forest`], [`network`]), and
//! evaluating them ([`eval`]). A synthetic trajectory generator with
//! closed-form ground truth ([`synth`]) backs the test suite.
//!
//! Everything is deterministic given a seed: random state is ChaCha-based and
//! derived per stage via [`seeds`], collections with nondeterministic
//! iteration order are avoided on output paths, and artifacts carry the
//! originating config hash and seed ([`provenance`]).

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod forest;
pub mod fuzzy;
pub mod ingest;
pub mod network;
pub mod provenance;
pub mod seeds;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};
