//! Sequence generators behind a common training/decoding contract.
//!
//! The training loop only needs to generate pseudo targets, take weighted
//! training steps, freeze a copy of the parameters while pseudo-labeling,
//! and checkpoint. [`EchoGenerator`] and [`TableGenerator`] run in-process;
//! [`RemoteGenerator`] talks to a model server over a line-delimited JSON
//! protocol (see [`protocol`]).

mod echo;
pub mod protocol;
mod remote;
mod table;

use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

pub use echo::EchoGenerator;
pub use remote::{RemoteGenerator, Transport, DEFAULT_TIMEOUT};
pub use table::{align, TableGenerator};

use crate::perturb::Paraphraser;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("batch mismatch: {sources} sources, {targets} targets")]
    BatchMismatch { sources: usize, targets: usize },
    #[error("beam width must be at least 1")]
    InvalidBeam,
    #[error("restore called without a snapshot")]
    NoSnapshot,
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("remote request timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoding strategy for pseudo-labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// Deterministic beam search ("hard labels").
    Beam(usize),
    /// Ancestral sampling with a request-specific seed.
    Sample { seed: u64 },
}

pub trait Generator {
    fn name(&self) -> &str;

    /// One output per input, in input order. Never changes trainable state.
    fn decode(&mut self, sources: &[String], decoding: Decoding) -> Result<Vec<String>, GeneratorError>;

    /// One weighted training step; returns the batch loss (finite, >= 0).
    fn train_weighted(
        &mut self,
        sources: &[String],
        targets: &[String],
        weight: f64,
    ) -> Result<f64, GeneratorError>;

    /// Freezes the current parameters for generation. A second call replaces
    /// the first snapshot.
    fn snapshot(&mut self) -> Result<(), GeneratorError>;

    /// Drops the snapshot so generation follows the live parameters again.
    fn restore(&mut self) -> Result<(), GeneratorError>;

    fn save(&mut self, tag: &str) -> Result<(), GeneratorError>;

    fn load(&mut self, tag: &str) -> Result<(), GeneratorError>;

    fn generate(&mut self, sources: &[String], beam: usize) -> Result<Vec<String>, GeneratorError> {
        if beam == 0 {
            return Err(GeneratorError::InvalidBeam);
        }
        self.decode(sources, Decoding::Beam(beam))
    }

    fn train_step(&mut self, sources: &[String], targets: &[String]) -> Result<f64, GeneratorError> {
        self.train_weighted(sources, targets, 1.0)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn decode(&mut self, sources: &[String], decoding: Decoding) -> Result<Vec<String>, GeneratorError> {
        (**self).decode(sources, decoding)
    }
    fn train_weighted(&mut self, s: &[String], t: &[String], w: f64) -> Result<f64, GeneratorError> {
        (**self).train_weighted(s, t, w)
    }
    fn snapshot(&mut self) -> Result<(), GeneratorError> {
        (**self).snapshot()
    }
    fn restore(&mut self) -> Result<(), GeneratorError> {
        (**self).restore()
    }
    fn save(&mut self, tag: &str) -> Result<(), GeneratorError> {
        (**self).save(tag)
    }
    fn load(&mut self, tag: &str) -> Result<(), GeneratorError> {
        (**self).load(tag)
    }
}

pub(crate) fn check_batch(sources: &[String], targets: &[String]) -> Result<(), GeneratorError> {
    if sources.is_empty() || sources.len() != targets.len() {
        return Err(GeneratorError::BatchMismatch {
            sources: sources.len(),
            targets: targets.len(),
        });
    }
    Ok(())
}

/// Uses a generator (e.g. a back-translation model) as a paraphrase source.
pub struct GeneratorParaphraser<G> {
    inner: Mutex<G>,
    beam: usize,
}

impl<G: Generator> GeneratorParaphraser<G> {
    pub fn new(generator: G, beam: usize) -> Self {
        Self {
            inner: Mutex::new(generator),
            beam,
        }
    }
}

impl<G: Generator + Send> Paraphraser for GeneratorParaphraser<G> {
    fn paraphrase(&self, texts: &[String]) -> Result<Vec<String>, String> {
        let mut g = self.inner.lock().map_err(|_| "paraphraser lock poisoned".to_string())?;
        g.generate(texts, self.beam).map_err(|e| e.to_string())
    }
}
