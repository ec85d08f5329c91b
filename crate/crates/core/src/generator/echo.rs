use super::{check_batch, Decoding, Generator, GeneratorError};

/// Identity generator with zero loss; a test double for the training loop.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator {
    snapshot: bool,
}

impl EchoGenerator {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Generator for EchoGenerator {
    fn name(&self) -> &str {
        "echo"
    }

    fn decode(&mut self, sources: &[String], _: Decoding) -> Result<Vec<String>, GeneratorError> {
        Ok(sources.to_vec())
    }

    fn train_weighted(&mut self, sources: &[String], targets: &[String], _: f64) -> Result<f64, GeneratorError> {
        check_batch(sources, targets)?;
        Ok(0.0)
    }

    fn snapshot(&mut self) -> Result<(), GeneratorError> {
        self.snapshot = true;
        Ok(())
    }

    fn restore(&mut self) -> Result<(), GeneratorError> {
        if !std::mem::take(&mut self.snapshot) {
            return Err(GeneratorError::NoSnapshot);
        }
        Ok(())
    }

    fn save(&mut self, _: &str) -> Result<(), GeneratorError> {
        Ok(())
    }

    fn load(&mut self, _: &str) -> Result<(), GeneratorError> {
        Ok(())
    }
}
