use serde::{Deserialize, Serialize};

use super::ReportError;

pub const DEFAULT_CONTEXT_CAP: usize = 128_000;
pub const DEFAULT_OUTPUT_RESERVE: usize = 16_384;

/// Token counter. The default is the characters/4 heuristic; an exact
/// tokenizer can be plugged in behind the same trait.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicEstimator;

impl TokenEstimator for HeuristicEstimator {
    fn estimate(&self, text: &str) -> usize {
        token_estimate(text)
    }
}

/// `ceil(chars / 4)`, counting Unicode scalar values.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub context_cap: usize,
    pub output_reserve: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget { context_cap: DEFAULT_CONTEXT_CAP, output_reserve: DEFAULT_OUTPUT_RESERVE }
    }
}

impl TokenBudget {
    pub fn new(context_cap: usize, output_reserve: usize) -> Result<Self, ReportError> {
        let b = TokenBudget { context_cap, output_reserve };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.output_reserve == 0 || self.context_cap <= self.output_reserve {
            return Err(ReportError::Validation(format!(
                "context cap {} must exceed output reserve {} > 0",
                self.context_cap, self.output_reserve
            )));
        }
        Ok(())
    }

    /// Input tokens available once the output reserve is set aside.
    pub fn input_limit(&self) -> usize {
        self.context_cap - self.output_reserve
    }
}
