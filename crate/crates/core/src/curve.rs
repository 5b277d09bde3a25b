//! Measured loss curves and the run metadata they belong to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{MixtureFraction, TokenCount};

/// Which evaluation split a loss series was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    DomainTrain,
    DomainTest,
    General,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::DomainTrain => "domain_train",
            Split::DomainTest => "domain_test",
            Split::General => "general",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String =
            s.trim().chars().filter(|c| !matches!(c, '_' | '-' | ' ')).map(|c| c.to_ascii_lowercase()).collect();
        match norm.as_str() {
            "domaintrain" | "train" => Ok(Split::DomainTrain),
            "domaintest" | "test" => Ok(Split::DomainTest),
            "general" => Ok(Split::General),
            _ => Err(Error::Format(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub tokens: TokenCount,
    /// Nats per token.
    pub loss: f64,
}

/// A measured series of `(tokens, loss)` points for one run and one split.
///
/// Points are strictly increasing in tokens and every loss is finite and
/// positive; the constructor enforces both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub run_id: String,
    pub split: Split,
    points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn new(run_id: impl Into<String>, split: Split, points: Vec<LossPoint>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].tokens <= w[0].tokens {
                return Err(Error::InvariantViolation(format!(
                    "curve tokens must be strictly increasing ({} then {})",
                    w[0].tokens, w[1].tokens
                )));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.loss.is_finite() && p.loss > 0.0)) {
            return Err(Error::InvariantViolation(format!(
                "loss {} at {} tokens is not finite and positive",
                p.loss, p.tokens
            )));
        }
        Ok(LossCurve { run_id: run_id.into(), split, points })
    }

    /// Builds a curve from unordered points, sorting by tokens.
    pub fn from_unsorted(run_id: impl Into<String>, split: Split, mut points: Vec<LossPoint>) -> Result<Self> {
        points.sort_by_key(|p| p.tokens);
        Self::new(run_id, split, points)
    }

    pub fn points(&self) -> &[LossPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn token_range(&self) -> Option<(TokenCount, TokenCount)> {
        Some((self.points.first()?.tokens, self.points.last()?.tokens))
    }
}

/// Configuration of one pretraining run.
///
/// Runs reconstructed from loss logs only know their mixture fraction, so the
/// corpus size and parameter count are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub delta: MixtureFraction,
    pub domain_dataset_tokens: Option<TokenCount>,
    pub pretrain_budget_tokens: TokenCount,
    pub model_params: Option<u64>,
    /// Offset at which domain mixing begins; `None` is plain SPT.
    pub scpt_start_tokens: Option<TokenCount>,
}

impl RunConfig {
    pub fn spt(
        run_id: impl Into<String>,
        delta: MixtureFraction,
        domain_dataset_tokens: TokenCount,
        pretrain_budget_tokens: TokenCount,
    ) -> Self {
        RunConfig {
            run_id: run_id.into(),
            delta,
            domain_dataset_tokens: Some(domain_dataset_tokens),
            pretrain_budget_tokens,
            model_params: None,
            scpt_start_tokens: None,
        }
    }

    pub fn with_scpt_start(mut self, start: TokenCount) -> Self {
        self.scpt_start_tokens = Some(start);
        self
    }

    pub fn scpt_start(&self) -> TokenCount {
        self.scpt_start_tokens.unwrap_or(TokenCount::ZERO)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_zero() {
            if let Some(TokenCount(0)) = self.domain_dataset_tokens {
                return Err(Error::InvalidConfig(format!(
                    "run `{}` mixes domain data but the domain corpus is empty",
                    self.run_id
                )));
            }
        }
        if let Some(start) = self.scpt_start_tokens {
            if start >= self.pretrain_budget_tokens {
                return Err(Error::InvalidConfig(format!(
                    "run `{}`: continued-pretraining start {} is not before the budget {}",
                    self.run_id, start, self.pretrain_budget_tokens
                )));
            }
        }
        Ok(())
    }
}
