//! Training and serving FLOP accounting for a specialized small model versus
//! finetuning a larger general model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::TokenCount;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub train_flops_per_param_token: f64,
    pub infer_flops_per_param_token: f64,
    pub spt_params: u64,
    pub spt_pretrain_tokens: TokenCount,
    pub spt_ft_tokens: TokenCount,
    pub base_params: u64,
    pub base_ft_tokens: TokenCount,
    pub dollars_per_flop: Option<f64>,
}

impl Default for CostModel {
    /// 1B specialized model pretrained on 200B tokens vs a 3B base model;
    /// both finetune for 5 epochs of a 300M-token domain corpus.
    fn default() -> Self {
        CostModel {
            train_flops_per_param_token: 6.0,
            infer_flops_per_param_token: 2.0,
            spt_params: 1_000_000_000,
            spt_pretrain_tokens: TokenCount(200_000_000_000),
            spt_ft_tokens: TokenCount(1_500_000_000),
            base_params: 3_000_000_000,
            base_ft_tokens: TokenCount(1_500_000_000),
            dollars_per_flop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Pretrain the small model with domain data mixed in, then finetune it.
    Spt,
    /// Finetune the larger base model only.
    Baseline,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_flops_per_param_token", self.train_flops_per_param_token),
            ("infer_flops_per_param_token", self.infer_flops_per_param_token),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let Some(d) = self.dollars_per_flop {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig("dollars_per_flop must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn params(&self, which: Pipeline) -> f64 {
        match which {
            Pipeline::Spt => self.spt_params as f64,
            Pipeline::Baseline => self.base_params as f64,
        }
    }
}

pub fn pipeline_train_flops(m: &CostModel, which: Pipeline) -> f64 {
    let c = m.train_flops_per_param_token;
    match which {
        Pipeline::Spt => c * m.spt_params as f64 * (m.spt_pretrain_tokens.as_f64() + m.spt_ft_tokens.as_f64()),
        Pipeline::Baseline => c * m.base_params as f64 * m.base_ft_tokens.as_f64(),
    }
}

/// Inference tokens after which the specialized pipeline's total cost drops
/// to the baseline's, as a real count.
///
/// `None` when the specialized model saves nothing per token; `0` when it is
/// already cheaper upfront.
pub fn break_even_tokens_f64(m: &CostModel) -> Option<f64> {
    if m.base_params <= m.spt_params {
        return None;
    }
    let extra = pipeline_train_flops(m, Pipeline::Spt) - pipeline_train_flops(m, Pipeline::Baseline);
    if extra <= 0.0 {
        return Some(0.0);
    }
    let saving = m.infer_flops_per_param_token * (m.base_params - m.spt_params) as f64;
    Some(extra / saving)
}

pub fn break_even_tokens(m: &CostModel) -> Option<TokenCount> {
    break_even_tokens_f64(m).and_then(|t| TokenCount::from_f64_rounded(t).ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub inference_tokens: TokenCount,
    pub flops: f64,
    pub dollars: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurves {
    pub spt: Vec<CostPoint>,
    pub baseline: Vec<CostPoint>,
}

/// Cumulative train-plus-serve cost of both pipelines over an inference
/// token grid.
pub fn cumulative_cost_curve(m: &CostModel, grid: &[TokenCount]) -> Result<CostCurves> {
    m.validate()?;
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("inference token grid must be nondecreasing".into()));
    }
    let series = |which: Pipeline| -> Vec<CostPoint> {
        let upfront = pipeline_train_flops(m, which);
        let per_token = m.infer_flops_per_param_token * m.params(which);
        grid.iter()
            .map(|&t| {
                let flops = cumulative_flops_at(upfront, per_token, t.as_f64());
                CostPoint { inference_tokens: t, flops, dollars: m.dollars_per_flop.map(|d| d * flops) }
            })
            .collect()
    };
    Ok(CostCurves { spt: series(Pipeline::Spt), baseline: series(Pipeline::Baseline) })
}

fn cumulative_flops_at(upfront: f64, per_token: f64, tokens: f64) -> f64 {
    upfront + per_token * tokens
}

/// Cumulative FLOPs of one pipeline after `tokens` inference tokens.
pub fn cumulative_flops(m: &CostModel, which: Pipeline, tokens: f64) -> f64 {
    cumulative_flops_at(pipeline_train_flops(m, which), m.infer_flops_per_param_token * m.params(which), tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_flops_examples() {
        let zero = CostModel {
            spt_pretrain_tokens: TokenCount(0),
            spt_ft_tokens: TokenCount(0),
            base_ft_tokens: TokenCount(0),
            ..CostModel::default()
        };
        assert_eq!(pipeline_train_flops(&zero, Pipeline::Spt), 0.0);
        assert_eq!(pipeline_train_flops(&zero, Pipeline::Baseline), 0.0);
        let m = CostModel::default();
        assert!((pipeline_train_flops(&m, Pipeline::Spt) / 1.209e21 - 1.0).abs() < 1e-12);
        assert!((pipeline_train_flops(&m, Pipeline::Baseline) / 2.7e19 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn break_even_cases() {
        let m = CostModel::default();
        let t = break_even_tokens_f64(&m).unwrap();
        assert!((t / 2.955e11 - 1.0).abs() < 1e-12);
        let same = CostModel { base_params: m.spt_params, ..m.clone() };
        assert_eq!(break_even_tokens(&same), None);
        let cheap = CostModel { spt_pretrain_tokens: TokenCount(0), ..m.clone() };
        assert_eq!(break_even_tokens(&cheap), Some(TokenCount(0)));
    }

    #[test]
    fn curves_start_at_upfront_and_cross_at_break_even() {
        let m = CostModel { dollars_per_flop: Some(1e-18), ..CostModel::default() };
        let be = break_even_tokens_f64(&m).unwrap();
        let grid = [TokenCount(0), TokenCount(1_000_000_000_000)];
        let c = cumulative_cost_curve(&m, &grid).unwrap();
        assert_eq!(c.spt[0].flops, pipeline_train_flops(&m, Pipeline::Spt));
        assert_eq!(c.baseline[0].flops, pipeline_train_flops(&m, Pipeline::Baseline));
        let a = cumulative_flops(&m, Pipeline::Spt, be);
        let b = cumulative_flops(&m, Pipeline::Baseline, be);
        assert!(((a - b) / a).abs() < 1e-9);
        let doubled = CostModel { dollars_per_flop: Some(2e-18), ..m.clone() };
        let d = cumulative_cost_curve(&doubled, &grid).unwrap();
        for (x, y) in c.spt.iter().zip(&d.spt) {
            assert_eq!(y.dollars.unwrap(), 2.0 * x.dollars.unwrap());
        }
    }

    #[test]
    fn config_round_trip() {
        let m = CostModel { dollars_per_flop: Some(2.5e-18), ..CostModel::default() };
        let text = toml::to_string(&m).unwrap();
        assert_eq!(toml::from_str::<CostModel>(&text).unwrap(), m);
        let partial: CostModel = toml::from_str("spt_pretrain_tokens = \"100B\"\n").unwrap();
        assert_eq!(partial.spt_pretrain_tokens, TokenCount(100_000_000_000));
        assert_eq!(partial.base_params, 3_000_000_000);
    }
}
