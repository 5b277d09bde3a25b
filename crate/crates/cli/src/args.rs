//! Parsers for token counts, fractions, lists and grids on the command line.

use anyhow::{bail, Context, Result};
use sptlaw::{MixtureFraction, TokenCount};

pub fn tokens(s: &str) -> Result<TokenCount, String> {
    s.parse::<TokenCount>().map_err(|e| e.to_string())
}

pub fn fraction(s: &str) -> Result<MixtureFraction, String> {
    s.parse::<MixtureFraction>().map_err(|e| e.to_string())
}

fn has_suffix(s: &str) -> bool {
    s.trim().chars().last().is_some_and(|c| c.is_ascii_alphabetic() && !matches!(c, 'e' | 'E'))
}

/// One endpoint: a bare number is in law units, an SI-suffixed value is raw
/// tokens.
fn endpoint(s: &str, unit: TokenCount) -> Result<f64> {
    if has_suffix(s) {
        Ok(tokens(s).map_err(anyhow::Error::msg)?.as_f64())
    } else {
        let v: f64 = s.trim().parse().with_context(|| format!("'{s}' is not a number"))?;
        Ok(v * unit.as_f64())
    }
}

/// `start:end:count`, log-spaced and inclusive.
pub fn grid(spec: &str, unit: TokenCount) -> Result<Vec<TokenCount>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        bail!("grid '{spec}' must look like start:end:count");
    };
    let (lo, hi) = (endpoint(lo, unit)?, endpoint(hi, unit)?);
    let n: usize = n.trim().parse().with_context(|| format!("grid count '{n}' is not an integer"))?;
    if !(lo >= 1.0 && hi >= lo) || n == 0 {
        bail!("grid '{spec}' needs 1 ≤ start ≤ end and count ≥ 1");
    }
    let mut out: Vec<TokenCount> = (0..n)
        .map(|i| {
            let t = if n == 1 { lo } else { (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp() };
            TokenCount(t.round() as u64)
        })
        .collect();
    out.dedup();
    Ok(out)
}

/// `lo:hi` token range.
pub fn range(spec: &str, unit: TokenCount) -> Result<(TokenCount, TokenCount)> {
    let Some((lo, hi)) = spec.split_once(':') else {
        bail!("range '{spec}' must look like lo:hi");
    };
    let to = |v: f64| TokenCount(v.round() as u64);
    Ok((to(endpoint(lo, unit)?), to(endpoint(hi, unit)?)))
}
