//! Epoch bookkeeping and deterministic domain/general interleaving plans.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curve::RunConfig;
use crate::error::{Error, Result};
use crate::units::{rational_to_f64, MixtureFraction, TokenCount};

/// One batch of the reference configuration: 2048 sequences of 2048 tokens.
pub const DEFAULT_GRANULARITY: TokenCount = TokenCount(2048 * 2048);

/// Exact number of passes over the domain corpus, `T·δ / |D|`.
pub fn epochs_exact(tokens: TokenCount, delta: MixtureFraction, domain_size: TokenCount) -> Result<BigRational> {
    if delta.is_zero() {
        return Ok(BigRational::zero());
    }
    if domain_size.get() == 0 {
        return Err(Error::Domain("domain corpus size must be positive when delta > 0".into()));
    }
    Ok(tokens.to_rational() * delta.to_rational() / domain_size.to_rational())
}

pub fn epochs(tokens: TokenCount, delta: MixtureFraction, domain_size: TokenCount) -> Result<f64> {
    epochs_exact(tokens, delta, domain_size).map(|r| rational_to_f64(&r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Domain,
    General,
}

impl Source {
    fn code(self) -> u8 {
        match self {
            Source::Domain => 1,
            Source::General => 0,
        }
    }
}

/// Tokens `[start, end)` drawn from one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    pub source: Source,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSchedule {
    pub config: RunConfig,
    pub granularity: TokenCount,
    /// Realized passes over the domain corpus, when its size is known.
    pub epochs: Option<f64>,
    /// Maximal same-source runs covering `[0, T)`.
    pub segments: Vec<Segment>,
    /// Token positions where a pass over the domain corpus completes.
    pub epoch_boundaries: Vec<u64>,
    pub seed: u64,
}

fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

/// Plans which granularity-sized blocks carry domain tokens.
///
/// Blocks before the continued-pretraining offset are general. After it, an
/// error accumulator places domain blocks so that every prefix stays within
/// one granularity unit of the target fraction; the seed sets the
/// accumulator's starting phase.
pub fn build_schedule(config: &RunConfig, granularity: TokenCount, seed: u64) -> Result<MixtureSchedule> {
    config.validate()?;
    let total = config.pretrain_budget_tokens.get();
    if total == 0 {
        return Err(Error::InvalidConfig("pretraining budget must be positive".into()));
    }
    let g = granularity.get();
    if g == 0 {
        return Err(Error::InvalidConfig("granularity must be positive".into()));
    }
    let start = config.scpt_start().get();
    let delta = config.delta.to_rational();
    let (num, den) = (delta.numer().clone(), delta.denom().clone());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (g / 2) as i64;
    let offset: i64 = rng.random_range(-half..=half);

    let mut blocks: Vec<Segment> = Vec::new();
    if start > 0 {
        blocks.push(Segment { start: 0, end: start, source: Source::General });
    }
    // v = (offset + D − δ·p)·den, kept exact
    let mut v = BigInt::from(offset) * &den;
    let mut pos = start;
    while pos < total {
        let end = pos.saturating_add(g).min(total);
        let len = big(end - pos);
        let if_general = &v - &num * &len;
        let if_domain = &v + (&den - &num) * &len;
        let source = if if_domain.abs() < if_general.abs() {
            v = if_domain;
            Source::Domain
        } else {
            v = if_general;
            Source::General
        };
        blocks.push(Segment { start: pos, end, source });
        pos = end;
    }

    let mut segments: Vec<Segment> = Vec::new();
    for b in blocks {
        match segments.last_mut() {
            Some(last) if last.source == b.source && last.end == b.start => last.end = b.end,
            _ => segments.push(b),
        }
    }

    let domain_tokens: u64 = segments.iter().filter(|s| s.source == Source::Domain).map(Segment::len).sum();
    let mut epoch_boundaries = Vec::new();
    let epochs = match config.domain_dataset_tokens {
        Some(size) if size.get() > 0 => {
            let size = size.get();
            let mut seen = 0u64;
            let mut next = size;
            for s in segments.iter().filter(|s| s.source == Source::Domain) {
                while next <= seen + s.len() {
                    epoch_boundaries.push(s.start + (next - seen));
                    next += size;
                }
                seen += s.len();
            }
            Some(domain_tokens as f64 / size as f64)
        }
        _ if domain_tokens == 0 => Some(0.0),
        _ => None,
    };

    Ok(MixtureSchedule { config: config.clone(), granularity, epochs, segments, epoch_boundaries, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub epochs: Option<f64>,
    pub domain_tokens: u64,
    pub general_tokens: u64,
    /// Largest `|D(p) − δ·p|` over post-offset prefixes, in granularity units.
    pub max_prefix_deviation: f64,
}

pub fn schedule_summary(s: &MixtureSchedule) -> ScheduleSummary {
    let domain_tokens: u64 = s.segments.iter().filter(|x| x.source == Source::Domain).map(Segment::len).sum();
    let general_tokens: u64 = s.segments.iter().filter(|x| x.source == Source::General).map(Segment::len).sum();
    let start = s.config.scpt_start().get();
    let delta = s.config.delta.to_rational();
    // deviation is linear within a segment, so segment ends suffice
    let mut domain_so_far = 0u64;
    let mut worst = BigRational::zero();
    for seg in s.segments.iter().filter(|x| x.end > start) {
        if seg.source == Source::Domain {
            domain_so_far += seg.len();
        }
        let prefix = BigRational::from_integer(big(seg.end - start));
        let dev = (BigRational::from_integer(big(domain_so_far)) - &delta * prefix).abs();
        if dev > worst {
            worst = dev;
        }
    }
    let units = worst / BigRational::from_integer(big(s.granularity.get()));
    ScheduleSummary {
        epochs: s.epochs,
        domain_tokens,
        general_tokens,
        max_prefix_deviation: units.to_f64().unwrap_or(f64::INFINITY),
    }
}

/// One JSON object per segment, newline-terminated.
pub fn schedule_to_jsonl(s: &MixtureSchedule) -> String {
    let mut out = String::new();
    for seg in &s.segments {
        out.push_str(&serde_json::to_string(seg).expect("segments serialize"));
        out.push('\n');
    }
    out
}

pub const BINARY_RECORD_LEN: usize = 17;

/// Run-length records: `u64 start, u64 end, u8 source` little-endian, with
/// source 1 = domain and 0 = general.
pub fn schedule_to_binary(s: &MixtureSchedule) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.segments.len() * BINARY_RECORD_LEN);
    for seg in &s.segments {
        out.extend_from_slice(&seg.start.to_le_bytes());
        out.extend_from_slice(&seg.end.to_le_bytes());
        out.push(seg.source.code());
    }
    out
}

pub fn segments_from_binary(bytes: &[u8]) -> Result<Vec<Segment>> {
    if !bytes.len().is_multiple_of(BINARY_RECORD_LEN) {
        return Err(Error::Format(format!(
            "binary plan length {} is not a multiple of {BINARY_RECORD_LEN}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(BINARY_RECORD_LEN)
        .map(|r| {
            let start = u64::from_le_bytes(r[0..8].try_into().expect("8 bytes"));
            let end = u64::from_le_bytes(r[8..16].try_into().expect("8 bytes"));
            let source = match r[16] {
                0 => Source::General,
                1 => Source::Domain,
                other => return Err(Error::Format(format!("unknown source code {other}"))),
            };
            if end < start {
                return Err(Error::Format(format!("segment ends before it starts: {start}..{end}")));
            }
            Ok(Segment { start, end, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(v: f64) -> MixtureFraction {
        MixtureFraction::new(v).unwrap()
    }

    #[test]
    fn epochs_examples() {
        let e = epochs_exact(TokenCount(200_000_000_000), frac(0.05), TokenCount(300_000_000)).unwrap();
        assert_eq!(e, BigRational::new(big(100), big(3)));
        assert_eq!(epochs(TokenCount(5), frac(0.0), TokenCount(0)).unwrap(), 0.0);
        let e = epochs_exact(TokenCount(10_000_000_000), frac(0.001), TokenCount(3_000_000)).unwrap();
        assert_eq!(e, BigRational::new(big(10), big(3)));
        assert!(epochs(TokenCount(5), frac(0.1), TokenCount(0)).is_err());
    }

    #[test]
    fn zero_delta_is_one_general_segment() {
        let cfg = RunConfig::spt("r", frac(0.0), TokenCount(10), TokenCount(1000));
        let s = build_schedule(&cfg, TokenCount(7), 3).unwrap();
        assert_eq!(s.segments, vec![Segment { start: 0, end: 1000, source: Source::General }]);
        let sum = schedule_summary(&s);
        assert_eq!((sum.epochs, sum.domain_tokens, sum.general_tokens), (Some(0.0), 0, 1000));
        assert_eq!(sum.max_prefix_deviation, 0.0);
    }

    #[test]
    fn half_mixture_alternates() {
        let cfg = RunConfig::spt("r", frac(0.5), TokenCount(100), TokenCount(1000));
        for seed in 0..20 {
            let s = build_schedule(&cfg, TokenCount(100), seed).unwrap();
            assert_eq!(s.segments.len(), 10, "seed {seed}");
            let domain = s.segments.iter().filter(|x| x.source == Source::Domain).count();
            assert_eq!(domain, 5);
            assert!(s.segments.windows(2).all(|w| w[0].source != w[1].source));
            let sum = schedule_summary(&s);
            assert_eq!(sum.epochs, Some(5.0));
            assert_eq!(sum.epochs.unwrap(), epochs(TokenCount(1000), frac(0.5), TokenCount(100)).unwrap());
            assert!(sum.max_prefix_deviation <= 1.0);
        }
    }

    #[test]
    fn continued_pretraining_starts_general() {
        let u = 1_000_000u64;
        let cfg = RunConfig::spt("r", frac(0.01), TokenCount(300 * u), TokenCount(200 * u))
            .with_scpt_start(TokenCount(180 * u));
        let s = build_schedule(&cfg, TokenCount(u / 10), 1).unwrap();
        let before: u64 = s.segments.iter().filter(|x| x.source == Source::Domain).map(|x| x.start).min().unwrap();
        assert!(before >= 180 * u);
        let sum = schedule_summary(&s);
        let target = 0.01 * (20 * u) as f64;
        assert!((sum.domain_tokens as f64 - target).abs() <= (u / 10) as f64);
        assert!(sum.max_prefix_deviation <= 1.0);
    }

    #[test]
    fn invalid_configs() {
        let cfg = RunConfig::spt("r", frac(0.01), TokenCount(10), TokenCount(100)).with_scpt_start(TokenCount(100));
        assert!(matches!(build_schedule(&cfg, TokenCount(10), 0), Err(Error::InvalidConfig(_))));
        let ok = RunConfig::spt("r", frac(0.01), TokenCount(10), TokenCount(100));
        assert!(build_schedule(&ok, TokenCount(0), 0).is_err());
    }

    #[test]
    fn epoch_boundaries_fall_on_wraps() {
        let cfg = RunConfig::spt("r", frac(0.25), TokenCount(50), TokenCount(1000));
        let s = build_schedule(&cfg, TokenCount(10), 5).unwrap();
        assert_eq!(s.epoch_boundaries.len(), 5);
        for (k, &b) in s.epoch_boundaries.iter().enumerate() {
            let upto: u64 = s
                .segments
                .iter()
                .filter(|x| x.source == Source::Domain)
                .map(|x| x.end.min(b).saturating_sub(x.start))
                .sum();
            assert_eq!(upto, 50 * (k as u64 + 1));
        }
    }

    #[test]
    fn binary_round_trip() {
        let cfg = RunConfig::spt("r", frac(0.3), TokenCount(50), TokenCount(1000));
        let s = build_schedule(&cfg, TokenCount(10), 5).unwrap();
        let bytes = schedule_to_binary(&s);
        assert_eq!(bytes.len(), s.segments.len() * BINARY_RECORD_LEN);
        assert_eq!(segments_from_binary(&bytes).unwrap(), s.segments);
        assert!(segments_from_binary(&bytes[1..]).is_err());
        let first = schedule_to_jsonl(&s).lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"start\":0,"));
    }
}
