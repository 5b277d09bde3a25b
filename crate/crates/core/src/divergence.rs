//! Model-free corpus similarity: hashed n-gram Jensen–Shannon divergence and
//! a classifier two-sample test over precomputed embeddings.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: u64 = 1 << 20;
/// Bumped whenever byte tokenization output changes.
pub const BYTE_TOKENIZER_VERSION: u32 = 1;

const MUL: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut h: u64) -> u64 {
    h ^= h >> 32;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h
}

/// Bin of one n-gram under a seeded multiply-xorshift hash.
pub fn hash_ngram(gram: &[u64], seed: u64, bins: u64) -> u64 {
    let mut h = mix(seed ^ MUL);
    for &t in gram {
        h = mix(h ^ t.wrapping_mul(MUL)).wrapping_add(MUL);
    }
    h % bins
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramProfile {
    pub n: usize,
    pub bins: u64,
    pub hash_seed: u64,
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl NGramProfile {
    pub fn empty(n: usize, bins: u64, hash_seed: u64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::Domain(format!("n-gram order must be 1, 2 or 3, got {n}")));
        }
        if bins == 0 {
            return Err(Error::Domain("bin count must be positive".into()));
        }
        Ok(NGramProfile { n, bins, hash_seed, counts: BTreeMap::new(), total: 0 })
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn add_tokens(&mut self, tokens: &[u64]) {
        for gram in tokens.windows(self.n) {
            *self.counts.entry(hash_ngram(gram, self.hash_seed, self.bins)).or_insert(0) += 1;
            self.total += 1;
        }
    }

    fn compatible(&self, other: &NGramProfile) -> Result<()> {
        if self.n != other.n || self.bins != other.bins || self.hash_seed != other.hash_seed {
            return Err(Error::MismatchedProfiles(format!(
                "(n={}, bins={}, seed={}) vs (n={}, bins={}, seed={})",
                self.n, self.bins, self.hash_seed, other.n, other.bins, other.hash_seed
            )));
        }
        Ok(())
    }

    /// Bin-wise sum of two compatible profiles.
    pub fn merge(mut self, other: &NGramProfile) -> Result<Self> {
        self.compatible(other)?;
        for (&bin, &c) in &other.counts {
            *self.counts.entry(bin).or_insert(0) += c;
        }
        self.total += other.total;
        Ok(self)
    }
}

pub fn profile(tokens: &[u64], n: usize, bins: u64, hash_seed: u64) -> Result<NGramProfile> {
    let mut p = NGramProfile::empty(n, bins, hash_seed)?;
    p.add_tokens(tokens);
    Ok(p)
}

/// Profile of several independent documents; n-grams never span documents.
pub fn profile_documents<D: AsRef<[u64]> + Sync>(
    docs: &[D],
    n: usize,
    bins: u64,
    hash_seed: u64,
) -> Result<NGramProfile> {
    let base = NGramProfile::empty(n, bins, hash_seed)?;
    docs.par_iter()
        .map(|d| {
            let mut p = base.clone();
            p.add_tokens(d.as_ref());
            Ok(p)
        })
        .try_reduce(|| base.clone(), |a, b| a.merge(&b))
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(p: &NGramProfile, q: &NGramProfile) -> Result<f64> {
    p.compatible(q)?;
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let (tp, tq) = (p.total as f64, q.total as f64);
    let bins: std::collections::BTreeSet<u64> = p.counts.keys().chain(q.counts.keys()).copied().collect();
    let share = |c: &BTreeMap<u64, u64>, bin: &u64, t: f64| c.get(bin).map_or(0.0, |&v| v as f64 / t);
    let pairs: Vec<(f64, f64)> = bins.iter().map(|b| (share(&p.counts, b, tp), share(&q.counts, b, tq))).collect();
    Ok(jsd_of_pairs(&pairs))
}

/// JSD over aligned probability pairs `(p_i, q_i)`.
pub fn jsd_of_pairs(pairs: &[(f64, f64)]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for &(a, b) in pairs {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            kl_p += a * (a / m).log2();
        }
        if b > 0.0 {
            kl_q += b * (b / m).log2();
        }
    }
    // Summing the halves in a fixed order keeps jsd(p,q) == jsd(q,p).
    let (lo, hi) = if kl_p <= kl_q { (kl_p, kl_q) } else { (kl_q, kl_p) };
    (0.5 * lo + 0.5 * hi).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Whitespace-separated unsigned integer ids.
    WhitespaceIds,
    /// One token per byte of the raw text.
    Bytes,
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Result<Vec<u64>> {
    match tokenizer {
        Tokenizer::WhitespaceIds => text
            .split_whitespace()
            .map(|w| w.parse::<u64>().map_err(|_| Error::Format(format!("token id '{w}' is not an unsigned integer"))))
            .collect(),
        Tokenizer::Bytes => Ok(byte_tokens(text.as_bytes())),
    }
}

pub fn byte_tokens(bytes: &[u8]) -> Vec<u64> {
    bytes.iter().map(|&b| b as u64).collect()
}

/// Ids when every field parses as one, bytes otherwise.
pub fn tokenize_auto(bytes: &[u8]) -> (Vec<u64>, Tokenizer) {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(ids) = tokenize(text, Tokenizer::WhitespaceIds) {
            if !ids.is_empty() {
                return (ids, Tokenizer::WhitespaceIds);
            }
        }
    }
    (byte_tokens(bytes), Tokenizer::Bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SetLabel {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    vectors: Vec<Vec<f64>>,
    pub label: SetLabel,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, label: SetLabel) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::TooFewSamples(format!("embedding set {label:?} is empty")));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Domain("embedding vectors must have at least one component".into()));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("embedding components must be finite".into()));
            }
        }
        Ok(EmbeddingSet { vectors, label })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// Reads `label,x0,x1,...` rows; labels are `A` or `B`.
pub fn read_embeddings_csv<R: Read>(reader: R) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("label"))
        .ok_or_else(|| Error::Format("embeddings CSV needs a 'label' column".into()))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        let mut v = Vec::with_capacity(rec.len().saturating_sub(1));
        for (j, field) in rec.iter().enumerate() {
            if j == label_col {
                continue;
            }
            v.push(field.parse::<f64>().map_err(|_| Error::Format(format!("line {line}: '{field}' is not a number")))?);
        }
        match rec.get(label_col).unwrap_or("") {
            l if l.eq_ignore_ascii_case("a") => a.push(v),
            l if l.eq_ignore_ascii_case("b") => b.push(v),
            l => return Err(Error::Format(format!("line {line}: label '{l}' is not A or B"))),
        }
    }
    Ok((EmbeddingSet::new(a, SetLabel::A)?, EmbeddingSet::new(b, SetLabel::B)?))
}

/// Mann–Whitney ROC AUC; ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), found: labels.len() });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::TooFewSamples("AUC needs both classes".into()));
    }
    // Twice the number of (pos, neg) pairs won by the positive.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos_here = idx[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let neg_here = (j - i) as u64 - pos_here;
        twice_wins += 2 * pos_here as u128 * neg_below as u128 + pos_here as u128 * neg_here as u128;
        neg_below += neg_here;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

const GD_ITERATIONS: usize = 500;
const GD_STEP: f64 = 0.1;
const L2: f64 = 1e-4;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Per-class sums combined with one commutative addition, so the result does
/// not depend on which set is passed first.
struct Classes<'a> {
    pos: Vec<&'a [f64]>,
    neg: Vec<&'a [f64]>,
}

fn fit_and_score(train: &Classes, test: &[&[f64]], dim: usize) -> Vec<f64> {
    let n = (train.pos.len() + train.neg.len()) as f64;
    let class_sum = |rows: &[&[f64]], f: &dyn Fn(&[f64]) -> Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        for r in rows {
            for (a, x) in acc.iter_mut().zip(f(r)) {
                *a += x;
            }
        }
        acc
    };
    let id = |r: &[f64]| r.to_vec();
    let sp = class_sum(&train.pos, &id);
    let sn = class_sum(&train.neg, &id);
    let mean: Vec<f64> = sp.iter().zip(&sn).map(|(a, b)| (a + b) / n).collect();
    let sq = |r: &[f64]| r.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).collect();
    let vp = class_sum(&train.pos, &sq);
    let vn = class_sum(&train.neg, &sq);
    let scale: Vec<f64> = vp
        .iter()
        .zip(&vn)
        .map(|(a, b)| {
            let sd = ((a + b) / n).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let standardize =
        |r: &[f64]| -> Vec<f64> { r.iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) * s).collect() };
    let pos: Vec<Vec<f64>> = train.pos.iter().map(|r| standardize(r)).collect();
    let neg: Vec<Vec<f64>> = train.neg.iter().map(|r| standardize(r)).collect();

    let mut w = vec![0.0; dim];
    let mut bias = 0.0;
    let z = |w: &[f64], bias: f64, x: &[f64]| -> f64 { bias + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() };
    for _ in 0..GD_ITERATIONS {
        // Residual σ(z) − y, written as −σ(−z) for positives.
        let grad = |rows: &[Vec<f64>], positive: bool| -> (Vec<f64>, f64) {
            let mut g = vec![0.0; dim];
            let mut gb = 0.0;
            for x in rows {
                let zi = z(&w, bias, x);
                let r = if positive { -sigmoid(-zi) } else { sigmoid(zi) };
                gb += r;
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += r * xj;
                }
            }
            (g, gb)
        };
        let (gp, bp) = grad(&pos, true);
        let (gn, bn) = grad(&neg, false);
        for j in 0..dim {
            w[j] -= GD_STEP * ((gp[j] + gn[j]) / n + L2 * w[j]);
        }
        bias -= GD_STEP * (bp + bn) / n;
    }
    test.iter().map(|r| z(&w, bias, &standardize(r))).collect()
}

/// Out-of-fold ROC AUC of a logistic classifier separating `a` (positive)
/// from `b`. Near 0.5 means indistinguishable.
pub fn c2st_auc(a: &EmbeddingSet, b: &EmbeddingSet, folds: usize, seed: u64) -> Result<f64> {
    if folds < 2 {
        return Err(Error::InvalidConfig("at least 2 folds are required".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    for s in [a, b] {
        if s.len() < folds {
            return Err(Error::TooFewSamples(format!(
                "set {:?} has {} vectors, fewer than {folds} folds",
                s.label,
                s.len()
            )));
        }
    }
    let dim = a.dim();
    // Assignment depends only on set size and seed, never on which set is positive.
    let fa = fold_assignment(a.len(), folds, seed);
    let fb = fold_assignment(b.len(), folds, seed);
    let per_fold: Vec<(Vec<f64>, Vec<f64>)> = (0..folds)
        .into_par_iter()
        .map(|k| {
            fn pick<'s>(s: &'s EmbeddingSet, f: &[usize], k: usize, inside: bool) -> Vec<&'s [f64]> {
                s.vectors.iter().zip(f).filter(|(_, &fi)| (fi == k) == inside).map(|(v, _)| v.as_slice()).collect()
            }
            let train = Classes { pos: pick(a, &fa, k, false), neg: pick(b, &fb, k, false) };
            let test_a = pick(a, &fa, k, true);
            let test_b = pick(b, &fb, k, true);
            let mut test = test_a.clone();
            test.extend(&test_b);
            let scores = fit_and_score(&train, &test, dim);
            let (sa, sb) = scores.split_at(test_a.len());
            (sa.to_vec(), sb.to_vec())
        })
        .collect();
    let mut scores = Vec::with_capacity(a.len() + b.len());
    let mut labels = Vec::with_capacity(a.len() + b.len());
    for (sa, sb) in per_fold {
        labels.extend(std::iter::repeat_n(true, sa.len()));
        scores.extend(sa);
        labels.extend(std::iter::repeat_n(false, sb.len()));
        scores.extend(sb);
    }
    roc_auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn pairs_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&a, &b) in p.iter().zip(q) {
            let m = (a + b) / 2.0;
            if a > 0.0 {
                s += 0.5 * a * (a / m).ln() / std::f64::consts::LN_2;
            }
            if b > 0.0 {
                s += 0.5 * b * (b / m).ln() / std::f64::consts::LN_2;
            }
        }
        s
    }

    #[test]
    fn profile_examples() {
        assert!(profile(&[7], 2, DEFAULT_BINS, 0).unwrap().is_empty());
        let p = profile(&[5, 5, 5], 1, DEFAULT_BINS, 0).unwrap();
        assert_eq!(p.counts().len(), 1);
        assert_eq!(p.total(), 3);
        let p = profile(&[1, 2, 1, 2], 2, DEFAULT_BINS, 0).unwrap();
        assert_ne!(hash_ngram(&[1, 2], 0, DEFAULT_BINS), hash_ngram(&[2, 1], 0, DEFAULT_BINS));
        let mut c: Vec<u64> = p.counts().values().copied().collect();
        c.sort();
        assert_eq!(c, vec![1, 2]);
        assert!(profile(&[1], 4, 8, 0).is_err());
    }

    #[test]
    fn hand_example() {
        let pairs = [(1.0, 0.5), (0.0, 0.5)];
        let v = jsd_of_pairs(&pairs);
        assert!((v - 0.3113).abs() < 1e-4);
        assert!((v - pairs_oracle(&[1.0, 0.0], &[0.5, 0.5])).abs() < 1e-15);
        let p = profile(&[1, 1], 1, DEFAULT_BINS, 3).unwrap();
        let q = profile(&[1, 2], 1, DEFAULT_BINS, 3).unwrap();
        assert!((jsd(&p, &q).unwrap() - v).abs() < 1e-15);
    }

    #[test]
    fn identity_disjoint_and_errors() {
        let p = profile(&[1, 2, 3, 4, 2], 1, DEFAULT_BINS, 0).unwrap();
        let q = profile(&[9, 10, 11], 1, DEFAULT_BINS, 0).unwrap();
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(jsd(&p, &q).unwrap(), 1.0);
        let other = profile(&[1, 2], 1, DEFAULT_BINS, 1).unwrap();
        assert!(matches!(jsd(&p, &other), Err(Error::MismatchedProfiles(_))));
        let empty = profile(&[], 1, DEFAULT_BINS, 0).unwrap();
        assert_eq!(jsd(&p, &empty), Err(Error::EmptyProfile));
    }

    #[test]
    fn documents_merge_matches_sequential() {
        let docs = vec![vec![1, 2, 3, 1], vec![2, 3], vec![3, 3, 3, 1, 2]];
        let merged = profile_documents(&docs, 2, 64, 9).unwrap();
        let mut seq = NGramProfile::empty(2, 64, 9).unwrap();
        for d in &docs {
            seq = seq.merge(&profile(d, 2, 64, 9).unwrap()).unwrap();
        }
        assert_eq!(merged, seq);
        assert_eq!(merged.total(), 3 + 1 + 4);
    }

    #[test]
    fn tokenizers() {
        assert_eq!(tokenize("3 1\n4", Tokenizer::WhitespaceIds).unwrap(), vec![3, 1, 4]);
        assert!(tokenize("3 x", Tokenizer::WhitespaceIds).is_err());
        assert_eq!(tokenize_auto(b"hi"), (vec![104, 105], Tokenizer::Bytes));
        assert_eq!(tokenize_auto(b"7 8").1, Tokenizer::WhitespaceIds);
    }

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    n += 1.0;
                    s += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / n
    }

    #[test]
    fn auc_hand_and_ties() {
        let scores = [0.9, 0.4, 0.6, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.75);
        assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        let tied = [0.5, 0.5, 0.5, 0.2];
        assert_eq!(roc_auc(&tied, &labels).unwrap(), brute_auc(&tied, &labels));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(roc_auc(&scores, &flipped).unwrap(), 0.25);
        assert!(roc_auc(&scores, &[true; 4]).is_err());
    }

    fn gaussian(n: usize, dim: usize, shift: f64, seed: u64, label: SetLabel) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|j| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        if j == 0 {
                            x + shift
                        } else {
                            x
                        }
                    })
                    .collect()
            })
            .collect();
        EmbeddingSet::new(v, label).unwrap()
    }

    #[test]
    fn c2st_separated_and_order_free() {
        let a = gaussian(200, 3, 10.0, 1, SetLabel::A);
        let b = gaussian(200, 3, 0.0, 2, SetLabel::B);
        let auc = c2st_auc(&a, &b, 5, 7).unwrap();
        assert!(auc >= 0.99, "{auc}");
        let near = gaussian(150, 3, 0.3, 3, SetLabel::A);
        let x = c2st_auc(&near, &b, 5, 7).unwrap();
        let y = c2st_auc(&b, &near, 5, 7).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn c2st_errors() {
        let a = gaussian(10, 2, 0.0, 1, SetLabel::A);
        let b = gaussian(10, 3, 0.0, 2, SetLabel::B);
        assert!(matches!(c2st_auc(&a, &b, 5, 0), Err(Error::DimensionMismatch { .. })));
        let small = gaussian(3, 2, 0.0, 2, SetLabel::B);
        assert!(matches!(c2st_auc(&a, &small, 5, 0), Err(Error::TooFewSamples(_))));
        assert!(EmbeddingSet::new(vec![], SetLabel::A).is_err());
    }

    #[test]
    fn csv_reader() {
        let text = "label,x,y\nA,1,2\nb,3,4\nA,5,6\n";
        let (a, b) = read_embeddings_csv(text.as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.vectors()[0], vec![3.0, 4.0]);
        assert!(read_embeddings_csv("label,x\nC,1\n".as_bytes()).is_err());
    }
}
