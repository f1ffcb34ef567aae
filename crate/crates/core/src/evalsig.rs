//! Corpus BLEU and approximate randomization testing.
//!
//! BLEU follows the IBM formulation: clipped n-gram precisions for n = 1..4
//! against a single reference, geometric mean, and the corpus-level brevity
//! penalty. No smoothing is applied.
//!
//! The randomization test swaps each sentence's sufficient statistics between
//! the two systems with probability 1/2 and recomputes corpus BLEU. Trial `t`
//! draws from ChaCha8 (rand_chacha 0.3.1) seeded with the master seed on
//! stream `t`, so the outcome does not depend on how trials are scheduled
//! across threads.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::TokenSeq;

pub const MAX_ORDER: usize = 4;

/// BLEU sufficient statistics. Additive over sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, rhs: BleuStats) -> BleuStats {
        self += rhs;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> BleuStats {
        iter.fold(BleuStats::default(), Add::add)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_default() += 1;
    }
    counts
}

/// Clipped n-gram statistics of one hypothesis against one reference.
pub fn bleu_stats(hyp: &TokenSeq, reference: &TokenSeq) -> BleuStats {
    let (h, r) = (hyp.tokens(), reference.tokens());
    let mut stats = BleuStats {
        hyp_len: h.len() as u64,
        ref_len: r.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(h, n);
        let ref_counts = ngram_counts(r, n);
        stats.totals[n - 1] = h.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// BLEU in `[0, 1]`. Zero when any precision is zero or the hypothesis is empty.
pub fn bleu_score(stats: &BleuStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let mut log_precision = 0.0;
    for n in 0..MAX_ORDER {
        if stats.matches[n] == 0 || stats.totals[n] == 0 {
            return 0.0;
        }
        log_precision += (stats.matches[n] as f64 / stats.totals[n] as f64).ln() / MAX_ORDER as f64;
    }
    let brevity = (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).min(0.0);
    (log_precision + brevity).exp()
}

/// Corpus statistics of aligned hypothesis/reference lists.
pub fn corpus_stats(hyps: &[TokenSeq], refs: &[TokenSeq]) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::Misaligned(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(hyps.iter().zip(refs).map(|(h, r)| bleu_stats(h, r)).collect())
}

/// One evaluated sentence of each of two systems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePairEval {
    pub sent_id: String,
    pub hyp_a: TokenSeq,
    pub hyp_b: TokenSeq,
    pub reference: TokenSeq,
}

impl SentencePairEval {
    pub fn stats(&self) -> (BleuStats, BleuStats) {
        (bleu_stats(&self.hyp_a, &self.reference), bleu_stats(&self.hyp_b, &self.reference))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub bleu_a: f64,
    pub bleu_b: f64,
    pub observed: f64,
    pub trials: u64,
    pub seed: u64,
    /// Shuffles whose absolute difference reached the observed one.
    pub at_least_as_extreme: u64,
    pub p_value: f64,
}

fn abs_diff(a: &BleuStats, b: &BleuStats) -> f64 {
    (bleu_score(a) - bleu_score(b)).abs()
}

fn trial_is_extreme(pairs: &[(BleuStats, BleuStats)], seed: u64, trial: u64, observed: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let (mut a, mut b) = (BleuStats::default(), BleuStats::default());
    for (sa, sb) in pairs {
        if rng.gen::<bool>() {
            a += *sb;
            b += *sa;
        } else {
            a += *sa;
            b += *sb;
        }
    }
    abs_diff(&a, &b) >= observed
}

/// Approximate randomization over per-sentence `(system A, system B)`
/// statistics. `p = (extreme + 1) / (trials + 1)`.
///
/// Runs on the current rayon pool; the result is identical for any pool size.
pub fn approx_randomization(
    pairs: &[(BleuStats, BleuStats)],
    trials: u64,
    seed: u64,
) -> Result<RandomizationResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let total_a: BleuStats = pairs.iter().map(|p| p.0).sum();
    let total_b: BleuStats = pairs.iter().map(|p| p.1).sum();
    let observed = abs_diff(&total_a, &total_b);
    let extreme = (0..trials)
        .into_par_iter()
        .filter(|&t| trial_is_extreme(pairs, seed, t, observed))
        .count() as u64;
    Ok(RandomizationResult {
        bleu_a: bleu_score(&total_a),
        bleu_b: bleu_score(&total_b),
        observed,
        trials,
        seed,
        at_least_as_extreme: extreme,
        p_value: (extreme + 1) as f64 / (trials + 1) as f64,
    })
}
