//! Crosslingual reranking of decoder hypotheses against retrieved matches.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kbest::{Hypothesis, KBestList};
use crate::retrieval::{MatchList, Mode};
use crate::textcore::{TermWeight, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    /// Hypotheses considered for the final choice.
    pub k_r: usize,
    /// Weight of the relevance score relative to the decoder score.
    pub lambda: f64,
}

impl RerankParams {
    /// Tuned settings per mode.
    pub fn defaults(mode: Mode) -> Self {
        let lambda = match mode {
            Mode::Txt => 5.0e4,
            Mode::Cnn => 70.0e4,
            Mode::Hca => 10.0e4,
        };
        RerankParams { k_r: 5, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_r == 0 {
            return Err(Error::InvalidParameter("k_r must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda = {} must be a finite value >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankedOutput {
    pub sent_id: String,
    pub chosen: Hypothesis,
    /// `chosen.decoder_score + lambda * relevance`.
    pub combined_score: f64,
    pub relevance: f64,
    /// 1-based position of `chosen` in the decoder list.
    pub decoder_rank_of_chosen: usize,
}

/// Precomputed per-term weights of a match list, so that many hypotheses
/// can be scored against the same list.
///
/// Each match contributes the weight of each of its types once; the total is
/// normalized by the summed token count of all matches.
#[derive(Debug, Clone, Default)]
pub struct RelevanceModel {
    term_mass: HashMap<String, f64>,
    norm: f64,
}

impl RelevanceModel {
    pub fn new<W: TermWeight>(matches: &MatchList<'_>, weights: &W) -> Self {
        let total_tokens: usize = matches.docs().map(|d| d.tokens.len()).sum();
        if total_tokens == 0 {
            return RelevanceModel::default();
        }
        let mut df: HashMap<&str, u32> = HashMap::new();
        for doc in matches.docs() {
            for t in doc.tokens.types() {
                *df.entry(t).or_default() += 1;
            }
        }
        let term_mass = df
            .into_iter()
            .map(|(t, n)| (t.to_owned(), n as f64 * weights.weight(t)))
            .collect();
        RelevanceModel {
            term_mass,
            norm: 1.0 / total_tokens as f64,
        }
    }

    pub fn score(&self, r: &TokenSeq) -> f64 {
        if self.term_mass.is_empty() {
            return 0.0;
        }
        let sum: f64 = r.iter().filter_map(|t| self.term_mass.get(t)).sum();
        self.norm * sum
    }
}

/// Relevance of hypothesis tokens `r` to the retrieved matches. Zero for an
/// empty match list.
pub fn relevance_f<W: TermWeight>(r: &TokenSeq, matches: &MatchList<'_>, weights: &W) -> f64 {
    RelevanceModel::new(matches, weights).score(r)
}

/// Picks the hypothesis among the first `k_r` maximizing
/// `decoder_score + lambda * relevance`. Earlier hypotheses win ties.
pub fn select_best<W: TermWeight>(
    rbest: &KBestList,
    matches: &MatchList<'_>,
    weights: &W,
    params: &RerankParams,
) -> Result<RerankedOutput> {
    params.validate()?;
    if rbest.is_empty() {
        return Err(Error::EmptyKBest(rbest.sent_id().to_owned()));
    }
    let model = RelevanceModel::new(matches, weights);
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, h) in rbest.top(params.k_r).iter().enumerate() {
        let relevance = model.score(&h.tokens);
        let combined = h.decoder_score + params.lambda * relevance;
        if best.is_none_or(|(_, c, _)| combined > c) {
            best = Some((i, combined, relevance));
        }
    }
    let (i, combined_score, relevance) = best.expect("non-empty list");
    Ok(RerankedOutput {
        sent_id: rbest.sent_id().to_owned(),
        chosen: rbest.hyps()[i].clone(),
        combined_score,
        relevance,
        decoder_rank_of_chosen: i + 1,
    })
}
