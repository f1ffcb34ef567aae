//! Decoder k-best lists.
//!
//! The input layout is the cdec/Moses style `sent_id ||| tokens ||| score`,
//! one hypothesis per line, sentences contiguous. A Moses-style feature
//! column (`sent_id ||| tokens ||| features ||| score`) is also accepted;
//! only the last field is read as the score.

use std::collections::HashSet;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::textcore::TokenSeq;

pub const FIELD_SEP: &str = "|||";

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    /// Log-scale model score; higher is better.
    pub decoder_score: f64,
}

impl Hypothesis {
    pub fn new(tokens: TokenSeq, decoder_score: f64) -> Result<Self> {
        if !decoder_score.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "decoder score {decoder_score} is not finite"
            )));
        }
        Ok(Hypothesis {
            tokens,
            decoder_score,
        })
    }
}

/// Unique hypotheses for one source sentence in decoder order.
#[derive(Debug, Clone, PartialEq)]
pub struct KBestList {
    sent_id: String,
    hyps: Vec<Hypothesis>,
    supplied: usize,
}

impl KBestList {
    /// Keeps the first occurrence of each token sequence. Scores must be
    /// non-increasing in the given order.
    pub fn new(sent_id: impl Into<String>, hyps: Vec<Hypothesis>) -> Result<Self> {
        let sent_id = sent_id.into();
        for (i, w) in hyps.windows(2).enumerate() {
            if w[1].decoder_score > w[0].decoder_score {
                return Err(Error::KBestOrder {
                    sent_id,
                    index: i + 1,
                });
            }
        }
        let supplied = hyps.len();
        let mut seen = HashSet::new();
        let hyps = hyps
            .into_iter()
            .filter(|h| seen.insert(h.tokens.clone()))
            .collect();
        Ok(KBestList {
            sent_id,
            hyps,
            supplied,
        })
    }

    pub fn sent_id(&self) -> &str {
        &self.sent_id
    }

    pub fn hyps(&self) -> &[Hypothesis] {
        &self.hyps
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    /// Hypotheses the decoder produced, duplicates included.
    pub fn supplied(&self) -> usize {
        self.supplied
    }

    /// The first `k` hypotheses, or all of them if the list is shorter.
    pub fn top(&self, k: usize) -> &[Hypothesis] {
        &self.hyps[..k.min(self.hyps.len())]
    }

    pub fn truncated(&self, k: usize) -> KBestList {
        KBestList {
            sent_id: self.sent_id.clone(),
            hyps: self.top(k).to_vec(),
            supplied: self.supplied.min(k),
        }
    }
}

/// Splits a `|||`-separated line into trimmed fields.
pub fn split_fields(line: &str) -> Vec<&str> {
    line.split(FIELD_SEP).map(str::trim).collect()
}

fn parse_line(line: &str, lineno: usize) -> Result<(String, Hypothesis)> {
    let fields = split_fields(line);
    if !(3..=4).contains(&fields.len()) {
        return Err(Error::malformed(
            lineno,
            format!("expected 3 or 4 `|||` fields, found {}", fields.len()),
        ));
    }
    let sent_id = fields[0];
    if sent_id.is_empty() {
        return Err(Error::malformed(lineno, "empty sentence id"));
    }
    let score_field = fields[fields.len() - 1];
    let score: f64 = score_field
        .parse()
        .map_err(|_| Error::malformed(lineno, format!("bad decoder score {score_field:?}")))?;
    let hyp = Hypothesis::new(TokenSeq::parse(fields[1]), score)
        .map_err(|e| Error::malformed(lineno, e.to_string()))?;
    Ok((sent_id.to_owned(), hyp))
}

/// Largest number of hypotheses supplied for any sentence.
pub fn depth(lists: &[KBestList]) -> usize {
    lists.iter().map(KBestList::supplied).max().unwrap_or(0)
}

/// Reads every k-best list in file order.
pub fn read_kbest<R: BufRead>(input: R) -> Result<Vec<KBestList>> {
    let mut lists: Vec<KBestList> = Vec::new();
    let mut done: HashSet<String> = HashSet::new();
    let mut current: Option<(String, Vec<Hypothesis>)> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (sent_id, hyp) = parse_line(&line, i + 1)?;
        match &mut current {
            Some((id, hyps)) if *id == sent_id => hyps.push(hyp),
            _ => {
                if done.contains(&sent_id) {
                    return Err(Error::KBestNotContiguous(sent_id));
                }
                if let Some((id, hyps)) = current.take() {
                    done.insert(id.clone());
                    lists.push(KBestList::new(id, hyps)?);
                }
                current = Some((sent_id, vec![hyp]));
            }
        }
    }
    if let Some((id, hyps)) = current {
        lists.push(KBestList::new(id, hyps)?);
    }
    Ok(lists)
}
