//! Target-side retrieval: scoring match candidates against a k-best query.
//!
//! Three relevance functions are supported:
//!
//! * text only: per-type idf overlap with every query token, divided by the
//!   candidate's type count;
//! * text scaled by `exp(-b * v)` where `v` is the Euclidean distance between
//!   the candidate's image and the query image, and zero at `v >= d`;
//! * text gated by exact equality of the two images' category sets.
//!
//! When the visual or category variant leaves no candidate with a positive
//! score, the text-only ranking is returned and the list is flagged as a
//! fallback.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::collection::{CaptionDoc, Collection, DocId, TermId};
use crate::error::{Error, Result};
use crate::features::{squared_distance, visual_distance, FeatureStore};
use crate::kbest::{split_fields, Hypothesis, KBestList};
use crate::textcore::TermWeight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Txt,
    Cnn,
    Hca,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Txt, Mode::Cnn, Mode::Hca];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Txt => "TXT",
            Mode::Cnn => "CNN",
            Mode::Hca => "HCA",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "txt" => Ok(Mode::Txt),
            "cnn" => Ok(Mode::Cnn),
            "hca" => Ok(Mode::Hca),
            _ => Err(Error::InvalidParameter(format!("unknown mode {s:?}"))),
        }
    }
}

/// Distance decay weight used in every configuration.
pub const DEFAULT_DECAY: f64 = 0.01;
/// Visual distance cutoff.
pub const DEFAULT_CUTOFF: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Hypotheses used as queries.
    pub k_n: usize,
    /// Matches retrieved.
    pub k_m: usize,
    /// Visual distance decay.
    pub b: f64,
    /// Visual distance cutoff; candidates at `v >= d` score zero.
    pub d: f64,
}

impl RetrievalParams {
    /// Tuned settings per mode.
    pub fn defaults(mode: Mode) -> Self {
        let k_m = match mode {
            Mode::Txt | Mode::Hca => 500,
            Mode::Cnn => 300,
        };
        RetrievalParams {
            k_n: 300,
            k_m,
            b: DEFAULT_DECAY,
            d: DEFAULT_CUTOFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_n == 0 || self.k_m == 0 {
            return Err(Error::InvalidParameter("k_n and k_m must be positive".into()));
        }
        if !self.b.is_finite() || self.b < 0.0 {
            return Err(Error::InvalidParameter(format!("b = {} must be a finite value >= 0", self.b)));
        }
        if self.d.is_nan() || self.d <= 0.0 {
            return Err(Error::InvalidParameter(format!("d = {} must be positive", self.d)));
        }
        Ok(())
    }
}

/// Side information about the source sentence's image.
#[derive(Debug, Clone, Copy, Default)]
pub struct Query<'q> {
    pub image_id: Option<&'q str>,
    pub categories: Option<&'q BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match<'c> {
    pub doc_id: DocId,
    pub doc: &'c CaptionDoc,
    pub score: f64,
}

/// The retrieved matches for one sentence, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchList<'c> {
    pub sent_id: String,
    pub matches: Vec<Match<'c>>,
    pub used_fallback: bool,
    pub mode: Mode,
}

impl<'c> MatchList<'c> {
    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn docs(&self) -> impl Iterator<Item = &'c CaptionDoc> + '_ {
        self.matches.iter().map(|m| m.doc)
    }
}

/// Text relevance of one candidate: the idf of every query token that is a
/// type of `m`, summed over all hypotheses and divided by `|typ(m)|`.
///
/// Returns 0 for a candidate without tokens.
pub fn score_txt<W: TermWeight>(m: &CaptionDoc, n_list: &[Hypothesis], weights: &W) -> f64 {
    let types = m.tokens.types();
    if types.is_empty() {
        return 0.0;
    }
    let sum: f64 = n_list
        .iter()
        .flat_map(|n| n.tokens.iter())
        .filter(|t| types.contains(t))
        .map(|t| weights.weight(t))
        .sum();
    sum / types.len() as f64
}

/// Text relevance decayed by visual distance, zero at or beyond the cutoff.
///
/// A candidate whose image has no vector scores 0, as does any candidate when
/// the query image has none.
pub fn score_cnn<W: TermWeight>(
    m: &CaptionDoc,
    n_list: &[Hypothesis],
    query_image: &str,
    feats: &FeatureStore,
    weights: &W,
    params: &RetrievalParams,
) -> Result<f64> {
    let (Some(q), Some(c)) = (feats.get(query_image), feats.get(&m.image_id)) else {
        return Ok(0.0);
    };
    let v = visual_distance(c, q)?;
    if v < params.d {
        Ok(score_txt(m, n_list, weights) * (-params.b * v).exp())
    } else {
        Ok(0.0)
    }
}

/// Text relevance if the two category sets are equal, otherwise 0. A missing
/// set on either side scores 0.
pub fn score_hca<W: TermWeight>(
    m: &CaptionDoc,
    n_list: &[Hypothesis],
    query_categories: Option<&BTreeSet<String>>,
    weights: &W,
) -> f64 {
    match (&m.categories, query_categories) {
        (Some(a), Some(b)) if a == b => score_txt(m, n_list, weights),
        _ => 0.0,
    }
}

/// Indexed retrieval over an immutable collection.
///
/// Cheap to share between threads; every call allocates its own scratch.
pub struct Retriever<'c, W> {
    coll: &'c Collection,
    feats: &'c FeatureStore,
    weights: W,
    image_rows: Vec<Option<u32>>,
}

impl<'c, W: TermWeight> Retriever<'c, W> {
    pub fn new(coll: &'c Collection, feats: &'c FeatureStore, weights: W) -> Self {
        let image_rows = (0..coll.num_images() as u32)
            .map(|i| feats.row_of(coll.image_id(i)).map(|r| r as u32))
            .collect();
        Retriever {
            coll,
            feats,
            weights,
            image_rows,
        }
    }

    pub fn collection(&self) -> &'c Collection {
        self.coll
    }

    pub fn weights(&self) -> &W {
        &self.weights
    }

    /// The `k_m` best candidates for the first `k_n` hypotheses of `kbest`.
    pub fn retrieve(
        &self,
        kbest: &KBestList,
        query: &Query<'_>,
        mode: Mode,
        params: &RetrievalParams,
    ) -> Result<MatchList<'c>> {
        params.validate()?;
        if kbest.is_empty() {
            return Err(Error::EmptyKBest(kbest.sent_id().to_owned()));
        }
        let txt = self.text_scores(kbest.top(params.k_n));
        let (scored, used_fallback) = match mode {
            Mode::Txt => (txt, false),
            Mode::Cnn => match self.visual_filter(&txt, query, params) {
                Some(s) if !s.is_empty() => (s, false),
                _ => (txt, true),
            },
            Mode::Hca => {
                let s = self.category_filter(&txt, query);
                if s.is_empty() {
                    (txt, true)
                } else {
                    (s, false)
                }
            }
        };
        let top = self.top_k(scored, params.k_m);
        Ok(MatchList {
            sent_id: kbest.sent_id().to_owned(),
            matches: top
                .into_iter()
                .map(|(doc_id, score)| Match {
                    doc_id,
                    doc: self.coll.doc(doc_id),
                    score,
                })
                .collect(),
            used_fallback,
            mode,
        })
    }

    /// Positive text scores, accumulated term-at-a-time over the postings of
    /// the query's terms.
    fn text_scores(&self, hyps: &[Hypothesis]) -> Vec<(DocId, f64)> {
        let mut counts: HashMap<TermId, u32> = HashMap::new();
        for t in hyps.iter().flat_map(|h| h.tokens.iter()) {
            if let Some(id) = self.coll.term_id(t) {
                *counts.entry(id).or_default() += 1;
            }
        }
        let mut terms: Vec<(TermId, u32)> = counts.into_iter().collect();
        terms.sort_unstable();

        let mut acc = vec![0.0f64; self.coll.len()];
        let mut touched: Vec<DocId> = Vec::new();
        for (term, count) in terms {
            let w = count as f64 * self.weights.weight(self.coll.term(term));
            if w.is_nan() || w <= 0.0 {
                continue;
            }
            for &d in self.coll.postings(term) {
                let slot = &mut acc[d as usize];
                if *slot == 0.0 {
                    touched.push(d);
                }
                *slot += w;
            }
        }
        touched
            .into_iter()
            .map(|d| (d, acc[d as usize] / self.coll.doc_types(d).len() as f64))
            .collect()
    }

    /// `None` when the query image has no vector.
    fn visual_filter(
        &self,
        txt: &[(DocId, f64)],
        query: &Query<'_>,
        params: &RetrievalParams,
    ) -> Option<Vec<(DocId, f64)>> {
        let qrow = self.feats.row_of(query.image_id?)?;
        let qv = self.feats.row(qrow);
        let mut dist = vec![f64::NAN; self.coll.num_images()];
        let mut out = Vec::new();
        for &(d, s) in txt {
            let img = self.coll.image_of(d) as usize;
            let Some(row) = self.image_rows[img] else {
                continue;
            };
            if dist[img].is_nan() {
                dist[img] = squared_distance(qv, self.feats.row(row as usize)).sqrt();
            }
            let v = dist[img];
            if v < params.d {
                let score = s * (-params.b * v).exp();
                if score > 0.0 {
                    out.push((d, score));
                }
            }
        }
        Some(out)
    }

    fn category_filter(&self, txt: &[(DocId, f64)], query: &Query<'_>) -> Vec<(DocId, f64)> {
        let Some(target) = query.categories.and_then(|c| self.coll.category_set_id(c)) else {
            return Vec::new();
        };
        txt.iter()
            .copied()
            .filter(|&(d, _)| self.coll.category_set_of(d) == Some(target))
            .collect()
    }

    fn top_k(&self, mut scored: Vec<(DocId, f64)>, k: usize) -> Vec<(DocId, f64)> {
        let coll = self.coll;
        let order = |a: &(DocId, f64), b: &(DocId, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| coll.doc(a.0).caption_id.cmp(&coll.doc(b.0).caption_id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored
    }
}

/// One-shot retrieval. Prefer [`Retriever`] when issuing many queries.
#[allow(clippy::too_many_arguments)]
pub fn retrieve<'c, W: TermWeight>(
    coll: &'c Collection,
    feats: &'c FeatureStore,
    weights: &W,
    kbest: &KBestList,
    query_image: Option<&str>,
    query_categories: Option<&BTreeSet<String>>,
    mode: Mode,
    params: &RetrievalParams,
) -> Result<MatchList<'c>> {
    let query = Query {
        image_id: query_image,
        categories: query_categories,
    };
    Retriever::new(coll, feats, weights).retrieve(kbest, &query, mode, params)
}

/// Writes `sent_id ||| caption_id ||| score ||| fallback_flag` lines.
pub fn write_matchlists<'a, 'c: 'a, O, I>(mut out: O, lists: I) -> Result<()>
where
    O: Write,
    I: IntoIterator<Item = &'a MatchList<'c>>,
{
    for list in lists {
        let flag = u8::from(list.used_fallback);
        for m in &list.matches {
            writeln!(
                out,
                "{} ||| {} ||| {} ||| {}",
                list.sent_id, m.doc.caption_id, m.score, flag
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a match dump, resolving caption ids against `coll`. Lists are
/// returned in file order; sentences absent from the dump have no entry.
pub fn read_matchlists<'c, R: BufRead>(
    input: R,
    coll: &'c Collection,
    mode: Mode,
) -> Result<Vec<MatchList<'c>>> {
    let mut lists: Vec<MatchList<'c>> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(&line);
        if f.len() != 4 {
            return Err(Error::malformed(lineno, "expected 4 `|||` fields"));
        }
        let doc_id = coll
            .doc_by_caption(f[1])
            .ok_or_else(|| Error::UnknownCaption(f[1].to_owned()))?;
        let score: f64 = f[2]
            .parse()
            .map_err(|_| Error::malformed(lineno, format!("bad score {:?}", f[2])))?;
        let used_fallback = match f[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::malformed(lineno, format!("bad fallback flag {other:?}"))),
        };
        let m = Match {
            doc_id,
            doc: coll.doc(doc_id),
            score,
        };
        match lists.last_mut() {
            Some(l) if l.sent_id == f[0] => l.matches.push(m),
            _ => lists.push(MatchList {
                sent_id: f[0].to_owned(),
                matches: vec![m],
                used_fallback,
                mode,
            }),
        }
    }
    Ok(lists)
}
