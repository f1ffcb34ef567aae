//! Per-sentence chaining of retrieval and reranking, plus the plain-text
//! formats shared by the command-line stages.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::collection::parse_categories;
use crate::error::{Error, Result};
use crate::evalsig::{bleu_score, bleu_stats, BleuStats, RandomizationResult};
use crate::kbest::{split_fields, KBestList};
use crate::rerank::{select_best, RerankParams, RerankedOutput};
use crate::retrieval::{MatchList, Mode, Query, RetrievalParams, Retriever};
use crate::textcore::{TermWeight, TokenSeq};

/// Image metadata of a source sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryInfo {
    pub image_id: Option<String>,
    pub categories: Option<BTreeSet<String>>,
}

impl QueryInfo {
    pub fn as_query(&self) -> Query<'_> {
        Query {
            image_id: self.image_id.as_deref(),
            categories: self.categories.as_ref(),
        }
    }
}

/// Reads `sent_id<TAB>image_id[<TAB>cat1,cat2,...]` lines.
pub fn read_queries<R: BufRead>(input: R) -> Result<HashMap<String, QueryInfo>> {
    let mut out = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::malformed(lineno, "expected sent_id<TAB>image_id[<TAB>categories]"));
        }
        let image = fields[1].trim();
        let cats = fields.get(2).map(|c| parse_categories(c)).filter(|c| !c.is_empty());
        let info = QueryInfo {
            image_id: (!image.is_empty()).then(|| image.to_owned()),
            categories: cats,
        };
        if out.insert(fields[0].trim().to_owned(), info).is_some() {
            return Err(Error::malformed(lineno, format!("duplicate sentence {:?}", fields[0])));
        }
    }
    Ok(out)
}

/// A source sentence ready for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub kbest: KBestList,
    pub query: QueryInfo,
}

/// Pairs k-best lists with their metadata; sentences without an entry get
/// empty metadata.
pub fn attach_queries(lists: Vec<KBestList>, queries: &HashMap<String, QueryInfo>) -> Vec<Sentence> {
    lists
        .into_iter()
        .map(|kbest| {
            let query = queries.get(kbest.sent_id()).cloned().unwrap_or_default();
            Sentence { kbest, query }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceOutcome {
    pub output: RerankedOutput,
    pub used_fallback: bool,
    pub match_count: usize,
}

/// Every parameter of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub mode: Mode,
    pub retrieval: RetrievalParams,
    pub rerank: RerankParams,
}

impl RunParams {
    pub fn defaults(mode: Mode) -> Self {
        RunParams {
            mode,
            retrieval: RetrievalParams::defaults(mode),
            rerank: RerankParams::defaults(mode),
        }
    }
}

/// Retrieval for every sentence, in input order.
pub fn retrieve_all<'c, W>(
    retriever: &Retriever<'c, W>,
    sentences: &[Sentence],
    mode: Mode,
    params: &RetrievalParams,
) -> Result<Vec<MatchList<'c>>>
where
    W: TermWeight + Sync,
{
    sentences
        .par_iter()
        .map(|s| {
            retriever
                .retrieve(&s.kbest, &s.query.as_query(), mode, params)
                .map_err(|e| e.at_stage("retrieve", s.kbest.sent_id()))
        })
        .collect()
}

/// Reranks every sentence against its match list, in input order.
pub fn rerank_all<W>(
    sentences: &[Sentence],
    matches: &[MatchList<'_>],
    weights: &W,
    params: &RerankParams,
) -> Result<Vec<SentenceOutcome>>
where
    W: TermWeight + Sync,
{
    if sentences.len() != matches.len() {
        return Err(Error::Misaligned(format!(
            "{} sentences vs {} match lists",
            sentences.len(),
            matches.len()
        )));
    }
    sentences
        .par_iter()
        .zip(matches.par_iter())
        .map(|(s, m)| {
            let output = select_best(&s.kbest, m, weights, params)
                .map_err(|e| e.at_stage("rerank", s.kbest.sent_id()))?;
            Ok(SentenceOutcome {
                output,
                used_fallback: m.used_fallback,
                match_count: m.len(),
            })
        })
        .collect()
}

/// Orders match lists read back from a dump to follow `sentences`; a
/// sentence missing from the dump gets an empty list.
pub fn align_matchlists<'c>(
    sentences: &[Sentence],
    lists: Vec<MatchList<'c>>,
    mode: Mode,
) -> Result<Vec<MatchList<'c>>> {
    let mut by_id: HashMap<String, MatchList<'c>> = HashMap::new();
    for l in lists {
        if by_id.contains_key(&l.sent_id) {
            return Err(Error::Misaligned(format!("sentence `{}` repeated in match dump", l.sent_id)));
        }
        by_id.insert(l.sent_id.clone(), l);
    }
    let out = sentences
        .iter()
        .map(|s| {
            by_id.remove(s.kbest.sent_id()).unwrap_or_else(|| MatchList {
                sent_id: s.kbest.sent_id().to_owned(),
                matches: Vec::new(),
                used_fallback: false,
                mode,
            })
        })
        .collect();
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Misaligned(format!("match dump has unknown sentence `{extra}`")));
    }
    Ok(out)
}

/// Retrieval followed by reranking for every sentence.
pub fn run_corpus<W>(
    retriever: &Retriever<'_, W>,
    sentences: &[Sentence],
    params: &RunParams,
) -> Result<Vec<SentenceOutcome>>
where
    W: TermWeight + Sync,
{
    let matches = retrieve_all(retriever, sentences, params.mode, &params.retrieval)?;
    rerank_all(sentences, &matches, retriever.weights(), &params.rerank)
}

pub fn fallback_count(outcomes: &[SentenceOutcome]) -> usize {
    outcomes.iter().filter(|o| o.used_fallback).count()
}

/// `sent_id ||| tokens` per sentence.
pub fn write_outputs<W: Write>(mut out: W, outcomes: &[SentenceOutcome]) -> Result<()> {
    for o in outcomes {
        writeln!(out, "{} ||| {}", o.output.sent_id, o.output.chosen.tokens)?;
    }
    out.flush()?;
    Ok(())
}

/// `sent_id ||| decoder_rank ||| combined_score ||| relevance ||| fallback_flag`.
pub fn write_diagnostics<W: Write>(mut out: W, outcomes: &[SentenceOutcome]) -> Result<()> {
    for o in outcomes {
        writeln!(
            out,
            "{} ||| {} ||| {} ||| {} ||| {}",
            o.output.sent_id,
            o.output.decoder_rank_of_chosen,
            o.output.combined_score,
            o.output.relevance,
            u8::from(o.used_fallback)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// A file of sentences, either one per line or keyed as `sent_id ||| tokens`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub keyed: bool,
    pub items: Vec<(String, TokenSeq)>,
}

impl Segments {
    /// A file is keyed when every line contains one `|||` separator. Plain
    /// files are numbered from 1, and blank lines are empty sentences.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let keyed = !lines.is_empty() && lines.iter().all(|l| split_fields(l).len() == 2);
        let mut items = Vec::with_capacity(lines.len());
        let mut seen = HashSet::new();
        for (i, line) in lines.iter().enumerate() {
            let (id, text) = if keyed {
                let f = split_fields(line);
                (f[0].to_owned(), f[1])
            } else {
                ((i + 1).to_string(), line.as_str())
            };
            if !seen.insert(id.clone()) {
                return Err(Error::malformed(i + 1, format!("duplicate sentence id {id:?}")));
            }
            items.push((id, TokenSeq::parse(text)));
        }
        Ok(Segments { keyed, items })
    }

    pub fn from_outcomes(outcomes: &[SentenceOutcome]) -> Self {
        Segments {
            keyed: true,
            items: outcomes
                .iter()
                .map(|o| (o.output.sent_id.clone(), o.output.chosen.tokens.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Aligns system outputs to references: by id when every input is keyed,
/// otherwise by position. Returned in reference order.
pub fn align_to_references(
    systems: &[&Segments],
    references: &Segments,
) -> Result<Vec<(String, Vec<TokenSeq>, TokenSeq)>> {
    for s in systems {
        if s.len() != references.len() {
            return Err(Error::Misaligned(format!(
                "{} sentences vs {} references",
                s.len(),
                references.len()
            )));
        }
    }
    let by_id = references.keyed && systems.iter().all(|s| s.keyed);
    let maps: Vec<HashMap<&str, &TokenSeq>> = systems
        .iter()
        .map(|s| s.items.iter().map(|(id, t)| (id.as_str(), t)).collect())
        .collect();
    references
        .items
        .iter()
        .enumerate()
        .map(|(i, (id, reference))| {
            let hyps = systems
                .iter()
                .zip(&maps)
                .map(|(s, m)| {
                    if by_id {
                        m.get(id.as_str())
                            .map(|t| (*t).clone())
                            .ok_or_else(|| Error::Misaligned(format!("no output for sentence `{id}`")))
                    } else {
                        Ok(s.items[i].1.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id.clone(), hyps, reference.clone()))
        })
        .collect()
}

/// Corpus BLEU of one system.
pub fn evaluate(system: &Segments, references: &Segments) -> Result<BleuStats> {
    let aligned = align_to_references(&[system], references)?;
    Ok(aligned.iter().map(|(_, h, r)| bleu_stats(&h[0], r)).sum())
}

/// Per-sentence statistics of two systems, for the randomization test.
pub fn paired_stats(a: &Segments, b: &Segments, references: &Segments) -> Result<Vec<(BleuStats, BleuStats)>> {
    let aligned = align_to_references(&[a, b], references)?;
    Ok(aligned
        .iter()
        .map(|(_, h, r)| (bleu_stats(&h[0], r), bleu_stats(&h[1], r)))
        .collect())
}

/// Corpus BLEU summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuReport {
    pub stats: BleuStats,
    pub sentences: usize,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.stats;
        let bleu = bleu_score(s);
        let precisions: Vec<String> = (0..4)
            .map(|n| {
                if s.totals[n] == 0 {
                    "0.0000".to_string()
                } else {
                    format!("{:.4}", s.matches[n] as f64 / s.totals[n] as f64)
                }
            })
            .collect();
        writeln!(f, "sentences\t{}", self.sentences)?;
        writeln!(f, "bleu\t{bleu:.6}")?;
        writeln!(f, "bleu_x100\t{:.2}", bleu * 100.0)?;
        writeln!(f, "precisions\t{}", precisions.join(" "))?;
        writeln!(f, "hyp_len\t{}", s.hyp_len)?;
        write!(f, "ref_len\t{}", s.ref_len)
    }
}

/// Two-system comparison: a score table with the p-value column of system B
/// relative to A, followed by the raw test record.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub name_a: String,
    pub name_b: String,
    pub result: RandomizationResult,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.result;
        writeln!(f, "System\tBLEU\tp")?;
        writeln!(f, "{}\t{:.2}\t", self.name_a, r.bleu_a * 100.0)?;
        writeln!(f, "{}\t{:.2}\t{:.4}", self.name_b, r.bleu_b * 100.0, r.p_value)?;
        writeln!(f)?;
        writeln!(f, "bleu_a\t{}", r.bleu_a)?;
        writeln!(f, "bleu_b\t{}", r.bleu_b)?;
        writeln!(f, "observed_diff\t{}", r.observed)?;
        writeln!(f, "trials\t{}", r.trials)?;
        writeln!(f, "seed\t{}", r.seed)?;
        writeln!(f, "at_least_as_extreme\t{}", r.at_least_as_extreme)?;
        write!(f, "p_value\t{}", r.p_value)
    }
}
