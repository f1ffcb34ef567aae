//! Step-wise hyperparameter search.
//!
//! Parameters are swept one at a time in the order k_n, k_m, k_r, λ and, in
//! CNN mode, d. Each sweep evaluates every candidate with the other
//! parameters held at their incumbents and fixes the best one before moving
//! on. Incumbents start at the first candidate of each list.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalsig::{bleu_score, bleu_stats, BleuStats};
use crate::kbest;
use crate::pipeline::{rerank_all, retrieve_all, Sentence};
use crate::rerank::RerankParams;
use crate::retrieval::{MatchList, Mode, RetrievalParams, Retriever, DEFAULT_CUTOFF, DEFAULT_DECAY};
use crate::textcore::{TermWeight, TokenSeq};

/// Candidate values per parameter, in the order they are tried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub k_n: Vec<usize>,
    pub k_m: Vec<usize>,
    pub k_r: Vec<usize>,
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
}

impl GridSpec {
    /// Default search space. Only the d range is fixed by the method; the
    /// other lists are this crate's choice and bracket the tuned defaults.
    pub fn default_for(mode: Mode) -> Self {
        GridSpec {
            k_n: vec![100, 200, 300],
            k_m: vec![100, 200, 300, 400, 500],
            k_r: vec![1, 3, 5, 10, 20],
            lambda: vec![1.0e4, 2.0e4, 5.0e4, 10.0e4, 20.0e4, 50.0e4, 70.0e4, 100.0e4],
            d: (mode == Mode::Cnn).then(|| (80..=100).map(f64::from).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("k_n", self.k_n.is_empty()),
            ("k_m", self.k_m.is_empty()),
            ("k_r", self.k_r.is_empty()),
            ("lambda", self.lambda.is_empty()),
            ("d", self.d.as_ref().is_some_and(Vec::is_empty)),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(Error::InvalidParameter(format!("grid list `{name}` is empty")));
        }
        if self.k_n.iter().chain(&self.k_m).chain(&self.k_r).any(|&k| k == 0) {
            return Err(Error::InvalidParameter("k_n, k_m and k_r candidates must be positive".into()));
        }
        if self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidParameter("lambda candidates must be finite and >= 0".into()));
        }
        if self.d.iter().flatten().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(Error::InvalidParameter("d candidates must be positive".into()));
        }
        Ok(())
    }

    pub fn max_k_n(&self) -> usize {
        self.k_n.iter().copied().max().unwrap_or(0)
    }
}

/// One configuration of the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub retrieval: RetrievalParams,
    pub rerank: RerankParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    KN,
    KM,
    KR,
    Lambda,
    D,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::KN => "k_n",
            Param::KM => "k_m",
            Param::KR => "k_r",
            Param::Lambda => "lambda",
            Param::D => "d",
        })
    }
}

/// Scores a configuration; higher is better.
pub trait Objective: Sync {
    fn evaluate(&self, point: &TunePoint) -> Result<f64>;

    /// Deepest k-best list available, when the objective has one.
    fn depth(&self) -> Option<usize> {
        None
    }
}

impl<F> Objective for F
where
    F: Fn(&TunePoint) -> Result<f64> + Sync,
{
    fn evaluate(&self, point: &TunePoint) -> Result<f64> {
        self(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub param: Param,
    pub point: TunePoint,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TunePoint,
    pub best_bleu: f64,
    pub trace: Vec<TraceEntry>,
}

fn set(point: &mut TunePoint, param: Param, value: f64) {
    match param {
        Param::KN => point.retrieval.k_n = value as usize,
        Param::KM => point.retrieval.k_m = value as usize,
        Param::KR => point.rerank.k_r = value as usize,
        Param::Lambda => point.rerank.lambda = value,
        Param::D => point.retrieval.d = value,
    }
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Runs one step-wise pass. `d` is swept only in CNN mode; otherwise the
/// cutoff stays at its default and is unused by retrieval.
pub fn stepwise_search<O: Objective + ?Sized>(grid: &GridSpec, mode: Mode, objective: &O) -> Result<TuneResult> {
    grid.validate()?;
    if let Some(depth) = objective.depth() {
        if depth < grid.max_k_n() {
            return Err(Error::InsufficientDepth {
                depth,
                required: grid.max_k_n(),
            });
        }
    }
    let mut sweeps = vec![
        (Param::KN, as_f64(&grid.k_n)),
        (Param::KM, as_f64(&grid.k_m)),
        (Param::KR, as_f64(&grid.k_r)),
        (Param::Lambda, grid.lambda.clone()),
    ];
    let d = match (&grid.d, mode) {
        (Some(d), Mode::Cnn) => {
            sweeps.push((Param::D, d.clone()));
            d[0]
        }
        _ => DEFAULT_CUTOFF,
    };
    let mut incumbent = TunePoint {
        retrieval: RetrievalParams {
            k_n: grid.k_n[0],
            k_m: grid.k_m[0],
            b: DEFAULT_DECAY,
            d,
        },
        rerank: RerankParams {
            k_r: grid.k_r[0],
            lambda: grid.lambda[0],
        },
    };
    let mut trace = Vec::new();
    let mut best_bleu = f64::NEG_INFINITY;
    for (param, values) in sweeps {
        let points: Vec<TunePoint> = values
            .iter()
            .map(|&v| {
                let mut p = incumbent;
                set(&mut p, param, v);
                p
            })
            .collect();
        let scores = points
            .par_iter()
            .map(|p| objective.evaluate(p))
            .collect::<Result<Vec<f64>>>()?;
        let mut pick = 0;
        for i in 1..values.len() {
            let better = scores[i] > scores[pick] || (scores[i] == scores[pick] && values[i] < values[pick]);
            if better {
                pick = i;
            }
        }
        for (point, bleu) in points.iter().zip(&scores) {
            trace.push(TraceEntry {
                param,
                point: *point,
                bleu: *bleu,
            });
        }
        debug!("{param}: fixed {} (bleu {})", values[pick], scores[pick]);
        incumbent = points[pick];
        best_bleu = scores[pick];
    }
    Ok(TuneResult {
        best: incumbent,
        best_bleu,
        trace,
    })
}

type RetrievalKey = (usize, usize, u64, u64);

/// Corpus BLEU of the full pipeline on a development set. Match lists are
/// cached per retrieval setting, so k_r and λ sweeps reuse them.
pub struct PipelineObjective<'a, 'c, W> {
    retriever: &'a Retriever<'c, W>,
    sentences: &'a [Sentence],
    references: Vec<&'a TokenSeq>,
    mode: Mode,
    cache: Mutex<HashMap<RetrievalKey, Arc<Vec<MatchList<'c>>>>>,
}

impl<'a, 'c, W: TermWeight + Sync> PipelineObjective<'a, 'c, W> {
    /// `references[i]` is the reference translation of `sentences[i]`.
    pub fn new(
        retriever: &'a Retriever<'c, W>,
        sentences: &'a [Sentence],
        references: Vec<&'a TokenSeq>,
        mode: Mode,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        if sentences.len() != references.len() {
            return Err(Error::Misaligned(format!(
                "{} sentences vs {} references",
                sentences.len(),
                references.len()
            )));
        }
        Ok(PipelineObjective {
            retriever,
            sentences,
            references,
            mode,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn matches(&self, params: &RetrievalParams) -> Result<Arc<Vec<MatchList<'c>>>> {
        let key = (params.k_n, params.k_m, params.b.to_bits(), params.d.to_bits());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let lists = Arc::new(retrieve_all(self.retriever, self.sentences, self.mode, params)?);
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&lists));
        Ok(lists)
    }
}

impl<W: TermWeight + Sync> Objective for PipelineObjective<'_, '_, W> {
    fn evaluate(&self, point: &TunePoint) -> Result<f64> {
        let matches = self.matches(&point.retrieval)?;
        let outcomes = rerank_all(self.sentences, &matches, self.retriever.weights(), &point.rerank)?;
        let stats: BleuStats = outcomes
            .iter()
            .zip(&self.references)
            .map(|(o, r)| bleu_stats(&o.output.chosen.tokens, r))
            .sum();
        Ok(bleu_score(&stats))
    }

    fn depth(&self) -> Option<usize> {
        let lists: Vec<_> = self.sentences.iter().map(|s| s.kbest.clone()).collect();
        Some(kbest::depth(&lists))
    }
}
