//! Brute-force reference implementations. Written directly from the scoring
//! definitions, sharing no code with the library beyond plain data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

pub struct Doc {
    pub caption_id: String,
    pub image_id: String,
    pub tokens: Vec<String>,
    pub categories: Option<BTreeSet<String>>,
}

/// `ln(N / df)` with unseen terms counted as `df = 1`.
pub struct Idf {
    pub n: f64,
    pub df: HashMap<String, u64>,
}

impl Idf {
    pub fn from_corpus(corpus: &[Vec<String>]) -> Self {
        let mut df = HashMap::new();
        for doc in corpus {
            let seen: HashSet<&String> = doc.iter().collect();
            for w in seen {
                *df.entry(w.clone()).or_insert(0u64) += 1;
            }
        }
        Idf {
            n: corpus.len() as f64,
            df,
        }
    }

    pub fn get(&self, w: &str) -> f64 {
        let df = self.df.get(w).copied().unwrap_or(1) as f64;
        (self.n / df).ln()
    }
}

fn types(tokens: &[String]) -> Vec<&String> {
    let mut out: Vec<&String> = Vec::new();
    for t in tokens {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Text relevance: sum over query tokens that occur in `m`, divided by the
/// number of distinct terms of `m`.
pub fn s_txt(m: &[String], queries: &[Vec<String>], idf: &dyn Fn(&str) -> f64) -> f64 {
    let tm = types(m);
    let mut sum = 0.0;
    for q in queries {
        for w in q {
            for t in &tm {
                if *t == w {
                    sum += idf(w);
                }
            }
        }
    }
    sum / tm.len() as f64
}

pub fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OMode {
    Txt,
    Cnn,
    Hca,
}

pub struct OracleQuery<'a> {
    pub hyps: &'a [Vec<String>],
    pub image: Option<&'a str>,
    pub categories: Option<&'a BTreeSet<String>>,
    pub k_n: usize,
    pub k_m: usize,
    pub b: f64,
    pub d: f64,
}

/// Score of every doc under `mode`, without fallback.
pub fn score_all(
    docs: &[Doc],
    feats: &HashMap<String, Vec<f32>>,
    idf: &dyn Fn(&str) -> f64,
    q: &OracleQuery<'_>,
    mode: OMode,
) -> Vec<f64> {
    let queries = &q.hyps[..q.k_n.min(q.hyps.len())];
    docs.iter()
        .map(|m| {
            let txt = s_txt(&m.tokens, queries, idf);
            match mode {
                OMode::Txt => txt,
                OMode::Cnn => {
                    let qv = q.image.and_then(|i| feats.get(i));
                    match (qv, feats.get(&m.image_id)) {
                        (Some(a), Some(b)) => {
                            let v = euclid(b, a);
                            if v < q.d {
                                txt * (-q.b * v).exp()
                            } else {
                                0.0
                            }
                        }
                        _ => 0.0,
                    }
                }
                OMode::Hca => match (&m.categories, q.categories) {
                    (Some(a), Some(b)) if a == b => txt,
                    _ => 0.0,
                },
            }
        })
        .collect()
}

/// Top `k_m` positive-scoring docs, score descending then caption id; falls
/// back to text scores when the mode leaves nothing positive.
pub fn retrieve(
    docs: &[Doc],
    feats: &HashMap<String, Vec<f32>>,
    idf: &dyn Fn(&str) -> f64,
    q: &OracleQuery<'_>,
    mode: OMode,
) -> (Vec<(usize, f64)>, bool, Vec<f64>) {
    let mut scores = score_all(docs, feats, idf, q, mode);
    let mut fallback = false;
    if mode != OMode::Txt && scores.iter().all(|s| *s <= 0.0) {
        scores = score_all(docs, feats, idf, q, OMode::Txt);
        fallback = true;
    }
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 0.0)
        .map(|(i, s)| (i, *s))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| docs[a.0].caption_id.cmp(&docs[b.0].caption_id))
    });
    ranked.truncate(q.k_m);
    (ranked, fallback, scores)
}

/// Reranking relevance as the literal triple sum.
pub fn relevance(r: &[String], matches: &[&[String]], idf: &dyn Fn(&str) -> f64) -> f64 {
    let total: usize = matches.iter().map(|m| m.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for m in matches {
        for wm in types(m) {
            for wr in r {
                if wm == wr {
                    sum += idf(wm);
                }
            }
        }
    }
    sum / total as f64
}

/// Index of the chosen hypothesis among the first `k_r`, plus its combined
/// score and relevance. Earlier hypotheses win ties.
pub fn select(
    hyps: &[(Vec<String>, f64)],
    matches: &[&[String]],
    idf: &dyn Fn(&str) -> f64,
    k_r: usize,
    lambda: f64,
) -> (usize, f64, f64) {
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for (i, (r, d)) in hyps.iter().take(k_r).enumerate() {
        let f = relevance(r, matches, idf);
        let c = d + lambda * f;
        if c > best.1 {
            best = (i, c, f);
        }
    }
    best
}

/// IBM BLEU of aligned corpora: clipped n-gram counts for n = 1..4,
/// geometric mean, corpus brevity penalty.
pub fn bleu(pairs: &[(&[String], &[String])]) -> f64 {
    let mut m = [0u64; 4];
    let mut t = [0u64; 4];
    let (mut hl, mut rl) = (0u64, 0u64);
    for (h, r) in pairs {
        hl += h.len() as u64;
        rl += r.len() as u64;
        for n in 1..=4 {
            let mut rc: HashMap<&[String], u64> = HashMap::new();
            for g in r.windows(n) {
                *rc.entry(g).or_default() += 1;
            }
            let mut hc: HashMap<&[String], u64> = HashMap::new();
            for g in h.windows(n) {
                *hc.entry(g).or_default() += 1;
            }
            for (g, c) in hc {
                m[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            t[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    if hl == 0 || m.contains(&0) {
        return 0.0;
    }
    let lp: f64 = (0..4).map(|i| (m[i] as f64 / t[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hl < rl { 1.0 - rl as f64 / hl as f64 } else { 0.0 };
    (lp + bp).exp()
}

/// Exact randomization p-value by enumerating every swap pattern.
pub fn exhaustive_p(a: &[Vec<String>], b: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let n = a.len();
    let corpus = |x: &[&Vec<String>]| -> f64 {
        let pairs: Vec<(&[String], &[String])> =
            x.iter().zip(refs).map(|(h, r)| (h.as_slice(), r.as_slice())).collect();
        bleu(&pairs)
    };
    let ra: Vec<&Vec<String>> = a.iter().collect();
    let rb: Vec<&Vec<String>> = b.iter().collect();
    let observed = (corpus(&ra) - corpus(&rb)).abs();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let mut xa = Vec::with_capacity(n);
        let mut xb = Vec::with_capacity(n);
        for i in 0..n {
            if mask >> i & 1 == 1 {
                xa.push(&b[i]);
                xb.push(&a[i]);
            } else {
                xa.push(&a[i]);
                xb.push(&b[i]);
            }
        }
        if (corpus(&xa) - corpus(&xb)).abs() >= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}
