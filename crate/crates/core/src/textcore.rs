//! Token sequences and inverse document frequency.
//!
//! Input text is expected to be tokenized and lowercased upstream; the only
//! processing done here is whitespace splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered, pre-tokenized sequence of terms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from owned tokens, rejecting empty tokens and tokens
    /// that contain whitespace.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!(
                    "token {i} ({t:?}) is empty or contains whitespace"
                )));
            }
        }
        Ok(TokenSeq(tokens))
    }

    /// Splits a line on whitespace. Never fails: whitespace splitting cannot
    /// produce tokens that violate the invariants.
    pub fn parse(line: &str) -> Self {
        TokenSeq(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// The set of unique tokens.
    pub fn types(&self) -> BTreeSet<&str> {
        self.iter().collect()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t)?;
        }
        Ok(())
    }
}

impl From<&str> for TokenSeq {
    fn from(line: &str) -> Self {
        TokenSeq::parse(line)
    }
}

/// The set of unique tokens of `seq`.
pub fn types_of(seq: &TokenSeq) -> BTreeSet<&str> {
    seq.types()
}

/// Per-term weight used by every relevance function.
///
/// [`IdfTable`] is the production implementation; the trait exists so that
/// weights can be rescaled or replaced without touching the scorers.
pub trait TermWeight {
    fn weight(&self, term: &str) -> f64;
}

impl<W: TermWeight + ?Sized> TermWeight for &W {
    fn weight(&self, term: &str) -> f64 {
        (**self).weight(term)
    }
}

/// Explicit weights; terms not in the map weigh 0.
impl TermWeight for HashMap<String, f64> {
    fn weight(&self, term: &str) -> f64 {
        self.get(term).copied().unwrap_or(0.0)
    }
}

/// Multiplies every weight of the inner source by a constant.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<W> {
    pub inner: W,
    pub factor: f64,
}

impl<W: TermWeight> TermWeight for Scaled<W> {
    fn weight(&self, term: &str) -> f64 {
        self.inner.weight(term) * self.factor
    }
}

/// Document frequencies over a sentence-per-line corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdfTable {
    doc_count: u64,
    df: HashMap<String, u64>,
}

impl IdfTable {
    /// Builds a table from precomputed counts, checking `1 <= df <= doc_count`.
    pub fn from_counts(doc_count: u64, df: HashMap<String, u64>) -> Result<Self> {
        if doc_count == 0 {
            return Err(Error::EmptyIdfSource);
        }
        if let Some((term, &n)) = df.iter().find(|(_, &n)| n == 0 || n > doc_count) {
            return Err(Error::InvalidParameter(format!(
                "df({term}) = {n} outside 1..={doc_count}"
            )));
        }
        Ok(IdfTable { doc_count, df })
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn vocab_size(&self) -> usize {
        self.df.len()
    }

    /// Stored document frequency, `None` for unseen terms.
    pub fn df(&self, term: &str) -> Option<u64> {
        self.df.get(term).copied()
    }

    /// `ln(N / df)`; unseen terms count as `df = 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df(term).unwrap_or(1);
        (self.doc_count as f64 / df as f64).ln()
    }

    /// Writes the `N=<doc_count>` header followed by `term<TAB>df` lines in
    /// byte order of the term.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "N={}", self.doc_count)?;
        let sorted: BTreeMap<&str, u64> = self.df.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        for (term, df) in sorted {
            writeln!(out, "{term}\t{df}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed(1, "missing N=<doc_count> header"))??;
        let doc_count: u64 = header
            .strip_prefix("N=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::malformed(1, format!("bad header {header:?}")))?;
        let mut df = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let (term, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::malformed(lineno, "expected term<TAB>df"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::malformed(lineno, format!("bad df {count:?}")))?;
            if df.insert(term.to_owned(), count).is_some() {
                return Err(Error::malformed(lineno, format!("duplicate term {term:?}")));
            }
        }
        IdfTable::from_counts(doc_count, df)
    }
}

impl TermWeight for IdfTable {
    fn weight(&self, term: &str) -> f64 {
        self.idf(term)
    }
}

/// Streaming document-frequency counter; each added sequence is one document.
#[derive(Debug, Default)]
pub struct IdfBuilder {
    doc_count: u64,
    df: HashMap<String, u64>,
}

impl IdfBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<'a, I>(&mut self, tokens: I)
    where
        I: IntoIterator<Item = &'a str>,
    {
        self.doc_count += 1;
        let types: BTreeSet<&str> = tokens.into_iter().collect();
        for term in types {
            match self.df.get_mut(term) {
                Some(n) => *n += 1,
                None => {
                    self.df.insert(term.to_owned(), 1);
                }
            }
        }
    }

    pub fn finish(self) -> Result<IdfTable> {
        IdfTable::from_counts(self.doc_count, self.df)
    }
}

/// Counts document frequencies, one document per sequence.
pub fn build_idf<I, S>(corpus: I) -> Result<IdfTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<TokenSeq>,
{
    let mut builder = IdfBuilder::new();
    for seq in corpus {
        builder.add(seq.as_ref().iter());
    }
    builder.finish()
}

/// Builds an [`IdfTable`] from a sentence-per-line reader without holding
/// the corpus in memory.
pub fn build_idf_from_reader<R: BufRead>(input: R) -> Result<IdfTable> {
    let mut builder = IdfBuilder::new();
    for line in input.lines() {
        builder.add(line?.split_whitespace());
    }
    builder.finish()
}

impl AsRef<TokenSeq> for TokenSeq {
    fn as_ref(&self) -> &TokenSeq {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::parse(s)
    }

    fn set<'a>(items: &[&'a str]) -> BTreeSet<&'a str> {
        items.iter().copied().collect()
    }

    #[test]
    fn types_of_examples() {
        assert!(types_of(&seq("")).is_empty());
        assert_eq!(types_of(&seq("a dog a")), set(&["a", "dog"]));
        assert_eq!(types_of(&seq("the cat sat")), set(&["the", "cat", "sat"]));
    }

    #[test]
    fn token_seq_rejects_bad_tokens() {
        assert!(TokenSeq::new(vec!["".into()]).is_err());
        assert!(TokenSeq::new(vec!["a b".into()]).is_err());
        assert!(TokenSeq::new(vec!["a\tb".into()]).is_err());
        assert!(TokenSeq::new(vec!["ok".into()]).is_ok());
    }

    #[test]
    fn build_idf_counts_documents() {
        let corpus = [seq("a b"), seq("b c"), seq("c")];
        let table = build_idf(&corpus).unwrap();
        assert_eq!(table.doc_count(), 3);
        assert_eq!(table.df("a"), Some(1));
        assert_eq!(table.df("b"), Some(2));
        assert_eq!(table.df("c"), Some(2));
        assert_eq!(table.df("d"), None);
    }

    #[test]
    fn df_counts_each_document_once() {
        let table = build_idf(&[seq("x x x"), seq("y"), seq("x")]).unwrap();
        assert_eq!(table.df("x"), Some(2));
    }

    #[test]
    fn build_idf_rejects_empty_corpus() {
        let empty: [TokenSeq; 0] = [];
        assert!(matches!(build_idf(&empty), Err(Error::EmptyIdfSource)));
    }

    #[test]
    fn idf_examples() {
        let table = build_idf(&[seq("t u"), seq("t"), seq("t")]).unwrap();
        assert_eq!(table.idf("t"), 0.0);
        assert!((table.idf("u") - 1.0986122886681098).abs() < 1e-12);
        assert!((table.idf("never-seen") - 1.0986122886681098).abs() < 1e-12);
    }

    #[test]
    fn persisted_table_roundtrips() {
        let table = build_idf(&[seq("a b"), seq("b c"), seq("c")]).unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "N=3\na\t1\nb\t2\nc\t2\n");
        let back = IdfTable::read_from(&buf[..]).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn persisted_table_rejects_out_of_range_df() {
        assert!(IdfTable::read_from(&b"N=2\na\t3\n"[..]).is_err());
        assert!(IdfTable::read_from(&b"N=2\na\t0\n"[..]).is_err());
        assert!(IdfTable::read_from(&b"a\t1\n"[..]).is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
        prop::collection::vec(prop::collection::vec(0u8..12, 0..8), 1..100)
    }

    fn to_seqs(raw: &[Vec<u8>]) -> Vec<TokenSeq> {
        raw.iter()
            .map(|d| TokenSeq::new(d.iter().map(|t| format!("w{t}")).collect()).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn idf_matches_brute_force_recount(raw in corpus_strategy()) {
            let seqs = to_seqs(&raw);
            let table = build_idf(&seqs).unwrap();
            let n = seqs.len() as f64;
            for t in 0u8..12 {
                let term = format!("w{t}");
                let k = seqs.iter().filter(|s| s.tokens().contains(&term)).count();
                if k == 0 {
                    prop_assert_eq!(table.df(&term), None);
                    prop_assert_eq!(table.idf(&term), n.ln());
                } else {
                    prop_assert_eq!(table.df(&term), Some(k as u64));
                    prop_assert_eq!(table.idf(&term), (n / k as f64).ln());
                    prop_assert_eq!(table.idf(&term) == 0.0, k == seqs.len());
                }
            }
        }

        #[test]
        fn idf_is_antitone_in_df(raw in corpus_strategy()) {
            let table = build_idf(to_seqs(&raw)).unwrap();
            let mut pairs: Vec<(u64, f64)> = (0u8..12)
                .filter_map(|t| {
                    let term = format!("w{t}");
                    table.df(&term).map(|df| (df, table.idf(&term)))
                })
                .collect();
            pairs.sort_by_key(|p| p.0);
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for (_, idf) in pairs {
                prop_assert!(idf >= 0.0);
            }
        }

        #[test]
        fn types_of_is_idempotent(raw in prop::collection::vec(0u8..6, 0..20)) {
            let s = TokenSeq::new(raw.iter().map(|t| format!("w{t}")).collect()).unwrap();
            let types = types_of(&s);
            prop_assert!(types.len() <= s.len());
            let relisted = TokenSeq::new(types.iter().map(|t| t.to_string()).collect()).unwrap();
            prop_assert_eq!(types_of(&relisted), types);
        }
    }
}
