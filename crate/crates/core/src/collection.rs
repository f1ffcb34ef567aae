//! The target-side caption collection and its inverted index.
//!
//! Every caption is an independent match candidate tied to one image. The
//! index keeps, per term, the ascending list of documents whose type set
//! contains the term, and per document its sorted type ids.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::TokenSeq;

pub type DocId = u32;
pub type TermId = u32;
pub type ImageIdx = u32;
pub type CategorySetId = u32;

const INDEX_MAGIC: &[u8; 8] = b"TSRIDX\0\0";
const INDEX_VERSION: u32 = 1;

/// One target-language caption of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionDoc {
    pub caption_id: String,
    pub image_id: String,
    pub tokens: TokenSeq,
    /// Object categories of the image, when annotated. Never an empty set.
    pub categories: Option<BTreeSet<String>>,
}

impl CaptionDoc {
    pub fn new(caption_id: impl Into<String>, image_id: impl Into<String>, tokens: TokenSeq) -> Self {
        CaptionDoc {
            caption_id: caption_id.into(),
            image_id: image_id.into(),
            tokens,
            categories: None,
        }
    }

    pub fn with_categories<I, S>(mut self, cats: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let cats: BTreeSet<String> = cats.into_iter().map(Into::into).collect();
        self.categories = (!cats.is_empty()).then_some(cats);
        self
    }

    /// Parses `caption_id<TAB>image_id<TAB>tokens[<TAB>cat1,cat2,...]`.
    pub fn parse_record(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::malformed(
                lineno,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (caption_id, image_id) = (fields[0].trim(), fields[1].trim());
        if caption_id.is_empty() {
            return Err(Error::malformed(lineno, "empty caption id"));
        }
        if image_id.is_empty() {
            return Err(Error::malformed(lineno, "empty image id"));
        }
        let doc = CaptionDoc::new(caption_id, image_id, TokenSeq::parse(fields[2]));
        Ok(match fields.get(3) {
            Some(cats) => doc.with_categories(parse_categories(cats)),
            None => doc,
        })
    }
}

/// Splits a comma-separated category field. Labels are opaque and may
/// contain spaces; empty labels are dropped.
pub fn parse_categories(field: &str) -> BTreeSet<String> {
    field
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_owned)
        .collect()
}

/// What to do with a caption that has no tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyCaptionPolicy {
    #[default]
    Reject,
    SkipWithWarning,
}

/// Compressed row storage for lists of ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Csr {
    offsets: Vec<u64>,
    items: Vec<u32>,
}

impl Csr {
    fn from_lists(lists: &[Vec<u32>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        offsets.push(0);
        for l in lists {
            items.extend_from_slice(l);
            offsets.push(items.len() as u64);
        }
        Csr { offsets, items }
    }

    fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    fn row(&self, i: usize) -> &[u32] {
        &self.items[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// The part of a collection that is persisted to disk; every lookup map is
/// rebuilt from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Stored {
    docs: Vec<CaptionDoc>,
    terms: Vec<String>,
    doc_types: Csr,
    postings: Csr,
    images: Vec<String>,
    doc_image: Vec<ImageIdx>,
    by_image: Csr,
    category_sets: Vec<BTreeSet<String>>,
    doc_category: Vec<Option<CategorySetId>>,
}

#[derive(Debug, Clone)]
pub struct Collection {
    stored: Stored,
    term_index: HashMap<String, TermId>,
    image_index: HashMap<String, ImageIdx>,
    category_index: HashMap<BTreeSet<String>, CategorySetId>,
    caption_index: HashMap<String, DocId>,
}

impl PartialEq for Collection {
    fn eq(&self, other: &Self) -> bool {
        self.stored == other.stored
    }
}

impl Collection {
    pub fn empty() -> Self {
        CollectionBuilder::default().build()
    }

    fn from_stored(stored: Stored) -> Result<Self> {
        let n = stored.docs.len();
        let consistent = stored.doc_types.rows() == n
            && stored.doc_image.len() == n
            && stored.doc_category.len() == n
            && stored.postings.rows() == stored.terms.len()
            && stored.by_image.rows() == stored.images.len();
        if !consistent {
            return Err(Error::IndexFormat("inconsistent table sizes".into()));
        }
        let term_index = index_of(&stored.terms);
        let image_index = index_of(&stored.images);
        let category_index = stored
            .category_sets
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as CategorySetId))
            .collect();
        let mut caption_index = HashMap::with_capacity(n);
        for (i, d) in stored.docs.iter().enumerate() {
            if caption_index.insert(d.caption_id.clone(), i as DocId).is_some() {
                return Err(Error::DuplicateCaption(d.caption_id.clone()));
            }
        }
        Ok(Collection {
            stored,
            term_index,
            image_index,
            category_index,
            caption_index,
        })
    }

    pub fn len(&self) -> usize {
        self.stored.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.docs.is_empty()
    }

    pub fn docs(&self) -> &[CaptionDoc] {
        &self.stored.docs
    }

    pub fn doc(&self, id: DocId) -> &CaptionDoc {
        &self.stored.docs[id as usize]
    }

    pub fn doc_by_caption(&self, caption_id: &str) -> Option<DocId> {
        self.caption_index.get(caption_id).copied()
    }

    pub fn vocab_size(&self) -> usize {
        self.stored.terms.len()
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_index.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.stored.terms[id as usize]
    }

    /// Documents containing the term, ascending.
    pub fn postings(&self, id: TermId) -> &[DocId] {
        self.stored.postings.row(id as usize)
    }

    /// Sorted, unique term ids of a document.
    pub fn doc_types(&self, id: DocId) -> &[TermId] {
        self.stored.doc_types.row(id as usize)
    }

    pub fn num_images(&self) -> usize {
        self.stored.images.len()
    }

    pub fn image_id(&self, idx: ImageIdx) -> &str {
        &self.stored.images[idx as usize]
    }

    pub fn image_of(&self, doc: DocId) -> ImageIdx {
        self.stored.doc_image[doc as usize]
    }

    /// Documents captioning the given image, ascending.
    pub fn by_image(&self, image_id: &str) -> &[DocId] {
        match self.image_index.get(image_id) {
            Some(&i) => self.stored.by_image.row(i as usize),
            None => &[],
        }
    }

    pub fn category_set_of(&self, doc: DocId) -> Option<CategorySetId> {
        self.stored.doc_category[doc as usize]
    }

    pub fn category_set_id(&self, cats: &BTreeSet<String>) -> Option<CategorySetId> {
        self.category_index.get(cats).copied()
    }

    pub fn has_categories(&self) -> bool {
        self.stored.doc_category.iter().any(Option::is_some)
    }

    /// Exactly the documents whose type set intersects `query_terms`,
    /// ascending.
    pub fn candidates_for<'q, I>(&self, query_terms: I) -> Vec<DocId>
    where
        I: IntoIterator<Item = &'q str>,
    {
        let mut out: Vec<DocId> = query_terms
            .into_iter()
            .filter_map(|t| self.term_id(t))
            .flat_map(|id| self.postings(id).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Writes the index in a versioned binary layout.
    pub fn write_index<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut out, &self.stored)
            .map_err(|e| Error::IndexFormat(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    pub fn read_index<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::IndexFormat("not a collection index".into()));
        }
        let mut version = [0u8; 4];
        input.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != INDEX_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let stored: Stored =
            bincode::deserialize_from(input).map_err(|e| Error::IndexFormat(e.to_string()))?;
        Collection::from_stored(stored)
    }
}

fn index_of(items: &[String]) -> HashMap<String, u32> {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect()
}

/// Single-writer incremental construction of a [`Collection`].
#[derive(Debug, Default)]
pub struct CollectionBuilder {
    policy: EmptyCaptionPolicy,
    docs: Vec<CaptionDoc>,
    caption_seen: HashMap<String, DocId>,
    terms: Vec<String>,
    term_index: HashMap<String, TermId>,
    doc_types: Vec<Vec<TermId>>,
    postings: Vec<Vec<DocId>>,
    images: Vec<String>,
    image_index: HashMap<String, ImageIdx>,
    doc_image: Vec<ImageIdx>,
    by_image: Vec<Vec<DocId>>,
    category_sets: Vec<BTreeSet<String>>,
    category_index: HashMap<BTreeSet<String>, CategorySetId>,
    doc_category: Vec<Option<CategorySetId>>,
    skipped: usize,
}

impl CollectionBuilder {
    pub fn new(policy: EmptyCaptionPolicy) -> Self {
        CollectionBuilder {
            policy,
            ..Default::default()
        }
    }

    /// Number of empty captions dropped under [`EmptyCaptionPolicy::SkipWithWarning`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Adds a document. `line` is only used in error messages.
    pub fn push(&mut self, doc: CaptionDoc, line: usize) -> Result<()> {
        if self.caption_seen.contains_key(&doc.caption_id) {
            return Err(Error::DuplicateCaption(doc.caption_id));
        }
        if doc.tokens.is_empty() {
            match self.policy {
                EmptyCaptionPolicy::Reject => {
                    return Err(Error::EmptyCaption {
                        line,
                        caption_id: doc.caption_id,
                    })
                }
                EmptyCaptionPolicy::SkipWithWarning => {
                    log::warn!("line {line}: skipping empty caption `{}`", doc.caption_id);
                    self.skipped += 1;
                    return Ok(());
                }
            }
        }
        let id = self.docs.len() as DocId;

        let mut types: Vec<TermId> = doc
            .tokens
            .iter()
            .map(|t| match self.term_index.get(t) {
                Some(&tid) => tid,
                None => {
                    let tid = self.terms.len() as TermId;
                    self.terms.push(t.to_owned());
                    self.term_index.insert(t.to_owned(), tid);
                    self.postings.push(Vec::new());
                    tid
                }
            })
            .collect();
        types.sort_unstable();
        types.dedup();
        for &t in &types {
            self.postings[t as usize].push(id);
        }
        self.doc_types.push(types);

        let img = match self.image_index.get(&doc.image_id) {
            Some(&i) => i,
            None => {
                let i = self.images.len() as ImageIdx;
                self.images.push(doc.image_id.clone());
                self.image_index.insert(doc.image_id.clone(), i);
                self.by_image.push(Vec::new());
                i
            }
        };
        self.doc_image.push(img);
        self.by_image[img as usize].push(id);

        let cat = doc.categories.as_ref().map(|c| match self.category_index.get(c) {
            Some(&i) => i,
            None => {
                let i = self.category_sets.len() as CategorySetId;
                self.category_sets.push(c.clone());
                self.category_index.insert(c.clone(), i);
                i
            }
        });
        self.doc_category.push(cat);

        self.caption_seen.insert(doc.caption_id.clone(), id);
        self.docs.push(doc);
        Ok(())
    }

    pub fn build(self) -> Collection {
        let stored = Stored {
            docs: self.docs,
            terms: self.terms,
            doc_types: Csr::from_lists(&self.doc_types),
            postings: Csr::from_lists(&self.postings),
            images: self.images,
            doc_image: self.doc_image,
            by_image: Csr::from_lists(&self.by_image),
            category_sets: self.category_sets,
            doc_category: self.doc_category,
        };
        Collection {
            term_index: self.term_index,
            image_index: self.image_index,
            category_index: self.category_index,
            caption_index: self.caption_seen,
            stored,
        }
    }
}

/// Reads a collection file. Blank lines are ignored.
pub fn ingest_collection<R: BufRead>(input: R, policy: EmptyCaptionPolicy) -> Result<Collection> {
    let mut builder = CollectionBuilder::new(policy);
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = CaptionDoc::parse_record(&line, i + 1)?;
        builder.push(doc, i + 1)?;
    }
    Ok(builder.build())
}

/// Builds a collection from in-memory documents.
pub fn collection_from_docs<I>(docs: I, policy: EmptyCaptionPolicy) -> Result<Collection>
where
    I: IntoIterator<Item = CaptionDoc>,
{
    let mut builder = CollectionBuilder::new(policy);
    for (i, d) in docs.into_iter().enumerate() {
        builder.push(d, i + 1)?;
    }
    Ok(builder.build())
}
