//! Precomputed image embeddings and the visual distance between them.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Image id → dense vector, all of one dimension.
///
/// Components are held as `f32`; distances accumulate in `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    dim: Option<usize>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` until the first vector is inserted.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        self.insert_at(image_id.into(), vector, 0)
    }

    fn insert_at(&mut self, image_id: String, vector: Vec<f32>, line: usize) -> Result<()> {
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::RaggedFeatures {
                    line,
                    expected: d,
                    found: vector.len(),
                })
            }
            _ => {}
        }
        if vector.is_empty() {
            return Err(Error::malformed(line, "feature vector has no components"));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature { line });
        }
        if self.index.contains_key(&image_id) {
            return Err(Error::DuplicateImage(image_id));
        }
        self.dim = Some(vector.len());
        self.index.insert(image_id.clone(), self.ids.len());
        self.ids.push(image_id);
        self.data.extend_from_slice(&vector);
        Ok(())
    }

    pub fn row_of(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let d = self.dim.unwrap_or(0);
        &self.data[row * d..(row + 1) * d]
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.row_of(image_id).map(|r| self.row(r))
    }
}

/// Reads `image_id<TAB>f1 f2 ... fD` lines.
pub fn load_features<R: BufRead>(input: R, expected_dim: Option<usize>) -> Result<FeatureStore> {
    let mut store = FeatureStore::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::malformed(lineno, "expected image_id<TAB>values"))?;
        let vector = values
            .split_whitespace()
            .map(|v| {
                v.parse::<f32>()
                    .map_err(|_| Error::malformed(lineno, format!("bad component {v:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        if let Some(expected) = expected_dim {
            if vector.len() != expected {
                return Err(Error::RaggedFeatures {
                    line: lineno,
                    expected,
                    found: vector.len(),
                });
            }
        }
        store.insert_at(id.trim().to_owned(), vector, lineno)?;
    }
    Ok(store)
}

/// Euclidean distance, accumulated in `f64`.
pub fn visual_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    Ok(squared_distance(a, b).sqrt())
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}
