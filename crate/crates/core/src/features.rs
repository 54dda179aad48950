//! Word n-gram features.
//!
//! Posts are tokenized, expanded into contiguous n-grams (n = 1..=5 by default),
//! counted against a fixed [`Vocabulary`] and L2-normalized into a
//! [`SparseVector`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("malformed vocabulary file on line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_min: usize,
    pub n_max: usize,
    /// Minimum number of distinct posts an n-gram must occur in.
    pub min_df: usize,
    /// Multiply counts by smoothed inverse document frequency before normalizing.
    #[serde(default)]
    pub use_idf: bool,
    /// Prepend the question title to the body text.
    #[serde(default = "default_true")]
    pub include_title: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_min: 1, n_max: 5, min_df: 2, use_idf: false, include_title: true }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(FeatureError::InvalidConfig(format!(
                "need 1 <= n_min <= n_max, got {}..{}",
                self.n_min, self.n_max
            )));
        }
        if self.min_df == 0 {
            return Err(FeatureError::InvalidConfig("min_df must be at least 1".into()));
        }
        Ok(())
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '+' | '#' | '.' | '_' | '-')
}

/// Lowercases and splits on anything that is not a letter, digit or one of
/// `+ # . _ -`, so names like `c++`, `c#` and `asp.net` survive intact.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !is_token_char(c))
        .map(|t| t.trim_matches(|c| c == '.' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Calls `f` once per n-gram occurrence, n in `n_min..=n_max`.
pub fn for_each_ngram<F: FnMut(String)>(tokens: &[String], n_min: usize, n_max: usize, mut f: F) {
    assert!(n_min >= 1 && n_min <= n_max, "need 1 <= n_min <= n_max");
    for start in 0..tokens.len() {
        let mut gram = String::new();
        for (len, tok) in tokens[start..].iter().take(n_max).enumerate() {
            if len > 0 {
                gram.push(' ');
            }
            gram.push_str(tok);
            if len + 1 >= n_min {
                f(gram.clone());
            }
        }
    }
}

/// Multiset of n-grams, rendered as tokens joined by one space.
pub fn extract_ngrams(tokens: &[String], n_min: usize, n_max: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for_each_ngram(tokens, n_min, n_max, |g| *counts.entry(g).or_insert(0) += 1);
    counts
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SparseVector<T> {
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> SparseVector<T> {
    pub fn zero() -> Self {
        Self { indices: Vec::new(), values: Vec::new() }
    }

    /// Builds from arbitrary `(index, value)` pairs; duplicates are summed and
    /// zeros dropped.
    pub fn from_pairs<I: IntoIterator<Item = (u32, T)>>(pairs: I) -> Self {
        let mut pairs: Vec<(u32, T)> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                let last = values.last_mut().expect("parallel vectors");
                *last = *last + v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) =
            indices.into_iter().zip(values).filter(|(_, v)| !v.is_zero()).unzip();
        Self { indices, values }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, index: u32) -> T {
        self.indices.binary_search(&index).map(|p| self.values[p]).unwrap_or_else(|_| T::zero())
    }

    pub fn squared_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn norm(&self) -> T {
        self.squared_norm().sqrt()
    }

    /// One past the largest stored index.
    pub fn dimension(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    /// Dot product with a dense vector; indices beyond `dense` contribute 0.
    pub fn dot_dense(&self, dense: &[T]) -> T {
        self.iter()
            .filter_map(|(i, v)| dense.get(i as usize).map(|&w| w * v))
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > T::zero() {
            for v in &mut self.values {
                *v = *v / norm;
            }
        }
        self
    }

    pub fn cast<U: Real>(&self) -> SparseVector<U> {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Mapping from n-gram to a dense feature index, assigned in lexicographic
/// order of the n-gram strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
    config: FeatureConfig,
    idf: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyHeader {
    n_min: usize,
    n_max: usize,
    min_df: usize,
    use_idf: bool,
    include_title: bool,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyEntry {
    ngram: String,
    index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idf: Option<f64>,
}

impl Vocabulary {
    /// Builds the vocabulary over `documents`, keeping n-grams that occur in at
    /// least `min_df` distinct documents.
    pub fn build<'a, I>(documents: I, config: &FeatureConfig) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        config.validate()?;
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            let tokens = tokenize(doc);
            let mut seen = HashSet::new();
            for_each_ngram(&tokens, config.n_min, config.n_max, |g| {
                seen.insert(g);
            });
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(FeatureError::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> =
            df.into_iter().filter(|&(_, count)| count >= config.min_df).collect();
        kept.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let idf = config.use_idf.then(|| {
            kept.iter()
                .map(|&(_, d)| ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0)
                .collect()
        });
        let terms: Vec<String> = kept.into_iter().map(|(g, _)| g).collect();
        Ok(Self::from_terms(terms, *config, idf))
    }

    fn from_terms(terms: Vec<String>, config: FeatureConfig, idf: Option<Vec<f64>>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { terms, index, config, idf }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, ngram: &str) -> Option<u32> {
        self.index.get(ngram).copied()
    }

    pub fn term(&self, index: u32) -> Option<&str> {
        self.terms.get(index as usize).map(String::as_str)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Raw in-vocabulary n-gram counts (optionally idf-weighted), L2-normalized.
    pub fn vectorize<T: Real>(&self, text: &str) -> SparseVector<T> {
        let tokens = tokenize(text);
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for_each_ngram(&tokens, self.config.n_min, self.config.n_max, |g| {
            if let Some(&i) = self.index.get(&g) {
                *counts.entry(i).or_insert(0) += 1;
            }
        });
        let pairs = counts.into_iter().map(|(i, c)| {
            let weight = match &self.idf {
                Some(idf) => c as f64 * idf[i as usize],
                None => c as f64,
            };
            (i, T::lit(weight))
        });
        SparseVector::from_pairs(pairs).normalized()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), FeatureError> {
        let header = VocabularyHeader {
            n_min: self.config.n_min,
            n_max: self.config.n_max,
            min_df: self.config.min_df,
            use_idf: self.config.use_idf,
            include_title: self.config.include_title,
            size: self.terms.len(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for (i, term) in self.terms.iter().enumerate() {
            let entry = VocabularyEntry {
                ngram: term.clone(),
                index: i as u32,
                idf: self.idf.as_ref().map(|idf| idf[i]),
            };
            serde_json::to_writer(&mut out, &entry).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, FeatureError> {
        let bad = |line: usize, message: String| FeatureError::Format { line, message };
        let mut lines = input.lines();
        let header: VocabularyHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?).map_err(|e| bad(1, e.to_string()))?,
            None => return Err(bad(1, "missing header".into())),
        };
        let config = FeatureConfig {
            n_min: header.n_min,
            n_max: header.n_max,
            min_df: header.min_df,
            use_idf: header.use_idf,
            include_title: header.include_title,
        };
        config.validate()?;
        let mut terms = Vec::with_capacity(header.size);
        let mut idf = header.use_idf.then(Vec::new);
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let entry: VocabularyEntry =
                serde_json::from_str(&line?).map_err(|e| bad(line_no, e.to_string()))?;
            if entry.index as usize != terms.len() {
                return Err(bad(line_no, format!("expected index {}, found {}", terms.len(), entry.index)));
            }
            if let Some(idf) = idf.as_mut() {
                idf.push(entry.idf.ok_or_else(|| bad(line_no, "missing idf".into()))?);
            }
            terms.push(entry.ngram);
        }
        if terms.len() != header.size {
            return Err(bad(1, format!("header size {} but {} entries", header.size, terms.len())));
        }
        Ok(Self::from_terms(terms, config, idf))
    }

    pub fn persist(&self, path: &Path) -> Result<(), FeatureError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// SHA-256 of the persisted form, used to tie saved models to a vocabulary.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("MySQL is SLOW"), toks(&["mysql", "is", "slow"]));
        assert_eq!(tokenize("C++ vs C#!"), toks(&["c++", "vs", "c#"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Use ASP.NET. -fast- node_js"), toks(&["use", "asp.net", "fast", "node_js"]));
    }

    #[test]
    fn ngram_examples() {
        let g = extract_ngrams(&toks(&["slow", "query", "time"]), 1, 3);
        let mut keys: Vec<_> = g.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, toks(&["query", "query time", "slow", "slow query", "slow query time", "time"]));
        assert!(g.values().all(|&c| c == 1));

        let single = extract_ngrams(&toks(&["a"]), 1, 5);
        assert_eq!(single.len(), 1);
        assert_eq!(single["a"], 1);

        let rep = extract_ngrams(&toks(&["a", "a"]), 1, 2);
        assert_eq!(rep["a"], 2);
        assert_eq!(rep["a a"], 1);
        assert_eq!(rep.len(), 2);
    }

    #[test]
    fn vocabulary_min_df_and_determinism() {
        let cfg = FeatureConfig { n_max: 1, ..FeatureConfig::default() };
        let docs = ["slow query", "slow server", "fast"];
        let v = Vocabulary::build(docs, &cfg).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.index_of("slow"), Some(0));
        assert_eq!(v.index_of("fast"), None);
        assert_eq!(Vocabulary::build(docs, &cfg).unwrap(), v);
        assert!(matches!(Vocabulary::build(Vec::<&str>::new(), &cfg), Err(FeatureError::EmptyCorpus)));
    }

    #[test]
    fn indices_follow_lexicographic_order() {
        let cfg = FeatureConfig { n_max: 2, min_df: 1, ..FeatureConfig::default() };
        let v = Vocabulary::build(["zeta alpha", "mid"], &cfg).unwrap();
        let terms: Vec<_> = (0..v.len() as u32).map(|i| v.term(i).unwrap().to_string()).collect();
        let mut sorted = terms.clone();
        sorted.sort();
        assert_eq!(terms, sorted);
    }

    #[test]
    fn vectorize_examples() {
        let cfg = FeatureConfig { n_max: 1, min_df: 1, ..FeatureConfig::default() };
        let v = Vocabulary::build(["alpha beta"], &cfg).unwrap();

        let one: SparseVector<f64> = v.vectorize("alpha gamma");
        assert_eq!(one.nnz(), 1);
        assert_eq!(one.get(v.index_of("alpha").unwrap()), 1.0);

        let two: SparseVector<f64> = v.vectorize("beta alpha");
        let w = 1.0 / 2f64.sqrt();
        assert!((two.get(0) - w).abs() < 1e-12 && (two.get(1) - w).abs() < 1e-12);

        let none: SparseVector<f64> = v.vectorize("gamma delta");
        assert!(none.is_zero());
        assert_eq!(none.norm(), 0.0);
    }

    #[test]
    fn idf_weighting_is_optional() {
        let cfg = FeatureConfig { n_max: 1, min_df: 1, use_idf: true, ..FeatureConfig::default() };
        let v = Vocabulary::build(["common rare", "common"], &cfg).unwrap();
        let x: SparseVector<f64> = v.vectorize("common rare");
        assert!(x.get(v.index_of("rare").unwrap()) > x.get(v.index_of("common").unwrap()));
        assert!((x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let cfg = FeatureConfig { n_max: 2, min_df: 1, use_idf: true, ..FeatureConfig::default() };
        let v = Vocabulary::build(["a b c", "b c d"], &cfg).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let back = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
    }

    #[test]
    fn sparse_vector_merges_and_drops_zeros() {
        let v = SparseVector::<f64>::from_pairs([(3, 1.0), (1, 2.0), (3, -1.0), (2, 0.0)]);
        assert_eq!(v.indices(), &[1]);
        assert_eq!(v.dot_dense(&[0.0, 5.0]), 10.0);
        assert_eq!(v.cast::<f32>().get(1), 2.0f32);
    }
}
