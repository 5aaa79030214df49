//! Event text to concept relevance through the ontology: the product of
//! phrase similarities between the query and the concept and each of its
//! three ancestors, and top-n concept selection by that score.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::error::{Error, Result};
use crate::ontology::{ConceptBankTree, NodeId};

pub const DEFAULT_TOP_N: usize = 100;

/// Word-pair similarities with an optional embedding fallback.
#[derive(Debug, Clone, Default)]
pub struct SimilarityProvider {
    pairs: HashMap<(String, String), f64>,
    embeddings: HashMap<String, Vec<f32>>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl SimilarityProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<A: AsRef<str>, B: AsRef<str>>(pairs: impl IntoIterator<Item = (A, B, f64)>) -> Self {
        let mut provider = Self::new();
        for (a, b, v) in pairs {
            provider.insert(a.as_ref(), b.as_ref(), v);
        }
        provider
    }

    /// Stores `sim(a, b)` clamped to `[0, 1]`.
    pub fn insert(&mut self, a: &str, b: &str, value: f64) {
        let value = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        self.pairs.insert(pair_key(&a.to_lowercase(), &b.to_lowercase()), value);
    }

    pub fn insert_embedding(&mut self, word: &str, vector: Vec<f32>) {
        self.embeddings.insert(word.to_lowercase(), vector);
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Reads `word<TAB>word<TAB>similarity` rows.
    pub fn load_pairs(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
        let mut provider = Self::new();
        for (lineno, row) in reader.records().enumerate() {
            let row = row?;
            if row.len() != 3 {
                return Err(Error::Malformed(format!(
                    "{}:{}: expected 3 columns, found {}",
                    path.display(),
                    lineno + 1,
                    row.len()
                )));
            }
            let value: f64 = row[2].trim().parse().map_err(|_| {
                Error::Malformed(format!("{}:{}: bad similarity `{}`", path.display(), lineno + 1, &row[2]))
            })?;
            provider.insert(row[0].trim(), row[1].trim(), value);
        }
        Ok(provider)
    }

    /// Reads a text embedding table, one `word v1 v2 …` line per word.
    pub fn load_embeddings(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let vector = parts
                .map(str::parse::<f32>)
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if *dim.get_or_insert(vector.len()) != vector.len() {
                return Err(Error::Malformed(format!("{}:{}: inconsistent dimension", path.display(), lineno + 1)));
            }
            self.insert_embedding(word, vector);
        }
        Ok(())
    }

    /// Similarity of two normalized words: 1 for identical words, else the
    /// table value, else the clamped embedding cosine, else 0.
    pub fn sim(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        if let Some(&v) = self.pairs.get(&pair_key(a, b)) {
            return v;
        }
        match (self.embeddings.get(a), self.embeddings.get(b)) {
            (Some(x), Some(y)) => cosine(x, y).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    /// Copy with every table similarity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in out.pairs.values_mut() {
            *v = (*v * factor).clamp(0.0, 1.0);
        }
        out
    }
}

fn cosine(x: &[f32], y: &[f32]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (f64::from(a), f64::from(b));
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        0.0
    } else {
        xy / (xx.sqrt() * yy.sqrt())
    }
}

/// Maximum word-pair similarity between two normalized phrases.
pub fn token_phrase_sim(a: &[String], b: &[String], provider: &SimilarityProvider) -> f64 {
    let mut best = 0.0f64;
    for x in a {
        for y in b {
            best = best.max(provider.sim(x, y));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub concept: NodeId,
    pub event: String,
    pub name: String,
    pub score: f64,
}

impl Selection {
    pub fn key(&self) -> String {
        format!("{}/{}", self.event, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub query: String,
    pub n: usize,
    pub selections: Vec<Selection>,
}

/// Score descending, then event name, concept name and node id ascending.
pub fn selection_order(a: &Selection, b: &Selection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.event.cmp(&b.event))
        .then_with(|| a.name.cmp(&b.name))
        .then_with(|| a.concept.cmp(&b.concept))
}

/// Provider plus the lexicon used to normalize query and node phrases.
#[derive(Debug, Clone, Default)]
pub struct SemanticMatcher {
    pub provider: SimilarityProvider,
    pub lexicon: Lexicon,
}

impl SemanticMatcher {
    pub fn new(provider: SimilarityProvider, lexicon: Lexicon) -> Self {
        SemanticMatcher { provider, lexicon }
    }

    pub fn normalize(&self, phrase: &str) -> Result<Vec<String>> {
        let tokens = self.lexicon.normalize_phrase(phrase);
        if tokens.is_empty() {
            return Err(Error::EmptyPhrase(phrase.to_string()));
        }
        Ok(tokens)
    }

    pub fn phrase_sim(&self, a: &str, b: &str) -> Result<f64> {
        Ok(token_phrase_sim(&self.normalize(a)?, &self.normalize(b)?, &self.provider))
    }

    /// The four factors: concept, event, subcategory, category.
    pub fn chain_factors(&self, query: &str, concept: NodeId, tree: &ConceptBankTree) -> Result<[f64; 4]> {
        let q = self.normalize(query)?;
        self.chain_factors_normalized(&q, concept, tree)
    }

    fn chain_factors_normalized(&self, q: &[String], concept: NodeId, tree: &ConceptBankTree) -> Result<[f64; 4]> {
        let anc = tree.ancestors(concept)?;
        let names = [
            tree.node(concept)?.name.as_str(),
            anc.event.name.as_str(),
            anc.subcategory.name.as_str(),
            anc.category.name.as_str(),
        ];
        let mut factors = [0.0; 4];
        for (f, name) in factors.iter_mut().zip(names) {
            *f = token_phrase_sim(q, &self.normalize(name)?, &self.provider);
        }
        Ok(factors)
    }

    pub fn hierarchical_sim(&self, query: &str, concept: NodeId, tree: &ConceptBankTree) -> Result<f64> {
        Ok(self.chain_factors(query, concept, tree)?.iter().product())
    }

    /// Scores every concept leaf and keeps the best `n`.
    pub fn select_concepts(&self, query: &str, tree: &ConceptBankTree, n: usize) -> Result<QueryPlan> {
        let q = self.normalize(query)?;
        let leaves: Vec<NodeId> = tree.concepts().iter().map(|c| c.id).collect();
        let mut selections = leaves
            .par_iter()
            .map(|&id| {
                let factors = self.chain_factors_normalized(&q, id, tree)?;
                let anc = tree.ancestors(id)?;
                Ok(Selection {
                    concept: id,
                    event: anc.event.name.clone(),
                    name: tree.node(id)?.name.clone(),
                    score: factors.iter().product(),
                })
            })
            .collect::<Result<Vec<Selection>>>()?;
        selections.sort_by(selection_order);
        selections.truncate(n);
        Ok(QueryPlan {
            query: query.to_string(),
            n,
            selections,
        })
    }
}
