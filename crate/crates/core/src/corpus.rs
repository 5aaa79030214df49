//! Tagged image corpora: tag cleansing and candidate concept discovery.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{ConceptBankTree, NodeId};

/// Stopwords, meaningless words, lemma table and vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub stopwords: BTreeSet<String>,
    pub meaningless_words: BTreeSet<String>,
    pub lemma_map: BTreeMap<String, String>,
    pub vocabulary: BTreeSet<String>,
}

impl Lexicon {
    /// Builds a lexicon, rejecting lemma tables that are not idempotent.
    pub fn new(
        stopwords: impl IntoIterator<Item = String>,
        meaningless_words: impl IntoIterator<Item = String>,
        lemma_map: impl IntoIterator<Item = (String, String)>,
        vocabulary: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let lexicon = Lexicon {
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            meaningless_words: meaningless_words
                .into_iter()
                .map(|w| w.to_lowercase())
                .collect(),
            lemma_map: lemma_map
                .into_iter()
                .map(|(a, b)| (a.to_lowercase(), b.to_lowercase()))
                .collect(),
            vocabulary: vocabulary.into_iter().map(|w| w.to_lowercase()).collect(),
        };
        for (token, lemma) in &lexicon.lemma_map {
            let again = lexicon.lemmatize(lemma);
            if again != lemma {
                return Err(Error::Malformed(format!(
                    "lemma table is not idempotent: {token} -> {lemma} -> {again}"
                )));
            }
        }
        Ok(lexicon)
    }

    /// Reads the four lexicon files. The lemma table is `token<TAB>lemma`.
    pub fn load(
        stopwords: &Path,
        meaningless_words: &Path,
        lemmas: &Path,
        vocabulary: &Path,
    ) -> Result<Self> {
        let words = |path: &Path| -> Result<Vec<String>> {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect())
        };
        let text = fs::read_to_string(lemmas).map_err(|e| Error::io(lemmas, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), None) => pairs.push((a.trim().to_string(), b.trim().to_string())),
                _ => {
                    return Err(Error::Malformed(format!(
                        "{}:{}: expected token<TAB>lemma",
                        lemmas.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Lexicon::new(
            words(stopwords)?,
            words(meaningless_words)?,
            pairs,
            words(vocabulary)?,
        )
    }

    pub fn lemmatize<'a>(&'a self, token: &'a str) -> &'a str {
        self.lemma_map.get(token).map(String::as_str).unwrap_or(token)
    }

    /// Tokenizes, drops stopwords and lemmatizes. Vocabulary is not checked.
    pub fn normalize_phrase(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .map(|t| self.lemmatize(&t).to_string())
            .collect()
    }
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
/// Tokens shorter than two characters are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

/// Returns the canonical form of a tag, or `None` when the tag is discarded.
pub fn cleanse_tag(tag: &str, lexicon: &Lexicon) -> Option<String> {
    let tokens: Vec<String> = tokenize(tag)
        .into_iter()
        .filter(|t| !lexicon.stopwords.contains(t))
        .collect();
    if tokens.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(tokens.len());
    for token in &tokens {
        let lemma = lexicon.lemmatize(token);
        if lexicon.meaningless_words.contains(token)
            || lexicon.meaningless_words.contains(lemma)
            || !lexicon.vocabulary.contains(lemma)
        {
            return None;
        }
        out.push(lemma);
    }
    Some(out.join(" "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub event_id: NodeId,
    pub raw_tags: Vec<String>,
    pub tokens_by_tag: Vec<Vec<String>>,
    pub image_path: PathBuf,
    /// Locator of the encoded features, filled in by the encode stage.
    pub feature_ref: Option<String>,
}

impl ImageRecord {
    /// Distinct cleansed tags of this image, in first-seen order.
    pub fn cleansed_tags(&self, lexicon: &Lexicon) -> Vec<String> {
        let mut seen = HashSet::new();
        self.raw_tags
            .iter()
            .filter_map(|t| cleanse_tag(t, lexicon))
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateConcept {
    pub name: String,
    pub event_id: NodeId,
    pub frequency: usize,
    pub image_ids: Vec<String>,
}

/// Ranks cleansed tags of one event's images by image frequency.
///
/// Each tag counts at most once per image. Output order is frequency
/// descending, then name ascending.
pub fn discover_candidates(
    records: &[ImageRecord],
    lexicon: &Lexicon,
    top_k: usize,
) -> Result<Vec<CandidateConcept>> {
    let first = records.first().ok_or(Error::EmptyCorpus)?;
    if records.iter().any(|r| r.event_id != first.event_id) {
        return Err(Error::MixedEvents);
    }
    let mut support: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for record in records {
        for tag in record.cleansed_tags(lexicon) {
            support.entry(tag).or_default().push(record.image_id.clone());
        }
    }
    let mut candidates: Vec<CandidateConcept> = support
        .into_iter()
        .map(|(name, image_ids)| CandidateConcept {
            name,
            event_id: first.event_id,
            frequency: image_ids.len(),
            image_ids,
        })
        .collect();
    candidates.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.name.cmp(&b.name)));
    candidates.truncate(top_k);
    Ok(candidates)
}

/// Loads an image manifest: `image_id, event_name, image_path, tags` (TSV,
/// tags comma-separated). Image paths resolve relative to the manifest.
pub fn load_manifest(path: &Path, tree: &ConceptBankTree, lexicon: &Lexicon) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, tree, lexicon)
}

pub fn parse_manifest(
    text: &str,
    base: &Path,
    tree: &ConceptBankTree,
    lexicon: &Lexicon,
) -> Result<Vec<ImageRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (index, row) in reader.records().enumerate() {
        let row = row?;
        if index == 0 && row.get(0) == Some("image_id") {
            continue;
        }
        if row.len() < 3 || row.len() > 4 {
            return Err(Error::Malformed(format!(
                "manifest row {}: expected 4 columns, found {}",
                index + 1,
                row.len()
            )));
        }
        let image_id = row[0].trim().to_string();
        let event_name = row[1].trim();
        let event = tree
            .event_by_name(event_name)
            .ok_or_else(|| Error::UnknownEvent(event_name.to_string()))?;
        if !event.visually_detectable {
            return Err(Error::ExcludedEvent(event_name.to_string()));
        }
        let image_path = base.join(row[2].trim());
        if !image_path.exists() {
            return Err(Error::MissingFile(image_path));
        }
        if !ids.insert(image_id.clone()) {
            return Err(Error::DuplicateImage(image_id));
        }
        let raw_tags: Vec<String> = row
            .get(3)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        let tokens_by_tag = raw_tags.iter().map(|t| lexicon.normalize_phrase(t)).collect();
        records.push(ImageRecord {
            image_id,
            event_id: event.id,
            raw_tags,
            tokens_by_tag,
            image_path,
            feature_ref: None,
        });
    }
    Ok(records)
}
