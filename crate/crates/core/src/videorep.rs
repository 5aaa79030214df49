//! Concept-score representations of videos: evenly sampled frames are
//! encoded, scored by concept detectors and average-pooled.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::DetectorModel;
use crate::encode::formats::{put_f32s, put_u32, LeReader};
use crate::encode::{Encoder, FeatureSet};
use crate::error::{Error, Result};

pub const DEFAULT_FRAMES: usize = 20;
pub const DEFAULT_RECOUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifestEntry {
    pub video_id: String,
    pub label: Option<String>,
    pub frames: Vec<PathBuf>,
}

/// Parses `video_id<TAB>label-or-dash<TAB>frame-dir-or-list` rows. Frame
/// directories expand to their entries in name order; relative paths
/// resolve against `base`.
pub fn parse_video_manifest(text: &str, base: &Path) -> Result<Vec<VideoManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Malformed(format!(
                "video manifest line {}: expected 3 columns, found {}",
                lineno + 1,
                row.len()
            )));
        }
        let video_id = row[0].trim().to_string();
        if video_id == "video_id" && lineno == 0 {
            continue;
        }
        if !seen.insert(video_id.clone()) {
            return Err(Error::Malformed(format!("duplicate video id `{video_id}`")));
        }
        let label = match row[1].trim() {
            "-" | "" => None,
            l => Some(l.to_string()),
        };
        let locator = row[2].trim();
        let frames = if locator.contains(';') {
            locator.split(';').filter(|s| !s.is_empty()).map(|s| base.join(s)).collect()
        } else {
            let dir = base.join(locator);
            if dir.is_dir() && !is_descriptor_dir(&dir) {
                let mut frames: Vec<PathBuf> = fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
                    .collect::<Result<_>>()?;
                frames.sort();
                frames
            } else {
                vec![dir]
            }
        };
        if frames.is_empty() {
            return Err(Error::NoFrames(video_id));
        }
        entries.push(VideoManifestEntry { video_id, label, frames });
    }
    Ok(entries)
}

pub fn load_video_manifest(path: &Path) -> Result<Vec<VideoManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_video_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// A directory that is itself one frame's descriptor files.
fn is_descriptor_dir(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|mut it| it.any(|e| e.map(|e| e.path().extension().is_some_and(|x| x == "cbfv")).unwrap_or(false)))
        .unwrap_or(false)
}

/// Indices `round(j (F−1)/(m−1))`, or every frame when `F < m`.
pub fn sample_frames(frame_count: usize, m: usize) -> Vec<usize> {
    if frame_count == 0 || m == 0 {
        return Vec::new();
    }
    if frame_count < m {
        return (0..frame_count).collect();
    }
    if m == 1 {
        return vec![0];
    }
    let span = (frame_count - 1) as f64 / (m - 1) as f64;
    (0..m).map(|j| (j as f64 * span).round() as usize).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRepresentation {
    pub video_id: String,
    pub label: Option<String>,
    pub frames_used: usize,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

/// Mean of per-frame score vectors, accumulated in frame order.
pub fn pool_scores(frame_scores: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = frame_scores.first() else {
        return Vec::new();
    };
    let mut sum = vec![0.0; first.len()];
    for scores in frame_scores {
        for (s, v) in sum.iter_mut().zip(scores) {
            *s += v;
        }
    }
    let n = frame_scores.len() as f64;
    sum.into_iter().map(|s| s / n).collect()
}

/// Scores one frame's features with every detector.
pub fn score_frame(features: &FeatureSet, detectors: &[&DetectorModel]) -> Result<Vec<f64>> {
    detectors.iter().map(|d| d.score(features)).collect()
}

/// Encodes the sampled frames of `entry`, scores them with `detectors` and
/// averages. Frames that fail to encode are skipped with a warning.
pub fn represent(
    entry: &VideoManifestEntry,
    detectors: &[&DetectorModel],
    encoder: &Encoder,
    m: usize,
) -> Result<VideoRepresentation> {
    let picked = sample_frames(entry.frames.len(), m);
    let per_frame: Vec<Option<Vec<f64>>> = picked
        .par_iter()
        .map(|&i| {
            let path = &entry.frames[i];
            match encoder.encode_path(path) {
                Ok(features) => score_frame(&features, detectors).map(Some),
                Err(e) => {
                    log::warn!("video {}: skipping frame {}: {e}", entry.video_id, path.display());
                    Ok(None)
                }
            }
        })
        .collect::<Result<_>>()?;
    let frames: Vec<Vec<f64>> = per_frame.into_iter().flatten().collect();
    if frames.is_empty() {
        return Err(Error::NoFrames(entry.video_id.clone()));
    }
    Ok(VideoRepresentation {
        video_id: entry.video_id.clone(),
        label: entry.label.clone(),
        frames_used: frames.len(),
        scores: pool_scores(&frames),
    })
}

/// Representations of many videos over one concept layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSet {
    pub concepts: Vec<String>,
    pub videos: Vec<VideoRepresentation>,
}

impl RepresentationSet {
    pub fn concept_index(&self, key: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == key)
    }

    /// Scores of one concept across all videos.
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.videos.iter().map(|v| v.scores[index]).collect()
    }

    /// Scores rounded to the stored precision.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.videos {
            for s in &mut v.scores {
                *s = f64::from(*s as f32);
            }
        }
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(self)?;
        let mut out = Vec::new();
        out.extend_from_slice(b"CBVR");
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        for v in &self.videos {
            if v.scores.len() != self.concepts.len() {
                return Err(Error::LayoutMismatch(format!(
                    "video {} has {} scores for {} concepts",
                    v.video_id,
                    v.scores.len(),
                    self.concepts.len()
                )));
            }
            put_f32s(&mut out, v.scores.iter().map(|&s| s as f32));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::new("CBVR", bytes);
        r.magic(b"CBVR")?;
        let len = r.u32()? as usize;
        let mut set: RepresentationSet = serde_json::from_slice(r.take(len)?)?;
        let n = set.concepts.len();
        for v in &mut set.videos {
            v.scores = r.f32s(n)?.into_iter().map(f64::from).collect();
        }
        r.finish()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Top-`k` concepts of one video, score descending then name ascending.
pub fn recount(concepts: &[String], scores: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = concepts.iter().cloned().zip(scores.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}
