//! Zero-shot event retrieval by normalized rank fusion over selected
//! concepts, and supervised event detection on concatenated concept scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::kernel::mean_chi2;
use crate::detect::platt::{fit_platt, Platt};
use crate::detect::smo::solve_dual;
use crate::error::{Error, Result};
use crate::metrics::scored_ap;
use crate::numeric::{chi2_dist, SquareMatrix};
use crate::semmatch::QueryPlan;
use crate::videorep::RepresentationSet;

/// Videos ordered best first by one concept's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub concept: String,
    pub ordering: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankList {
    /// Orders by score descending, equal scores by video id.
    pub fn from_scores(concept: impl Into<String>, video_ids: &[String], scores: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..video_ids.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| video_ids[a].cmp(&video_ids[b])));
        RankList {
            concept: concept.into(),
            ordering: idx.iter().map(|&i| video_ids[i].clone()).collect(),
            scores: idx.iter().map(|&i| scores[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVideo {
    pub video_id: String,
    pub score: f64,
    /// Rank in each fused list, in list order.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub d: usize,
    pub n: usize,
    pub concepts: Vec<String>,
    /// Fusion score descending, ties by video id.
    pub ranking: Vec<FusedVideo>,
}

impl FusionResult {
    pub fn ordering(&self) -> Vec<&str> {
        self.ranking.iter().map(|v| v.video_id.as_str()).collect()
    }

    /// `rank<TAB>video_id<TAB>score` lines.
    pub fn to_tsv(&self) -> String {
        ranked_tsv(self.ranking.iter().map(|v| (v.video_id.as_str(), v.score)))
    }
}

pub fn ranked_tsv<'a>(rows: impl Iterator<Item = (&'a str, f64)>) -> String {
    let mut out = String::from("rank\tvideo_id\tscore\n");
    for (i, (id, score)) in rows.enumerate() {
        out.push_str(&format!("{}\t{id}\t{score:.9}\n", i + 1));
    }
    out
}

/// `R(i) = (1/d) Σ_j (1 − r_j(i)/n)`, accumulated as integers.
pub fn fuse(lists: &[RankList]) -> Result<FusionResult> {
    let first = lists
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    let n = first.ordering.len();
    let mut ids: Vec<&str> = first.ordering.iter().map(String::as_str).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::MismatchedVideoSets);
    }
    let position: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut ranks = vec![Vec::with_capacity(lists.len()); n];
    for list in lists {
        if list.ordering.len() != n {
            return Err(Error::MismatchedVideoSets);
        }
        let mut seen = vec![false; n];
        for (r, id) in list.ordering.iter().enumerate() {
            let &i = position.get(id.as_str()).ok_or(Error::MismatchedVideoSets)?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::MismatchedVideoSets);
            }
            ranks[i].push(r + 1);
        }
    }
    let d = lists.len();
    let denom = (d * n) as f64;
    let mut ranking: Vec<FusedVideo> = ids
        .iter()
        .zip(ranks)
        .map(|(&id, r)| {
            let numer: usize = r.iter().map(|&rj| n - rj).sum();
            FusedVideo {
                video_id: id.to_string(),
                score: numer as f64 / denom,
                ranks: r,
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.video_id.cmp(&b.video_id)));
    Ok(FusionResult {
        d,
        n,
        concepts: lists.iter().map(|l| l.concept.clone()).collect(),
        ranking,
    })
}

/// Test-video representations with labels removed; the only input the
/// zero-shot path accepts.
#[derive(Debug, Clone)]
pub struct UnlabeledVideos(RepresentationSet);

impl UnlabeledVideos {
    pub fn new(mut set: RepresentationSet) -> Self {
        for v in &mut set.videos {
            v.label = None;
        }
        UnlabeledVideos(set)
    }

    pub fn set(&self) -> &RepresentationSet {
        &self.0
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.0.videos.iter().map(|v| v.video_id.clone()).collect()
    }
}

/// Rank lists for the plan's concepts with a positive relevance score.
pub fn plan_rank_lists(plan: &QueryPlan, videos: &UnlabeledVideos) -> Result<Vec<RankList>> {
    let ids = videos.video_ids();
    let lists: Vec<RankList> = plan
        .selections
        .iter()
        .filter(|s| s.score > 0.0)
        .map(|s| {
            let key = s.key();
            let index = videos.set().concept_index(&key).ok_or_else(|| Error::MissingDetector(key.clone()))?;
            Ok(RankList::from_scores(key, &ids, &videos.set().column(index)))
        })
        .collect::<Result<_>>()?;
    if lists.is_empty() {
        return Err(Error::QueryUnmatched(plan.query.clone()));
    }
    Ok(lists)
}

pub fn zero_shot_retrieve(plan: &QueryPlan, videos: &UnlabeledVideos) -> Result<FusionResult> {
    fuse(&plan_rank_lists(plan, videos)?)
}

pub const C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const SCALE_GRID: [f64; 3] = [0.5, 1.0, 2.0];
const SMO_TOL: f64 = 1e-4;

/// Per-video feature rows for a concept layout.
pub fn gather_rows(set: &RepresentationSet, layout: &[String]) -> Result<Vec<Vec<f64>>> {
    let columns: Vec<usize> = layout
        .iter()
        .map(|key| set.concept_index(key).ok_or_else(|| Error::LayoutMismatch(format!("no scores for `{key}`"))))
        .collect::<Result<_>>()?;
    Ok(set
        .videos
        .iter()
        .map(|v| columns.iter().map(|&c| v.scores[c]).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDetector {
    pub event: String,
    pub layout: Vec<String>,
    pub c: f64,
    pub scale: f64,
    pub bandwidth: f64,
    pub cv_ap: Option<f64>,
    pub support: Vec<Vec<f64>>,
    /// `α_i y_i` per support row.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub platt: Platt,
}

impl EventDetector {
    pub fn decision(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "event `{}` expects {} scores, got {}",
                self.event,
                self.layout.len(),
                row.len()
            )));
        }
        Ok(self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * (-chi2_dist(sv, row) / self.bandwidth).exp())
            .sum::<f64>()
            - self.rho)
    }

    pub fn confidence(&self, row: &[f64]) -> Result<f64> {
        Ok(self.platt.probability(self.decision(row)?))
    }
}

struct Fitted {
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
    rho: f64,
    bandwidth: f64,
}

impl Fitted {
    fn decision(&self, row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * (-chi2_dist(sv, row) / self.bandwidth).exp())
            .sum::<f64>()
            - self.rho
    }
}

fn fit_chi2_svm(rows: &[&[f64]], labels: &[bool], c: f64, scale: f64) -> Result<Fitted> {
    let bandwidth = mean_chi2(rows) * scale;
    let n = rows.len();
    let kernel = SquareMatrix::symmetric_from_fn(n, |i, j| (-chi2_dist(rows[i], rows[j]) / bandwidth).exp());
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(&kernel, &y, c, SMO_TOL, None)?;
    let support: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(Fitted {
        support: support.iter().map(|&i| rows[i].to_vec()).collect(),
        coef: support.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        rho: sol.rho,
        bandwidth,
    })
}

/// Stratified fold per video: ids of each class are ordered by a seeded
/// hash and dealt round-robin, so repeated ids share a fold.
pub fn group_folds(ids: &[&str], labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let hash = |id: &str| -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(id.as_bytes());
        h.finalize().into()
    };
    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    for class in [true, false] {
        let mut distinct: Vec<&str> = ids
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(&id, _)| id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        distinct.sort_by_cached_key(|id| (hash(id), id.to_string()));
        for (k, id) in distinct.into_iter().enumerate() {
            assignment.entry(id).or_insert(k % folds);
        }
    }
    ids.iter().map(|id| assignment[id]).collect()
}

/// One-vs-all χ² SVM on video rows, hyperparameters chosen by seeded
/// `folds`-fold CV AP, Platt fitted on out-of-fold decisions. Repeated
/// video ids are trained once.
pub fn train_event_detector(
    event: &str,
    layout: &[String],
    rows: &[Vec<f64>],
    ids: &[String],
    labels: &[bool],
    folds: usize,
    seed: u64,
) -> Result<EventDetector> {
    if let Some(r) = rows.iter().find(|r| r.len() != layout.len()) {
        return Err(Error::LayoutMismatch(format!("row of {} scores for layout of {}", r.len(), layout.len())));
    }
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut keep = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        match first_seen.get(id.as_str()) {
            None => {
                first_seen.insert(id, i);
                keep.push(i);
            }
            Some(&j) if labels[j] != labels[i] => {
                return Err(Error::Malformed(format!("video `{id}` appears with conflicting labels")));
            }
            Some(_) => {}
        }
    }
    let row_refs: Vec<&[f64]> = keep.iter().map(|&i| rows[i].as_slice()).collect();
    let id_refs: Vec<&str> = keep.iter().map(|&i| ids[i].as_str()).collect();
    let labels: Vec<bool> = keep.iter().map(|&i| labels[i]).collect();
    let labels = labels.as_slice();
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::OneClass);
    }
    let fold_of = group_folds(&id_refs, labels, folds.max(2), seed);

    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
    for &c in &C_GRID {
        for &scale in &SCALE_GRID {
            let mut out_of_fold = vec![0.0; row_refs.len()];
            let mut aps = Vec::new();
            let mut ok = true;
            for f in 0..folds.max(2) {
                let train: Vec<usize> = (0..row_refs.len()).filter(|&i| fold_of[i] != f).collect();
                let test: Vec<usize> = (0..row_refs.len()).filter(|&i| fold_of[i] == f).collect();
                let tr_rows: Vec<&[f64]> = train.iter().map(|&i| row_refs[i]).collect();
                let tr_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                let fitted = match fit_chi2_svm(&tr_rows, &tr_labels, c, scale) {
                    Ok(m) => m,
                    Err(Error::OneClass) => {
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let scores: Vec<f64> = test.iter().map(|&i| fitted.decision(row_refs[i])).collect();
                for (&i, &s) in test.iter().zip(&scores) {
                    out_of_fold[i] = s;
                }
                let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
                if let Ok(ap) = scored_ap(&scores, &test_labels) {
                    aps.push(ap);
                }
            }
            if !ok || aps.is_empty() {
                continue;
            }
            let ap = aps.iter().sum::<f64>() / aps.len() as f64;
            if best.as_ref().is_none_or(|b| ap > b.0) {
                best = Some((ap, c, scale, out_of_fold));
            }
        }
    }

    let fitted_all = |c, scale| fit_chi2_svm(&row_refs, labels, c, scale);
    let (cv_ap, c, scale, fitted, calibration) = match best {
        Some((ap, c, scale, oof)) => (Some(ap), c, scale, fitted_all(c, scale)?, oof),
        None => {
            let fitted = fitted_all(1.0, 1.0)?;
            let train_scores = row_refs.iter().map(|r| fitted.decision(r)).collect();
            (None, 1.0, 1.0, fitted, train_scores)
        }
    };
    let platt = fit_platt(&calibration, labels)?;
    Ok(EventDetector {
        event: event.to_string(),
        layout: layout.to_vec(),
        c,
        scale,
        bandwidth: fitted.bandwidth,
        cv_ap,
        support: fitted.support,
        coef: fitted.coef,
        rho: fitted.rho,
        platt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRanking {
    pub event: String,
    /// `(video id, confidence)`, confidence descending then id.
    pub videos: Vec<(String, f64)>,
}

pub fn detect_events(detectors: &[EventDetector], test: &RepresentationSet) -> Result<Vec<EventRanking>> {
    detectors
        .iter()
        .map(|det| {
            let rows = gather_rows(test, &det.layout)?;
            let mut videos: Vec<(String, f64)> = test
                .videos
                .iter()
                .zip(&rows)
                .map(|(v, row)| Ok((v.video_id.clone(), det.confidence(row)?)))
                .collect::<Result<_>>()?;
            videos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            Ok(EventRanking {
                event: det.event.clone(),
                videos,
            })
        })
        .collect()
}
