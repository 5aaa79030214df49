//! The stage runner. Each stage reads upstream artifacts from the store,
//! writes its own, and records a hash of every input it depends on.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{discover_candidates, load_manifest, Lexicon};
use crate::detect::visualness::report as visualness_report;
use crate::detect::{train_detector, verify_visualness, DetectorModel, VisualnessReport};
use crate::encode::formats::{read_cbcb, read_cbfh, write_cbcb, write_cbfh};
use crate::encode::{load_descriptors, train_codebook, Codebook, Encoder, FeatureSet, Pyramid};
use crate::error::{Error, Result};
use crate::metrics::{ranking_ap, EvalReport};
use crate::ontology::{ConceptBankTree, NodeId};
use crate::pipeline::config::{NegativeSource, PipelineConfig};
use crate::pipeline::store::{derive_seed, file_digest, read_json, sha256_hex, slug, write_text, ModelStore, StageRecord};
use crate::retrieve::{
    detect_events, gather_rows, ranked_tsv, train_event_detector, zero_shot_retrieve, EventDetector, EventRanking, FusionResult,
    UnlabeledVideos,
};
use crate::select::{select_training_set, ConceptImagePool, PoolMember, SelectionResult};
use crate::semmatch::{QueryPlan, SemanticMatcher, SimilarityProvider};
use crate::videorep::{load_video_manifest, recount, represent, RepresentationSet, VideoManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ontology,
    Discover,
    Codebook,
    Encode,
    Select,
    Verify,
    Train,
    Match,
    Represent,
    Retrieve,
    Detect,
    Eval,
    Recount,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Ontology,
        Stage::Discover,
        Stage::Codebook,
        Stage::Encode,
        Stage::Select,
        Stage::Verify,
        Stage::Train,
        Stage::Match,
        Stage::Represent,
        Stage::Retrieve,
        Stage::Detect,
        Stage::Eval,
        Stage::Recount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ontology => "ontology",
            Stage::Discover => "discover",
            Stage::Codebook => "codebook",
            Stage::Encode => "encode",
            Stage::Select => "select",
            Stage::Verify => "verify",
            Stage::Train => "train",
            Stage::Match => "match",
            Stage::Represent => "represent",
            Stage::Retrieve => "retrieve",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Recount => "recount",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ontology => &[],
            Stage::Discover => &[Stage::Ontology],
            Stage::Codebook => &[Stage::Discover],
            Stage::Encode => &[Stage::Codebook],
            Stage::Select => &[Stage::Encode],
            Stage::Verify => &[Stage::Select],
            Stage::Train => &[Stage::Verify],
            Stage::Match => &[Stage::Verify],
            Stage::Represent => &[Stage::Train],
            Stage::Retrieve | Stage::Detect => &[Stage::Represent, Stage::Match],
            Stage::Eval => &[Stage::Retrieve, Stage::Detect],
            Stage::Recount => &[Stage::Represent],
        }
    }

    /// Configuration and input-file digests this stage reads directly.
    fn params(self, c: &PipelineConfig) -> Result<Value> {
        let p = &c.paths;
        let digest = |path: &Path| file_digest(Some(path));
        let opt = |path: &Option<PathBuf>| file_digest(path.as_deref());
        Ok(match self {
            Stage::Ontology => json!({ "hierarchy": digest(&p.hierarchy)? }),
            Stage::Discover => json!({
                "images": digest(&p.images)?,
                "stopwords": digest(&p.stopwords)?,
                "meaningless_words": digest(&p.meaningless_words)?,
                "lemmas": digest(&p.lemmas)?,
                "vocabulary": digest(&p.vocabulary)?,
                "top_k_tags": c.top_k_tags,
            }),
            Stage::Codebook => json!({
                "channels": c.channels,
                "codebook_k": c.codebook_k,
                "codebook_sample": c.codebook_sample,
                "seed": c.seeds.codebook,
            }),
            Stage::Encode => json!({ "soft_k": c.soft_k }),
            Stage::Select => json!({
                "s": c.s,
                "t": c.t,
                "seed": c.seeds.select,
                "positive_strategy": c.positive_strategy,
            }),
            Stage::Verify => json!({
                "visualness": c.visualness_config(),
                "negatives": c.visualness_negatives,
            }),
            Stage::Train => json!({ "detector": c.detector_config(c.seeds.train) }),
            Stage::Match => json!({
                "n": c.n,
                "similarity": digest(&p.similarity)?,
                "embeddings": opt(&p.embeddings)?,
                "videos_train": opt(&p.videos_train)?,
                "test_labels": opt(&p.test_labels)?,
            }),
            Stage::Represent => json!({
                "m": c.m,
                "videos_train": opt(&p.videos_train)?,
                "videos_test": digest(&p.videos_test)?,
            }),
            Stage::Retrieve => json!({}),
            Stage::Detect => json!({ "seed": c.seeds.detect, "folds": c.event_folds }),
            Stage::Eval => json!({ "test_labels": opt(&p.test_labels)? }),
            Stage::Recount => json!({ "k": c.recount_k }),
        })
    }
}

/// Hash of a stage's own inputs chained with its upstream hashes.
pub fn stage_hash(stage: Stage, config: &PipelineConfig) -> Result<String> {
    let mut cache = HashMap::new();
    stage_hash_cached(stage, config, &mut cache)
}

fn stage_hash_cached(stage: Stage, config: &PipelineConfig, cache: &mut HashMap<Stage, String>) -> Result<String> {
    if let Some(h) = cache.get(&stage) {
        return Ok(h.clone());
    }
    let mut upstream = BTreeMap::new();
    for &u in stage.upstream() {
        upstream.insert(u.name(), stage_hash_cached(u, config, cache)?);
    }
    let description = json!({
        "stage": stage.name(),
        "params": stage.params(config)?,
        "upstream": upstream,
    });
    let hash = sha256_hex(&serde_json::to_vec(&description)?);
    cache.insert(stage, hash.clone());
    Ok(hash)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub config_hash: String,
    pub summary: Value,
    #[serde(skip)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub event: String,
    /// Relative to the image manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub event: String,
    pub name: String,
    pub frequency: usize,
    pub image_ids: Vec<String>,
}

impl CandidateEntry {
    pub fn key(&self) -> String {
        format!("{}/{}", self.event, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub id: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub event: String,
    pub name: String,
    pub pool_size: usize,
    pub selection: SelectionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualnessEntry {
    pub event: String,
    pub name: String,
    pub report: VisualnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEntry {
    pub key: String,
    pub concept: NodeId,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub event: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotEntry {
    pub event: String,
    pub result: Option<FusionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub zero_shot: EvalReport,
    pub supervised: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecountEntry {
    pub video_id: String,
    pub concepts: Vec<(String, f64)>,
}

/// Config plus store; runs stages with upstream checks.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub store: ModelStore,
    pub config: PipelineConfig,
    pub force: bool,
}

impl Pipeline {
    pub fn new(store: ModelStore, config: PipelineConfig) -> Self {
        Pipeline {
            store,
            config,
            force: false,
        }
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageReport> {
        let hash = stage_hash(stage, &self.config)?;
        let manifest = self.store.manifest()?;
        let mut upstream = BTreeMap::new();
        for &u in stage.upstream() {
            let expected = stage_hash(u, &self.config)?;
            match manifest.stages.get(u.name()) {
                None => return Err(Error::MissingUpstream(u.name().to_string())),
                Some(rec) if rec.config_hash != expected && !self.force => {
                    return Err(Error::ConfigHashMismatch {
                        stage: u.name().to_string(),
                        found: rec.config_hash.clone(),
                        expected,
                    })
                }
                Some(rec) => {
                    upstream.insert(u.name().to_string(), rec.config_hash.clone());
                }
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let (summary, text) = pool
            .install(|| self.execute(stage, &hash))
            .map_err(|e| Error::Stage {
                stage: stage.name().to_string(),
                source: Box::new(e),
            })?;
        self.store.record(
            stage.name(),
            StageRecord {
                config_hash: hash.clone(),
                upstream,
            },
        )?;
        log::info!("{}: done", stage.name());
        Ok(StageReport {
            stage: stage.name().to_string(),
            config_hash: hash,
            summary,
            text,
        })
    }

    fn execute(&self, stage: Stage, hash: &str) -> Result<(Value, String)> {
        match stage {
            Stage::Ontology => self.ontology(hash),
            Stage::Discover => self.discover(hash),
            Stage::Codebook => self.codebook(hash),
            Stage::Encode => self.encode(hash),
            Stage::Select => self.select(hash),
            Stage::Verify => self.verify(hash),
            Stage::Train => self.train(hash),
            Stage::Match => self.match_queries(hash),
            Stage::Represent => self.represent(hash),
            Stage::Retrieve => self.retrieve(hash),
            Stage::Detect => self.detect(hash),
            Stage::Eval => self.eval(hash),
            Stage::Recount => self.recount(hash),
        }
    }

    // ---- loaders -------------------------------------------------------

    pub fn lexicon(&self) -> Result<Lexicon> {
        let p = &self.config.paths;
        Lexicon::load(&p.stopwords, &p.meaningless_words, &p.lemmas, &p.vocabulary)
    }

    pub fn tree(&self) -> Result<ConceptBankTree> {
        self.store.read_artifact("ontology.json")
    }

    /// The ontology with verified concepts attached.
    pub fn bank(&self) -> Result<ConceptBankTree> {
        self.store.read_artifact("bank.json")
    }

    fn image_base(&self) -> PathBuf {
        self.config
            .paths
            .images
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    pub fn images(&self) -> Result<Vec<ImageEntry>> {
        self.store.read_artifact("images.json")
    }

    pub fn candidates(&self) -> Result<Vec<CandidateEntry>> {
        self.store.read_artifact("candidates.json")
    }

    pub fn codebooks(&self) -> Result<Vec<Codebook>> {
        let index: Vec<FileEntry> = self.store.read_artifact("codebooks/index.json")?;
        index
            .iter()
            .map(|e| read_cbcb(&self.store.path("codebooks").join(&e.file)))
            .collect()
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Ok(Encoder {
            codebooks: self.codebooks()?,
            pyramid: Pyramid::standard(),
            soft_k: self.config.soft_k,
        })
    }

    pub fn features(&self) -> Result<BTreeMap<String, Arc<FeatureSet>>> {
        let index: Vec<FileEntry> = self.store.read_artifact("features/index.json")?;
        let dir = self.store.path("features");
        let loaded: Vec<(String, Arc<FeatureSet>)> = index
            .par_iter()
            .map(|e| Ok((e.id.clone(), Arc::new(read_cbfh(&dir.join(&e.file))?))))
            .collect::<Result<_>>()?;
        Ok(loaded.into_iter().collect())
    }

    pub fn selections(&self) -> Result<Vec<SelectionEntry>> {
        self.store.read_artifact("selections.json")
    }

    pub fn detectors(&self) -> Result<Vec<(DetectorEntry, DetectorModel)>> {
        let index: Vec<DetectorEntry> = self.store.read_artifact("detectors/index.json")?;
        let dir = self.store.path("detectors");
        index
            .into_iter()
            .map(|e| {
                let model = DetectorModel::load(&dir.join(&e.file))?;
                Ok((e, model))
            })
            .collect()
    }

    pub fn plans(&self) -> Result<Vec<QueryPlan>> {
        let index: Vec<PlanEntry> = self.store.read_artifact("plans/index.json")?;
        index
            .iter()
            .map(|e| self.store.read_artifact(Path::new("plans").join(&e.file)))
            .collect()
    }

    pub fn representations(&self, split: &str) -> Result<Option<RepresentationSet>> {
        let path = self.store.path("representations").join(format!("{split}.cbvr"));
        if !path.exists() {
            return Ok(None);
        }
        RepresentationSet::load(&path).map(Some)
    }

    pub fn zero_shot_results(&self) -> Result<Vec<ZeroShotEntry>> {
        self.store.read_artifact("reports/zero_shot/index.json")
    }

    pub fn event_rankings(&self) -> Result<Vec<EventRanking>> {
        self.store.read_artifact("reports/detect/index.json")
    }

    pub fn eval_summary(&self) -> Result<EvalSummary> {
        self.store.read_artifact("reports/eval.json")
    }

    pub fn video_manifest(&self, split: &str) -> Result<Option<Vec<VideoManifestEntry>>> {
        let path = match split {
            "train" => self.config.paths.videos_train.clone(),
            _ => Some(self.config.paths.videos_test.clone()),
        };
        path.map(|p| load_video_manifest(&p)).transpose()
    }

    /// Ground-truth event per test video: the label file when configured,
    /// else the labels in the test manifest.
    pub fn test_labels(&self) -> Result<BTreeMap<String, String>> {
        if let Some(path) = &self.config.paths.test_labels {
            return load_labels(path);
        }
        Ok(self
            .video_manifest("test")?
            .unwrap_or_default()
            .into_iter()
            .filter_map(|v| v.label.map(|l| (v.video_id, l)))
            .collect())
    }

    // ---- stages --------------------------------------------------------

    fn ontology(&self, hash: &str) -> Result<(Value, String)> {
        let path = &self.config.paths.hierarchy;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tree = ConceptBankTree::load_hierarchy(&text)?;
        self.store.write_artifact("ontology.json", hash, &tree)?;
        let counts = tree.layer_counts();
        let text = format!(
            "categories {}\nsubcategories {}\nevents {}\n",
            counts.categories, counts.subcategories, counts.events
        );
        Ok((serde_json::to_value(counts)?, text))
    }

    fn discover(&self, hash: &str) -> Result<(Value, String)> {
        let tree = self.tree()?;
        let lexicon = self.lexicon()?;
        let records = load_manifest(&self.config.paths.images, &tree, &lexicon)?;
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let base = self.image_base();
        let images: Vec<ImageEntry> = records
            .iter()
            .map(|r| {
                Ok(ImageEntry {
                    image_id: r.image_id.clone(),
                    event: tree.node(r.event_id)?.name.clone(),
                    path: r
                        .image_path
                        .strip_prefix(&base)
                        .unwrap_or(&r.image_path)
                        .to_string_lossy()
                        .into_owned(),
                })
            })
            .collect::<Result<_>>()?;
        let mut candidates = Vec::new();
        let mut text = String::new();
        for event in tree.discovery_events() {
            let event_records: Vec<_> = records.iter().filter(|r| r.event_id == event.id).cloned().collect();
            if event_records.is_empty() {
                continue;
            }
            let found = discover_candidates(&event_records, &lexicon, self.config.top_k_tags)?;
            text.push_str(&format!("{}: {} images, {} candidates\n", event.name, event_records.len(), found.len()));
            candidates.extend(found.into_iter().map(|c| CandidateEntry {
                event: event.name.clone(),
                name: c.name,
                frequency: c.frequency,
                image_ids: c.image_ids,
            }));
        }
        self.store.write_artifact("images.json", hash, &images)?;
        self.store.write_artifact("candidates.json", hash, &candidates)?;
        Ok((json!({ "images": images.len(), "candidates": candidates.len() }), text))
    }

    fn codebook(&self, hash: &str) -> Result<(Value, String)> {
        let images = self.images()?;
        let base = self.image_base();
        let channels = &self.config.channels;
        let loaded = images
            .par_iter()
            .map(|img| load_descriptors(&base.join(&img.path), channels).map(|(blocks, _)| blocks))
            .collect::<Result<Vec<_>>>()?;
        let dir = self.store.fresh_dir("codebooks")?;
        let mut index = Vec::new();
        let mut text = String::new();
        for (m, channel) in channels.iter().enumerate() {
            let dim = loaded.first().map(|b| b[m].dim).unwrap_or(0);
            let mut data: Vec<f64> = Vec::new();
            for blocks in &loaded {
                let block = &blocks[m];
                if block.dim != dim {
                    return Err(Error::DimensionMismatch(format!("channel `{channel}` mixes dims {dim} and {}", block.dim)));
                }
                data.extend(block.vectors.iter().map(|&v| f64::from(v)));
            }
            let total = data.len().checked_div(dim).unwrap_or(0);
            let seed = derive_seed(self.config.seeds.codebook, channel);
            if self.config.codebook_sample > 0 && total > self.config.codebook_sample {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked = sample(&mut rng, total, self.config.codebook_sample).into_vec();
                picked.sort_unstable();
                data = picked.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].to_vec()).collect();
            }
            let codebook = train_codebook(channel, &data, dim, self.config.codebook_k, seed)?;
            let file = format!("{m:02}-{}.cbcb", slug(channel));
            write_cbcb(&dir.join(&file), &codebook)?;
            text.push_str(&format!("{channel}: k={} dim={dim} from {} descriptors\n", codebook.k, data.len() / dim.max(1)));
            index.push(FileEntry {
                id: channel.clone(),
                file,
            });
        }
        self.store.write_artifact("codebooks/index.json", hash, &index)?;
        Ok((json!({ "channels": index.len() }), text))
    }

    fn encode(&self, hash: &str) -> Result<(Value, String)> {
        let images = self.images()?;
        let encoder = self.encoder()?;
        let base = self.image_base();
        let dir = self.store.fresh_dir("features")?;
        let index: Vec<FileEntry> = images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let features = encoder.encode_path(&base.join(&img.path))?;
                let file = format!("{i:06}-{}.cbfh", slug(&img.image_id));
                write_cbfh(&dir.join(&file), &features)?;
                Ok(FileEntry {
                    id: img.image_id.clone(),
                    file,
                })
            })
            .collect::<Result<_>>()?;
        self.store.write_artifact("features/index.json", hash, &index)?;
        let dims: usize = encoder.codebooks.iter().map(|c| c.k * encoder.pyramid.block_count()).sum();
        Ok((
            json!({ "images": index.len(), "dimensions": dims }),
            format!("encoded {} images into {dims} dimensions\n", index.len()),
        ))
    }

    fn pools(&self, candidates: &[CandidateEntry], features: &BTreeMap<String, Arc<FeatureSet>>) -> Result<Vec<ConceptImagePool>> {
        candidates
            .par_iter()
            .map(|c| {
                let members = c
                    .image_ids
                    .iter()
                    .map(|id| member(id, features))
                    .collect::<Result<Vec<_>>>()?;
                ConceptImagePool::new(c.key(), members)
            })
            .collect()
    }

    fn select(&self, hash: &str) -> Result<(Value, String)> {
        let candidates = self.candidates()?;
        let features = self.features()?;
        let pools = self.pools(&candidates, &features)?;
        let c = &self.config;
        let entries: Vec<SelectionEntry> = pools
            .par_iter()
            .enumerate()
            .map(|(i, pool)| {
                let others: Vec<&ConceptImagePool> = pools.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p).collect();
                let selection = select_training_set(
                    pool,
                    &others,
                    c.s,
                    c.t,
                    derive_seed(c.seeds.select, &pool.concept),
                    c.positive_strategy,
                )?;
                Ok(SelectionEntry {
                    event: candidates[i].event.clone(),
                    name: candidates[i].name.clone(),
                    pool_size: pool.len(),
                    selection,
                })
            })
            .collect::<Result<_>>()?;
        self.store.write_artifact("selections.json", hash, &entries)?;
        let text = entries
            .iter()
            .map(|e| {
                format!(
                    "{}/{}: {} of {} positives, {} negatives\n",
                    e.event,
                    e.name,
                    e.selection.positives.len(),
                    e.pool_size,
                    e.selection.negatives.len()
                )
            })
            .collect();
        Ok((json!({ "concepts": entries.len() }), text))
    }

    fn verify(&self, hash: &str) -> Result<(Value, String)> {
        let selections = self.selections()?;
        let candidates = self.candidates()?;
        let features = self.features()?;
        let images = self.images()?;
        let config = self.config.visualness_config();
        let reports: Vec<VisualnessEntry> = selections
            .par_iter()
            .zip(&candidates)
            .map(|(entry, cand)| {
                let key = cand.key();
                let positives = entry
                    .selection
                    .positives
                    .iter()
                    .map(|p| member(&p.image_id, &features))
                    .collect::<Result<Vec<_>>>()?;
                let report = if positives.len() < 2 {
                    visualness_report(&key, 0.0, positives.len(), &config)
                } else {
                    let tagged: HashSet<&str> = cand.image_ids.iter().map(String::as_str).collect();
                    let negatives = images
                        .iter()
                        .filter(|img| !tagged.contains(img.image_id.as_str()))
                        .filter(|img| match self.config.visualness_negatives {
                            NegativeSource::Global => true,
                            NegativeSource::Event => img.event == cand.event,
                        })
                        .map(|img| member(&img.image_id, &features))
                        .collect::<Result<Vec<_>>>()?;
                    verify_visualness(&key, &positives, &negatives, &config, derive_seed(self.config.seeds.verify, &key))?
                };
                Ok(VisualnessEntry {
                    event: cand.event.clone(),
                    name: cand.name.clone(),
                    report,
                })
            })
            .collect::<Result<_>>()?;

        let mut bank = self.tree()?;
        let mut by_event: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in reports.iter().filter(|r| r.report.pass) {
            by_event.entry(r.event.as_str()).or_default().push(r.name.as_str());
        }
        let events: Vec<(NodeId, String)> = bank.events().iter().map(|e| (e.id, e.name.clone())).collect();
        for (id, name) in events {
            if let Some(names) = by_event.get(name.as_str()) {
                bank.attach_concepts(id, names)?;
            }
        }
        self.store.write_artifact("visualness.json", hash, &reports)?;
        self.store.write_artifact("bank.json", hash, &bank)?;
        let passed = reports.iter().filter(|r| r.report.pass).count();
        let mut text = String::new();
        for r in &reports {
            text.push_str(&format!(
                "{}/{}: cv_ap {:.4} images {} {}\n",
                r.event,
                r.name,
                r.report.cv_ap,
                r.report.training_image_count,
                if r.report.pass { "pass" } else { "fail" }
            ));
        }
        Ok((json!({ "candidates": reports.len(), "passed": passed }), text))
    }

    fn train(&self, hash: &str) -> Result<(Value, String)> {
        let bank = self.bank()?;
        let selections = self.selections()?;
        let features = self.features()?;
        let by_key: HashMap<String, &SelectionEntry> =
            selections.iter().map(|s| (format!("{}/{}", s.event, s.name), s)).collect();
        let concepts: Vec<(NodeId, String)> = bank
            .concepts()
            .iter()
            .map(|c| Ok((c.id, bank.concept_key(c.id)?)))
            .collect::<Result<_>>()?;
        let dir = self.store.fresh_dir("detectors")?;
        let index: Vec<DetectorEntry> = concepts
            .par_iter()
            .enumerate()
            .map(|(i, (id, key))| {
                let entry = by_key.get(key).ok_or_else(|| Error::MissingUpstream(format!("select ({key})")))?;
                let positives = entry
                    .selection
                    .positives
                    .iter()
                    .map(|p| member(&p.image_id, &features))
                    .collect::<Result<Vec<_>>>()?;
                let negatives = entry
                    .selection
                    .negatives
                    .iter()
                    .map(|n| member(&n.image_id, &features))
                    .collect::<Result<Vec<_>>>()?;
                let model = train_detector(
                    key,
                    &positives,
                    &negatives,
                    &self.config.detector_config(derive_seed(self.config.seeds.train, key)),
                )?;
                let file = format!("{i:04}-{}.cbdm", slug(key));
                model.save(&dir.join(&file))?;
                Ok(DetectorEntry {
                    key: key.clone(),
                    concept: *id,
                    file,
                })
            })
            .collect::<Result<_>>()?;
        self.store.write_artifact("detectors/index.json", hash, &index)?;
        Ok((json!({ "detectors": index.len() }), format!("trained {} concept detectors\n", index.len())))
    }

    /// Event names to build query plans for.
    pub fn query_events(&self) -> Result<Vec<String>> {
        let mut events = BTreeSet::new();
        if let Some(train) = self.video_manifest("train")? {
            events.extend(train.into_iter().filter_map(|v| v.label));
        }
        events.extend(self.test_labels()?.into_values());
        if events.is_empty() {
            events.extend(self.bank()?.discovery_events().iter().map(|e| e.name.clone()));
        }
        Ok(events.into_iter().collect())
    }

    pub fn matcher(&self) -> Result<SemanticMatcher> {
        let mut provider = SimilarityProvider::load_pairs(&self.config.paths.similarity)?;
        if let Some(path) = &self.config.paths.embeddings {
            provider.load_embeddings(path)?;
        }
        Ok(SemanticMatcher::new(provider, self.lexicon()?))
    }

    fn match_queries(&self, hash: &str) -> Result<(Value, String)> {
        let bank = self.bank()?;
        let matcher = self.matcher()?;
        self.store.fresh_dir("plans")?;
        let mut index = Vec::new();
        let mut text = String::new();
        for (i, event) in self.query_events()?.iter().enumerate() {
            let plan = matcher.select_concepts(event, &bank, self.config.n)?;
            let file = format!("{i:03}-{}.json", slug(event));
            self.store.write_artifact(Path::new("plans").join(&file), hash, &plan)?;
            let positive = plan.selections.iter().filter(|s| s.score > 0.0).count();
            text.push_str(&format!("{event}: {} selected, {positive} with positive relevance\n", plan.selections.len()));
            index.push(PlanEntry {
                event: event.clone(),
                file,
            });
        }
        self.store.write_artifact("plans/index.json", hash, &index)?;
        Ok((json!({ "plans": index.len() }), text))
    }

    fn represent(&self, hash: &str) -> Result<(Value, String)> {
        let detectors = self.detectors()?;
        let encoder = self.encoder()?;
        let models: Vec<&DetectorModel> = detectors.iter().map(|(_, m)| m).collect();
        let concepts: Vec<String> = detectors.iter().map(|(e, _)| e.key.clone()).collect();
        let dir = self.store.fresh_dir("representations")?;
        let mut text = String::new();
        let mut summary = BTreeMap::new();
        for split in ["train", "test"] {
            let Some(videos) = self.video_manifest(split)? else { continue };
            let reps = videos
                .par_iter()
                .map(|v| represent(v, &models, &encoder, self.config.m))
                .collect::<Result<Vec<_>>>()?;
            let set = RepresentationSet {
                concepts: concepts.clone(),
                videos: reps,
            }
            .quantized();
            set.save(&dir.join(format!("{split}.cbvr")))?;
            text.push_str(&format!("{split}: {} videos over {} concepts\n", set.videos.len(), concepts.len()));
            summary.insert(split, set.videos.len());
        }
        self.store.write_artifact("representations/index.json", hash, &summary)?;
        Ok((json!(summary), text))
    }

    fn test_set(&self) -> Result<RepresentationSet> {
        self.representations("test")?
            .ok_or_else(|| Error::MissingUpstream("represent".into()))
    }

    fn retrieve(&self, hash: &str) -> Result<(Value, String)> {
        let plans = self.plans()?;
        let videos = UnlabeledVideos::new(self.test_set()?);
        let dir = self.store.fresh_dir("reports/zero_shot")?;
        let mut entries = Vec::new();
        let mut text = String::new();
        for (i, plan) in plans.iter().enumerate() {
            let result = match zero_shot_retrieve(plan, &videos) {
                Ok(r) => Some(r),
                Err(Error::QueryUnmatched(q)) => {
                    log::warn!("query `{q}` matched no concept");
                    None
                }
                Err(e) => return Err(e),
            };
            if let Some(r) = &result {
                write_text(&dir.join(format!("{i:03}-{}.tsv", slug(&plan.query))), &r.to_tsv())?;
                text.push_str(&format!("{}: fused {} concept lists over {} videos\n", plan.query, r.d, r.n));
            } else {
                text.push_str(&format!("{}: unmatched\n", plan.query));
            }
            entries.push(ZeroShotEntry {
                event: plan.query.clone(),
                result,
            });
        }
        self.store.write_artifact("reports/zero_shot/index.json", hash, &entries)?;
        Ok((json!({ "queries": entries.len() }), text))
    }

    fn detect(&self, hash: &str) -> Result<(Value, String)> {
        let dir = self.store.fresh_dir("reports/detect")?;
        self.store.fresh_dir("event_detectors")?;
        let Some(train) = self.representations("train")? else {
            self.store.write_artifact("reports/detect/index.json", hash, &Vec::<EventRanking>::new())?;
            return Ok((json!({ "events": 0 }), "no training videos; supervised detection skipped\n".into()));
        };
        let test = self.test_set()?;
        let plans = self.plans()?;
        let mut seen = HashSet::new();
        let layout: Vec<String> = plans
            .iter()
            .flat_map(|p| p.selections.iter().map(|s| s.key()))
            .filter(|k| seen.insert(k.clone()))
            .collect();
        let rows = gather_rows(&train, &layout)?;
        let ids: Vec<String> = train.videos.iter().map(|v| v.video_id.clone()).collect();
        let detectors: Vec<Option<EventDetector>> = plans
            .par_iter()
            .map(|plan| {
                let labels: Vec<bool> = train.videos.iter().map(|v| v.label.as_deref() == Some(plan.query.as_str())).collect();
                if !labels.iter().any(|&l| l) {
                    log::warn!("event `{}` has no training videos", plan.query);
                    return Ok(None);
                }
                let seed = derive_seed(self.config.seeds.detect, &plan.query);
                train_event_detector(&plan.query, &layout, &rows, &ids, &labels, self.config.event_folds, seed).map(Some)
            })
            .collect::<Result<_>>()?;
        let detectors: Vec<EventDetector> = detectors.into_iter().flatten().collect();
        for (i, d) in detectors.iter().enumerate() {
            self.store
                .write_artifact(Path::new("event_detectors").join(format!("{i:03}-{}.json", slug(&d.event))), hash, d)?;
        }
        let rankings = detect_events(&detectors, &test)?;
        let mut text = String::new();
        for (i, r) in rankings.iter().enumerate() {
            write_text(
                &dir.join(format!("{i:03}-{}.tsv", slug(&r.event))),
                &ranked_tsv(r.videos.iter().map(|(id, s)| (id.as_str(), *s))),
            )?;
            text.push_str(&format!("{}: ranked {} videos\n", r.event, r.videos.len()));
        }
        self.store.write_artifact("reports/detect/index.json", hash, &rankings)?;
        Ok((json!({ "events": rankings.len() }), text))
    }

    fn eval(&self, hash: &str) -> Result<(Value, String)> {
        let labels = self.test_labels()?;
        let zero_shot = self.zero_shot_results()?;
        let test = self.test_set()?;
        let mut all_ids: Vec<String> = test.videos.iter().map(|v| v.video_id.clone()).collect();
        all_ids.sort();
        let mut zs = BTreeMap::new();
        for entry in &zero_shot {
            let ordering: Vec<String> = match &entry.result {
                Some(r) => r.ranking.iter().map(|v| v.video_id.clone()).collect(),
                None => all_ids.clone(),
            };
            match ranking_ap(&ordering, &|id| labels.get(id).map(String::as_str) == Some(entry.event.as_str())) {
                Ok(ap) => {
                    zs.insert(entry.event.clone(), ap);
                }
                Err(Error::NoRelevant) => log::warn!("event `{}` has no relevant test videos", entry.event),
                Err(e) => return Err(e),
            }
        }
        let zero_shot = EvalReport::from_aps(zs)?;
        let mut sup = BTreeMap::new();
        for r in self.event_rankings()? {
            let ordering: Vec<&str> = r.videos.iter().map(|(id, _)| id.as_str()).collect();
            if let Ok(ap) = ranking_ap(&ordering, &|id| labels.get(id).map(String::as_str) == Some(r.event.as_str())) {
                sup.insert(r.event.clone(), ap);
            }
        }
        let supervised = if sup.is_empty() { None } else { Some(EvalReport::from_aps(sup)?) };
        let summary = EvalSummary { zero_shot, supervised };
        self.store.write_artifact("reports/eval.json", hash, &summary)?;
        let mut text = format!("zero-shot retrieval\n{}", summary.zero_shot.render());
        if let Some(s) = &summary.supervised {
            text.push_str(&format!("\nsupervised detection\n{}", s.render()));
        }
        Ok((serde_json::to_value(&summary)?, text))
    }

    fn recount(&self, hash: &str) -> Result<(Value, String)> {
        let test = self.test_set()?;
        let k = self.config.recount_k;
        let entries: Vec<RecountEntry> = test
            .videos
            .iter()
            .map(|v| RecountEntry {
                video_id: v.video_id.clone(),
                concepts: recount(&test.concepts, &v.scores, k),
            })
            .collect();
        self.store.write_artifact("reports/recount.json", hash, &entries)?;
        let mut text = String::new();
        for e in &entries {
            let names: Vec<String> = e.concepts.iter().map(|(c, s)| format!("{c} ({s:.3})")).collect();
            text.push_str(&format!("{}: {}\n", e.video_id, names.join(", ")));
        }
        Ok((json!({ "videos": entries.len() }), text))
    }
}

fn member(id: &str, features: &BTreeMap<String, Arc<FeatureSet>>) -> Result<PoolMember> {
    let features = features
        .get(id)
        .ok_or_else(|| Error::MissingFile(PathBuf::from(format!("features of image `{id}`"))))?;
    Ok(PoolMember {
        image_id: id.to_string(),
        features: Arc::clone(features),
    })
}

/// `video_id<TAB>event` rows.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(id), Some(event), None) => {
                if lineno == 0 && id == "video_id" {
                    continue;
                }
                labels.insert(id.trim().to_string(), event.trim().to_string());
            }
            _ => {
                return Err(Error::Malformed(format!(
                    "{}:{}: expected video_id<TAB>event",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(labels)
}

/// Loads plan or returns the parsed representation; convenience for tools.
pub fn read_plan(path: &Path) -> Result<QueryPlan> {
    read_json(path)
}
