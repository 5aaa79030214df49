//! Synthetic corpus generator: a small hierarchy, per-concept descriptor
//! clusters written as CBFV files, tagged image manifests with planted
//! outliers and noise tags, video manifests and a similarity table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encode::formats::write_cbfv;
use crate::encode::DescriptorBlock;
use crate::error::{Error, Result};
use crate::ontology::{CategoryEntry, EventEntry, HierarchyDocument, SubcategoryEntry};
use crate::pipeline::config::{Paths, PipelineConfig};
use crate::pipeline::store::{write_json, write_text};

struct Theme {
    category: &'static str,
    subcategory: &'static str,
    event: &'static str,
    article: &'static str,
    concepts: [&'static str; 3],
}

const THEMES: [Theme; 4] = [
    Theme {
        category: "outdoor",
        subcategory: "water sports",
        event: "surfing a wave",
        article: "surfing",
        concepts: ["surfboard", "wetsuit", "beach"],
    },
    Theme {
        category: "outdoor",
        subcategory: "mountain sports",
        event: "climbing a rock",
        article: "rock climbing",
        concepts: ["cliff", "rope", "harness"],
    },
    Theme {
        category: "household",
        subcategory: "pets",
        event: "grooming a dog",
        article: "dog grooming",
        concepts: ["leash", "brush", "towel"],
    },
    Theme {
        category: "household",
        subcategory: "kitchen",
        event: "baking a cake",
        article: "baking",
        concepts: ["oven", "frosting", "flour"],
    },
];

/// Word pairs linking each query to its own event's concepts and ancestors.
const SIMILARITY: &[(&str, &str, f64)] = &[
    ("surf", "surfboard", 0.9),
    ("surf", "wetsuit", 0.7),
    ("wave", "beach", 0.6),
    ("surf", "water", 0.8),
    ("surf", "sport", 0.9),
    ("surf", "outdoor", 0.7),
    ("rock", "cliff", 0.9),
    ("climb", "rope", 0.8),
    ("climb", "harness", 0.7),
    ("climb", "mountain", 0.8),
    ("climb", "sport", 0.7),
    ("climb", "outdoor", 0.8),
    ("dog", "leash", 0.8),
    ("groom", "brush", 0.7),
    ("groom", "towel", 0.5),
    ("dog", "pet", 0.9),
    ("dog", "household", 0.6),
    ("cake", "frosting", 0.9),
    ("bake", "oven", 0.9),
    ("bake", "flour", 0.8),
    ("bake", "kitchen", 0.9),
    ("bake", "household", 0.7),
];

const LEMMAS: &[(&str, &str)] = &[
    ("surfing", "surf"),
    ("climbing", "climb"),
    ("grooming", "groom"),
    ("baking", "bake"),
    ("sports", "sport"),
    ("pets", "pet"),
    ("waves", "wave"),
    ("dogs", "dog"),
    ("cakes", "cake"),
    ("ropes", "rope"),
    ("towels", "towel"),
];

const STOPWORDS: &[&str] = &["a", "an", "the", "of", "and", "in", "my"];
const CAMERA_TAGS: &[&str] = &["nikon", "canon", "iphone", "dsc"];
const NOISE_TAGS: &[&str] = &["summer", "friends", "vacation"];
const CHANNELS: [&str; 2] = ["shape", "color"];
const GRID: (usize, usize) = (9, 5);
const STEP: f32 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub seed: u64,
    /// At most four.
    pub events: usize,
    /// At most three.
    pub concepts_per_event: usize,
    pub images_per_concept: usize,
    /// Share of each concept's images whose content belongs to a confuser
    /// concept of another event.
    pub outlier_fraction: f64,
    /// Probability that an image carries each cross-event noise tag.
    pub noise_tag_rate: f64,
    pub train_videos_per_event: usize,
    pub test_videos_per_event: usize,
    pub frames_per_video: usize,
    pub descriptor_dim: usize,
    pub prototypes_per_concept: usize,
    pub background_prototypes: usize,
    pub patch_noise: f64,
    /// Probability that a video frame shows one of its own event's concepts.
    pub own_frame_rate: f64,
    /// Own-event concepts shown together in one such frame.
    pub concepts_per_frame: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 7,
            events: 4,
            concepts_per_event: 3,
            images_per_concept: 100,
            outlier_fraction: 0.3,
            noise_tag_rate: 0.08,
            train_videos_per_event: 20,
            test_videos_per_event: 40,
            frames_per_video: 10,
            descriptor_dim: 8,
            prototypes_per_concept: 3,
            background_prototypes: 6,
            patch_noise: 0.45,
            own_frame_rate: 0.55,
            concepts_per_frame: 1,
        }
    }
}

/// Where the generated files landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLayout {
    pub root: PathBuf,
    pub config: PathBuf,
    pub events: Vec<String>,
    pub concepts: Vec<String>,
    pub image_count: usize,
    pub outlier_count: usize,
}

/// Planted ground truth for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedImage {
    pub image_id: String,
    /// `event/concept` key of the tag.
    pub concept: String,
    /// Key of the concept whose content the image shows.
    pub content: String,
}

impl PlantedImage {
    pub fn is_outlier(&self) -> bool {
        self.concept != self.content
    }
}

/// Pipeline settings scaled to the fixture's size.
pub fn fixture_config(spec: &FixtureSpec) -> PipelineConfig {
    let genuine = spec.images_per_concept - (spec.images_per_concept as f64 * spec.outlier_fraction).round() as usize;
    let s = (genuine * 6 / 7).max(2);
    PipelineConfig {
        s,
        t: 3 * s,
        m: spec.frames_per_video.div_ceil(2).max(1),
        min_training_images: (s * 5 / 6).max(1),
        codebook_k: 48,
        codebook_sample: 20_000,
        recount_k: 3,
        channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
        paths: Paths {
            hierarchy: "hierarchy.json".into(),
            images: "images.tsv".into(),
            stopwords: "lexicon/stopwords.txt".into(),
            meaningless_words: "lexicon/meaningless.txt".into(),
            lemmas: "lexicon/lemmas.tsv".into(),
            vocabulary: "lexicon/vocabulary.txt".into(),
            similarity: "similarity.tsv".into(),
            embeddings: None,
            videos_train: Some("videos/train.tsv".into()),
            videos_test: "videos/test.tsv".into(),
            test_labels: Some("videos/test_labels.tsv".into()),
        },
        ..PipelineConfig::default()
    }
}

struct Clusters {
    /// `[concept][channel][prototype]` vectors.
    concepts: Vec<Vec<Vec<Vec<f32>>>>,
    /// `[channel][prototype]`.
    background: Vec<Vec<Vec<f32>>>,
}

impl Clusters {
    fn new(spec: &FixtureSpec, count: usize, rng: &mut ChaCha8Rng) -> Self {
        let proto = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..spec.descriptor_dim).map(|_| 2.0 * rng.sample::<f32, _>(StandardNormal)).collect()
        };
        let concepts = (0..count)
            .map(|_| {
                (0..CHANNELS.len())
                    .map(|_| (0..spec.prototypes_per_concept).map(|_| proto(rng)).collect())
                    .collect()
            })
            .collect();
        let background = (0..CHANNELS.len())
            .map(|_| (0..spec.background_prototypes).map(|_| proto(rng)).collect())
            .collect();
        Clusters { concepts, background }
    }

    /// One image or frame: each patch shows one of `content` with
    /// probability `share`, else background.
    fn render(&self, spec: &FixtureSpec, content: &[usize], share: f64, rng: &mut ChaCha8Rng) -> Vec<DescriptorBlock> {
        let positions: Vec<(f32, f32)> = (0..GRID.1)
            .flat_map(|r| (0..GRID.0).map(move |c| (STEP * (c as f32 + 1.0), STEP * (r as f32 + 1.0))))
            .collect();
        let source: Vec<Option<usize>> = positions
            .iter()
            .map(|_| {
                if content.is_empty() || rng.random::<f64>() >= share {
                    None
                } else if content.len() == 1 {
                    Some(content[0])
                } else {
                    Some(content[rng.random_range(0..content.len())])
                }
            })
            .collect();
        (0..CHANNELS.len())
            .map(|ch| {
                let mut vectors = Vec::with_capacity(positions.len() * spec.descriptor_dim);
                for &from in &source {
                    let protos = match from {
                        Some(c) => &self.concepts[c][ch],
                        None => &self.background[ch],
                    };
                    let p = &protos[rng.random_range(0..protos.len())];
                    vectors.extend(p.iter().map(|&v| v + spec.patch_noise as f32 * rng.sample::<f32, _>(StandardNormal)));
                }
                DescriptorBlock::new(CHANNELS[ch], spec.descriptor_dim, positions.clone(), vectors)
            })
            .collect::<Result<_>>()
            .expect("fixture blocks are consistent")
    }
}

/// `count` distinct concepts of the event starting at `first`.
fn own_concepts(first: usize, cpe: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count <= 1 {
        return vec![first + rng.random_range(0..cpe)];
    }
    let mut all: Vec<usize> = (first..first + cpe).collect();
    all.shuffle(rng);
    all.truncate(count.min(cpe));
    all.sort_unstable();
    all
}

fn write_frame(dir: &Path, blocks: &[DescriptorBlock]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for block in blocks {
        write_cbfv(&dir.join(format!("{}.cbfv", block.channel)), block)?;
    }
    Ok(())
}

/// Writes a complete synthetic corpus under `root`, replacing any previous
/// fixture there.
pub fn generate_fixture(spec: &FixtureSpec, root: &Path) -> Result<FixtureLayout> {
    if spec.events == 0 || spec.events > THEMES.len() {
        return Err(Error::InvalidArgument(format!("fixture supports 1 to {} events", THEMES.len())));
    }
    if spec.concepts_per_event == 0 || spec.concepts_per_event > 3 {
        return Err(Error::InvalidArgument("fixture supports 1 to 3 concepts per event".into()));
    }
    if spec.images_per_concept == 0 || spec.frames_per_video == 0 || spec.descriptor_dim == 0 {
        return Err(Error::InvalidArgument("fixture counts must be positive".into()));
    }
    if !(0.0..0.5).contains(&spec.outlier_fraction) {
        return Err(Error::InvalidArgument("outlier fraction must lie in [0, 0.5)".into()));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for sub in ["images", "videos", "lexicon"] {
        let dir = root.join(sub);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let themes = &THEMES[..spec.events];
    let cpe = spec.concepts_per_event;
    let concept_keys: Vec<String> = themes
        .iter()
        .flat_map(|t| t.concepts[..cpe].iter().map(move |c| format!("{}/{c}", t.event)))
        .collect();
    let clusters = Clusters::new(spec, concept_keys.len(), &mut rng);

    write_hierarchy(themes, root)?;
    write_lexicon(themes, cpe, root)?;
    let mut sim = String::new();
    for (a, b, v) in SIMILARITY {
        writeln!(sim, "{a}\t{b}\t{v}").expect("string write");
    }
    write_text(&root.join("similarity.tsv"), &sim)?;

    // Images.
    let mut manifest = String::from("image_id\tevent\tpath\ttags\n");
    let mut planted = Vec::new();
    let outliers_per = (spec.images_per_concept as f64 * spec.outlier_fraction).round() as usize;
    let mut serial = 0usize;
    for (e, theme) in themes.iter().enumerate() {
        for j in 0..cpe {
            let concept = e * cpe + j;
            let confuser = if spec.events > 1 { ((e + 1) % spec.events) * cpe + j } else { concept };
            let mut kinds: Vec<bool> = (0..spec.images_per_concept).map(|i| i < outliers_per).collect();
            kinds.shuffle(&mut rng);
            for outlier in kinds {
                let id = format!("img{serial:05}");
                serial += 1;
                let content = if outlier { confuser } else { concept };
                let share = rng.random_range(0.45..0.8);
                let blocks = if outlier && confuser == concept {
                    clusters.render(spec, &[], 0.0, &mut rng)
                } else {
                    clusters.render(spec, &[content], share, &mut rng)
                };
                write_frame(&root.join("images").join(&id), &blocks)?;
                let mut tags = vec![theme.concepts[j].to_string()];
                if rng.random::<f64>() < 0.3 {
                    tags.push(CAMERA_TAGS[rng.random_range(0..CAMERA_TAGS.len())].to_string());
                }
                if rng.random::<f64>() < 0.2 {
                    tags.push("the".into());
                }
                if rng.random::<f64>() < 0.1 {
                    tags.push(format!("zq{}", rng.random_range(0..1000)));
                }
                for noise in NOISE_TAGS {
                    if rng.random::<f64>() < spec.noise_tag_rate {
                        tags.push(noise.to_string());
                    }
                }
                tags.shuffle(&mut rng);
                writeln!(manifest, "{id}\t{}\timages/{id}\t{}", theme.event, tags.join(",")).expect("string write");
                planted.push(PlantedImage {
                    image_id: id,
                    concept: concept_keys[concept].clone(),
                    content: if outlier && confuser == concept {
                        "background".into()
                    } else {
                        concept_keys[content].clone()
                    },
                });
            }
        }
    }
    write_text(&root.join("images.tsv"), &manifest)?;
    write_json(&root.join("planted.json"), &planted)?;

    // Videos.
    for (split, per_event) in [("train", spec.train_videos_per_event), ("test", spec.test_videos_per_event)] {
        let total = per_event * spec.events;
        let mut labels: Vec<usize> = (0..total).map(|i| i / per_event.max(1)).collect();
        labels.shuffle(&mut rng);
        let mut manifest = String::from("video_id\tlabel\tframes\n");
        let mut truth = String::new();
        for (v, &event) in labels.iter().enumerate() {
            let id = format!("{split}{v:04}");
            let dir = root.join("videos").join(split).join(&id);
            for f in 0..spec.frames_per_video {
                let roll = rng.random::<f64>();
                let content: Vec<usize> = if roll < spec.own_frame_rate {
                    own_concepts(event * cpe, cpe, spec.concepts_per_frame, &mut rng)
                } else if roll < spec.own_frame_rate + (1.0 - spec.own_frame_rate) * 0.7 {
                    vec![rng.random_range(0..concept_keys.len())]
                } else {
                    Vec::new()
                };
                let share = rng.random_range(0.3..0.7);
                let blocks = clusters.render(spec, &content, share, &mut rng);
                write_frame(&dir.join(format!("f{f:03}")), &blocks)?;
            }
            let label = if split == "train" { themes[event].event } else { "-" };
            writeln!(manifest, "{id}\t{label}\t{split}/{id}").expect("string write");
            writeln!(truth, "{id}\t{}", themes[event].event).expect("string write");
        }
        write_text(&root.join("videos").join(format!("{split}.tsv")), &manifest)?;
        if split == "test" {
            write_text(&root.join("videos/test_labels.tsv"), &truth)?;
        }
    }

    let config_path = root.join("config.json");
    write_json(&config_path, &fixture_config(spec))?;
    write_json(&root.join("fixture.json"), spec)?;
    Ok(FixtureLayout {
        root: root.to_path_buf(),
        config: config_path,
        events: themes.iter().map(|t| t.event.to_string()).collect(),
        concepts: concept_keys,
        image_count: planted.len(),
        outlier_count: planted.iter().filter(|p| p.is_outlier()).count(),
    })
}

fn write_hierarchy(themes: &[Theme], root: &Path) -> Result<()> {
    let mut categories: Vec<CategoryEntry> = Vec::new();
    for t in themes {
        let event = EventEntry {
            name: t.event.into(),
            visually_detectable: true,
            article_names: vec![t.article.into()],
        };
        let cat = match categories.iter_mut().find(|c| c.name == t.category) {
            Some(c) => c,
            None => {
                categories.push(CategoryEntry {
                    name: t.category.into(),
                    subcategories: Vec::new(),
                });
                categories.last_mut().expect("just pushed")
            }
        };
        cat.subcategories.push(SubcategoryEntry {
            name: t.subcategory.into(),
            events: vec![event],
        });
    }
    write_json(&root.join("hierarchy.json"), &HierarchyDocument { categories })
}

fn write_lexicon(themes: &[Theme], cpe: usize, root: &Path) -> Result<()> {
    let lines = |words: &[&str]| words.iter().map(|w| format!("{w}\n")).collect::<String>();
    let dir = root.join("lexicon");
    write_text(&dir.join("stopwords.txt"), &lines(STOPWORDS))?;
    write_text(&dir.join("meaningless.txt"), &lines(CAMERA_TAGS))?;
    let lemmas: String = LEMMAS.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    write_text(&dir.join("lemmas.tsv"), &lemmas)?;
    let mut vocab: Vec<&str> = themes.iter().flat_map(|t| t.concepts[..cpe].iter().copied()).collect();
    vocab.extend(NOISE_TAGS);
    vocab.extend(LEMMAS.iter().map(|(_, b)| *b));
    vocab.sort_unstable();
    vocab.dedup();
    write_text(&dir.join("vocabulary.txt"), &lines(&vocab))
}

/// Reads the planted ground truth written next to a fixture.
pub fn load_planted(root: &Path) -> Result<Vec<PlantedImage>> {
    crate::pipeline::store::read_json(&root.join("planted.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FixtureSpec {
        FixtureSpec {
            events: 2,
            concepts_per_event: 2,
            images_per_concept: 10,
            train_videos_per_event: 2,
            test_videos_per_event: 3,
            frames_per_video: 2,
            ..FixtureSpec::default()
        }
    }

    fn digest_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_fixture(&small(), a.path()).unwrap();
        generate_fixture(&small(), b.path()).unwrap();
        assert_eq!(digest_tree(a.path()), digest_tree(b.path()));
    }

    #[test]
    fn counts_follow_the_spec() {
        let dir = tempfile::tempdir().unwrap();
        let layout = generate_fixture(&FixtureSpec { images_per_concept: 4, frames_per_video: 1, ..FixtureSpec::default() }, dir.path()).unwrap();
        assert_eq!(layout.events.len(), 4);
        assert_eq!(layout.concepts.len(), 12);
        assert_eq!(layout.image_count, 48);
        let config = PipelineConfig::load(&layout.config).unwrap();
        assert!(config.paths.images.exists());
        assert!(config.paths.videos_test.exists());
    }

    #[test]
    fn rejects_unsupported_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec { events: 5, ..small() };
        assert!(matches!(generate_fixture(&spec, dir.path()), Err(Error::InvalidArgument(_))));
    }
}
