use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptbank::pipeline::{generate_fixture, FixtureSpec, ModelStore, Pipeline, PipelineConfig, Stage};
use conceptbank::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cb", version, about = "Build an event concept bank and retrieve videos with it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model store directory.
    #[arg(long, default_value = "store")]
    store: PathBuf,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces every named seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Run even when upstream artifacts were built under another config.
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the category/subcategory/event hierarchy.
    Ontology(Common),
    /// Cleanse image tags and rank candidate concepts per event.
    Discover(Common),
    /// Train one k-means codebook per descriptor channel.
    Codebook(Common),
    /// Encode every image into pyramid histograms.
    Encode(Common),
    /// Choose positive and negative training images per candidate.
    Select(Common),
    /// Keep candidates whose detectors generalize.
    Verify(Common),
    /// Train the verified concept detectors.
    Train(Common),
    /// Select concepts for each event query, or for one ad hoc query.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: Option<String>,
        /// Concepts to keep for `--query`; defaults to the configured n.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Score test and training videos with the concept detectors.
    Represent(Common),
    /// Zero-shot retrieval by rank fusion.
    Retrieve(Common),
    /// Supervised event detection on concept scores.
    Detect(Common),
    /// Mean average precision of every ranking.
    Eval(Common),
    /// Top concepts per test video.
    Recount(Common),
    /// Run every stage in order.
    Run(Common),
    /// Write a synthetic corpus and a matching configuration.
    Fixture {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// JSON fixture spec; the count flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        events: Option<usize>,
        #[arg(long)]
        concepts: Option<usize>,
        #[arg(long)]
        images_per_concept: Option<usize>,
        #[arg(long)]
        test_videos: Option<usize>,
        #[arg(long)]
        train_videos: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = common.seed {
        let s = &mut config.seeds;
        s.codebook = seed;
        s.select = seed;
        s.verify = seed;
        s.train = seed;
        s.detect = seed;
    }
    if let Some(workers) = common.workers {
        config.workers = workers;
    }
    Ok(config)
}

fn pipeline(common: &Common) -> Result<Pipeline> {
    let config = load_config(common)?;
    let mut p = Pipeline::new(ModelStore::open(&common.store)?, config);
    p.force = common.force;
    Ok(p)
}

fn emit(format: Format, json: &serde_json::Value, text: &str) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(json)?),
        Format::Text => print!("{text}"),
    }
    Ok(())
}

fn run_stage(common: &Common, stage: Stage) -> Result<()> {
    let report = pipeline(common)?.run(stage)?;
    emit(common.format, &serde_json::to_value(&report)?, &report.text)
}

fn ad_hoc_match(common: &Common, query: &str, top: Option<usize>) -> Result<()> {
    let p = pipeline(common)?;
    let bank = p.bank()?;
    let plan = p.matcher()?.select_concepts(query, &bank, top.unwrap_or(p.config.n))?;
    let mut text = format!("{:<40} {:>10}\n", "concept", "relevance");
    for s in &plan.selections {
        text.push_str(&format!("{:<40} {:>10.4}\n", s.key(), s.score));
    }
    emit(common.format, &serde_json::to_value(&plan)?, &text)
}

fn fixture(out: &Path, spec: FixtureSpec, format: Format) -> Result<()> {
    let layout = generate_fixture(&spec, out)?;
    let text = format!(
        "fixture at {}\nevents {}\nconcepts {}\nimages {} ({} outliers)\nconfig {}\n",
        layout.root.display(),
        layout.events.len(),
        layout.concepts.len(),
        layout.image_count,
        layout.outlier_count,
        layout.config.display()
    );
    emit(format, &serde_json::to_value(&layout)?, &text)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ontology(c) => run_stage(&c, Stage::Ontology),
        Command::Discover(c) => run_stage(&c, Stage::Discover),
        Command::Codebook(c) => run_stage(&c, Stage::Codebook),
        Command::Encode(c) => run_stage(&c, Stage::Encode),
        Command::Select(c) => run_stage(&c, Stage::Select),
        Command::Verify(c) => run_stage(&c, Stage::Verify),
        Command::Train(c) => run_stage(&c, Stage::Train),
        Command::Match { common, query: Some(q), top } => ad_hoc_match(&common, &q, top),
        Command::Match { common, query: None, .. } => run_stage(&common, Stage::Match),
        Command::Represent(c) => run_stage(&c, Stage::Represent),
        Command::Retrieve(c) => run_stage(&c, Stage::Retrieve),
        Command::Detect(c) => run_stage(&c, Stage::Detect),
        Command::Eval(c) => run_stage(&c, Stage::Eval),
        Command::Recount(c) => run_stage(&c, Stage::Recount),
        Command::Run(c) => {
            let p = pipeline(&c)?;
            for stage in Stage::ALL {
                let report = p.run(stage)?;
                match c.format {
                    Format::Text => print!("== {}\n{}", report.stage, report.text),
                    Format::Json => println!("{}", serde_json::to_string(&report)?),
                }
            }
            Ok(())
        }
        Command::Fixture {
            out,
            spec,
            seed,
            events,
            concepts,
            images_per_concept,
            test_videos,
            train_videos,
            format,
        } => {
            let d = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text)?
                }
                None => FixtureSpec::default(),
            };
            let spec = FixtureSpec {
                seed: seed.unwrap_or(d.seed),
                events: events.unwrap_or(d.events),
                concepts_per_event: concepts.unwrap_or(d.concepts_per_event),
                images_per_concept: images_per_concept.unwrap_or(d.images_per_concept),
                test_videos_per_event: test_videos.unwrap_or(d.test_videos_per_event),
                train_videos_per_event: train_videos.unwrap_or(d.train_videos_per_event),
                ..d
            };
            fixture(&out, spec, format)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
