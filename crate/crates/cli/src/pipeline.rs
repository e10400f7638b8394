//! End-to-end run: ingest, expand, marks, fit, topics, network, coherence,
//! keyword sub-topic refits and a simulation from the fitted parameters.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use hbtm_core::corpus::{
    build_dictionary, default_stopwords, expand_keywords, filter_by_keywords, ingest_posts, read_stopwords,
    to_marked_events, tokenize_posts, ExpansionConfig, InputFormat,
};
use hbtm_core::simulator::{branching_ratio, observed};
use hbtm_core::topics::{ClusterOptions, ForestMode};
use hbtm_core::{
    extract_clusters, fit, sample_forest, simulate, Dictionary, FitConfig, NodeRoster, TokenizedPost,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::{ArtifactWriter, Manifest};
use crate::commands::{
    branching_bytes, coherence_of, guess_format, json_bytes, jsonl_bytes, network_outputs, parse_epoch,
    read_config, timeline_bytes, trace_bytes,
};
use crate::error::{CliError, CliResult};

/// Pipeline settings, read from one JSON document. Relative paths are taken
/// relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw posts (JSONL or CSV).
    pub input: PathBuf,
    /// Guessed from the extension of `input` when absent.
    pub format: Option<InputFormat>,
    /// Day zero of the time axis (YYYY-MM-DD).
    pub epoch: String,
    pub stopwords: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dict_size: usize,
    /// Seeds for keyword expansion; with none, every post is kept.
    pub keyword_seeds: Vec<String>,
    pub expansion: ExpansionConfig,
    pub fit: FitConfig,
    pub min_cluster_size: usize,
    pub subtopic_min_cluster_size: usize,
    pub network_threshold: f64,
    /// Keyword lists; each selects the posts containing any of its words for a separate fit.
    pub subtopics: Vec<Vec<String>>,
    pub forest_mode: ForestMode,
    pub forest_seed: u64,
    pub simulate: bool,
    pub simulation_seed: u64,
    pub top_k_words: usize,
    pub ranking_k: usize,
    /// Node attribute used for cluster summaries and graph coloring.
    pub attr_key: String,
    pub coherence_eps: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            format: None,
            epoch: "2020-01-01".into(),
            stopwords: None,
            out_dir: PathBuf::from("out"),
            dict_size: 425,
            keyword_seeds: Vec::new(),
            expansion: ExpansionConfig::default(),
            fit: FitConfig::default(),
            min_cluster_size: 11,
            subtopic_min_cluster_size: 2,
            network_threshold: hbtm_core::influence::DEFAULT_EDGE_THRESHOLD,
            subtopics: vec![
                vec!["risk".into()],
                vec!["vaccine".into(), "treatment".into()],
                vec!["test".into()],
            ],
            forest_mode: ForestMode::Sample,
            forest_seed: 0,
            simulate: true,
            simulation_seed: 7,
            top_k_words: 8,
            ranking_k: 10,
            attr_key: "party".into(),
            coherence_eps: 1.0,
        }
    }
}

impl PipelineConfig {
    /// Resolves relative paths against `base`.
    pub fn rebase(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.out_dir);
        if let Some(p) = self.stopwords.as_mut() {
            fix(p);
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.input.as_os_str().is_empty() {
            return bad("input is required".into());
        }
        for p in std::iter::once(&self.input).chain(self.stopwords.as_ref()) {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        parse_epoch(&self.epoch)?;
        if self.dict_size < 2 {
            return bad(format!("dict_size must be >= 2, got {}", self.dict_size));
        }
        if self.min_cluster_size == 0 || self.subtopic_min_cluster_size == 0 {
            return bad("cluster sizes must be >= 1".into());
        }
        if !(self.network_threshold >= 0.0) {
            return bad(format!("network_threshold must be >= 0, got {}", self.network_threshold));
        }
        if self.top_k_words == 0 || self.ranking_k == 0 {
            return bad("top_k_words and ranking_k must be >= 1".into());
        }
        if !(self.coherence_eps > 0.0) {
            return bad(format!("coherence_eps must be positive, got {}", self.coherence_eps));
        }
        if let Some(list) = self.subtopics.iter().find(|l| l.is_empty() || l.iter().any(|w| w.trim().is_empty())) {
            return bad(format!("sub-topic keyword list {list:?} has an empty entry"));
        }
        self.fit.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub events: usize,
    pub dict_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub clusters: usize,
    pub largest_cluster: usize,
    pub pruned_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtopicSummary {
    pub name: String,
    pub keywords: Vec<String>,
    pub fit: Option<FitSummary>,
    /// Why the sub-topic was not fitted.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub posts: usize,
    pub kept_posts: usize,
    pub keywords: usize,
    pub nodes: usize,
    pub full: FitSummary,
    pub subtopics: Vec<SubtopicSummary>,
    pub branching_ratio: f64,
    pub simulated_events: Option<usize>,
    #[serde(skip)]
    pub manifest: Option<Manifest>,
}

impl fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} posts, {} kept, {} events on {} nodes, W = {}",
            self.posts, self.kept_posts, self.full.events, self.nodes, self.full.dict_size
        )?;
        writeln!(
            f,
            "fit: {} iterations (converged: {}), log-likelihood {:.4}, branching ratio {:.3}",
            self.full.iterations, self.full.converged, self.full.log_likelihood, self.branching_ratio
        )?;
        writeln!(
            f,
            "{} clusters (largest {}), {} network edges",
            self.full.clusters, self.full.largest_cluster, self.full.pruned_edges
        )?;
        for s in &self.subtopics {
            match (&s.fit, &s.skipped) {
                (Some(fs), _) => writeln!(
                    f,
                    "sub-topic {}: {} events, {} clusters, {} edges",
                    s.name, fs.events, fs.clusters, fs.pruned_edges
                )?,
                (None, Some(why)) => writeln!(f, "sub-topic {}: skipped ({why})", s.name)?,
                (None, None) => {}
            }
        }
        if let Some(m) = &self.manifest {
            write!(f, "{} artifacts listed in the manifest", m.artifacts.len())?;
        }
        Ok(())
    }
}

/// Settings that differ between the full run and the sub-topic runs.
struct Analysis<'a> {
    prefix: &'a str,
    min_cluster_size: usize,
}

/// Marks, fit, topics, network and coherence for one set of posts.
fn analyse(
    config: &PipelineConfig,
    analysis: &Analysis,
    posts: &[TokenizedPost],
    dictionary: &Dictionary,
    roster: &NodeRoster,
    out: &mut ArtifactWriter,
) -> CliResult<(FitSummary, hbtm_core::ModelParams)> {
    let name = |f: &str| format!("{}{f}", analysis.prefix);
    let stage = |s: &str| CliError::stage(format!("{}{s}", analysis.prefix));

    let events = to_marked_events(posts, dictionary, roster).map_err(stage("marks"))?;
    out.write(&name("dictionary.txt"), dictionary.to_lines().as_bytes())?;
    out.write(&name("events.jsonl"), &jsonl_bytes(&events)?)?;

    let report = fit(&events, roster.len(), dictionary.len(), &config.fit).map_err(stage("fit"))?;
    out.write(&name("params.json"), &json_bytes(&report.final_params)?)?;
    out.write(&name("fit_trace.json"), &trace_bytes(&report)?)?;
    out.write(&name("branching.jsonl"), &branching_bytes(&report.branching)?)?;

    let forest = sample_forest(&report.branching, config.forest_mode, config.forest_seed);
    let options = ClusterOptions {
        min_size: analysis.min_cluster_size,
        top_k: config.top_k_words,
        attr_key: Some(config.attr_key.clone()),
    };
    let clusters = extract_clusters(&forest, &events, dictionary, Some(roster), &options).map_err(stage("topics"))?;
    out.write(&name("clusters.json"), &json_bytes(&clusters)?)?;
    out.write(&name("timeline.csv"), &timeline_bytes(&clusters, Some(roster))?)?;

    let net = network_outputs(
        &report.branching,
        &events,
        roster,
        Some(&report.final_params),
        config.network_threshold,
        config.ranking_k,
        &config.attr_key,
    )
    .map_err(|e| match e {
        CliError::Core(source) => CliError::Stage {
            stage: name("network"),
            source,
        },
        other => other,
    })?;
    out.write(&name("network.json"), &net.json)?;
    out.write(&name("network.dot"), &net.dot)?;
    out.write(&name("edges.csv"), &net.edges_csv)?;
    out.write(&name("rankings.csv"), &net.rankings_csv)?;
    out.write(&name("activity.csv"), &net.activity_csv)?;

    let coherence = coherence_of(&clusters, &events, dictionary, config.coherence_eps)?;
    out.write(&name("coherence.json"), &json_bytes(&coherence)?)?;

    let summary = FitSummary {
        events: events.len(),
        dict_size: dictionary.len(),
        iterations: report.iterations,
        converged: report.converged,
        log_likelihood: report.final_log_likelihood(),
        clusters: clusters.len(),
        largest_cluster: clusters.iter().map(|c| c.size).max().unwrap_or(0),
        pruned_edges: net.network.pruned_edges().len(),
    };
    Ok((summary, report.final_params))
}

fn subtopic_name(words: &[String]) -> String {
    words
        .iter()
        .map(|w| {
            w.chars()
                .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

/// Runs every stage and writes the artifacts under `config.out_dir`.
///
/// Files are written with a `.partial` suffix and renamed, with the manifest
/// written last, only when every stage has succeeded.
pub fn run_pipeline(config: &PipelineConfig) -> CliResult<PipelineSummary> {
    config.validate()?;
    let epoch = parse_epoch(&config.epoch)?;
    let mut out = ArtifactWriter::new(&config.out_dir)?;

    // ingest
    let stop = match &config.stopwords {
        Some(p) => read_stopwords(p).map_err(CliError::stage("ingest"))?,
        None => default_stopwords(),
    };
    let format = config.format.unwrap_or_else(|| guess_format(&config.input));
    let raw = ingest_posts(&config.input, epoch, format).map_err(CliError::stage("ingest"))?;
    let roster = NodeRoster::from_posts(&raw);
    let posts = tokenize_posts(raw, &stop);
    log::info!("ingested {} posts from {} nodes", posts.len(), roster.len());
    out.write("nodes.jsonl", &jsonl_bytes(roster.nodes())?)?;

    // expand
    let (kept, keywords) = if config.keyword_seeds.is_empty() {
        log::info!("no keyword seeds configured; keeping every post");
        (posts.clone(), BTreeSet::new())
    } else {
        let seeds: BTreeSet<String> = config.keyword_seeds.iter().map(|s| s.trim().to_lowercase()).collect();
        let exp = expand_keywords(&posts, &seeds, &config.expansion).map_err(CliError::stage("expand"))?;
        let kept = filter_by_keywords(&posts, &exp.keywords);
        (kept, exp.keywords)
    };
    if !keywords.is_empty() {
        let text: String = keywords.iter().map(|k| format!("{k}\n")).collect();
        out.write("keywords.txt", text.as_bytes())?;
    }
    if kept.is_empty() {
        return Err(CliError::Stage {
            stage: "expand".into(),
            source: hbtm_core::HbtmError::Domain("no post matches the keyword list".into()),
        });
    }

    // marks, fit, topics, network, coherence
    let dictionary = build_dictionary(&kept, config.dict_size).map_err(CliError::stage("marks"))?;
    let full_run = Analysis {
        prefix: "",
        min_cluster_size: config.min_cluster_size,
    };
    let (full, params) = analyse(config, &full_run, &kept, &dictionary, &roster, &mut out)?;

    // sub-topics share the full dictionary, restricted to their own vocabulary
    let mut subtopics = Vec::new();
    for words in &config.subtopics {
        let name = subtopic_name(words);
        let keys: BTreeSet<String> = words.iter().map(|w| w.trim().to_lowercase()).collect();
        let sub = filter_by_keywords(&kept, &keys);
        let vocab: HashSet<&str> = sub.iter().flat_map(|p| p.tokens.iter().map(String::as_str)).collect();
        let sub_dict = dictionary.restrict(|w| vocab.contains(w));
        let skipped = if sub.len() < 2 {
            Some(format!("{} matching posts", sub.len()))
        } else if sub_dict.is_empty() {
            Some("no dictionary word occurs in the matching posts".into())
        } else {
            None
        };
        let fit = match &skipped {
            Some(why) => {
                log::warn!("sub-topic {name} skipped: {why}");
                None
            }
            None => {
                let prefix = format!("subtopics/{name}/");
                let analysis = Analysis {
                    prefix: &prefix,
                    min_cluster_size: config.subtopic_min_cluster_size,
                };
                Some(analyse(config, &analysis, &sub, &sub_dict, &roster, &mut out)?.0)
            }
        };
        subtopics.push(SubtopicSummary {
            name,
            keywords: keys.into_iter().collect(),
            fit,
            skipped,
        });
    }

    // simulate
    let rho = branching_ratio(&params);
    let simulated_events = if !config.simulate {
        None
    } else if rho >= 1.0 {
        log::warn!("fitted branching ratio {rho} >= 1; skipping simulation");
        None
    } else {
        let sim = simulate(&params, params.background.t_end, config.simulation_seed)
            .map_err(CliError::stage("simulate"))?;
        out.write("simulated.jsonl", &jsonl_bytes(&observed(&sim))?)?;
        Some(sim.len())
    };

    let mut summary = PipelineSummary {
        posts: posts.len(),
        kept_posts: kept.len(),
        keywords: keywords.len(),
        nodes: roster.len(),
        full,
        subtopics,
        branching_ratio: rho,
        simulated_events,
        manifest: None,
    };
    out.write("summary.json", &json_bytes(&summary)?)?;
    summary.manifest = Some(out.finish()?);
    Ok(summary)
}

/// Reads a config file, rebases its paths and runs the pipeline.
pub fn run_from_file(path: &Path, out_dir: Option<&Path>) -> CliResult<PipelineSummary> {
    let config: PipelineConfig = read_config(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut config = config.rebase(base);
    if let Some(dir) = out_dir {
        config.out_dir = dir.to_path_buf();
    }
    run_pipeline(&config)
}
