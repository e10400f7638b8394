//! Subcommand implementations and the output encoders they share with the pipeline.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use hbtm_core::corpus::{
    build_dictionary, default_stopwords, expand_keywords, filter_by_keywords, ingest_posts, read_stopwords,
    to_marked_events, tokenize_posts, ExpansionConfig, InputFormat, NodeInfo,
};
use hbtm_core::influence::{degree_rankings, rankings_csv, GRANGER_CAVEAT};
use hbtm_core::io::{read_events, read_jsonl_file, read_roster, write_jsonl};
use hbtm_core::simulator::observed;
use hbtm_core::topics::{
    coherence_report, mark_documents, timeline_export, write_timeline_csv, ClusterOptions, CoherenceReport,
};
use hbtm_core::{
    activity_decomposition, extract_clusters, fit, influence_network, sample_forest, simulate, BranchingMatrix,
    Dictionary, FitConfig, FitReport, InfluenceNetwork, MarkedEvent, ModelParams, NodeActivity, NodeRoster,
    TokenizedPost, TopicCluster,
};
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::render::render_posts;

pub fn parse_epoch(s: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| CliError::Config(format!("epoch {s:?} is not YYYY-MM-DD: {e}")))
}

pub fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
        _ => InputFormat::Jsonl,
    }
}

pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_dictionary(path: &Path) -> CliResult<Dictionary> {
    Ok(Dictionary::from_lines(&fs::read_to_string(path)?)?)
}

pub fn read_branching(path: &Path) -> CliResult<BranchingMatrix> {
    Ok(BranchingMatrix::read_jsonl(std::io::BufReader::new(fs::File::open(path)?))?)
}

fn read_params(path: &Path) -> CliResult<ModelParams> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Roster from a file, or placeholder ids `0..S` sized by the largest node index.
fn roster_or_indices(path: Option<&Path>, events: &[MarkedEvent]) -> CliResult<NodeRoster> {
    match path {
        Some(p) => Ok(read_roster(p)?),
        None => {
            let n = events.iter().map(|e| e.node_index + 1).max().unwrap_or(0);
            Ok(NodeRoster::new(
                (0..n)
                    .map(|i| NodeInfo {
                        node_id: i.to_string(),
                        attrs: Default::default(),
                    })
                    .collect(),
            )?)
        }
    }
}

// ---------------------------------------------------------------------------
// Encoders

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> CliResult<Vec<u8>> {
    let mut v = Vec::new();
    write_jsonl(&mut v, items)?;
    Ok(v)
}

pub fn branching_bytes(q: &BranchingMatrix) -> CliResult<Vec<u8>> {
    let mut v = Vec::new();
    q.write_jsonl(&mut v)?;
    Ok(v)
}

#[derive(Debug, Serialize)]
struct TraceDoc<'a> {
    iterations: usize,
    converged: bool,
    final_log_likelihood: f64,
    log_likelihood_trace: &'a [f64],
}

pub fn trace_bytes(report: &FitReport) -> CliResult<Vec<u8>> {
    json_bytes(&TraceDoc {
        iterations: report.iterations,
        converged: report.converged,
        final_log_likelihood: report.final_log_likelihood(),
        log_likelihood_trace: &report.log_likelihood_trace,
    })
}

pub fn timeline_bytes(clusters: &[TopicCluster], roster: Option<&NodeRoster>) -> CliResult<Vec<u8>> {
    let mut v = Vec::new();
    write_timeline_csv(&timeline_export(clusters, roster), &mut v)?;
    Ok(v)
}

pub fn activity_bytes(rows: &[NodeActivity], roster: &NodeRoster) -> CliResult<Vec<u8>> {
    let mut out = String::from(
        "node,node_id,events,spontaneous_mass,triggering_influence,spontaneous_share,influence_share,theta_influence\n",
    );
    for r in rows {
        let id = if r.node < roster.len() {
            roster.get(r.node).node_id.clone()
        } else {
            r.node.to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.node,
            csv_field(&id),
            r.events,
            r.spontaneous_mass,
            r.triggering_influence,
            r.spontaneous_share,
            r.influence_share,
            r.theta_influence.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    Ok(out.into_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Everything the `network` stage exports.
pub struct NetworkOutputs {
    pub network: InfluenceNetwork,
    pub json: Vec<u8>,
    pub dot: Vec<u8>,
    pub edges_csv: Vec<u8>,
    pub rankings_csv: Vec<u8>,
    pub activity_csv: Vec<u8>,
}

pub fn network_outputs(
    q: &BranchingMatrix,
    events: &[MarkedEvent],
    roster: &NodeRoster,
    params: Option<&ModelParams>,
    threshold: f64,
    top_k: usize,
    color_attr: &str,
) -> CliResult<NetworkOutputs> {
    let network = influence_network(q, events, roster.nodes(), threshold)?;
    let rankings = degree_rankings(&network, top_k)?;
    let activity = activity_decomposition(q, events, roster.len(), params)?;
    let mut json = network.to_json()?.into_bytes();
    json.push(b'\n');
    Ok(NetworkOutputs {
        json,
        dot: network.to_dot(color_attr).into_bytes(),
        edges_csv: network.to_csv()?.into_bytes(),
        rankings_csv: rankings_csv(&network, &rankings)?.into_bytes(),
        activity_csv: activity_bytes(&activity, roster)?,
        network,
    })
}

pub fn coherence_of(
    clusters: &[TopicCluster],
    events: &[MarkedEvent],
    dictionary: &Dictionary,
    eps: f64,
) -> CliResult<CoherenceReport> {
    Ok(coherence_report(clusters, &mark_documents(events, dictionary), eps)?)
}

// ---------------------------------------------------------------------------
// Subcommands

fn ingest(args: &IngestArgs) -> CliResult<()> {
    let epoch = parse_epoch(&args.epoch)?;
    let stop = match &args.stopwords {
        Some(p) => read_stopwords(p)?,
        None => default_stopwords(),
    };
    let format = args.format.unwrap_or_else(|| guess_format(&args.input));
    let posts = tokenize_posts(ingest_posts(&args.input, epoch, format)?, &stop);
    fs::write(&args.out, jsonl_bytes(&posts)?)?;
    log::info!("ingested {} posts", posts.len());
    Ok(())
}

fn expand(args: &ExpandArgs) -> CliResult<()> {
    let posts: Vec<TokenizedPost> = read_jsonl_file(&args.input)?;
    let seeds: BTreeSet<String> = args.seeds.iter().map(|s| s.trim().to_lowercase()).collect();
    let config = ExpansionConfig {
        ratio_min: args.ratio,
        count_min: args.min_count,
        max_iter: args.max_iter,
    };
    let expansion = expand_keywords(&posts, &seeds, &config)?;
    let kept = filter_by_keywords(&posts, &expansion.keywords);
    fs::write(&args.out, jsonl_bytes(&kept)?)?;
    if let Some(p) = &args.keywords {
        let mut text: String = expansion.keywords.iter().map(|k| format!("{k}\n")).collect();
        if text.is_empty() {
            text.push('\n');
        }
        fs::write(p, text)?;
    }
    println!(
        "{} keywords after {} rounds; kept {} of {} posts{}",
        expansion.keywords.len(),
        expansion.iterations,
        kept.len(),
        posts.len(),
        if expansion.no_match { " (no post matched the seeds)" } else { "" }
    );
    Ok(())
}

fn marks(args: &MarksArgs) -> CliResult<()> {
    let posts: Vec<TokenizedPost> = read_jsonl_file(&args.input)?;
    let dictionary = match &args.dict {
        Some(p) => read_dictionary(p)?,
        None => {
            if args.dict_size < 2 {
                return Err(CliError::Config(format!("dict-size must be >= 2, got {}", args.dict_size)));
            }
            build_dictionary(&posts, args.dict_size)?
        }
    };
    let roster = match &args.nodes {
        Some(p) => read_roster(p)?,
        None => NodeRoster::from_posts(posts.iter().map(|p| &p.post)),
    };
    let events = to_marked_events(&posts, &dictionary, &roster)?;
    fs::write(&args.out, jsonl_bytes(&events)?)?;
    fs::write(&args.dict_out, dictionary.to_lines())?;
    fs::write(&args.nodes_out, jsonl_bytes(roster.nodes())?)?;
    println!(
        "{} events, {} nodes, {} dictionary words",
        events.len(),
        roster.len(),
        dictionary.len()
    );
    Ok(())
}

fn fit_cmd(args: &FitArgs, config: Option<&Path>) -> CliResult<()> {
    let config: FitConfig = match config {
        Some(p) => read_config(p)?,
        None => FitConfig::default(),
    };
    config.validate()?;
    let events = read_events(&args.events)?;
    if events.is_empty() {
        return Err(CliError::Core(hbtm_core::HbtmError::Domain("no events to fit".into())));
    }
    let w = match &args.dict {
        Some(p) => read_dictionary(p)?.len(),
        None => events[0].mark.len(),
    };
    let s = roster_or_indices(args.nodes.as_deref(), &events)?.len();
    let report = fit(&events, s, w, &config)?;
    fs::write(&args.out, json_bytes(&report.final_params)?)?;
    if let Some(p) = &args.branching {
        fs::write(p, branching_bytes(&report.branching)?)?;
    }
    if let Some(p) = &args.trace {
        fs::write(p, trace_bytes(&report)?)?;
    }
    println!(
        "{} iterations, converged: {}, log-likelihood {}",
        report.iterations,
        report.converged,
        report.final_log_likelihood()
    );
    Ok(())
}

#[derive(Serialize)]
struct TruthLine {
    child: usize,
    parent: Option<usize>,
}

fn simulate_cmd(args: &SimulateArgs) -> CliResult<()> {
    let params = read_params(&args.params)?;
    let t_end = args.t_end.unwrap_or(params.background.t_end);
    let sim = simulate(&params, t_end, args.seed)?;
    let events = observed(&sim);
    fs::write(&args.out, jsonl_bytes(&events)?)?;
    if let Some(p) = &args.truth {
        let truth: Vec<TruthLine> = sim
            .iter()
            .enumerate()
            .map(|(child, e)| TruthLine {
                child,
                parent: e.parent_index,
            })
            .collect();
        fs::write(p, jsonl_bytes(&truth)?)?;
    }
    if let (Some(out), Some(dict), Some(nodes)) = (&args.posts, &args.dict, &args.nodes) {
        let posts = render_posts(
            &events,
            &read_dictionary(dict)?,
            &read_roster(nodes)?,
            parse_epoch(&args.epoch)?,
        )?;
        fs::write(out, jsonl_bytes(&posts)?)?;
    }
    println!("simulated {} events on [{}, {t_end}]", events.len(), params.background.t_start);
    Ok(())
}

fn topics_cmd(args: &TopicsArgs) -> CliResult<()> {
    let q = read_branching(&args.branching)?;
    let events = read_events(&args.events)?;
    let dictionary = read_dictionary(&args.dict)?;
    let roster = args.nodes.as_deref().map(read_roster).transpose()?;
    let forest = sample_forest(&q, args.mode, args.seed);
    let options = ClusterOptions {
        min_size: args.min_size,
        top_k: args.top_k,
        attr_key: Some(args.attr.clone()),
    };
    let clusters = extract_clusters(&forest, &events, &dictionary, roster.as_ref(), &options)?;
    fs::write(&args.out, json_bytes(&clusters)?)?;
    if let Some(p) = &args.timeline {
        fs::write(p, timeline_bytes(&clusters, roster.as_ref())?)?;
    }
    println!("{} clusters with at least {} events", clusters.len(), args.min_size);
    Ok(())
}

fn network_cmd(args: &NetworkArgs) -> CliResult<()> {
    let q = read_branching(&args.branching)?;
    let events = read_events(&args.events)?;
    let roster = roster_or_indices(args.nodes.as_deref(), &events)?;
    let params = args.params.as_deref().map(read_params).transpose()?;
    let out = network_outputs(&q, &events, &roster, params.as_ref(), args.threshold, args.top_k, &args.attr)?;
    fs::write(&args.out, &out.json)?;
    for (path, bytes) in [
        (&args.dot, &out.dot),
        (&args.edges, &out.edges_csv),
        (&args.rankings, &out.rankings_csv),
        (&args.activity, &out.activity_csv),
    ] {
        if let Some(p) = path {
            fs::write(p, bytes)?;
        }
    }
    eprintln!("note: {GRANGER_CAVEAT}");
    println!(
        "{} edges at or above {} (of {} with positive weight)",
        out.network.pruned_edges().len(),
        args.threshold,
        out.network.edges().len()
    );
    Ok(())
}

fn coherence_cmd(args: &CoherenceArgs) -> CliResult<()> {
    let clusters: Vec<TopicCluster> = serde_json::from_str(&fs::read_to_string(&args.clusters)?)?;
    let events = read_events(&args.events)?;
    let dictionary = read_dictionary(&args.dict)?;
    let report = coherence_of(&clusters, &events, &dictionary, args.eps)?;
    let bytes = json_bytes(&report)?;
    match &args.out {
        Some(p) => fs::write(p, bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    if config.is_some() && !matches!(cli.command, Command::Fit(_) | Command::Pipeline(_)) {
        log::warn!("--config is only read by `fit` and `pipeline`; ignoring it");
    }
    match &cli.command {
        Command::Corpus(CorpusCommand::Ingest(a)) => ingest(a),
        Command::Corpus(CorpusCommand::Expand(a)) => expand(a),
        Command::Corpus(CorpusCommand::Marks(a)) => marks(a),
        Command::Fit(a) => fit_cmd(a, config),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Topics(a) => topics_cmd(a),
        Command::Network(a) => network_cmd(a),
        Command::Coherence(a) => coherence_cmd(a),
        Command::Pipeline(a) => {
            let path = config.ok_or_else(|| CliError::Config("pipeline needs --config".into()))?;
            let summary = crate::pipeline::run_from_file(path, a.out_dir.as_deref())?;
            eprintln!("note: {GRANGER_CAVEAT}");
            println!("{summary}");
            Ok(())
        }
    }
}
