//! Corpus preparation: ingestion of timestamped posts, tokenization, keyword
//! expansion, dictionary restriction and conversion to marked events.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{HbtmError, Result};
use crate::mark::Mark;

/// One timestamped post before markization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub post_id: String,
    /// Fractional days since the ingestion epoch.
    pub timestamp: f64,
    pub node_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

/// A post together with its token list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedPost {
    #[serde(flatten)]
    pub post: RawPost,
    pub tokens: Vec<String>,
}

impl TokenizedPost {
    pub fn token_set(&self) -> HashSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

/// One event of the point process: a post reduced to time, source node and mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedEvent {
    pub post_id: String,
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "node")]
    pub node_index: usize,
    pub mark: Mark,
}

impl MarkedEvent {
    pub fn is_all_zero(&self) -> bool {
        self.mark.is_all_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = HbtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(HbtmError::InvalidConfig(format!("unknown input format {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Deserialize)]
struct InputRecord {
    post_id: Option<serde_json::Value>,
    timestamp: Option<String>,
    node_id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    attrs: Option<BTreeMap<String, String>>,
}

/// Parses an ISO-8601 timestamp (or a bare date) into days since `epoch` (UTC midnight).
pub fn days_since_epoch(ts: &str, epoch: NaiveDate) -> Option<f64> {
    let ts = ts.trim();
    let dt: DateTime<Utc> = if let Ok(d) = DateTime::parse_from_rfc3339(ts) {
        d.with_timezone(&Utc)
    } else if let Ok(d) = DateTime::parse_from_str(ts, "%a %b %d %H:%M:%S %z %Y") {
        d.with_timezone(&Utc)
    } else if let Some(n) = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(ts, f).ok())
    {
        Utc.from_utc_datetime(&n)
    } else {
        let d = NaiveDate::parse_from_str(ts, "%Y-%m-%d").ok()?;
        Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0)?)
    };
    let origin = Utc.from_utc_datetime(&epoch.and_hms_opt(0, 0, 0)?);
    let delta = dt.signed_duration_since(origin);
    let secs = delta.num_seconds() as f64
        + f64::from(delta.subsec_nanos()) / 1e9;
    Some(secs / 86_400.0)
}

fn record_to_post(rec: InputRecord, line: usize, epoch: NaiveDate) -> Result<RawPost> {
    let missing = |field: &str| HbtmError::MissingField {
        field: field.to_string(),
        line,
    };
    let post_id = match rec.post_id.ok_or_else(|| missing("post_id"))? {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        other => {
            return Err(HbtmError::Parse {
                line,
                msg: format!("post_id must be a string or number, got {other}"),
            })
        }
    };
    let ts = rec.timestamp.ok_or_else(|| missing("timestamp"))?;
    let node_id = rec
        .node_id
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| missing("node_id"))?;
    let text = rec.text.ok_or_else(|| missing("text"))?;
    let timestamp = days_since_epoch(&ts, epoch).ok_or_else(|| HbtmError::Parse {
        line,
        msg: format!("unparseable timestamp {ts:?}"),
    })?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(HbtmError::Parse {
            line,
            msg: format!("timestamp {ts:?} precedes the epoch {epoch}"),
        });
    }
    Ok(RawPost {
        post_id,
        timestamp,
        node_id: node_id.trim().to_string(),
        text,
        attrs: rec.attrs.unwrap_or_default(),
    })
}

/// Sorts posts by time, breaking exact ties by post id; the sort is stable so
/// records sharing both keep input order.
pub fn sort_posts(posts: &mut [RawPost]) {
    posts.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
}

/// Reads posts from a JSONL or CSV stream.
pub fn read_posts<R: Read>(reader: R, epoch: NaiveDate, format: InputFormat) -> Result<Vec<RawPost>> {
    let mut posts = Vec::new();
    match format {
        InputFormat::Jsonl => {
            for (k, line) in BufReader::new(reader).lines().enumerate() {
                let line_no = k + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: InputRecord =
                    serde_json::from_str(&line).map_err(|e| HbtmError::Parse {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                posts.push(record_to_post(rec, line_no, epoch)?);
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
            let headers = rdr.headers()?.clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (c_id, c_ts, c_node, c_text, c_attrs) = (
                col("post_id"),
                col("timestamp"),
                col("node_id"),
                col("text"),
                col("attrs"),
            );
            for (k, row) in rdr.records().enumerate() {
                // header occupies line 1
                let line_no = k + 2;
                let row = row.map_err(|e| HbtmError::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
                let get = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::to_string);
                let attrs = match get(c_attrs).filter(|s| !s.trim().is_empty()) {
                    Some(js) => Some(serde_json::from_str(&js).map_err(|e| HbtmError::Parse {
                        line: line_no,
                        msg: format!("attrs column: {e}"),
                    })?),
                    None => None,
                };
                let rec = InputRecord {
                    post_id: get(c_id).map(serde_json::Value::String),
                    timestamp: get(c_ts),
                    node_id: get(c_node),
                    text: get(c_text),
                    attrs,
                };
                posts.push(record_to_post(rec, line_no, epoch)?);
            }
        }
    }
    sort_posts(&mut posts);
    Ok(posts)
}

/// Reads posts from a file, converting timestamps to days since `epoch` and
/// sorting them time-ascending.
pub fn ingest_posts(path: &Path, epoch: NaiveDate, format: InputFormat) -> Result<Vec<RawPost>> {
    read_posts(File::open(path)?, epoch, format)
}

// ---------------------------------------------------------------------------
// Tokenization

/// A small English stop-word list used when no list is supplied.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "rt", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "us", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves", "amp",
];

pub fn default_stopwords() -> HashSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Reads a stop-word file: one word per line, `#` starts a comment.
pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect())
}

fn is_url(piece: &str) -> bool {
    let p = piece.to_ascii_lowercase();
    p.starts_with("http://") || p.starts_with("https://") || p.starts_with("www.")
}

/// Splits text into lowercase alphanumeric tokens.
///
/// URLs and @-mentions are dropped whole, `#` is stripped from hashtags,
/// apostrophes are elided (`don't` → `dont`), and any other non-alphanumeric
/// character (hyphens and slashes included) separates tokens.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split_whitespace() {
        if is_url(piece) || piece.starts_with('@') {
            continue;
        }
        let cleaned: String = piece
            .chars()
            .filter(|c| *c != '\'' && *c != '\u{2019}')
            .flat_map(char::to_lowercase)
            .collect();
        for tok in cleaned.split(|c: char| !c.is_alphanumeric()) {
            if !tok.is_empty() && !stopwords.contains(tok) {
                tokens.push(tok.to_string());
            }
        }
    }
    tokens
}

pub fn tokenize_posts(posts: Vec<RawPost>, stopwords: &HashSet<String>) -> Vec<TokenizedPost> {
    posts
        .into_iter()
        .map(|post| {
            let tokens = tokenize(&post.text, stopwords);
            TokenizedPost { post, tokens }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dictionary

/// The restricted vocabulary: W distinct tokens with positions 0..W.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(HbtmError::Domain(format!("duplicate dictionary word {w:?}")));
            }
        }
        Ok(Dictionary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Parses the one-word-per-line sidecar format.
    pub fn from_lines(text: &str) -> Result<Self> {
        Dictionary::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    /// Keeps only the words for which `keep` holds, preserving order.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> Dictionary {
        Dictionary::new(self.words.iter().filter(|w| keep(w)).cloned().collect())
            .expect("subset of a valid dictionary is valid")
    }
}

/// Total token counts across posts.
pub fn token_frequencies(posts: &[TokenizedPost]) -> HashMap<&str, usize> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for p in posts {
        for t in &p.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    freq
}

/// Keeps the `w` most frequent tokens, ties broken lexicographically. With
/// fewer than `w` distinct tokens, all of them are returned.
pub fn build_dictionary(posts: &[TokenizedPost], w: usize) -> Result<Dictionary> {
    if w == 0 {
        return Err(HbtmError::InvalidConfig("dictionary size must be >= 1".into()));
    }
    let mut ranked: Vec<(&str, usize)> = token_frequencies(posts).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(w);
    if ranked.len() < w {
        log::warn!("only {} distinct tokens available for a dictionary of size {w}", ranked.len());
    }
    Dictionary::new(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
}

// ---------------------------------------------------------------------------
// Keyword expansion and filtering

/// Thresholds for iterative keyword expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Minimum ratio of a word's document rate among matched posts to its rate overall.
    pub ratio_min: f64,
    /// Minimum number of matched posts containing the word.
    pub count_min: usize,
    pub max_iter: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            ratio_min: 10.0,
            count_min: 5,
            max_iter: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub keywords: BTreeSet<String>,
    pub iterations: usize,
    /// Set when no post matched the seeds.
    pub no_match: bool,
}

/// Grows `seeds` by adding words over-represented in posts that match the
/// current query list, until nothing changes or `max_iter` rounds have run.
pub fn expand_keywords(
    posts: &[TokenizedPost],
    seeds: &BTreeSet<String>,
    config: &ExpansionConfig,
) -> Result<Expansion> {
    if seeds.is_empty() {
        return Err(HbtmError::InvalidConfig("keyword seeds must be nonempty".into()));
    }
    if !(config.ratio_min > 1.0) {
        return Err(HbtmError::InvalidConfig("ratio_min must exceed 1".into()));
    }
    if config.max_iter == 0 {
        return Err(HbtmError::InvalidConfig("max_iter must be >= 1".into()));
    }

    let sets: Vec<HashSet<&str>> = posts.iter().map(TokenizedPost::token_set).collect();
    let n_all = sets.len() as f64;
    let mut doc_freq_all: HashMap<&str, usize> = HashMap::new();
    for s in &sets {
        for &t in s {
            *doc_freq_all.entry(t).or_default() += 1;
        }
    }

    let mut query = seeds.clone();
    let mut iterations = 0;
    let mut no_match = false;
    for round in 0..config.max_iter {
        let matched: Vec<&HashSet<&str>> = sets
            .iter()
            .filter(|s| s.iter().any(|t| query.contains(*t)))
            .collect();
        if matched.is_empty() {
            if round == 0 {
                log::warn!("no post matches the keyword seeds; returning seeds unchanged");
                no_match = true;
            }
            break;
        }
        iterations = round + 1;
        let n_matched = matched.len() as f64;
        let mut doc_freq_matched: HashMap<&str, usize> = HashMap::new();
        for s in &matched {
            for &t in s.iter() {
                *doc_freq_matched.entry(t).or_default() += 1;
            }
        }
        let mut added: Vec<&str> = doc_freq_matched
            .iter()
            .filter(|(w, &c)| {
                if query.contains(**w) || c < config.count_min {
                    return false;
                }
                let rate_matched = c as f64 / n_matched;
                let rate_all = doc_freq_all[**w] as f64 / n_all;
                rate_matched / rate_all >= config.ratio_min
            })
            .map(|(w, _)| *w)
            .collect();
        if added.is_empty() {
            break;
        }
        added.sort_unstable();
        log::debug!("expansion round {}: adding {:?}", round + 1, added);
        query.extend(added.into_iter().map(str::to_string));
    }
    Ok(Expansion {
        keywords: query,
        iterations,
        no_match,
    })
}

/// Posts whose token set intersects `keywords`, in input order.
pub fn filter_by_keywords(posts: &[TokenizedPost], keywords: &BTreeSet<String>) -> Vec<TokenizedPost> {
    posts
        .iter()
        .filter(|p| p.tokens.iter().any(|t| keywords.contains(t)))
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// Nodes and marks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

/// Ordered list of network nodes; a node's position is its index in the model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeRoster {
    nodes: Vec<NodeInfo>,
    index: HashMap<String, usize>,
}

impl NodeRoster {
    pub fn new(nodes: Vec<NodeInfo>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.node_id.clone(), i).is_some() {
                return Err(HbtmError::Domain(format!("duplicate node id {:?}", n.node_id)));
            }
        }
        Ok(NodeRoster { nodes, index })
    }

    /// Roster of all node ids seen in `posts`, sorted by id. Attributes are
    /// taken from the first post of each node that carries them.
    pub fn from_posts<'a>(posts: impl IntoIterator<Item = &'a RawPost>) -> Self {
        let mut by_id: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for p in posts {
            let entry = by_id.entry(p.node_id.clone()).or_default();
            for (k, v) in &p.attrs {
                entry.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        let nodes = by_id
            .into_iter()
            .map(|(node_id, attrs)| NodeInfo { node_id, attrs })
            .collect();
        NodeRoster::new(nodes).expect("ids are unique by construction")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn get(&self, i: usize) -> &NodeInfo {
        &self.nodes[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn attr(&self, i: usize, key: &str) -> Option<&str> {
        self.nodes.get(i)?.attrs.get(key).map(String::as_str)
    }
}

/// Converts posts to binary-presence marked events over `dictionary`.
///
/// Output is sorted by time, then post id, with remaining ties in input order.
pub fn to_marked_events(
    posts: &[TokenizedPost],
    dictionary: &Dictionary,
    roster: &NodeRoster,
) -> Result<Vec<MarkedEvent>> {
    let unknown: BTreeSet<&str> = posts
        .iter()
        .map(|p| p.post.node_id.as_str())
        .filter(|id| roster.position(id).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(HbtmError::UnknownNodes(
            unknown.into_iter().map(str::to_string).collect(),
        ));
    }
    let mut events: Vec<MarkedEvent> = posts
        .iter()
        .map(|p| {
            let mark = Mark::from_indices(
                dictionary.len(),
                p.tokens.iter().filter_map(|t| dictionary.position(t)),
            );
            MarkedEvent {
                post_id: p.post.post_id.clone(),
                timestamp: p.post.timestamp,
                node_index: roster.position(&p.post.node_id).expect("checked above"),
                mark,
            }
        })
        .collect();
    sort_events(&mut events);
    let zero = events.iter().filter(|e| e.is_all_zero()).count();
    if zero > 0 {
        log::info!("{zero} of {} events carry an all-zero mark", events.len());
    }
    Ok(events)
}

pub fn sort_events(events: &mut [MarkedEvent]) {
    events.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, t: f64, node: &str, text: &str) -> RawPost {
        RawPost {
            post_id: id.into(),
            timestamp: t,
            node_id: node.into(),
            text: text.into(),
            attrs: BTreeMap::new(),
        }
    }

    fn tok(posts: Vec<RawPost>) -> Vec<TokenizedPost> {
        tokenize_posts(posts, &HashSet::new())
    }

    fn stop(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn jan1() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    #[test]
    fn ingest_sorts_and_offsets() {
        let data = r#"{"post_id":"a","timestamp":"2020-01-02T00:00:00Z","node_id":"x","text":"one"}
{"post_id":"b","timestamp":"2020-01-01T00:00:00Z","node_id":"y","text":"two"}
{"post_id":"c","timestamp":"2020-01-03","node_id":"x","text":"three","attrs":{"party":"D"}}
"#;
        let posts = read_posts(data.as_bytes(), jan1(), InputFormat::Jsonl).unwrap();
        let ts: Vec<f64> = posts.iter().map(|p| p.timestamp).collect();
        assert_eq!(ts, vec![0.0, 1.0, 2.0]);
        assert_eq!(posts[0].post_id, "b");
        assert_eq!(posts[2].attrs["party"], "D");
    }

    #[test]
    fn ingest_empty_file() {
        let posts = read_posts("".as_bytes(), jan1(), InputFormat::Jsonl).unwrap();
        assert!(posts.is_empty());
    }

    #[test]
    fn ingest_missing_node_names_line() {
        let data = "{\"post_id\":\"a\",\"timestamp\":\"2020-01-02\",\"node_id\":\"x\",\"text\":\"\"}\n\
                    {\"post_id\":\"b\",\"timestamp\":\"2020-01-02\",\"text\":\"t\"}\n";
        let err = read_posts(data.as_bytes(), jan1(), InputFormat::Jsonl).unwrap_err();
        assert_eq!(err.to_string(), "missing field node_id at line 2");
    }

    #[test]
    fn ingest_rejects_garbage_and_pre_epoch() {
        let err = read_posts("not json\n".as_bytes(), jan1(), InputFormat::Jsonl).unwrap_err();
        assert!(matches!(err, HbtmError::Parse { line: 1, .. }));
        let data = r#"{"post_id":"a","timestamp":"2019-12-31","node_id":"x","text":""}"#;
        assert!(read_posts(data.as_bytes(), jan1(), InputFormat::Jsonl).is_err());
    }

    #[test]
    fn ingest_csv() {
        let data = "post_id,timestamp,node_id,text,attrs\n\
                    1,2020-01-01T12:00:00Z,gov,\"Stay home, stay safe\",\"{\"\"party\"\":\"\"R\"\"}\"\n\
                    2,2020-01-01T06:00:00Z,sec,hello,\n";
        let posts = read_posts(data.as_bytes(), jan1(), InputFormat::Csv).unwrap();
        assert_eq!(posts.len(), 2);
        assert_eq!(posts[0].post_id, "2");
        assert!((posts[0].timestamp - 0.25).abs() < 1e-12);
        assert_eq!(posts[1].attrs["party"], "R");
    }

    #[test]
    fn ingest_csv_missing_column_value() {
        let data = "post_id,timestamp,node_id,text\n1,2020-01-01,,x\n";
        let err = read_posts(data.as_bytes(), jan1(), InputFormat::Csv).unwrap_err();
        assert_eq!(err.to_string(), "missing field node_id at line 2");
    }

    #[test]
    fn twitter_style_timestamp() {
        let d = days_since_epoch("Thu Jan 02 12:00:00 +0000 2020", jan1()).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Stay home! #socialdistancing https://t.co/x", &HashSet::new()),
            vec!["stay", "home", "socialdistancing"]
        );
        assert!(tokenize("the the the", &stop(&["the"])).is_empty());
        assert_eq!(
            tokenize("@SecAzar COVID-19 update", &HashSet::new()),
            vec!["covid", "19", "update"]
        );
        assert_eq!(tokenize("", &HashSet::new()), Vec::<String>::new());
        assert_eq!(
            tokenize("Don't test/trace www.cdc.gov", &HashSet::new()),
            vec!["dont", "test", "trace"]
        );
    }

    #[test]
    fn dictionary_tie_break() {
        let posts = tok(vec![
            post("1", 0.0, "a", "test test test risk home"),
            post("2", 0.1, "a", "test test risk home virus"),
            post("3", 0.2, "a", "risk home"),
        ]);
        let d = build_dictionary(&posts, 3).unwrap();
        assert_eq!(d.words(), &["test", "home", "risk"]);
        for (i, w) in d.words().iter().enumerate() {
            assert_eq!(d.position(w), Some(i));
        }
    }

    #[test]
    fn dictionary_small_corpus() {
        let posts = tok(vec![post("1", 0.0, "a", "covid")]);
        assert_eq!(build_dictionary(&posts, 1).unwrap().words(), &["covid"]);
        let d = build_dictionary(&posts, 10).unwrap();
        assert_eq!(d.len(), 1);
        assert!(build_dictionary(&posts, 0).is_err());
    }

    #[test]
    fn dictionary_lines_roundtrip() {
        let d = Dictionary::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(Dictionary::from_lines(&d.to_lines()).unwrap(), d);
        assert!(Dictionary::new(vec!["a".into(), "a".into()]).is_err());
    }

    fn expansion_corpus() -> Vec<TokenizedPost> {
        let mut posts = Vec::new();
        for i in 0..4 {
            posts.push(post(&format!("c{i}"), i as f64, "a", "covid quarantine today"));
        }
        for i in 0..96 {
            posts.push(post(&format!("o{i}"), 10.0 + i as f64, "a", "weather today"));
        }
        tok(posts)
    }

    #[test]
    fn expansion_adds_overrepresented_word() {
        let posts = expansion_corpus();
        let seeds: BTreeSet<String> = ["covid".to_string()].into();
        let cfg = ExpansionConfig {
            ratio_min: 5.0,
            count_min: 2,
            max_iter: 5,
        };
        let out = expand_keywords(&posts, &seeds, &cfg).unwrap();
        // quarantine: (4/4)/(4/100) = 25; today: (4/4)/(100/100) = 1
        let expect: BTreeSet<String> = ["covid".to_string(), "quarantine".to_string()].into();
        assert_eq!(out.keywords, expect);
        assert!(!out.no_match);
    }

    #[test]
    fn expansion_no_match_and_huge_ratio() {
        let posts = expansion_corpus();
        let seeds: BTreeSet<String> = ["influenza".to_string()].into();
        let out = expand_keywords(&posts, &seeds, &ExpansionConfig::default()).unwrap();
        assert_eq!(out.keywords, seeds);
        assert!(out.no_match);

        let seeds: BTreeSet<String> = ["covid".to_string()].into();
        let cfg = ExpansionConfig {
            ratio_min: 1e9,
            count_min: 1,
            max_iter: 5,
        };
        assert_eq!(expand_keywords(&posts, &seeds, &cfg).unwrap().keywords, seeds);
    }

    #[test]
    fn expansion_rejects_bad_config() {
        let posts = expansion_corpus();
        let seeds: BTreeSet<String> = ["covid".to_string()].into();
        let bad = ExpansionConfig {
            ratio_min: 1.0,
            ..Default::default()
        };
        assert!(expand_keywords(&posts, &seeds, &bad).is_err());
        assert!(expand_keywords(&posts, &BTreeSet::new(), &ExpansionConfig::default()).is_err());
    }

    #[test]
    fn filter_union_semantics() {
        let posts = tok(vec![
            post("1", 0.0, "a", "low risk today"),
            post("2", 1.0, "a", "vaccine trial"),
            post("3", 2.0, "a", "new treatment"),
            post("4", 3.0, "a", "weather"),
        ]);
        let risk: BTreeSet<String> = ["risk".to_string()].into();
        let got = filter_by_keywords(&posts, &risk);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].post.post_id, "1");
        let vt: BTreeSet<String> = ["vaccine".to_string(), "treatment".to_string()].into();
        let ids: Vec<_> = filter_by_keywords(&posts, &vt)
            .into_iter()
            .map(|p| p.post.post_id)
            .collect();
        assert_eq!(ids, vec!["2", "3"]);
    }

    #[test]
    fn marks_are_presence() {
        let posts = tok(vec![
            post("1", 0.0, "a", "test test risk"),
            post("2", 1.0, "a", "nothing here"),
        ]);
        let d = Dictionary::new(vec!["test".into(), "risk".into(), "home".into()]).unwrap();
        let roster = NodeRoster::from_posts(posts.iter().map(|p| &p.post));
        let ev = to_marked_events(&posts, &d, &roster).unwrap();
        assert_eq!(ev[0].mark.to_bits(), vec![1, 1, 0]);
        assert_eq!(ev[1].mark.to_bits(), vec![0, 0, 0]);
        assert!(ev[1].is_all_zero());
    }

    #[test]
    fn marks_unknown_node() {
        let posts = tok(vec![post("1", 0.0, "ghost", "x"), post("2", 0.0, "alien", "y")]);
        let roster = NodeRoster::new(vec![]).unwrap();
        let d = Dictionary::new(vec!["x".into()]).unwrap();
        match to_marked_events(&posts, &d, &roster) {
            Err(HbtmError::UnknownNodes(ids)) => assert_eq!(ids, vec!["alien", "ghost"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equal_timestamps_order_is_permutation_invariant() {
        let base = vec![
            post("b", 1.0, "n1", "x"),
            post("a", 1.0, "n2", "y"),
            post("c", 0.5, "n1", "x y"),
            post("d", 1.0, "n1", "y"),
        ];
        let d = Dictionary::new(vec!["x".into(), "y".into()]).unwrap();
        let roster = NodeRoster::from_posts(base.iter());
        let reference = to_marked_events(&tok(base.clone()), &d, &roster).unwrap();
        let ids: Vec<&str> = reference.iter().map(|e| e.post_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b", "d"]);
        let mut rev = base.clone();
        rev.reverse();
        assert_eq!(to_marked_events(&tok(rev), &d, &roster).unwrap(), reference);
        let rot: Vec<RawPost> = base[2..].iter().chain(&base[..2]).cloned().collect();
        assert_eq!(to_marked_events(&tok(rot), &d, &roster).unwrap(), reference);
    }

    #[test]
    fn roster_sorted_with_attrs() {
        let mut p1 = post("1", 0.0, "zeta", "");
        p1.attrs.insert("party".into(), "R".into());
        let p2 = post("2", 0.0, "alpha", "");
        let r = NodeRoster::from_posts([&p1, &p2]);
        assert_eq!(r.get(0).node_id, "alpha");
        assert_eq!(r.attr(1, "party"), Some("R"));
        assert_eq!(r.attr(0, "party"), None);
    }
}
