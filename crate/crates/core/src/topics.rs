//! Topic clusters from branching probabilities, timelines and UCI coherence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dictionary, MarkedEvent, NodeRoster};
use crate::error::{HbtmError, Result};
use crate::inference::BranchingMatrix;

/// Parent assignment for every event; `None` marks a spontaneous event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingForest {
    pub parent_of: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    /// Draw each parent from its row of the branching matrix.
    Sample,
    /// Take the most probable parent of each row.
    Map,
}

impl std::str::FromStr for ForestMode {
    type Err = HbtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(ForestMode::Sample),
            "map" => Ok(ForestMode::Map),
            other => Err(HbtmError::InvalidConfig(format!("unknown forest mode {other:?}"))),
        }
    }
}

/// Assigns one parent (or none) per event from the rows of `q`.
///
/// In sample mode row entries are visited parents-ascending, then the
/// diagonal, with one uniform draw per row. In map mode ties go to the
/// earliest candidate, the diagonal counting as the latest.
pub fn sample_forest(q: &BranchingMatrix, mode: ForestMode, seed: u64) -> BranchingForest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parent_of = (0..q.n_events())
        .map(|i| match mode {
            ForestMode::Map => {
                let mut best = (q.diag(i), None);
                for (j, p) in q.row(i) {
                    // parents come in ascending order, so strict > keeps the earliest
                    if p > best.0 || (p == best.0 && best.1.is_none()) {
                        best = (p, Some(j));
                    }
                }
                best.1
            }
            ForestMode::Sample => {
                let u = rng.random::<f64>() * q.row_sum(i);
                let mut acc = 0.0;
                for (j, p) in q.row(i) {
                    acc += p;
                    if u < acc {
                        return Some(j);
                    }
                }
                None
            }
        })
        .collect();
    BranchingForest { parent_of }
}

impl BranchingForest {
    pub fn len(&self) -> usize {
        self.parent_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_of.is_empty()
    }

    /// Root event of each event's tree.
    pub fn roots(&self) -> Vec<usize> {
        let mut root = Vec::with_capacity(self.len());
        for (i, p) in self.parent_of.iter().enumerate() {
            let r = match *p {
                Some(j) if j < i => root[j],
                Some(j) => panic!("parent {j} of event {i} is not earlier"),
                None => i,
            };
            root.push(r);
        }
        root
    }

    /// Connected components as lists of event indices, ordered by their root.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.roots().into_iter().enumerate() {
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

/// A family of events connected by sampled triggering links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub event_indices: Vec<usize>,
    pub start_t: f64,
    pub end_t: f64,
    pub size: usize,
    /// Dictionary words ranked by the number of member events containing them.
    pub top_words: Vec<(String, usize)>,
    pub dominant_node: usize,
    pub dominant_attr: Option<String>,
}

impl TopicCluster {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_t + self.end_t)
    }

    pub fn words(&self) -> Vec<&str> {
        self.top_words.iter().map(|(w, _)| w.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub min_size: usize,
    pub top_k: usize,
    /// Node attribute summarized as `dominant_attr` (e.g. `party`).
    pub attr_key: Option<String>,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            min_size: 11,
            top_k: 8,
            attr_key: Some("party".into()),
        }
    }
}

/// Most frequent key; ties go to the smallest key.
fn modal<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> Option<K> {
    counts
        .iter()
        .fold(None, |best: Option<(&K, usize)>, (k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k.clone())
}

/// Connected components of `forest` with at least `min_size` events, with
/// their span, keywords and dominant node/attribute. Clusters are ordered by
/// their earliest event.
pub fn extract_clusters(
    forest: &BranchingForest,
    events: &[MarkedEvent],
    dictionary: &Dictionary,
    roster: Option<&NodeRoster>,
    options: &ClusterOptions,
) -> Result<Vec<TopicCluster>> {
    if forest.len() != events.len() {
        return Err(HbtmError::LengthMismatch {
            expected: events.len(),
            got: forest.len(),
        });
    }
    let min_size = options.min_size.max(1);
    let mut clusters = Vec::new();
    for members in forest.components() {
        if members.len() < min_size {
            continue;
        }
        let mut word_df = vec![0usize; dictionary.len()];
        let mut node_counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut attr_counts: BTreeMap<String, usize> = BTreeMap::new();
        let (mut start, mut end) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &members {
            let e = &events[i];
            start = start.min(e.timestamp);
            end = end.max(e.timestamp);
            for w in e.mark.ones() {
                if w < word_df.len() {
                    word_df[w] += 1;
                }
            }
            *node_counts.entry(e.node_index).or_default() += 1;
            if let (Some(r), Some(key)) = (roster, options.attr_key.as_deref()) {
                if let Some(v) = r.attr(e.node_index, key) {
                    *attr_counts.entry(v.to_string()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(usize, usize)> = word_df
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(options.top_k);
        clusters.push(TopicCluster {
            size: members.len(),
            start_t: start,
            end_t: end,
            top_words: ranked
                .into_iter()
                .map(|(w, c)| (dictionary.word(w).to_string(), c))
                .collect(),
            dominant_node: modal(&node_counts).expect("cluster is nonempty"),
            dominant_attr: modal(&attr_counts),
            event_indices: members,
        });
    }
    Ok(clusters)
}

// ---------------------------------------------------------------------------
// Coherence

/// UCI coherence of one word list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub score: f64,
    pub pairs: usize,
    /// Words that occur in no document; their pairs use the smoothing rule.
    pub missing_words: Vec<String>,
}

/// Mean over unordered word pairs of `ln[(D(a,b) + eps) · D / (D(a) · D(b))]`
/// with document-level counts. Zero document frequencies are replaced by one.
pub fn uci_coherence<S: AsRef<str>>(top_words: &[S], documents: &[HashSet<String>], eps: f64) -> Result<Coherence> {
    if top_words.len() < 2 {
        return Err(HbtmError::Domain("coherence needs at least two words".into()));
    }
    if documents.is_empty() {
        return Err(HbtmError::Domain("coherence needs at least one document".into()));
    }
    let words: Vec<&str> = top_words.iter().map(AsRef::as_ref).collect();
    let d = documents.len() as f64;
    let df: Vec<usize> = words
        .iter()
        .map(|w| documents.iter().filter(|doc| doc.contains(*w)).count())
        .collect();
    let missing_words: Vec<String> = words
        .iter()
        .zip(&df)
        .filter(|(_, &c)| c == 0)
        .map(|(w, _)| w.to_string())
        .collect();
    if !missing_words.is_empty() {
        log::warn!("coherence words absent from every document: {missing_words:?}");
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..words.len() {
        for b in a + 1..words.len() {
            let co = documents
                .iter()
                .filter(|doc| doc.contains(words[a]) && doc.contains(words[b]))
                .count() as f64;
            let da = df[a].max(1) as f64;
            let db = df[b].max(1) as f64;
            total += ((co + eps) * d / (da * db)).ln();
            pairs += 1;
        }
    }
    Ok(Coherence {
        score: total / pairs as f64,
        pairs,
        missing_words,
    })
}

/// Dictionary-word sets of the events, usable as coherence documents.
pub fn mark_documents(events: &[MarkedEvent], dictionary: &Dictionary) -> Vec<HashSet<String>> {
    events
        .iter()
        .map(|e| e.mark.ones().map(|w| dictionary.word(w).to_string()).collect())
        .collect()
}

/// Per-cluster coherence and the two corpus-level aggregations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub eps: f64,
    /// `None` for clusters with fewer than two keywords.
    pub per_cluster: Vec<Option<f64>>,
    /// Unweighted mean of the per-cluster scores.
    pub mean_of_clusters: Option<f64>,
    /// Mean over every word pair of every scored cluster.
    pub pooled: Option<f64>,
}

pub fn coherence_report(clusters: &[TopicCluster], documents: &[HashSet<String>], eps: f64) -> Result<CoherenceReport> {
    let mut per_cluster = Vec::with_capacity(clusters.len());
    let (mut sum, mut n) = (0.0, 0usize);
    let (mut pair_sum, mut pair_n) = (0.0, 0usize);
    for c in clusters {
        let words = c.words();
        if words.len() < 2 {
            per_cluster.push(None);
            continue;
        }
        let coh = uci_coherence(&words, documents, eps)?;
        sum += coh.score;
        n += 1;
        pair_sum += coh.score * coh.pairs as f64;
        pair_n += coh.pairs;
        per_cluster.push(Some(coh.score));
    }
    Ok(CoherenceReport {
        eps,
        per_cluster,
        mean_of_clusters: (n > 0).then(|| sum / n as f64),
        pooled: (pair_n > 0).then(|| pair_sum / pair_n as f64),
    })
}

// ---------------------------------------------------------------------------
// Timeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub midpoint_t: f64,
    pub size: usize,
    pub words: Vec<String>,
    pub dominant_node: String,
    pub dominant_attr: Option<String>,
}

/// One record per cluster, sorted by midpoint time.
pub fn timeline_export(clusters: &[TopicCluster], roster: Option<&NodeRoster>) -> Vec<TimelineRecord> {
    let mut out: Vec<TimelineRecord> = clusters
        .iter()
        .map(|c| TimelineRecord {
            midpoint_t: c.midpoint(),
            size: c.size,
            words: c.top_words.iter().map(|(w, _)| w.clone()).collect(),
            dominant_node: roster
                .filter(|r| c.dominant_node < r.len())
                .map(|r| r.get(c.dominant_node).node_id.clone())
                .unwrap_or_else(|| c.dominant_node.to_string()),
            dominant_attr: c.dominant_attr.clone(),
        })
        .collect();
    out.sort_by(|a, b| a.midpoint_t.total_cmp(&b.midpoint_t));
    out
}

/// Writes the timeline as CSV; the header is written even with no records.
pub fn write_timeline_csv<W: Write>(records: &[TimelineRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["midpoint_t", "size", "words", "dominant_node", "dominant_attr"])?;
    for r in records {
        w.write_record([
            r.midpoint_t.to_string(),
            r.size.to_string(),
            r.words.join(";"),
            r.dominant_node.clone(),
            r.dominant_attr.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts how often each event index appears across components.
pub fn membership_counts(components: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut seen = vec![0; n];
    for c in components {
        for &i in c {
            seen[i] += 1;
        }
    }
    seen
}

/// Component sizes in descending order.
pub fn component_sizes(forest: &BranchingForest) -> Vec<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for r in forest.roots() {
        *counts.entry(r).or_default() += 1;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}
