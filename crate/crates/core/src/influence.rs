//! Influence networks from attributed triggering mass, degree rankings and
//! the spontaneous-versus-triggering decomposition per node.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{MarkedEvent, NodeInfo};
use crate::error::{HbtmError, Result};
use crate::inference::BranchingMatrix;
use crate::model::ModelParams;

/// Header line carried by every network export.
pub const GRANGER_CAVEAT: &str = "Edges measure Granger causality (triggering inferred from temporal \
precedence); they do not control for confounding effects.";

/// Default pruning threshold for drawn edges, in expected events.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 10.0;

/// Directed network of expected cross-node triggering.
///
/// `weights[from][to]` is the expected number of events at `to` directly
/// triggered by events at `from`. Self-excitation stays on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceNetwork {
    pub nodes: Vec<NodeInfo>,
    /// Event count per node.
    pub event_counts: Vec<usize>,
    pub threshold: f64,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    /// Weight divided by the target's event count.
    pub fraction_of_target: f64,
}

/// Sums `q_ij` over event pairs by (parent node, child node).
pub fn influence_network(
    q: &BranchingMatrix,
    events: &[MarkedEvent],
    nodes: &[NodeInfo],
    threshold: f64,
) -> Result<InfluenceNetwork> {
    if q.n_events() != events.len() {
        return Err(HbtmError::LengthMismatch {
            expected: events.len(),
            got: q.n_events(),
        });
    }
    let n = nodes.len();
    let mut weights = vec![vec![0.0; n]; n];
    let mut event_counts = vec![0; n];
    for e in events {
        if e.node_index >= n {
            return Err(HbtmError::Domain(format!(
                "event node {} outside roster of {n}",
                e.node_index
            )));
        }
        event_counts[e.node_index] += 1;
    }
    for (i, j, qij) in q.links() {
        weights[events[j].node_index][events[i].node_index] += qij;
    }
    Ok(InfluenceNetwork {
        nodes: nodes.to_vec(),
        event_counts,
        threshold,
        weights,
    })
}

impl InfluenceNetwork {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn edge(&self, from: usize, to: usize) -> Edge {
        let weight = self.weights[from][to];
        let n_to = self.event_counts[to];
        Edge {
            from,
            to,
            weight,
            fraction_of_target: if n_to > 0 { weight / n_to as f64 } else { 0.0 },
        }
    }

    /// Every edge with positive weight, self-loops included.
    pub fn edges(&self) -> Vec<Edge> {
        let n = self.n_nodes();
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.weights[a][b] > 0.0)
            .map(|(a, b)| self.edge(a, b))
            .collect()
    }

    /// Edges at or above the threshold, self-loops excluded.
    pub fn pruned_edges(&self) -> Vec<Edge> {
        self.edges()
            .into_iter()
            .filter(|e| e.from != e.to && e.weight >= self.threshold)
            .collect()
    }

    pub fn self_excitation(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|s| self.weights[s][s]).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: InfluenceNetwork = serde_json::from_str(s)?;
        let n = net.nodes.len();
        if net.weights.len() != n || net.weights.iter().any(|r| r.len() != n) || net.event_counts.len() != n {
            return Err(HbtmError::Domain("network arrays do not match the node list".into()));
        }
        Ok(net)
    }

    /// Edge list of the pruned view.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["from", "to", "weight", "fraction_of_target"])?;
        for e in self.pruned_edges() {
            w.write_record([
                self.nodes[e.from].node_id.clone(),
                self.nodes[e.to].node_id.clone(),
                e.weight.to_string(),
                e.fraction_of_target.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HbtmError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }

    /// DOT digraph of the pruned view; nodes are colored by `color_attr`
    /// (`D` blue, `R` red, anything else gray).
    pub fn to_dot(&self, color_attr: &str) -> String {
        let mut s = String::new();
        writeln!(s, "// {GRANGER_CAVEAT}").unwrap();
        writeln!(s, "// edges with weight < {} removed", self.threshold).unwrap();
        s.push_str("digraph influence {\n");
        for node in &self.nodes {
            let color = match node.attrs.get(color_attr).map(String::as_str) {
                Some("D") => "blue",
                Some("R") => "red",
                _ => "gray",
            };
            writeln!(s, "  {} [color={color}];", quote(&node.node_id)).unwrap();
        }
        for e in self.pruned_edges() {
            writeln!(
                s,
                "  {} -> {} [label=\"{:.2}\", weight={:.2}];",
                quote(&self.nodes[e.from].node_id),
                quote(&self.nodes[e.to].node_id),
                e.weight,
                e.weight
            )
            .unwrap();
        }
        s.push_str("}\n");
        s
    }
}

fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Top-k nodes by weighted in- and out-degree over the pruned view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeRankings {
    /// Most influenced first.
    pub in_degree: Vec<(usize, f64)>,
    /// Most influential first.
    pub out_degree: Vec<(usize, f64)>,
}

/// Weighted degrees over retained cross-node edges; only nodes with positive
/// degree are ranked, descending, ties by node index.
pub fn degree_rankings(network: &InfluenceNetwork, k: usize) -> Result<DegreeRankings> {
    if k == 0 {
        return Err(HbtmError::InvalidConfig("ranking length must be >= 1".into()));
    }
    let (ins, outs) = degrees(network);
    let rank = |v: Vec<f64>| {
        let mut r: Vec<(usize, f64)> = v.into_iter().enumerate().filter(|&(_, d)| d > 0.0).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r.truncate(k);
        r
    };
    Ok(DegreeRankings {
        in_degree: rank(ins),
        out_degree: rank(outs),
    })
}

/// (in-degree, out-degree) per node over the pruned view.
pub fn degrees(network: &InfluenceNetwork) -> (Vec<f64>, Vec<f64>) {
    let n = network.n_nodes();
    let mut ins = vec![0.0; n];
    let mut outs = vec![0.0; n];
    for e in network.pruned_edges() {
        ins[e.to] += e.weight;
        outs[e.from] += e.weight;
    }
    (ins, outs)
}

/// Writes both rankings as CSV rows `ranking,rank,node,in_degree,out_degree`.
pub fn rankings_csv(network: &InfluenceNetwork, rankings: &DegreeRankings) -> Result<String> {
    let (ins, outs) = degrees(network);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ranking", "rank", "node", "in_degree", "out_degree"])?;
    for (label, list) in [("in", &rankings.in_degree), ("out", &rankings.out_degree)] {
        for (r, &(node, _)) in list.iter().enumerate() {
            w.write_record([
                label.to_string(),
                (r + 1).to_string(),
                network.nodes[node].node_id.clone(),
                ins[node].to_string(),
                outs[node].to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HbtmError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

/// Spontaneous and triggering activity of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeActivity {
    pub node: usize,
    pub events: usize,
    /// Σ q_ii over the node's events.
    pub spontaneous_mass: f64,
    /// Expected direct offspring per event, from attributed mass.
    pub triggering_influence: f64,
    pub spontaneous_share: f64,
    pub influence_share: f64,
    /// Σ_s θ[s][node], when parameters are supplied.
    pub theta_influence: Option<f64>,
}

fn shares(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Per-node spontaneous mass and triggering influence, with each column
/// also normalized to sum to one across nodes (all zeros if the column is).
pub fn activity_decomposition(
    q: &BranchingMatrix,
    events: &[MarkedEvent],
    n_nodes: usize,
    params: Option<&ModelParams>,
) -> Result<Vec<NodeActivity>> {
    if q.n_events() != events.len() {
        return Err(HbtmError::LengthMismatch {
            expected: events.len(),
            got: q.n_events(),
        });
    }
    let mut counts = vec![0usize; n_nodes];
    let mut spont = vec![0.0; n_nodes];
    let mut offspring = vec![0.0; n_nodes];
    for (i, e) in events.iter().enumerate() {
        if e.node_index >= n_nodes {
            return Err(HbtmError::Domain(format!("event node {} outside S={n_nodes}", e.node_index)));
        }
        counts[e.node_index] += 1;
        spont[e.node_index] += q.diag(i);
    }
    for (_, j, qij) in q.links() {
        offspring[events[j].node_index] += qij;
    }
    let influence: Vec<f64> = (0..n_nodes)
        .map(|s| if counts[s] > 0 { offspring[s] / counts[s] as f64 } else { 0.0 })
        .collect();
    let spont_share = shares(&spont);
    let infl_share = shares(&influence);
    Ok((0..n_nodes)
        .map(|s| NodeActivity {
            node: s,
            events: counts[s],
            spontaneous_mass: spont[s],
            triggering_influence: influence[s],
            spontaneous_share: spont_share[s],
            influence_share: infl_share[s],
            theta_influence: params.map(|p| (0..p.n_nodes).map(|r| p.theta[r][s]).sum()),
        })
        .collect())
}
