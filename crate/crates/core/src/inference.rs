//! EM estimation of [`ModelParams`].
//!
//! The E-step computes, for every event, the posterior probability that it
//! was spontaneous or triggered by each earlier event inside the history
//! window. The M-step re-estimates every parameter from those
//! responsibilities. Each M-step update maximizes the expected complete-data
//! log-likelihood in its own coordinates, so the observed log-likelihood
//! never decreases; a decrease is reported as an error.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::MarkedEvent;
use crate::error::{HbtmError, Result};
use crate::model::{
    j0_log_mass_counts, BackgroundRate, Bounds, ModelParams, OverlapCounts,
};

/// Attributed mass below which a parameter group keeps its previous value.
pub const MASS_FLOOR: f64 = 1e-8;
/// Background value given to nodes without events at initialization.
pub const BACKGROUND_FLOOR: f64 = 1e-10;
/// Relative likelihood drop tolerated before EM is declared broken.
pub const MONOTONE_TOL: f64 = 1e-8;

/// How ω, p_on and p_off are shared across node pairs. θ is always pairwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tying {
    /// One value per (receiver, source) pair.
    #[default]
    Pair,
    /// One value per receiving node.
    Receiver,
    /// A single value for the whole network.
    Global,
}

impl Tying {
    fn group(self, s: usize, src: usize, n_nodes: usize) -> usize {
        match self {
            Tying::Pair => s * n_nodes + src,
            Tying::Receiver => s,
            Tying::Global => 0,
        }
    }

    fn n_groups(self, n_nodes: usize) -> usize {
        match self {
            Tying::Pair => n_nodes * n_nodes,
            Tying::Receiver => n_nodes,
            Tying::Global => 1,
        }
    }
}

impl std::str::FromStr for Tying {
    type Err = HbtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair" => Ok(Tying::Pair),
            "receiver" => Ok(Tying::Receiver),
            "global" => Ok(Tying::Global),
            other => Err(HbtmError::InvalidConfig(format!("unknown tying {other:?}"))),
        }
    }
}

fn default_tau() -> Option<f64> {
    Some(14.0)
}

/// EM configuration, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Parent candidates older than this many days are ignored; `null` disables truncation.
    #[serde(default = "default_tau")]
    pub tau_max_days: Option<f64>,
    pub bin_width_days: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub tying: Tying,
    pub prob_eps: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Observation window; defaults to the span of the events.
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    /// Extra EM runs from jittered initializations; the best final likelihood wins.
    pub restarts: usize,
    pub jitter_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let b = Bounds::default();
        FitConfig {
            tau_max_days: default_tau(),
            bin_width_days: 1.0,
            max_iter: 200,
            tol: 1e-6,
            tying: Tying::Pair,
            prob_eps: b.prob_eps,
            omega_min: b.omega_min,
            omega_max: b.omega_max,
            t_start: None,
            t_end: None,
            restarts: 0,
            jitter_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            prob_eps: self.prob_eps,
            omega_min: self.omega_min,
            omega_max: self.omega_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HbtmError::InvalidConfig(m));
        if let Some(tau) = self.tau_max_days {
            if !(tau > 0.0) {
                return bad(format!("tau_max_days must be positive, got {tau}"));
            }
        }
        if !(self.bin_width_days > 0.0) || !self.bin_width_days.is_finite() {
            return bad(format!("bin_width_days must be positive, got {}", self.bin_width_days));
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if !(self.prob_eps > 0.0 && self.prob_eps < 0.5) {
            return bad(format!("prob_eps must lie in (0, 0.5), got {}", self.prob_eps));
        }
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max && self.omega_max.is_finite()) {
            return bad(format!(
                "omega bounds must satisfy 0 < omega_min < omega_max < inf, got [{}, {}]",
                self.omega_min, self.omega_max
            ));
        }
        Ok(())
    }

    /// Observation window for `events` (sorted, nonempty).
    pub fn window(&self, events: &[MarkedEvent]) -> (f64, f64) {
        let first = events.first().map_or(0.0, |e| e.timestamp);
        let last = events.last().map_or(0.0, |e| e.timestamp);
        let t_start = self.t_start.unwrap_or(first);
        let mut t_end = self.t_end.unwrap_or(last);
        if t_end <= t_start {
            t_end = t_start + self.bin_width_days;
        }
        (t_start, t_end)
    }
}

// ---------------------------------------------------------------------------
// Branching matrix

/// Lower-triangular row-stochastic responsibilities.
///
/// Row `i` holds the spontaneous probability `q_ii` and, for each candidate
/// parent `j < i`, the probability `q_ij` that event `i` was triggered by `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingMatrix {
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    parents: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Triplet {
    i: usize,
    j: usize,
    q: f64,
}

impl BranchingMatrix {
    /// Builds a matrix from per-row `(q_ii, [(j, q_ij)])` with parents ascending.
    pub fn from_rows(rows: Vec<(f64, Vec<(usize, f64)>)>) -> Result<Self> {
        let mut m = BranchingMatrix {
            diag: Vec::with_capacity(rows.len()),
            row_ptr: vec![0],
            parents: Vec::new(),
            probs: Vec::new(),
        };
        for (i, (d, row)) in rows.into_iter().enumerate() {
            if !(d >= 0.0) {
                return Err(HbtmError::Domain(format!("row {i}: negative spontaneous mass {d}")));
            }
            m.diag.push(d);
            let mut last = None;
            for (j, q) in row {
                if j >= i || last.is_some_and(|l| j <= l) {
                    return Err(HbtmError::Domain(format!(
                        "row {i}: parent {j} out of order or not earlier than the event"
                    )));
                }
                if !(q >= 0.0) {
                    return Err(HbtmError::Domain(format!("row {i}: negative entry {q}")));
                }
                last = Some(j);
                m.parents.push(j);
                m.probs.push(q);
            }
            m.row_ptr.push(m.parents.len());
        }
        Ok(m)
    }

    /// Every event spontaneous with probability one.
    pub fn identity(n: usize) -> Self {
        BranchingMatrix {
            diag: vec![1.0; n],
            row_ptr: vec![0; n + 1],
            parents: Vec::new(),
            probs: Vec::new(),
        }
    }

    pub fn n_events(&self) -> usize {
        self.diag.len()
    }

    /// Number of stored off-diagonal entries.
    pub fn n_links(&self) -> usize {
        self.parents.len()
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries `(j, q_ij)` of row `i`, parents ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.parents[r.clone()].iter().copied().zip(self.probs[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.row(i).map(|(_, q)| q).sum::<f64>()
    }

    /// All entries `(i, j, q)` with `j < i` (off-diagonal), in row order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_events()).flat_map(move |i| self.row(i).map(move |(j, q)| (i, j, q)))
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        (0..self.n_events())
            .map(|i| (self.row_sum(i) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of every entry; equals the event count for a row-stochastic matrix.
    pub fn total_mass(&self) -> f64 {
        self.diag.iter().sum::<f64>() + self.probs.iter().sum::<f64>()
    }

    /// Writes `(i, j, q)` triplets as JSONL, parents ascending then the
    /// diagonal, rows in event order. Zero off-diagonal entries are omitted.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.n_events() {
            for (j, q) in self.row(i) {
                if q != 0.0 {
                    serde_json::to_writer(&mut out, &Triplet { i, j, q })?;
                    out.write_all(b"\n")?;
                }
            }
            serde_json::to_writer(&mut out, &Triplet { i, j: i, q: self.diag[i] })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
        let mut seen_diag: Vec<bool> = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Triplet = serde_json::from_str(&line).map_err(|e| HbtmError::Parse {
                line: k + 1,
                msg: e.to_string(),
            })?;
            if t.i >= rows.len() {
                rows.resize_with(t.i + 1, || (0.0, Vec::new()));
                seen_diag.resize(t.i + 1, false);
            }
            if t.j == t.i {
                rows[t.i].0 = t.q;
                seen_diag[t.i] = true;
            } else {
                rows[t.i].1.push((t.j, t.q));
            }
        }
        if let Some(i) = seen_diag.iter().position(|s| !s) {
            return Err(HbtmError::Domain(format!("branching row {i} has no diagonal entry")));
        }
        for r in &mut rows {
            r.1.sort_by_key(|e| e.0);
        }
        BranchingMatrix::from_rows(rows)
    }
}

// ---------------------------------------------------------------------------
// Candidate parents

/// For each event, the earlier events inside the history window with their
/// delays and mark overlaps. Fixed across EM iterations.
struct Candidates {
    row_ptr: Vec<usize>,
    parent: Vec<u32>,
    dt: Vec<f64>,
    /// (w1, w3, w4); w2 follows from the dictionary size.
    overlap: Vec<[u32; 3]>,
}

impl Candidates {
    fn build(events: &[MarkedEvent], tau_max: Option<f64>) -> Self {
        let times: Vec<f64> = events.iter().map(|e| e.timestamp).collect();
        let ones: Vec<usize> = events.iter().map(|e| e.mark.count_ones()).collect();
        let rows: Vec<Vec<(u32, f64, [u32; 3])>> = (0..events.len())
            .into_par_iter()
            .map(|i| {
                let t = times[i];
                let hi = times[..i].partition_point(|&tj| tj < t);
                let lo = match tau_max {
                    Some(tau) => times[..hi].partition_point(|&tj| t - tj > tau),
                    None => 0,
                };
                (lo..hi)
                    .map(|j| {
                        let common = events[i].mark.count_common(&events[j].mark);
                        let w1 = ones[i] - common;
                        let w3 = ones[j] - common;
                        (j as u32, t - times[j], [w1 as u32, w3 as u32, common as u32])
                    })
                    .collect()
            })
            .collect();
        let mut c = Candidates {
            row_ptr: vec![0],
            parent: Vec::new(),
            dt: Vec::new(),
            overlap: Vec::new(),
        };
        for row in rows {
            for (j, dt, o) in row {
                c.parent.push(j);
                c.dt.push(dt);
                c.overlap.push(o);
            }
            c.row_ptr.push(c.parent.len());
        }
        c
    }
}

fn overlap_counts(o: [u32; 3], dict_size: usize) -> OverlapCounts {
    let [w1, w3, w4] = o.map(|v| v as usize);
    OverlapCounts {
        w1,
        w2: dict_size - w1 - w3 - w4,
        w3,
        w4,
    }
}

/// Per-pair logarithms reused across all rows of one E-step.
struct LogTables {
    n: usize,
    ln_theta: Vec<f64>,
    ln_omega: Vec<f64>,
    omega: Vec<f64>,
    ln_on: Vec<f64>,
    ln_on_c: Vec<f64>,
    ln_off: Vec<f64>,
    ln_off_c: Vec<f64>,
}

impl LogTables {
    fn new(p: &ModelParams) -> Self {
        let flat = |m: &Vec<Vec<f64>>, f: fn(f64) -> f64| -> Vec<f64> {
            m.iter().flatten().map(|&v| f(v)).collect()
        };
        LogTables {
            n: p.n_nodes,
            ln_theta: flat(&p.theta, f64::ln),
            ln_omega: flat(&p.omega, f64::ln),
            omega: flat(&p.omega, |v| v),
            ln_on: flat(&p.p_on, f64::ln),
            ln_on_c: flat(&p.p_on, |v| (-v).ln_1p()),
            ln_off: flat(&p.p_off, f64::ln),
            ln_off_c: flat(&p.p_off, |v| (-v).ln_1p()),
        }
    }

    #[inline]
    fn trigger(&self, s: usize, src: usize, dt: f64, o: &OverlapCounts) -> f64 {
        let k = s * self.n + src;
        let lt = self.ln_theta[k];
        if lt == f64::NEG_INFINITY {
            return lt;
        }
        lt + self.ln_omega[k] - self.omega[k] * dt
            + o.w1 as f64 * self.ln_on[k]
            + o.w2 as f64 * self.ln_on_c[k]
            + o.w3 as f64 * self.ln_off[k]
            + o.w4 as f64 * self.ln_off_c[k]
    }
}

// ---------------------------------------------------------------------------
// E-step

fn check_events(events: &[MarkedEvent], n_nodes: usize, dict_size: usize) -> Result<()> {
    for (i, e) in events.iter().enumerate() {
        if e.node_index >= n_nodes {
            return Err(HbtmError::Domain(format!(
                "event {i} has node index {} but S = {n_nodes}",
                e.node_index
            )));
        }
        if e.mark.len() != dict_size {
            return Err(HbtmError::LengthMismatch {
                expected: dict_size,
                got: e.mark.len(),
            });
        }
        if !e.timestamp.is_finite() {
            return Err(HbtmError::Domain(format!("event {i} has a non-finite timestamp")));
        }
        if i > 0 && e.timestamp < events[i - 1].timestamp {
            return Err(HbtmError::Domain(format!("events are not time-sorted at index {i}")));
        }
    }
    Ok(())
}

/// Responsibilities plus Σ_i ln λ(t_i, m_i) under `params`.
fn e_step_cached(
    params: &ModelParams,
    events: &[MarkedEvent],
    cands: &Candidates,
) -> Result<(BranchingMatrix, f64)> {
    let tables = LogTables::new(params);
    let w = params.dict_size;
    let rows: Vec<Result<(f64, Vec<f64>, f64)>> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let ev = &events[i];
            let s = ev.node_index;
            let mu = params.background.rate(s, ev.timestamp);
            let diag = if mu > 0.0 {
                mu.ln() + j0_log_mass_counts(ev.mark.count_ones(), w, params.p0[s])
            } else {
                f64::NEG_INFINITY
            };
            let range = cands.row_ptr[i]..cands.row_ptr[i + 1];
            let mut terms: Vec<f64> = range
                .clone()
                .map(|c| {
                    let src = events[cands.parent[c] as usize].node_index;
                    tables.trigger(s, src, cands.dt[c], &overlap_counts(cands.overlap[c], w))
                })
                .collect();
            let max = terms.iter().copied().fold(diag, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(HbtmError::ZeroIntensity { event: i });
            }
            let mut total = (diag - max).exp();
            for t in &mut terms {
                *t = (*t - max).exp();
                total += *t;
            }
            for t in &mut terms {
                *t /= total;
            }
            Ok(((diag - max).exp() / total, terms, max + total.ln()))
        })
        .collect();

    let mut m = BranchingMatrix {
        diag: Vec::with_capacity(events.len()),
        row_ptr: Vec::with_capacity(events.len() + 1),
        parents: Vec::with_capacity(cands.parent.len()),
        probs: Vec::with_capacity(cands.parent.len()),
    };
    m.row_ptr.push(0);
    let mut log_lambda = 0.0;
    for (i, row) in rows.into_iter().enumerate() {
        let (d, probs, ll) = row?;
        m.diag.push(d);
        let range = cands.row_ptr[i]..cands.row_ptr[i + 1];
        m.parents.extend(cands.parent[range].iter().map(|&j| j as usize));
        m.probs.extend(probs);
        m.row_ptr.push(m.parents.len());
        log_lambda += ll;
    }
    Ok((m, log_lambda))
}

/// Posterior branching probabilities under `params`.
///
/// `tau_max = None` considers every earlier event as a candidate parent.
pub fn e_step(params: &ModelParams, events: &[MarkedEvent], tau_max: Option<f64>) -> Result<BranchingMatrix> {
    check_events(events, params.n_nodes, params.dict_size)?;
    let cands = Candidates::build(events, tau_max);
    Ok(e_step_cached(params, events, &cands)?.0)
}

// ---------------------------------------------------------------------------
// M-step

/// Per-source observation horizons `min(t_end - t_j, tau_max)`.
///
/// Horizons equal to `tau_max` are only counted, since they dominate in
/// long windows.
struct Horizons {
    full: Vec<usize>,
    tau: f64,
    partial: Vec<Vec<f64>>,
}

impl Horizons {
    fn new(events: &[MarkedEvent], n_nodes: usize, t_end: f64, tau_max: Option<f64>) -> Self {
        let tau = tau_max.unwrap_or(f64::INFINITY);
        let mut h = Horizons {
            full: vec![0; n_nodes],
            tau,
            partial: vec![Vec::new(); n_nodes],
        };
        for e in events {
            let l = (t_end - e.timestamp).max(0.0);
            if l >= tau {
                h.full[e.node_index] += 1;
            } else {
                h.partial[e.node_index].push(l);
            }
        }
        h
    }

    /// Σ_j (1 - e^{-ω L_j}) over events at `src`, and its derivative in ω.
    fn exposure(&self, src: usize, omega: f64) -> (f64, f64) {
        let mut g = 0.0;
        let mut dg = 0.0;
        if self.full[src] > 0 {
            let e = (-omega * self.tau).exp();
            g += self.full[src] as f64 * -(-omega * self.tau).exp_m1();
            dg += self.full[src] as f64 * self.tau * e;
        }
        for &l in &self.partial[src] {
            let e = (-omega * l).exp();
            g += -(-omega * l).exp_m1();
            dg += l * e;
        }
        (g, dg)
    }

    fn count(&self, src: usize) -> usize {
        self.full[src] + self.partial[src].len()
    }
}

/// Sufficient statistics gathered from one branching matrix.
struct Stats {
    n: usize,
    spont: Vec<f64>,
    spont_words: Vec<f64>,
    bins: Vec<Vec<f64>>,
    mass: Vec<f64>,
    delay: Vec<f64>,
    on_num: Vec<f64>,
    on_den: Vec<f64>,
    off_num: Vec<f64>,
    off_den: Vec<f64>,
}

impl Stats {
    fn collect(events: &[MarkedEvent], q: &BranchingMatrix, prev: &ModelParams) -> Result<Self> {
        let n = prev.n_nodes;
        let w = prev.dict_size;
        let bg = &prev.background;
        let mut st = Stats {
            n,
            spont: vec![0.0; n],
            spont_words: vec![0.0; n],
            bins: vec![vec![0.0; bg.n_bins()]; n],
            mass: vec![0.0; n * n],
            delay: vec![0.0; n * n],
            on_num: vec![0.0; n * n],
            on_den: vec![0.0; n * n],
            off_num: vec![0.0; n * n],
            off_den: vec![0.0; n * n],
        };
        for (i, ev) in events.iter().enumerate() {
            let s = ev.node_index;
            let d = q.diag(i);
            st.spont[s] += d;
            st.spont_words[s] += d * ev.mark.count_ones() as f64;
            if let Some(k) = bg.bin_index(ev.timestamp) {
                st.bins[s][k] += d;
            } else if d > 0.0 {
                return Err(HbtmError::OutsideWindow {
                    t: ev.timestamp,
                    start: bg.t_start,
                    end: bg.t_end,
                });
            }
            let ones = ev.mark.count_ones();
            for (j, qij) in q.row(i) {
                if qij == 0.0 {
                    continue;
                }
                let par = &events[j];
                let k = s * n + par.node_index;
                let common = ev.mark.count_common(&par.mark);
                let o = OverlapCounts::from_counts(w, ones, par.mark.count_ones(), common);
                st.mass[k] += qij;
                st.delay[k] += qij * (ev.timestamp - par.timestamp);
                st.on_num[k] += qij * o.w1 as f64;
                st.on_den[k] += qij * (o.w1 + o.w2) as f64;
                st.off_num[k] += qij * o.w3 as f64;
                st.off_den[k] += qij * (o.w3 + o.w4) as f64;
            }
        }
        Ok(st)
    }

    /// Pools a pairwise statistic into tying groups.
    fn pooled(&self, v: &[f64], tying: Tying) -> Vec<f64> {
        let mut out = vec![0.0; tying.n_groups(self.n)];
        for s in 0..self.n {
            for src in 0..self.n {
                out[tying.group(s, src, self.n)] += v[s * self.n + src];
            }
        }
        out
    }
}

/// Maximizes `mass·ln ω − ω·delay − Σ_src c_src·G_src(ω)` over the ω bounds,
/// never returning a point worse than `prev`.
fn update_omega(
    mass: f64,
    delay: f64,
    coef: &[(usize, f64)],
    horizons: &Horizons,
    prev: f64,
    bounds: &Bounds,
) -> f64 {
    let penalty = |w: f64| -> (f64, f64) {
        coef.iter().fold((0.0, 0.0), |(p, dp), &(src, c)| {
            let (g, dg) = horizons.exposure(src, w);
            (p + c * g, dp + c * dg)
        })
    };
    let objective = |w: f64| mass * w.ln() - w * delay - penalty(w).0;
    let slope = |w: f64| mass / w - delay - penalty(w).1;
    let (lo, hi) = (bounds.omega_min, bounds.omega_max);

    let closed = if delay > 0.0 { bounds.clip_omega(mass / delay) } else { hi };
    let (_, dp) = penalty(closed);
    let candidate = if dp <= 1e-14 * mass / closed {
        closed
    } else if slope(lo) <= 0.0 {
        lo
    } else if slope(hi) >= 0.0 {
        hi
    } else {
        let (mut a, mut b) = (lo.ln(), hi.ln());
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if slope(mid.exp()) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-15 {
                break;
            }
        }
        (0.5 * (a + b)).exp()
    };
    if objective(candidate) >= objective(prev) {
        candidate
    } else {
        prev
    }
}

/// Re-estimates all parameters from responsibilities `q`.
///
/// Background bins become spontaneous mass per unit time; p0, p_on and p_off
/// are weighted Bernoulli frequencies; ω maximizes its expected complete-data
/// likelihood with θ held at `prev`; θ then becomes attributed mass over the
/// source node's exposure `Σ_j (1 − e^{−ω L_j})`, where `L_j` is the part of
/// the window (capped at τ_max) left after event `j`. Groups with attributed
/// mass below [`MASS_FLOOR`] keep their previous values.
pub fn m_step(events: &[MarkedEvent], q: &BranchingMatrix, prev: &ModelParams, config: &FitConfig) -> Result<ModelParams> {
    let (_, t_end) = (prev.background.t_start, prev.background.t_end);
    let horizons = Horizons::new(events, prev.n_nodes, t_end, config.tau_max_days);
    m_step_with(events, q, prev, config, &horizons)
}

fn m_step_with(
    events: &[MarkedEvent],
    q: &BranchingMatrix,
    prev: &ModelParams,
    config: &FitConfig,
    horizons: &Horizons,
) -> Result<ModelParams> {
    if q.n_events() != events.len() {
        return Err(HbtmError::LengthMismatch {
            expected: events.len(),
            got: q.n_events(),
        });
    }
    let bounds = config.bounds();
    let st = Stats::collect(events, q, prev)?;
    let n = prev.n_nodes;
    let w = prev.dict_size as f64;
    let mut next = prev.clone();

    for s in 0..n {
        for (k, v) in st.bins[s].iter().enumerate() {
            let len = prev.background.bin_length(k);
            next.background.bins[s][k] = if len > 0.0 { v / len } else { 0.0 };
        }
        if st.spont[s] >= MASS_FLOOR && w > 0.0 {
            next.p0[s] = bounds.clip_prob(st.spont_words[s] / (w * st.spont[s]));
        }
    }

    let tying = config.tying;
    let mass = st.pooled(&st.mass, tying);
    let delay = st.pooled(&st.delay, tying);
    let on_num = st.pooled(&st.on_num, tying);
    let on_den = st.pooled(&st.on_den, tying);
    let off_num = st.pooled(&st.off_num, tying);
    let off_den = st.pooled(&st.off_den, tying);

    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); tying.n_groups(n)];
    for s in 0..n {
        for src in 0..n {
            members[tying.group(s, src, n)].push((s, src));
        }
    }

    for (g, pairs) in members.iter().enumerate() {
        if mass[g] < MASS_FLOOR {
            continue;
        }
        if on_den[g] >= MASS_FLOOR {
            let v = bounds.clip_prob(on_num[g] / on_den[g]);
            pairs.iter().for_each(|&(s, src)| next.p_on[s][src] = v);
        }
        if off_den[g] >= MASS_FLOOR {
            let v = bounds.clip_prob(off_num[g] / off_den[g]);
            pairs.iter().for_each(|&(s, src)| next.p_off[s][src] = v);
        }
        // Pairs in a group share ω, so the previous value is common to them.
        let (s0, src0) = pairs[0];
        let mut coef: Vec<(usize, f64)> = Vec::new();
        for &(s, src) in pairs {
            let c = prev.theta[s][src];
            if c > 0.0 {
                match coef.iter_mut().find(|(k, _)| *k == src) {
                    Some(e) => e.1 += c,
                    None => coef.push((src, c)),
                }
            }
        }
        let omega = if pairs.iter().all(|&(s, src)| prev.omega[s][src] == prev.omega[s0][src0]) {
            update_omega(mass[g], delay[g], &coef, horizons, prev.omega[s0][src0], &bounds)
        } else {
            // Tied values can only diverge if the caller mixed tying modes;
            // refit from the group's mean as the reference point.
            let mean = pairs.iter().map(|&(s, src)| prev.omega[s][src]).sum::<f64>() / pairs.len() as f64;
            update_omega(mass[g], delay[g], &coef, horizons, bounds.clip_omega(mean), &bounds)
        };
        pairs.iter().for_each(|&(s, src)| next.omega[s][src] = omega);
    }

    for s in 0..n {
        for src in 0..n {
            if horizons.count(src) == 0 {
                continue;
            }
            let (exposure, _) = horizons.exposure(src, next.omega[s][src]);
            if exposure > 0.0 {
                next.theta[s][src] = st.mass[s * n + src] / exposure;
            }
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Fit

/// Outcome of an EM run.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Log-likelihood of each parameter iterate, starting with the initialization.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub final_params: ModelParams,
    /// Responsibilities under `final_params`.
    pub branching: BranchingMatrix,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace always holds the initialization")
    }
}

/// Deterministic starting point for EM.
pub fn initialize(events: &[MarkedEvent], n_nodes: usize, dict_size: usize, config: &FitConfig) -> Result<ModelParams> {
    config.validate()?;
    let bounds = config.bounds();
    let (t_start, t_end) = config.window(events);
    let mut bg = BackgroundRate::zeros(n_nodes, t_start, t_end, config.bin_width_days)?;
    let mut counts = vec![0usize; n_nodes];
    let mut words = vec![0usize; n_nodes];
    for e in events {
        let s = e.node_index;
        if s >= n_nodes {
            return Err(HbtmError::Domain(format!("node index {s} out of range for S={n_nodes}")));
        }
        counts[s] += 1;
        words[s] += e.mark.count_ones();
        if let Some(k) = bg.bin_index(e.timestamp) {
            bg.bins[s][k] += 1.0;
        }
    }
    for s in 0..n_nodes {
        for k in 0..bg.n_bins() {
            let len = bg.bin_length(k);
            bg.bins[s][k] = if counts[s] == 0 {
                BACKGROUND_FLOOR
            } else if len > 0.0 {
                bg.bins[s][k] / len
            } else {
                0.0
            };
        }
    }
    let mut params = ModelParams::uniform(dict_size, bg, 0.5, 0.1, bounds.clip_omega(1.0), 0.05, 0.5);
    for s in 0..n_nodes {
        params.p0[s] = if counts[s] == 0 || dict_size == 0 {
            bounds.prob_eps
        } else {
            bounds.clip_prob(words[s] as f64 / (counts[s] * dict_size) as f64)
        };
    }
    Ok(params)
}

fn jittered(base: &ModelParams, bounds: &Bounds, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = base.clone();
    for s in 0..p.n_nodes {
        for src in 0..p.n_nodes {
            p.theta[s][src] *= rng.random_range(0.5..1.5);
            p.omega[s][src] = bounds.clip_omega(p.omega[s][src] * rng.random_range(0.5..2.0));
            p.p_on[s][src] = bounds.clip_prob(p.p_on[s][src] * rng.random_range(0.5..1.5));
            p.p_off[s][src] = bounds.clip_prob(p.p_off[s][src] * rng.random_range(0.5..1.5));
        }
    }
    p
}

fn compensator(params: &ModelParams, horizons: &Horizons) -> f64 {
    let n = params.n_nodes;
    let mut total: f64 = (0..n).map(|s| params.background.total_integral(s)).sum();
    for src in 0..n {
        for s in 0..n {
            let theta = params.theta[s][src];
            if theta != 0.0 {
                total += theta * horizons.exposure(src, params.omega[s][src]).0;
            }
        }
    }
    total
}

fn run_em(
    events: &[MarkedEvent],
    init: ModelParams,
    config: &FitConfig,
    cands: &Candidates,
    horizons: &Horizons,
) -> Result<FitReport> {
    let mut params = init;
    let (mut q, log_lambda) = e_step_cached(&params, events, cands)?;
    let mut trace = vec![log_lambda - compensator(&params, horizons)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = m_step_with(events, &q, &params, config, horizons)?;
        let (next_q, log_lambda) = e_step_cached(&next, events, cands)?;
        let ll = log_lambda - compensator(&next, horizons);
        let prev_ll = *trace.last().expect("nonempty");
        iterations += 1;
        if ll < prev_ll - MONOTONE_TOL * prev_ll.abs() {
            return Err(HbtmError::LikelihoodDecrease {
                iteration: iterations,
                previous: prev_ll,
                current: ll,
            });
        }
        trace.push(ll);
        params = next;
        q = next_q;
        log::debug!("EM iteration {iterations}: log-likelihood {ll}");
        if (ll - prev_ll).abs() <= config.tol * prev_ll.abs() {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        iterations,
        log_likelihood_trace: trace,
        converged,
        final_params: params,
        branching: q,
    })
}

/// Fits the model to time-sorted `events` by EM.
pub fn fit(events: &[MarkedEvent], n_nodes: usize, dict_size: usize, config: &FitConfig) -> Result<FitReport> {
    fit_from(events, initialize(events, n_nodes, dict_size, config)?, config)
}

/// Runs EM from a caller-supplied starting point. The background window of
/// `init` defines the observation window.
pub fn fit_from(events: &[MarkedEvent], init: ModelParams, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    if events.is_empty() {
        return Err(HbtmError::InvalidConfig("fit needs at least one event".into()));
    }
    check_events(events, init.n_nodes, init.dict_size)?;
    let bounds = config.bounds();
    init.validate(&bounds)?;
    let bg = &init.background;
    if let Some(e) = events.iter().find(|e| !bg.contains(e.timestamp)) {
        return Err(HbtmError::OutsideWindow {
            t: e.timestamp,
            start: bg.t_start,
            end: bg.t_end,
        });
    }
    let cands = Candidates::build(events, config.tau_max_days);
    let horizons = Horizons::new(events, init.n_nodes, bg.t_end, config.tau_max_days);
    log::info!(
        "fitting {} events, S={}, W={}, {} candidate links",
        events.len(),
        init.n_nodes,
        init.dict_size,
        cands.parent.len()
    );

    let mut best = run_em(events, init.clone(), config, &cands, &horizons)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.jitter_seed);
    for r in 0..config.restarts {
        let start = jittered(&init, &bounds, &mut rng);
        let report = run_em(events, start, config, &cands, &horizons)?;
        log::info!("restart {}: final log-likelihood {}", r + 1, report.final_log_likelihood());
        if report.final_log_likelihood() > best.final_log_likelihood() {
            best = report;
        }
    }
    Ok(best)
}
