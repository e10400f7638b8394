//! Branching-process simulation of the marked network Hawkes process.
//!
//! Draw order for a seed: immigrants node by node and bin by bin (count,
//! then for each immigrant its time and its W word indicators); then
//! offspring in breadth-first order of creation, for each parent and each
//! receiving node: the offspring count, then per child its delay and, when
//! the child falls inside the window, its W word indicators.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::MarkedEvent;
use crate::error::{HbtmError, Result};
use crate::mark::Mark;
use crate::model::ModelParams;

/// A simulated event with its ground-truth parentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEvent {
    #[serde(flatten)]
    pub event: MarkedEvent,
    /// Index of the parent in the returned (time-sorted) list.
    pub parent_index: Option<usize>,
    pub generation: usize,
}

/// Spectral radius of θ.
///
/// Runs power iteration on `θ + I` (a nonnegative matrix with positive
/// diagonal, so its Perron root is `ρ(θ) + 1`), squaring the iteration matrix
/// each round and stopping once the Collatz–Wielandt bounds agree.
pub fn branching_ratio(params: &ModelParams) -> f64 {
    spectral_radius(&params.theta)
}

pub fn spectral_radius(theta: &[Vec<f64>]) -> f64 {
    let n = theta.len();
    if n == 0 {
        return 0.0;
    }
    let shifted: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| theta[i][j] + f64::from(u8::from(i == j))).collect())
        .collect();
    let apply = |m: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    };
    let bounds = |x: &[f64]| -> (f64, f64) {
        let ax = apply(&shifted, x);
        ax.iter().zip(x).fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| {
            let r = a / b;
            (lo.min(r), hi.max(r))
        })
    };

    // The upper bound converges for reducible matrices too; the lower one
    // only certifies early exit in the irreducible case.
    let mut power = shifted.clone();
    let mut x = vec![1.0; n];
    let (mut lo, mut hi) = bounds(&x);
    let mut hi_prev = f64::INFINITY;
    for _ in 0..64 {
        if hi - lo <= 1e-12 * hi || (hi_prev - hi).abs() <= 1e-13 * hi {
            break;
        }
        hi_prev = hi;
        let y = apply(&power, &x);
        let scale = y.iter().copied().fold(0.0, f64::max);
        let y: Vec<f64> = y.iter().map(|v| v / scale).collect();
        if y.iter().any(|&v| v < 1e-280) {
            break;
        }
        x = y;
        (lo, hi) = bounds(&x);
        // square and rescale the iteration matrix
        let mut sq = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let a = power[i][k];
                if a != 0.0 {
                    for j in 0..n {
                        sq[i][j] += a * power[k][j];
                    }
                }
            }
        }
        let m = sq.iter().flatten().copied().fold(0.0, f64::max);
        power = sq.into_iter().map(|r| r.into_iter().map(|v| v / m).collect()).collect();
    }
    (hi - 1.0).max(0.0)
}

fn draw_mark<R: Rng>(rng: &mut R, len: usize, p_on: impl Fn(usize) -> f64) -> Mark {
    let mut m = Mark::zeros(len);
    for w in 0..len {
        if rng.random::<f64>() < p_on(w) {
            m.set(w, true);
        }
    }
    m
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

struct Pending {
    t: f64,
    node: usize,
    mark: Mark,
    parent: Option<usize>,
    generation: usize,
}

/// Simulates events on `[t_start, t_end]` from `params` with a fixed seed.
///
/// Offspring falling after `t_end` are censored together with their descendants.
pub fn simulate(params: &ModelParams, t_end: f64, seed: u64) -> Result<Vec<SimulatedEvent>> {
    let rho = branching_ratio(params);
    if rho >= 1.0 {
        return Err(HbtmError::Unstable(rho));
    }
    let bg = &params.background;
    if !(t_end >= bg.t_start && t_end <= bg.t_end) {
        return Err(HbtmError::OutsideWindow {
            t: t_end,
            start: bg.t_start,
            end: bg.t_end,
        });
    }
    let w = params.dict_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pending: Vec<Pending> = Vec::new();

    for s in 0..params.n_nodes {
        for k in 0..bg.n_bins() {
            let lo = bg.t_start + k as f64 * bg.bin_width;
            let hi = (lo + bg.bin_length(k)).min(t_end);
            if hi <= lo {
                continue;
            }
            let count = poisson(&mut rng, bg.bins[s][k] * (hi - lo));
            for _ in 0..count {
                let t = rng.random_range(lo..hi);
                let p0 = params.p0[s];
                let mark = draw_mark(&mut rng, w, |_| p0);
                pending.push(Pending {
                    t,
                    node: s,
                    mark,
                    parent: None,
                    generation: 0,
                });
            }
        }
    }

    let mut queue: VecDeque<usize> = (0..pending.len()).collect();
    while let Some(idx) = queue.pop_front() {
        let (t, src, generation) = (pending[idx].t, pending[idx].node, pending[idx].generation);
        for s in 0..params.n_nodes {
            let count = poisson(&mut rng, params.theta[s][src]);
            if count == 0 {
                continue;
            }
            let delay = Exp::new(params.omega[s][src]).map_err(|e| HbtmError::Domain(e.to_string()))?;
            let (p_on, p_off) = (params.p_on[s][src], params.p_off[s][src]);
            for _ in 0..count {
                let tc = t + delay.sample(&mut rng);
                if tc > t_end {
                    continue;
                }
                let parent_mark = &pending[idx].mark;
                let mark = draw_mark(&mut rng, w, |k| if parent_mark.get(k) { 1.0 - p_off } else { p_on });
                pending.push(Pending {
                    t: tc,
                    node: s,
                    mark,
                    parent: Some(idx),
                    generation: generation + 1,
                });
                queue.push_back(pending.len() - 1);
            }
        }
    }

    let mut order: Vec<usize> = (0..pending.len()).collect();
    order.sort_by(|&a, &b| pending[a].t.total_cmp(&pending[b].t).then(a.cmp(&b)));
    let mut rank = vec![0; pending.len()];
    for (pos, &orig) in order.iter().enumerate() {
        rank[orig] = pos;
    }
    let mut slots: Vec<Option<Pending>> = pending.into_iter().map(Some).collect();
    Ok(order
        .iter()
        .enumerate()
        .map(|(pos, &orig)| {
            let p = slots[orig].take().expect("each event taken once");
            SimulatedEvent {
                event: MarkedEvent {
                    post_id: format!("sim{pos:06}"),
                    timestamp: p.t,
                    node_index: p.node,
                    mark: p.mark,
                },
                parent_index: p.parent.map(|q| rank[q]),
                generation: p.generation,
            }
        })
        .collect())
}

/// Strips parentage, leaving the observable events.
pub fn observed(events: &[SimulatedEvent]) -> Vec<MarkedEvent> {
    events.iter().map(|e| e.event.clone()).collect()
}
