//! Shared builders and brute-force reference computations for the integration tests.
#![allow(dead_code)]

use hbtm_core::model::BackgroundRate;
use hbtm_core::{Mark, MarkedEvent, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random parameters with every entry well inside its legal range.
pub fn random_params(rng: &mut ChaCha8Rng, s: usize, w: usize, t_start: f64, t_end: f64, bin_width: f64) -> ModelParams {
    let mut bg = BackgroundRate::zeros(s, t_start, t_end, bin_width).unwrap();
    for row in &mut bg.bins {
        for b in row.iter_mut() {
            *b = rng.random_range(0.2..2.0);
        }
    }
    let mut p = ModelParams::uniform(w, bg, 0.5, 0.1, 1.0, 0.1, 0.5);
    for a in 0..s {
        p.p0[a] = rng.random_range(0.1..0.9);
        for b in 0..s {
            p.theta[a][b] = rng.random_range(0.05..0.8);
            p.omega[a][b] = rng.random_range(0.3..3.0);
            p.p_on[a][b] = rng.random_range(0.05..0.95);
            p.p_off[a][b] = rng.random_range(0.05..0.95);
        }
    }
    p
}

/// `n` random events on `[0, span]`, sorted by time. With `grid` set,
/// timestamps are rounded to that step so that ties occur.
pub fn random_events(rng: &mut ChaCha8Rng, n: usize, s: usize, w: usize, span: f64, grid: Option<f64>) -> Vec<MarkedEvent> {
    let mut times: Vec<f64> = (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..span);
            grid.map_or(t, |g| (t / g).floor() * g)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times
        .into_iter()
        .enumerate()
        .map(|(i, t)| MarkedEvent {
            post_id: format!("e{i:04}"),
            timestamp: t,
            node_index: rng.random_range(0..s),
            mark: Mark::from_bits(&(0..w).map(|_| rng.random_bool(0.4)).collect::<Vec<_>>()),
        })
        .collect()
}

fn bernoulli(p: f64, on: bool) -> f64 {
    if on {
        p
    } else {
        1.0 - p
    }
}

/// Background rate by direct bin lookup.
pub fn naive_mu(p: &ModelParams, s: usize, t: f64) -> f64 {
    let bg = &p.background;
    if t < bg.t_start || t > bg.t_end {
        return 0.0;
    }
    let k = (((t - bg.t_start) / bg.bin_width).floor() as usize).min(bg.bins[s].len() - 1);
    bg.bins[s][k]
}

/// Spontaneous term of event `i`, multiplied out word by word.
pub fn naive_spontaneous(p: &ModelParams, e: &MarkedEvent) -> f64 {
    let s = e.node_index;
    let mut v = naive_mu(p, s, e.timestamp);
    for k in 0..p.dict_size {
        v *= bernoulli(p.p0[s], e.mark.get(k));
    }
    v
}

/// Triggering term of parent `par` on child `ch`, multiplied out word by word.
pub fn naive_trigger(p: &ModelParams, ch: &MarkedEvent, par: &MarkedEvent) -> f64 {
    let (s, src) = (ch.node_index, par.node_index);
    let dt = ch.timestamp - par.timestamp;
    let mut v = p.theta[s][src] * p.omega[s][src] * (-p.omega[s][src] * dt).exp();
    for k in 0..p.dict_size {
        let prob_on = if par.mark.get(k) {
            1.0 - p.p_off[s][src]
        } else {
            p.p_on[s][src]
        };
        v *= bernoulli(prob_on, ch.mark.get(k));
    }
    v
}

/// Dense responsibilities `q[i][j]` (diagonal = spontaneous) by direct evaluation.
pub fn naive_e_step(p: &ModelParams, events: &[MarkedEvent], tau: Option<f64>) -> Vec<Vec<f64>> {
    let n = events.len();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        let ei = &events[i];
        q[i][i] = naive_spontaneous(p, ei);
        for j in 0..i {
            let ej = &events[j];
            let dt = ei.timestamp - ej.timestamp;
            if dt > 0.0 && tau.is_none_or(|t| dt <= t) {
                q[i][j] = naive_trigger(p, ei, ej);
            }
        }
        let total: f64 = q[i].iter().sum();
        q[i].iter_mut().for_each(|v| *v /= total);
    }
    q
}

/// Closed-form M-step for pairwise tying when the window extends far past
/// the last event, so that every source's exposure equals its event count.
pub fn naive_m_step(p: &ModelParams, events: &[MarkedEvent], q: &[Vec<f64>], eps: f64) -> ModelParams {
    let n_nodes = p.n_nodes;
    let w = p.dict_size as f64;
    let clip = |v: f64| v.clamp(eps, 1.0 - eps);
    let mut next = p.clone();
    let bg = &p.background;
    for s in 0..n_nodes {
        let mut spont = 0.0;
        let mut words = 0.0;
        let mut bins = vec![0.0; bg.bins[s].len()];
        for (i, e) in events.iter().enumerate() {
            if e.node_index == s {
                spont += q[i][i];
                words += q[i][i] * e.mark.count_ones() as f64;
                let k = (((e.timestamp - bg.t_start) / bg.bin_width).floor() as usize).min(bins.len() - 1);
                bins[k] += q[i][i];
            }
        }
        for (k, b) in bins.iter().enumerate() {
            let lo = bg.t_start + k as f64 * bg.bin_width;
            let len = (lo + bg.bin_width).min(bg.t_end) - lo;
            next.background.bins[s][k] = b / len;
        }
        next.p0[s] = clip(words / (w * spont));
        for src in 0..n_nodes {
            let (mut mass, mut delay, mut on_n, mut on_d, mut off_n, mut off_d) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, ei) in events.iter().enumerate() {
                if ei.node_index != s {
                    continue;
                }
                for (j, ej) in events.iter().enumerate().take(i) {
                    if ej.node_index != src || q[i][j] == 0.0 {
                        continue;
                    }
                    let qij = q[i][j];
                    mass += qij;
                    delay += qij * (ei.timestamp - ej.timestamp);
                    for k in 0..p.dict_size {
                        match (ej.mark.get(k), ei.mark.get(k)) {
                            (false, on) => {
                                on_d += qij;
                                if on {
                                    on_n += qij;
                                }
                            }
                            (true, on) => {
                                off_d += qij;
                                if !on {
                                    off_n += qij;
                                }
                            }
                        }
                    }
                }
            }
            let n_src = events.iter().filter(|e| e.node_index == src).count() as f64;
            next.theta[s][src] = mass / n_src;
            next.omega[s][src] = (mass / delay).clamp(1e-3, 1e3);
            next.p_on[s][src] = clip(on_n / on_d);
            next.p_off[s][src] = clip(off_n / off_d);
        }
    }
    next
}
