#![allow(clippy::needless_range_loop)]

use hbtm_core::model::BackgroundRate;
use hbtm_core::simulator::observed;
use hbtm_core::{simulate, ModelParams, SimulatedEvent};

fn params(theta: Vec<Vec<f64>>, mu: f64, t_end: f64, omega: f64, p_on: f64, p_off: f64) -> ModelParams {
    let n = theta.len();
    let mut bg = BackgroundRate::zeros(n, 0.0, t_end, 1.0).unwrap();
    bg.bins.iter_mut().flatten().for_each(|b| *b = mu);
    let mut p = ModelParams::uniform(20, bg, 0.2, 0.0, omega, p_on, p_off);
    p.theta = theta;
    p
}

fn within_3_sigma(observed: f64, mean: f64, sd: f64) -> bool {
    (observed - mean).abs() <= 3.0 * sd
}

/// Children of each event, counted only for parents whose offspring are
/// effectively uncensored.
fn children(evs: &[SimulatedEvent], cutoff: f64) -> (usize, Vec<(usize, usize)>) {
    let parents = evs.iter().filter(|e| e.event.timestamp < cutoff).count();
    let links = evs
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.parent_index.map(|j| (j, i)))
        .filter(|&(j, _)| evs[j].event.timestamp < cutoff)
        .collect();
    (parents, links)
}

#[test]
fn immigrant_count_is_poisson() {
    let (mu, t_end) = (2.0, 500.0);
    let p = params(vec![vec![0.0]], mu, t_end, 1.0, 0.1, 0.1);
    for seed in 0..5 {
        let n = simulate(&p, t_end, seed).unwrap().len() as f64;
        let mean = mu * t_end;
        assert!(within_3_sigma(n, mean, mean.sqrt()), "seed {seed}: {n} events");
    }
}

#[test]
fn offspring_delays_and_flips_match_parameters() {
    let (theta, omega, p_on, p_off) = (0.5, 2.0, 0.05, 0.4);
    let t_end = 2000.0;
    let p = params(vec![vec![theta]], 1.0, t_end, omega, p_on, p_off);
    let evs = simulate(&p, t_end, 42).unwrap();
    let (parents, links) = children(&evs, t_end - 20.0);

    let m = parents as f64;
    assert!(within_3_sigma(links.len() as f64 / m, theta, (theta / m).sqrt()));

    let delays: Vec<f64> = links
        .iter()
        .map(|&(j, i)| evs[i].event.timestamp - evs[j].event.timestamp)
        .collect();
    let k = delays.len() as f64;
    let mean_delay = delays.iter().sum::<f64>() / k;
    assert!(within_3_sigma(mean_delay, 1.0 / omega, 1.0 / omega / k.sqrt()), "mean delay {mean_delay}");

    let (mut on, mut off_trials, mut offs, mut on_trials) = (0usize, 0usize, 0usize, 0usize);
    for &(j, i) in &links {
        let (par, ch) = (&evs[j].event.mark, &evs[i].event.mark);
        for w in 0..par.len() {
            if par.get(w) {
                on_trials += 1;
                offs += usize::from(!ch.get(w));
            } else {
                off_trials += 1;
                on += usize::from(ch.get(w));
            }
        }
    }
    let rate = |x: usize, n: usize| x as f64 / n as f64;
    let sd = |p: f64, n: usize| (p * (1.0 - p) / n as f64).sqrt();
    assert!(within_3_sigma(rate(on, off_trials), p_on, sd(p_on, off_trials)));
    assert!(within_3_sigma(rate(offs, on_trials), p_off, sd(p_off, on_trials)));
}

#[test]
fn cross_node_offspring_follow_theta() {
    let theta = vec![vec![0.1, 0.4], vec![0.3, 0.2]];
    let t_end = 3000.0;
    let p = params(theta.clone(), 0.5, t_end, 1.0, 0.1, 0.3);
    let evs = simulate(&p, t_end, 9).unwrap();
    let (_, links) = children(&evs, t_end - 30.0);
    for src in 0..2 {
        let n_src = evs
            .iter()
            .filter(|e| e.event.node_index == src && e.event.timestamp < t_end - 30.0)
            .count() as f64;
        for dst in 0..2 {
            let c = links
                .iter()
                .filter(|&&(j, i)| evs[j].event.node_index == src && evs[i].event.node_index == dst)
                .count() as f64;
            let t = theta[dst][src];
            assert!(within_3_sigma(c / n_src, t, (t / n_src).sqrt()), "theta[{dst}][{src}]: {}", c / n_src);
        }
    }
}

#[test]
fn total_size_reflects_branching_ratio() {
    // With ρ = 0.5 each immigrant has 1/(1-ρ) = 2 descendants-plus-self on average.
    let t_end = 3000.0;
    let p = params(vec![vec![0.5]], 1.0, t_end, 1.0, 0.1, 0.3);
    let evs = simulate(&p, t_end, 5).unwrap();
    let immigrants = evs.iter().filter(|e| e.parent_index.is_none()).count() as f64;
    let ratio = evs.len() as f64 / immigrants;
    // variance of a cluster size with Poisson(ρ) offspring is ρ/(1-ρ)^3
    let sd = (0.5f64 / 0.125 / immigrants).sqrt();
    assert!(within_3_sigma(ratio, 2.0, sd), "ratio {ratio}");
    assert_eq!(observed(&evs).len(), evs.len());
}
