#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use hbtm_core::model::BackgroundRate;
use hbtm_core::{e_step, m_step, BranchingMatrix, FitConfig, Mark, MarkedEvent, ModelParams};

fn dense(q: &BranchingMatrix) -> Vec<Vec<f64>> {
    let n = q.n_events();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = q.diag(i);
        for (j, v) in q.row(i) {
            out[i][j] = v;
        }
    }
    out
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn ev(id: &str, t: f64, node: usize, bits: &[bool]) -> MarkedEvent {
    MarkedEvent {
        post_id: id.into(),
        timestamp: t,
        node_index: node,
        mark: Mark::from_bits(bits),
    }
}

#[test]
fn three_event_toy_matches_hand_evaluation() {
    let bg = {
        let mut b = BackgroundRate::zeros(1, 0.0, 3.0, 1.0).unwrap();
        b.bins[0] = vec![0.5, 0.5, 0.5];
        b
    };
    let p = ModelParams::uniform(2, bg, 0.2, 0.5, 1.0, 0.1, 0.3);
    let events = vec![
        ev("a", 0.0, 0, &[true, false]),
        ev("b", 1.0, 0, &[true, false]),
        ev("c", 2.0, 0, &[true, true]),
    ];
    let q = dense(&e_step(&p, &events, None).unwrap());

    // Spontaneous mass 0.5·0.2·0.8 for both of the first two marks, 0.5·0.2² for the third.
    let s_ab = 0.5 * 0.2 * 0.8;
    let s_c = 0.5 * 0.2 * 0.2;
    // Triggering: θω e^{-ωΔt} times word factors.
    let same = 0.9 * 0.7 * 0.5 * (-1.0f64).exp();
    let to_c_from_b = 0.7 * 0.1 * 0.5 * (-1.0f64).exp();
    let to_c_from_a = 0.7 * 0.1 * 0.5 * (-2.0f64).exp();

    assert_eq!(q[0][0], 1.0);
    let z1 = s_ab + same;
    assert!((q[1][1] - s_ab / z1).abs() < 1e-12);
    assert!((q[1][0] - same / z1).abs() < 1e-12);
    let z2 = s_c + to_c_from_b + to_c_from_a;
    assert!((q[2][2] - s_c / z2).abs() < 1e-12);
    assert!((q[2][1] - to_c_from_b / z2).abs() < 1e-12);
    assert!((q[2][0] - to_c_from_a / z2).abs() < 1e-12);

    let naive = naive_e_step(&p, &events, None);
    assert!(max_abs_diff(&q, &naive) < 1e-12);
}

#[test]
fn e_step_matches_direct_evaluation_on_random_instances() {
    for seed in 0..40 {
        let mut r = rng(seed);
        let s = 1 + (seed as usize % 3);
        let w = 1 + (seed as usize % 6);
        let n = 5 + (seed as usize * 7) % 26;
        let grid = (seed % 4 == 0).then_some(0.5);
        let events = random_events(&mut r, n, s, w, 10.0, grid);
        let p = random_params(&mut r, s, w, 0.0, 10.0, 1.0);
        for tau in [None, Some(3.0)] {
            let q = e_step(&p, &events, tau).unwrap();
            assert!(q.max_row_error() < 1e-12);
            let d = max_abs_diff(&dense(&q), &naive_e_step(&p, &events, tau));
            assert!(d < 1e-10, "seed {seed} tau {tau:?}: max diff {d}");
        }
    }
}

#[test]
fn m_step_matches_closed_forms_without_edge_effects() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let s = 1 + (seed as usize % 3);
        let w = 1 + (seed as usize % 6);
        let n = 10 + (seed as usize * 5) % 21;
        let events = random_events(&mut r, n, s, w, 10.0, None);
        // A window reaching far past the events removes the exposure edge term.
        let p = random_params(&mut r, s, w, 0.0, 10_000.0, 2.0);
        let config = FitConfig {
            tau_max_days: None,
            ..FitConfig::default()
        };
        let q = e_step(&p, &events, None).unwrap();
        let got = m_step(&events, &q, &p, &config).unwrap();
        let want = naive_m_step(&p, &events, &naive_e_step(&p, &events, None), config.prob_eps);

        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
        for a in 0..s {
            assert!(close(got.p0[a], want.p0[a]), "seed {seed} p0");
            for (x, y) in got.background.bins[a].iter().zip(&want.background.bins[a]) {
                assert!(close(*x, *y), "seed {seed} background {x} vs {y}");
            }
            for b in 0..s {
                // pairs without events on either side keep their previous values
                let has_src = events.iter().any(|e| e.node_index == b);
                let has_dst = events.iter().any(|e| e.node_index == a);
                if !(has_src && has_dst) {
                    continue;
                }
                assert!(close(got.theta[a][b], want.theta[a][b]), "seed {seed} theta[{a}][{b}]");
                let mass = want.theta[a][b] * events.iter().filter(|e| e.node_index == b).count() as f64;
                if mass >= 1e-8 {
                    assert!(
                        close(got.omega[a][b], want.omega[a][b]),
                        "seed {seed} omega[{a}][{b}]: {} vs {}",
                        got.omega[a][b],
                        want.omega[a][b]
                    );
                    // a denominator of zero (no parent word in that state) has no closed form
                    assert!(want.p_on[a][b].is_nan() || close(got.p_on[a][b], want.p_on[a][b]));
                    assert!(want.p_off[a][b].is_nan() || close(got.p_off[a][b], want.p_off[a][b]));
                }
            }
        }
    }
}
