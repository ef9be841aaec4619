//! Independent oracles shared by the integration and acceptance targets.

#![allow(dead_code)]

use shape_qmc::lattice::PodWeights;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

fn b2(t: f64) -> f64 {
    t * t - t + 1.0 / 6.0
}

/// Squared shift-averaged worst-case error by explicit subset enumeration.
pub fn brute_force_wce_squared(z: &[usize], n: usize, weights: &PodWeights) -> f64 {
    let s = z.len();
    let mut total = 0.0;
    for k in 0..n {
        let omega: Vec<f64> = z.iter().map(|&zj| b2(((k * zj) % n) as f64 / n as f64)).collect();
        for mask in 1u32..(1 << s) {
            let u: Vec<usize> = (0..s).filter(|j| mask & (1 << j) != 0).collect();
            let gamma = weights.gamma(&u.iter().map(|j| j + 1).collect::<Vec<_>>());
            total += gamma * u.iter().map(|&j| omega[j]).product::<f64>();
        }
    }
    total / n as f64
}

/// Greedy construction scanning every candidate `1..n` per coordinate, with
/// the smallest candidate winning among relative ties of `tie`.
pub fn exhaustive_cbc(n: usize, s: usize, weights: &PodWeights, tie: f64) -> Vec<usize> {
    let mut z = Vec::with_capacity(s);
    for _ in 0..s {
        let costs: Vec<(usize, f64)> = (1..n.max(2))
            .map(|c| {
                let mut trial = z.clone();
                trial.push(c);
                (c, brute_force_wce_squared(&trial, n, weights))
            })
            .collect();
        let min = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let best = costs.iter().find(|c| c.1 <= min * (1.0 + tie)).expect("nonempty");
        z.push(best.0);
    }
    z
}
