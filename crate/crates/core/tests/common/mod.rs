//! Independent reference implementations shared by the metric tests and the
//! acceptance suite.
#![allow(dead_code)]

pub mod enc;
pub mod gp;

use std::collections::HashMap;

use drf::{Pose, Trajectory};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn trajectory(points: &[[f64; 2]], dt: f64) -> Trajectory {
    let poses = points.iter().map(|p| Pose::new(p[0], p[1], 0.0)).collect();
    Trajectory::uniform(0.0, dt, poses, None).unwrap()
}

/// Random walk with steps of up to `step` m per axis.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, step: f64) -> Vec<[f64; 2]> {
    let mut p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    (0..n)
        .map(|_| {
            p[0] += rng.random_range(-step..step);
            p[1] += rng.random_range(-step..step);
            p
        })
        .collect()
}

fn d(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Direct summation of index-aligned distances over the first `ticks` points.
pub fn ate_oracle(m: &[[f64; 2]], gt: &[[f64; 2]], ticks: usize) -> (f64, f64) {
    let mut c = 0.0;
    for i in 0..ticks {
        c += d(m[i], gt[i]);
    }
    (c, c / ticks as f64)
}

pub fn hausdorff_oracle(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let directed = |p: &[[f64; 2]], q: &[[f64; 2]]| {
        let mut worst: f64 = 0.0;
        for &x in p {
            let mut best = f64::INFINITY;
            for &y in q {
                best = best.min(d(x, y));
            }
            worst = worst.max(best);
        }
        worst
    };
    directed(a, b).max(directed(b, a))
}

/// Top-down memoised LCSS length on prefixes.
pub fn lcss_oracle(a: &[[f64; 2]], b: &[[f64; 2]], eps: f64) -> f64 {
    fn go(a: &[[f64; 2]], b: &[[f64; 2]], i: usize, j: usize, eps: f64, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 || j == 0 {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let (p, q) = (a[i - 1], b[j - 1]);
        let v = if (p[0] - q[0]).abs() <= eps && (p[1] - q[1]).abs() <= eps {
            1 + go(a, b, i - 1, j - 1, eps, memo)
        } else {
            go(a, b, i - 1, j, eps, memo).max(go(a, b, i, j - 1, eps, memo))
        };
        memo.insert((i, j), v);
        v
    }
    let l = go(a, b, a.len(), b.len(), eps, &mut HashMap::new());
    1.0 - l as f64 / a.len().min(b.len()) as f64
}

/// Full `(n+1) x (m+1)` DTW table with infinite borders.
pub fn dtw_oracle(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![f64::INFINITY; m + 1]; n + 1];
    t[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = t[i - 1][j].min(t[i][j - 1]).min(t[i - 1][j - 1]);
            t[i][j] = d(a[i - 1], b[j - 1]) + best;
        }
    }
    t[n][m]
}
