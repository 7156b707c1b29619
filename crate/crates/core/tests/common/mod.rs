//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn simulate_arma(ar: &[f64], ma: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = 500;
    let mut y = vec![0.0; n + burn];
    let mut e = vec![0.0; n + burn];
    for t in 0..n + burn {
        e[t] = StandardNormal.sample(&mut rng);
        let mut v = e[t];
        for (i, &phi) in ar.iter().enumerate() {
            if t > i {
                v += phi * y[t - i - 1];
            }
        }
        for (j, &theta) in ma.iter().enumerate() {
            if t > j {
                v += theta * e[t - j - 1];
            }
        }
        y[t] = v;
    }
    y.split_off(burn)
}

/// Gauss-Jordan inverse applied to `b`.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut row = r.clone();
            row.push(v);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot_row = m[c].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.iter().map(|r| r[n]).collect()
}

/// CSS for pure AR(p) is linear least squares on lagged values with the
/// pre-sample filled by the mean. Returns `[c, φ..]` and the residual SS.
pub fn ar_css_ols(w: &[f64], p: usize) -> (Vec<f64>, f64) {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let x: Vec<Vec<f64>> = (0..w.len())
        .map(|t| {
            let mut row = vec![1.0];
            for i in 0..p {
                row.push(if t > i { w[t - i - 1] } else { mean });
            }
            row
        })
        .collect();
    let k = p + 1;
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &yt) in x.iter().zip(w) {
        for a in 0..k {
            xty[a] += row[a] * yt;
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let beta = solve_dense(&xtx, &xty);
    let ss = x
        .iter()
        .zip(w)
        .map(|(row, &yt)| {
            let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yt - pred).powi(2)
        })
        .sum();
    (beta, ss)
}

/// CSS objective for MA(1) with intercept, computed directly.
pub fn ma1_css(w: &[f64], c: f64, theta: f64) -> f64 {
    let mut prev = 0.0;
    let mut ss = 0.0;
    for &v in w {
        let e = v - c - theta * prev;
        ss += e * e;
        prev = e;
    }
    ss
}

/// Coarse-to-fine grid search over (c, θ) for MA(1).
pub fn ma1_grid_search(w: &[f64]) -> (f64, f64, f64) {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let (mut c, mut theta) = (mean, 0.0);
    let (mut wc, mut wt) = (1.0, 0.99);
    let mut best = ma1_css(w, c, theta);
    for _ in 0..40 {
        let (c0, t0) = (c, theta);
        for i in -10..=10 {
            for j in -10..=10 {
                let cc = c0 + wc * i as f64 / 10.0;
                let tt = (t0 + wt * j as f64 / 10.0).clamp(-0.999, 0.999);
                let s = ma1_css(w, cc, tt);
                if s < best {
                    best = s;
                    c = cc;
                    theta = tt;
                }
            }
        }
        wc *= 0.5;
        wt *= 0.5;
    }
    (c, theta, best)
}

/// Exhaustive best stump on raw values: every midpoint between consecutive
/// distinct values of every feature. Returns `(feature, threshold, gain)`.
pub fn exhaustive_stump(x: &[f64], n_cols: usize, g: &[f64], lambda: f64) -> Option<(usize, f64, f64)> {
    let n = g.len();
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let (gt, ht) = (g.iter().sum::<f64>(), n as f64);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..n_cols {
        let mut vals: Vec<f64> = (0..n).map(|r| x[r * n_cols + f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let (mut gl, mut hl) = (0.0, 0.0);
            for r in 0..n {
                if x[r * n_cols + f] <= thr {
                    gl += g[r];
                    hl += 1.0;
                }
            }
            let gain = 0.5 * (score(gl, hl) + score(gt - gl, ht - hl) - score(gt, ht));
            if gain > 0.0 && best.map_or(true, |b| gain > b.2) {
                best = Some((f, thr, gain));
            }
        }
    }
    best
}

/// Exact greedy regression tree grown recursively on raw values. Returns
/// each row's leaf weight.
pub fn exact_tree_leaves(
    x: &[f64],
    n_cols: usize,
    g: &[f64],
    rows: &[usize],
    depth: usize,
    lambda: f64,
    out: &mut [f64],
) {
    let leaf = -rows.iter().map(|&r| g[r]).sum::<f64>() / (rows.len() as f64 + lambda);
    let split = if depth == 0 || rows.len() < 2 {
        None
    } else {
        let sub_x: Vec<f64> = rows
            .iter()
            .flat_map(|&r| x[r * n_cols..(r + 1) * n_cols].iter().copied())
            .collect();
        let sub_g: Vec<f64> = rows.iter().map(|&r| g[r]).collect();
        exhaustive_stump(&sub_x, n_cols, &sub_g, lambda)
    };
    match split {
        None => {
            for &r in rows {
                out[r] = leaf;
            }
        }
        Some((f, thr, _)) => {
            let (l, rt): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r * n_cols + f] <= thr);
            exact_tree_leaves(x, n_cols, g, &l, depth - 1, lambda, out);
            exact_tree_leaves(x, n_cols, g, &rt, depth - 1, lambda, out);
        }
    }
}
