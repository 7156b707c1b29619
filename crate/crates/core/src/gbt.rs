//! Histogram gradient-boosted regression trees for squared error.
//!
//! Feature values are bucketed once per feature from the training rows:
//! `bin(x) = #{edges e : e < x}`, so a split at bin `b` sends `x ≤ edges[b]`
//! left. Trees grow depth-wise and a leaf carries `−G/(H+λ)`.
//!
//! Serialized form (`to_text`):
//!
//! ```text
//! # evbench-gbt v1
//! base_score <v>
//! learning_rate <v>
//! best_round <n>
//! n_features <n>
//! tree <index> <node count>
//! split <feature> <threshold> <bin>     (preorder; left subtree follows)
//! leaf <weight>
//! ```

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbtError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("schema mismatch: expected {expected} features, got {got}")]
    Schema { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed ensemble text at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub lambda_l2: f64,
    pub max_rounds: usize,
    pub early_stop_patience: usize,
    pub histogram_bins: usize,
    pub min_child_weight: f64,
    pub gamma: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_depth: 8,
            subsample: 0.8,
            colsample_bytree: 0.8,
            lambda_l2: 1.0,
            max_rounds: 2000,
            early_stop_patience: 200,
            histogram_bins: 256,
            min_child_weight: 1.0,
            gamma: 0.0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), GbtError> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.subsample) || !frac(self.colsample_bytree) {
            return Err(GbtError::Config("subsample and colsample must lie in (0, 1]".into()));
        }
        if self.max_depth == 0 {
            return Err(GbtError::Config("max_depth must be at least 1".into()));
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return Err(GbtError::Config("histogram_bins must be within 2..=256".into()));
        }
        Ok(())
    }
}

/// Row-major design matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a, T> {
    pub x: &'a [T],
    pub n_cols: usize,
}

impl<'a, T: Scalar> Rows<'a, T> {
    pub fn new(x: &'a [T], n_cols: usize) -> Self {
        assert!(
            n_cols > 0 && x.len() % n_cols == 0,
            "row-major data must fill whole rows"
        );
        Self { x, n_cols }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Bin edges for one feature from its training values.
pub fn bin_edges<T: Scalar>(values: &[T], max_bins: usize) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        let half = T::lit(0.5);
        return distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) * half).collect();
    }
    let n = sorted.len();
    let mut edges: Vec<T> = (1..max_bins).map(|k| sorted[k * n / max_bins]).collect();
    edges.dedup();
    if edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}

pub fn bin_of<T: Scalar>(edges: &[T], v: T) -> usize {
    edges.partition_point(|&e| e < v)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HistBin<T> {
    pub sum_g: T,
    pub sum_h: T,
    pub count: usize,
}

/// Per-bin gradient sums for a raw feature column; a column of `n` values
/// gets `edges.len() + 1` bins.
pub fn build_histogram<T: Scalar>(values: &[T], g: &[T], h: &[T], edges: &[T]) -> Vec<HistBin<T>> {
    let mut hist = vec![
        HistBin {
            sum_g: T::zero(),
            sum_h: T::zero(),
            count: 0
        };
        edges.len() + 1
    ];
    for ((&v, &gi), &hi) in values.iter().zip(g).zip(h) {
        let b = &mut hist[bin_of(edges, v)];
        b.sum_g += gi;
        b.sum_h += hi;
        b.count += 1;
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate<T> {
    pub feature: usize,
    /// Rows with bin ≤ this go left.
    pub bin: usize,
    pub gain: T,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitParams<T> {
    pub lambda: T,
    pub gamma: T,
    pub min_child_weight: T,
}

impl<T: Scalar> SplitParams<T> {
    fn score(&self, g: T, h: T) -> T {
        g * g / (h + self.lambda)
    }
}

/// Best split over per-feature histograms, `None` when no gain is positive.
/// `features[i]` names the feature of `hists[i]`; ties keep the lowest
/// feature, then the lowest bin.
pub fn best_split<T: Scalar>(
    hists: &[Vec<HistBin<T>>],
    features: &[usize],
    params: &SplitParams<T>,
) -> Option<SplitCandidate<T>> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by_key(|&i| features[i]);
    let mut best: Option<SplitCandidate<T>> = None;
    for i in order {
        let hist = &hists[i];
        let (g_tot, h_tot) = hist
            .iter()
            .fold((T::zero(), T::zero()), |(g, h), b| (g + b.sum_g, h + b.sum_h));
        let parent = params.score(g_tot, h_tot);
        let (mut gl, mut hl, mut nl) = (T::zero(), T::zero(), 0usize);
        let n_tot: usize = hist.iter().map(|b| b.count).sum();
        for (b, bin) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
            gl += bin.sum_g;
            hl += bin.sum_h;
            nl += bin.count;
            if nl == 0 || nl == n_tot {
                continue;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = T::lit(0.5) * (params.score(gl, hl) + params.score(gr, hr) - parent) - params.gamma;
            if gain > T::zero() && best.map_or(true, |c| gain > c.gain) {
                best = Some(SplitCandidate {
                    feature: features[i],
                    bin: b,
                    gain,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        bin: usize,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: T,
    },
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf_value(&self, row: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn write_preorder(&self, i: usize, out: &mut String) {
        match &self.nodes[i] {
            Node::Leaf { weight } => {
                let _ = writeln!(out, "leaf {}", weight);
            }
            Node::Split {
                feature,
                threshold,
                bin,
                left,
                right,
            } => {
                let _ = writeln!(out, "split {} {} {}", feature, threshold, bin);
                self.write_preorder(*left, out);
                self.write_preorder(*right, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    pub base_score: T,
    pub learning_rate: T,
    pub trees: Vec<Tree<T>>,
    /// Number of leading trees used for prediction.
    pub best_round: usize,
    pub n_features: usize,
}

impl<T: Scalar> Ensemble<T> {
    pub fn predict_row(&self, row: &[T]) -> T {
        self.predict_row_prefix(row, self.best_round)
    }

    pub fn predict_row_prefix(&self, row: &[T], rounds: usize) -> T {
        let sum: T = self.trees[..rounds].iter().map(|t| t.leaf_value(row)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict(&self, rows: Rows<'_, T>) -> Result<Vec<T>, GbtError> {
        if rows.n_cols != self.n_features {
            return Err(GbtError::Schema {
                expected: self.n_features,
                got: rows.n_cols,
            });
        }
        Ok((0..rows.len()).map(|i| self.predict_row(rows.row(i))).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# evbench-gbt v1\n");
        let _ = writeln!(out, "base_score {}", self.base_score);
        let _ = writeln!(out, "learning_rate {}", self.learning_rate);
        let _ = writeln!(out, "best_round {}", self.best_round);
        let _ = writeln!(out, "n_features {}", self.n_features);
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {} {}", i, t.nodes.len());
            t.write_preorder(0, &mut out);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GbtError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .peekable();
        let err = |line: usize, msg: &str| GbtError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut header = |key: &str| -> Result<(usize, String), GbtError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            let rest = l.strip_prefix(key).ok_or_else(|| err(n, key))?;
            Ok((n, rest.trim().to_string()))
        };
        let num = |(n, s): (usize, String)| s.parse::<T>().map_err(|_| err(n, "bad number"));
        let int = |(n, s): (usize, String)| s.parse::<usize>().map_err(|_| err(n, "bad integer"));
        let base_score = num(header("base_score")?)?;
        let learning_rate = num(header("learning_rate")?)?;
        let best_round = int(header("best_round")?)?;
        let n_features = int(header("n_features")?)?;

        let mut trees = Vec::new();
        while let Some((n, l)) = lines.next() {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 || f[0] != "tree" {
                return Err(err(n, "expected tree header"));
            }
            let count: usize = f[2].parse().map_err(|_| err(n, "bad node count"))?;
            let mut nodes = Vec::with_capacity(count);
            fn parse<T: Scalar>(
                lines: &mut dyn Iterator<Item = (usize, &str)>,
                nodes: &mut Vec<Node<T>>,
            ) -> Result<usize, GbtError> {
                let (n, l) = lines.next().ok_or(GbtError::Parse {
                    line: 0,
                    msg: "truncated tree".into(),
                })?;
                let bad = |msg: &str| GbtError::Parse {
                    line: n + 1,
                    msg: msg.to_string(),
                };
                let f: Vec<&str> = l.split_whitespace().collect();
                let idx = nodes.len();
                match f.as_slice() {
                    ["leaf", w] => {
                        nodes.push(Node::Leaf {
                            weight: w.parse().map_err(|_| bad("bad leaf"))?,
                        });
                    }
                    ["split", feat, thr, bin] => {
                        nodes.push(Node::Leaf { weight: T::zero() });
                        let left = parse(lines, nodes)?;
                        let right = parse(lines, nodes)?;
                        nodes[idx] = Node::Split {
                            feature: feat.parse().map_err(|_| bad("bad feature"))?,
                            threshold: thr.parse().map_err(|_| bad("bad threshold"))?,
                            bin: bin.parse().map_err(|_| bad("bad bin"))?,
                            left,
                            right,
                        };
                    }
                    _ => return Err(bad("expected split or leaf")),
                }
                Ok(idx)
            }
            let mut take = (0..count).map_while(|_| lines.next());
            parse(&mut take, &mut nodes)?;
            if nodes.len() != count {
                return Err(err(n, "node count mismatch"));
            }
            trees.push(Tree { nodes });
        }
        if best_round > trees.len() {
            return Err(err(0, "best_round beyond tree count"));
        }
        Ok(Self {
            base_score,
            learning_rate,
            trees,
            best_round,
            n_features,
        })
    }
}

/// Feature matrix bucketed once before boosting, stored column-major.
pub struct BinnedMatrix<T> {
    pub edges: Vec<Vec<T>>,
    bins: Vec<Vec<u8>>,
    pub n_rows: usize,
}

impl<T: Scalar> BinnedMatrix<T> {
    pub fn new(rows: Rows<'_, T>, max_bins: usize) -> Self {
        let n = rows.len();
        let mut edges = Vec::with_capacity(rows.n_cols);
        let mut bins = Vec::with_capacity(rows.n_cols);
        for f in 0..rows.n_cols {
            let col: Vec<T> = (0..n).map(|r| rows.x[r * rows.n_cols + f]).collect();
            let e = bin_edges(&col, max_bins);
            bins.push(col.iter().map(|&v| bin_of(&e, v) as u8).collect());
            edges.push(e);
        }
        Self { edges, bins, n_rows: n }
    }

    fn histogram(&self, feature: usize, rows: &[usize], g: &[T], h: &[T]) -> Vec<HistBin<T>> {
        let mut hist = vec![HistBin::default_zero(); self.edges[feature].len() + 1];
        let col = &self.bins[feature];
        for &r in rows {
            let b = &mut hist[col[r] as usize];
            b.sum_g += g[r];
            b.sum_h += h[r];
            b.count += 1;
        }
        hist
    }
}

impl<T: Scalar> HistBin<T> {
    fn default_zero() -> Self {
        Self {
            sum_g: T::zero(),
            sum_h: T::zero(),
            count: 0,
        }
    }
}

/// Grows one tree on `rows` restricted to `features`.
pub fn grow_tree<T: Scalar>(
    data: &BinnedMatrix<T>,
    rows: Vec<usize>,
    features: &[usize],
    g: &[T],
    h: &[T],
    max_depth: usize,
    params: &SplitParams<T>,
) -> Tree<T> {
    let leaf = |rows: &[usize]| {
        let (gs, hs) = rows
            .iter()
            .fold((T::zero(), T::zero()), |(a, b), &r| (a + g[r], b + h[r]));
        Node::Leaf {
            weight: -gs / (hs + params.lambda),
        }
    };
    let mut nodes = vec![leaf(&rows)];
    let mut frontier = vec![(0usize, rows)];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for (id, node_rows) in frontier {
            if node_rows.len() < 2 {
                continue;
            }
            let hists: Vec<Vec<HistBin<T>>> = features.iter().map(|&f| data.histogram(f, &node_rows, g, h)).collect();
            let Some(split) = best_split(&hists, features, params) else {
                continue;
            };
            let col = &data.bins[split.feature];
            let (l, r): (Vec<usize>, Vec<usize>) = node_rows.iter().partition(|&&i| col[i] as usize <= split.bin);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(leaf(&l));
            nodes.push(leaf(&r));
            nodes[id] = Node::Split {
                feature: split.feature,
                threshold: data.edges[split.feature][split.bin],
                bin: split.bin,
                left: li,
                right: ri,
            };
            next.push((li, l));
            next.push((ri, r));
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Tree { nodes }
}

fn rmse<T: Scalar>(pred: &[T], y: &[T]) -> T {
    let n = T::from_usize_lossy(y.len());
    (pred.iter().zip(y).map(|(&p, &t)| (p - t) * (p - t)).sum::<T>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostHistory<T> {
    /// Train and validation RMSE after each round; index 0 is the base score.
    pub train_rmse: Vec<T>,
    pub val_rmse: Vec<T>,
}

/// Boosts on `(train, y_train)` with early stopping on the validation rows.
pub fn boost<T: Scalar>(
    train: Rows<'_, T>,
    y_train: &[T],
    val: Rows<'_, T>,
    y_val: &[T],
    config: &GbtConfig,
    rng: &mut StreamRng,
) -> Result<(Ensemble<T>, BoostHistory<T>), GbtError> {
    config.validate()?;
    if train.is_empty() {
        return Err(GbtError::Empty("training rows"));
    }
    if val.is_empty() {
        return Err(GbtError::Empty("validation slice"));
    }
    if val.n_cols != train.n_cols {
        return Err(GbtError::Schema {
            expected: train.n_cols,
            got: val.n_cols,
        });
    }
    let n = train.len();
    let n_cols = train.n_cols;
    let data = BinnedMatrix::new(train, config.histogram_bins);
    let params = SplitParams {
        lambda: T::lit(config.lambda_l2),
        gamma: T::lit(config.gamma),
        min_child_weight: T::lit(config.min_child_weight),
    };
    let eta = T::lit(config.learning_rate);
    let base = y_train.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let mut pred = vec![base; n];
    let mut val_pred = vec![base; val.len()];
    let h = vec![T::one(); n];
    let n_sampled_cols = ((config.colsample_bytree * n_cols as f64).floor() as usize).clamp(1, n_cols);

    let mut ensemble = Ensemble {
        base_score: base,
        learning_rate: eta,
        trees: Vec::new(),
        best_round: 0,
        n_features: n_cols,
    };
    let mut history = BoostHistory {
        train_rmse: vec![rmse(&pred, y_train)],
        val_rmse: vec![rmse(&val_pred, y_val)],
    };
    let mut best = history.val_rmse[0];
    for round in 1..=config.max_rounds {
        let g: Vec<T> = pred.iter().zip(y_train).map(|(&p, &y)| p - y).collect();
        let rows: Vec<usize> = if config.subsample < 1.0 {
            (0..n).filter(|_| rng.gen::<f64>() < config.subsample).collect()
        } else {
            (0..n).collect()
        };
        let mut features: Vec<usize> = if n_sampled_cols < n_cols {
            sample(rng, n_cols, n_sampled_cols).into_vec()
        } else {
            (0..n_cols).collect()
        };
        features.sort_unstable();
        let tree = grow_tree(&data, rows, &features, &g, &h, config.max_depth, &params);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += eta * tree.leaf_value(train.row(i));
        }
        for (i, p) in val_pred.iter_mut().enumerate() {
            *p += eta * tree.leaf_value(val.row(i));
        }
        ensemble.trees.push(tree);
        let v = rmse(&val_pred, y_val);
        history.train_rmse.push(rmse(&pred, y_train));
        history.val_rmse.push(v);
        if v < best {
            best = v;
            ensemble.best_round = round;
        }
        if round - ensemble.best_round >= config.early_stop_patience {
            break;
        }
    }
    Ok((ensemble, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn params(lambda: f64) -> SplitParams<f64> {
        SplitParams {
            lambda,
            gamma: 0.0,
            min_child_weight: 0.0,
        }
    }

    #[test]
    fn histogram_examples() {
        let hist = build_histogram(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4], &[1.0; 4], &[2.5]);
        assert_eq!(hist.len(), 2);
        assert_eq!((hist[0].sum_g, hist[0].count), (2.0, 2));
        assert_eq!((hist[1].sum_g, hist[1].count), (2.0, 2));

        let flat = [7.0; 6];
        let edges = bin_edges(&flat, 256);
        assert!(edges.is_empty());
        let hist = build_histogram(&flat, &[1.0; 6], &[1.0; 6], &edges);
        assert_eq!(hist.iter().filter(|b| b.count > 0).count(), 1);
    }

    #[test]
    fn values_beyond_last_edge_go_to_last_bin() {
        let hist = build_histogram(&[0.0, 10.0, 99.0], &[1.0; 3], &[1.0; 3], &[1.0, 5.0]);
        assert_eq!(hist[2].count, 2);
    }

    #[test]
    fn one_hot_columns_collapse_to_two_bins() {
        let edges = bin_edges(&[0.0, 1.0, 0.0, 0.0, 1.0], 256);
        assert_eq!(edges, vec![0.5]);
    }

    #[test]
    fn quantile_edges_when_many_distinct() {
        let values: Vec<f64> = (0..10_000).map(f64::from).collect();
        let edges = bin_edges(&values, 256);
        assert!(edges.len() <= 255);
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stump_split_location() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let g: Vec<f64> = [0.0, 0.0, 1.0, 1.0].iter().map(|y| 0.5 - y).collect();
        let edges = bin_edges(&x, 256);
        let hist = build_histogram(&x, &g, &[1.0; 4], &edges);
        let s = best_split(&[hist], &[0], &params(0.0)).unwrap();
        assert_eq!(s.bin, 1);
        assert_eq!(edges[s.bin], 2.5);
        assert!(s.gain > 0.0);
    }

    #[test]
    fn constant_target_has_no_split() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let edges = bin_edges(&x, 256);
        let hist = build_histogram(&x, &[0.0; 4], &[1.0; 4], &edges);
        assert!(best_split(&[hist], &[0], &params(1.0)).is_none());
    }

    #[test]
    fn two_rows_are_separated() {
        let x = [0.0, 1.0];
        let g = [0.5, -0.5];
        let edges = bin_edges(&x, 256);
        let hist = build_histogram(&x, &g, &[1.0; 2], &edges);
        let s = best_split(&[hist], &[0], &params(0.0)).unwrap();
        assert_eq!(s.bin, 0);
        assert!(s.gain > 0.0);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let g = [0.5, 0.5, -0.5, -0.5];
        let edges = bin_edges(&x, 256);
        let hist = build_histogram(&x, &g, &[1.0; 4], &edges);
        let s = best_split(&[hist.clone(), hist], &[3, 1], &params(0.0)).unwrap();
        assert_eq!(s.feature, 1);
    }

    fn no_sampling_stump() -> GbtConfig {
        GbtConfig {
            max_depth: 1,
            max_rounds: 1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            lambda_l2: 0.0,
            min_child_weight: 0.0,
            ..GbtConfig::default()
        }
    }

    #[test]
    fn single_stump_closed_form() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.0, 1.0, 1.0];
        let mut rng = Streams::new(0).stream("gbt");
        let (e, _) = boost(
            Rows::new(&x, 1),
            &y,
            Rows::new(&x, 1),
            &y,
            &no_sampling_stump(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(e.best_round, 1);
        let p = e.predict(Rows::new(&x, 1)).unwrap();
        assert_eq!(p, vec![0.475, 0.475, 0.525, 0.525]);
    }

    #[test]
    fn empty_prefix_predicts_base() {
        let e = Ensemble {
            base_score: 0.3,
            learning_rate: 0.05,
            trees: vec![],
            best_round: 0,
            n_features: 2,
        };
        assert_eq!(e.predict(Rows::new(&[1.0, 2.0, 3.0, 4.0], 2)).unwrap(), vec![0.3, 0.3]);
        assert!(matches!(
            e.predict(Rows::new(&[1.0, 2.0, 3.0], 3)),
            Err(GbtError::Schema { .. })
        ));
    }

    #[test]
    fn empty_validation_is_rejected() {
        let mut rng = Streams::new(0).stream("gbt");
        let err = boost(
            Rows::new(&[1.0, 2.0], 1),
            &[0.0, 1.0],
            Rows::new(&[], 1),
            &[],
            &GbtConfig::default(),
            &mut rng,
        );
        assert_eq!(err.unwrap_err(), GbtError::Empty("validation slice"));
    }

    #[test]
    fn text_round_trip() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7).sin()).collect();
        let cfg = GbtConfig {
            max_rounds: 20,
            max_depth: 3,
            ..GbtConfig::default()
        };
        let mut rng = Streams::new(4).stream("gbt");
        let (e, _) = boost(
            Rows::new(&x, 2),
            &y[..100],
            Rows::new(&x[..40], 2),
            &y[..20],
            &cfg,
            &mut rng,
        )
        .unwrap();
        let back = Ensemble::<f64>::from_text(&e.to_text()).unwrap();
        let rows = Rows::new(&x, 2);
        assert_eq!(back.predict(rows).unwrap(), e.predict(rows).unwrap());
        assert_eq!(back.to_text(), e.to_text());
        assert!(Ensemble::<f64>::from_text("# evbench-gbt v1\nbase_score x\n").is_err());
    }
}
