mod common;

use evbench::gbt::{
    bin_edges, bin_of, boost, build_histogram, grow_tree, BinnedMatrix, Ensemble, GbtConfig, Node, Rows, SplitParams,
};
use evbench::rng::Streams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{exact_tree_leaves, exhaustive_stump};

fn random_matrix(n: usize, cols: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            (x[r * cols]).sin() + 0.5 * x[r * cols + 1 % cols] * x[r * cols + (cols - 1)] + rng.gen_range(-0.1..0.1)
        })
        .collect();
    (x, y)
}

fn exact_config(depth: usize, rounds: usize) -> GbtConfig {
    GbtConfig {
        max_depth: depth,
        max_rounds: rounds,
        subsample: 1.0,
        colsample_bytree: 1.0,
        lambda_l2: 1.0,
        min_child_weight: 0.0,
        ..GbtConfig::default()
    }
}

#[test]
fn histogram_matches_naive_accumulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..100.0)).collect();
    let g: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.5..1.5)).collect();
    let edges = bin_edges(&values, 256);
    let hist = build_histogram(&values, &g, &h, &edges);
    for (b, bin) in hist.iter().enumerate() {
        let lo = if b == 0 { f64::NEG_INFINITY } else { edges[b - 1] };
        let hi = if b == edges.len() { f64::INFINITY } else { edges[b] };
        let (mut sg, mut sh, mut n) = (0.0, 0.0, 0);
        for i in 0..1000 {
            if values[i] > lo && values[i] <= hi {
                sg += g[i];
                sh += h[i];
                n += 1;
            }
        }
        assert_eq!((bin.sum_g, bin.sum_h, bin.count), (sg, sh, n), "bin {}", b);
    }
}

#[test]
fn stump_matches_exhaustive_oracle() {
    for seed in 0..5u64 {
        let (x, y) = random_matrix(200, 4, seed);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let g: Vec<f64> = y.iter().map(|v| mean - v).collect();
        let (f, thr, _) = exhaustive_stump(&x, 4, &g, 1.0).unwrap();

        let mut rng = Streams::new(seed).stream("gbt");
        let cfg = exact_config(1, 1);
        let (e, _) = boost(Rows::new(&x, 4), &y, Rows::new(&x, 4), &y, &cfg, &mut rng).unwrap();
        match &e.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, f);
                assert!((threshold - thr).abs() < 1e-12);
            }
            Node::Leaf { .. } => panic!("expected a split"),
        }
    }
}

#[test]
fn histogram_path_equals_exact_path() {
    for seed in 0..4u64 {
        let (x, y) = random_matrix(120, 3, 10 + seed);
        let g: Vec<f64> = y.iter().map(|v| 0.2 - v).collect();
        let h = vec![1.0; y.len()];
        let data = BinnedMatrix::new(Rows::new(&x, 3), 256);
        let params = SplitParams {
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 0.0,
        };
        let tree = grow_tree(&data, (0..120).collect(), &[0, 1, 2], &g, &h, 4, &params);
        let mut exact = vec![0.0; 120];
        exact_tree_leaves(&x, 3, &g, &(0..120).collect::<Vec<_>>(), 4, 1.0, &mut exact);
        for r in 0..120 {
            let v = tree.leaf_value(&x[r * 3..r * 3 + 3]);
            assert!((v - exact[r]).abs() < 1e-12, "row {}: {} vs {}", r, v, exact[r]);
        }
    }
}

fn naive_predict(e: &Ensemble<f64>, row: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in &e.trees[..e.best_round] {
        let mut node = &t.nodes[0];
        let w = loop {
            match node {
                Node::Leaf { weight } => break *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] > *threshold {
                        &t.nodes[*right]
                    } else {
                        &t.nodes[*left]
                    };
                }
            }
        };
        total += w;
    }
    e.base_score + e.learning_rate * total
}

#[test]
fn predictions_match_naive_walker() {
    let (x, y) = random_matrix(400, 5, 3);
    let cfg = GbtConfig {
        max_rounds: 60,
        max_depth: 5,
        ..GbtConfig::default()
    };
    let mut rng = Streams::new(3).stream("gbt");
    let (e, _) = boost(
        Rows::new(&x[..300 * 5], 5),
        &y[..300],
        Rows::new(&x[300 * 5..], 5),
        &y[300..],
        &cfg,
        &mut rng,
    )
    .unwrap();
    let p = e.predict(Rows::new(&x, 5)).unwrap();
    for r in 0..400 {
        assert_eq!(p[r], naive_predict(&e, &x[r * 5..(r + 1) * 5]));
    }
}

#[test]
fn binned_and_raw_routing_agree() {
    let (x, _) = random_matrix(500, 2, 8);
    let col: Vec<f64> = (0..500).map(|r| x[r * 2]).collect();
    let edges = bin_edges(&col, 32);
    for &v in &col {
        let b = bin_of(&edges, v);
        for (k, &e) in edges.iter().enumerate() {
            assert_eq!(b <= k, v <= e);
        }
    }
}

#[test]
fn prefix_stability() {
    let (x, y) = random_matrix(300, 3, 5);
    let mut rng = Streams::new(1).stream("gbt");
    let cfg = GbtConfig {
        max_rounds: 30,
        ..GbtConfig::default()
    };
    let (e, _) = boost(Rows::new(&x, 3), &y, Rows::new(&x, 3), &y, &cfg, &mut rng).unwrap();
    let mut longer = e.clone();
    longer.trees.push(e.trees[0].clone());
    for r in 0..300 {
        let row = &x[r * 3..r * 3 + 3];
        for k in 0..=e.trees.len() {
            assert_eq!(e.predict_row_prefix(row, k), longer.predict_row_prefix(row, k));
        }
    }
}

#[test]
fn linear_target_train_rmse_decreases() {
    let x: Vec<f64> = (0..400).map(|i| i as f64 / 40.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    let cfg = GbtConfig {
        max_rounds: 500,
        subsample: 1.0,
        colsample_bytree: 1.0,
        ..GbtConfig::default()
    };
    let mut rng = Streams::new(0).stream("gbt");
    let (e, hist) = boost(Rows::new(&x, 1), &y, Rows::new(&x, 1), &y, &cfg, &mut rng).unwrap();
    let prefix = &hist.train_rmse[..=e.best_round];
    assert!(prefix.windows(2).all(|w| w[1] <= w[0]));
    assert!(prefix.last().unwrap() < &0.05);
}

#[test]
fn noise_validation_stops_early() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x: Vec<f64> = (0..1200).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut stream = Streams::new(77).stream("gbt");
    let (e, hist) = boost(
        Rows::new(&x[..1000], 2),
        &y[..500],
        Rows::new(&x[1000..], 2),
        &y[500..],
        &GbtConfig::default(),
        &mut stream,
    )
    .unwrap();
    assert!(e.best_round < 2000);
    assert!(e.trees.len() < 2000);
    assert_eq!(e.trees.len(), e.best_round + 200);
    assert_eq!(hist.val_rmse.len(), e.trees.len() + 1);
}

#[test]
fn full_sampling_is_seed_independent() {
    let (x, y) = random_matrix(200, 3, 9);
    let cfg = GbtConfig {
        max_rounds: 25,
        subsample: 1.0,
        colsample_bytree: 1.0,
        ..GbtConfig::default()
    };
    let a = boost(
        Rows::new(&x, 3),
        &y,
        Rows::new(&x, 3),
        &y,
        &cfg,
        &mut Streams::new(1).stream("gbt"),
    )
    .unwrap()
    .0;
    let b = boost(
        Rows::new(&x, 3),
        &y,
        Rows::new(&x, 3),
        &y,
        &cfg,
        &mut Streams::new(2).stream("gbt"),
    )
    .unwrap()
    .0;
    assert_eq!(a.to_text(), b.to_text());
}

#[test]
fn tree_depth_is_bounded() {
    let (x, y) = random_matrix(500, 4, 2);
    let cfg = GbtConfig {
        max_rounds: 10,
        max_depth: 3,
        ..GbtConfig::default()
    };
    let (e, _) = boost(
        Rows::new(&x, 4),
        &y,
        Rows::new(&x, 4),
        &y,
        &cfg,
        &mut Streams::new(2).stream("gbt"),
    )
    .unwrap();
    assert!(e.trees.iter().all(|t| t.depth() <= 3));
}
