use rand::Rng;

use super::Bound;
use crate::numcore::{NumError, Tensor, Var};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal encoding `[len, d]`: even columns sin, odd columns cos.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, d], data).expect("shape matches data")
}

/// Multi-head scaled dot-product attention over projected `q`, `k`, `v`
/// (each `[B, L, D]`), returning the concatenated heads `[B, L, D]` before the
/// output projection.
pub fn attention<'t, T: Scalar, R: Rng>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var<'t, T>, NumError> {
    q.attention(&k, &v, heads, dropout, train, rng)
}

fn dense<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, '_, T>, w: &str, b: &str) -> Result<Var<'t, T>, NumError> {
    x.linear(&p.get(w), &p.get(b))
}

/// Pre-norm encoder block: `X + MHA(LN(X))`, then `+ FF(LN(·))`.
pub fn encoder_layer<'t, T: Scalar, R: Rng>(
    x: Var<'t, T>,
    p: &Bound<'t, '_, T>,
    prefix: &str,
    heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var<'t, T>, NumError> {
    let name = |s: &str| format!("{}.{}", prefix, s);
    let eps = T::lit(LAYER_NORM_EPS);
    let ln1 = x.layer_norm(2, eps)?;
    let q = dense(ln1, p, &name("wq"), &name("bq"))?;
    let k = dense(ln1, p, &name("wk"), &name("bk"))?;
    let v = dense(ln1, p, &name("wv"), &name("bv"))?;
    let heads_out = attention(q, k, v, heads, dropout, train, rng)?;
    let x = x.add(&dense(heads_out, p, &name("wo"), &name("bo"))?)?;
    let ln2 = x.layer_norm(2, eps)?;
    let hidden = dense(ln2, p, &name("w1"), &name("b1"))?.relu()?;
    let ff = dense(hidden, p, &name("w2"), &name("b2"))?.dropout(dropout, train, rng)?;
    x.add(&ff)
}

/// Parameter names and shapes of one encoder layer.
pub fn layer_shapes(prefix: &str, d_model: usize, ff_dim: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{}.w{}", prefix, m), vec![d_model, d_model]));
        out.push((format!("{}.b{}", prefix, m), vec![d_model]));
    }
    out.push((format!("{}.w1", prefix), vec![d_model, ff_dim]));
    out.push((format!("{}.b1", prefix), vec![ff_dim]));
    out.push((format!("{}.w2", prefix), vec![ff_dim, d_model]));
    out.push((format!("{}.b2", prefix), vec![d_model]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{ParamStore, Tape};
    use crate::rng::Streams;

    #[test]
    fn encoding_starts_with_sin_cos_of_zero() {
        let pe: Tensor<f64> = positional_encoding(3, 4);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[4] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn identical_value_rows_pass_through_attention() {
        let tape = Tape::new();
        let mut rng = Streams::new(1).stream("init");
        let q = tape.constant(Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng));
        let k = tape.constant(Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng));
        let row = [0.3f64, -1.2, 0.7, 2.0];
        let v = tape.constant(Tensor::new(vec![2, 3, 4], row.iter().copied().cycle().take(24).collect()).unwrap());
        let out = attention(q, k, v, 2, 0.0, false, &mut rng).unwrap().value();
        for (i, &o) in out.data().iter().enumerate() {
            assert!((o - row[i % 4]).abs() < 1e-12);
        }
    }

    /// Attention assembled from reshape, permute, bmm and softmax.
    fn composed_attention<'t>(q: Var<'t, f64>, k: Var<'t, f64>, v: Var<'t, f64>, heads: usize) -> Var<'t, f64> {
        let split = |x: Var<'t, f64>| {
            let s = x.shape();
            x.reshape(&[s[0], s[1], heads, s[2] / heads])
                .unwrap()
                .permute(&[0, 2, 1, 3])
                .unwrap()
                .reshape(&[s[0] * heads, s[1], s[2] / heads])
                .unwrap()
        };
        let s = q.shape();
        let dk = s[2] / heads;
        let scores = split(q)
            .bmm(&split(k).transpose().unwrap())
            .unwrap()
            .scale(1.0 / (dk as f64).sqrt())
            .unwrap();
        scores
            .softmax(2)
            .unwrap()
            .bmm(&split(v))
            .unwrap()
            .reshape(&[s[0], heads, s[1], dk])
            .unwrap()
            .permute(&[0, 2, 1, 3])
            .unwrap()
            .reshape(&[s[0], s[1], s[2]])
            .unwrap()
    }

    #[test]
    fn fused_attention_matches_composed_ops() {
        let mut rng = Streams::new(4).stream("init");
        let vals: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::uniform(&[3, 4, 8], -1.0, 1.0, &mut rng))
            .collect();
        let run = |fused: bool| {
            let tape = Tape::new();
            let (q, k, v) = (
                tape.param(vals[0].clone()),
                tape.param(vals[1].clone()),
                tape.param(vals[2].clone()),
            );
            let mut r = Streams::new(0).stream("dropout");
            let out = if fused {
                attention(q, k, v, 2, 0.0, false, &mut r).unwrap()
            } else {
                composed_attention(q, k, v, 2)
            };
            let w = tape.constant(vals[3].clone());
            let g = tape.backward(out.mul(&w).unwrap().sum().unwrap()).unwrap();
            (out.value(), g.get(q), g.get(k), g.get(v))
        };
        let (a, b) = (run(true), run(false));
        for (x, y) in [(a.0, b.0), (a.1, b.1), (a.2, b.2), (a.3, b.3)] {
            for (u, w) in x.data().iter().zip(y.data()) {
                assert!((u - w).abs() < 1e-12, "{} vs {}", u, w);
            }
        }
    }

    #[test]
    fn zero_weights_make_layer_identity() {
        let mut store = ParamStore::new();
        for (name, shape) in layer_shapes("l0", 8, 16) {
            store.insert(name, Tensor::<f64>::zeros(&shape));
        }
        let tape = Tape::new();
        let bound = Bound::new(&tape, &store);
        let mut rng = Streams::new(2).stream("dropout");
        let x_val = Tensor::uniform(&[3, 5, 8], -1.0, 1.0, &mut rng);
        let x = tape.constant(x_val.clone());
        let y = encoder_layer(x, &bound, "l0", 2, 0.1, false, &mut rng).unwrap();
        assert_eq!(y.value(), x_val);
    }
}
