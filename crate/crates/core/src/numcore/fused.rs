//! Kernels for the fused tape ops. Tensors are row-major slices.

use crate::scalar::Scalar;

/// Layout of one multi-head attention call over `[batch, len, d]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub len: usize,
    pub d: usize,
    pub heads: usize,
}

impl AttnDims {
    fn dk(&self) -> usize {
        self.d / self.heads
    }

    /// Offset of row `i` of head `h` in sample `b`.
    fn row(&self, b: usize, h: usize, i: usize) -> usize {
        b * self.len * self.d + i * self.d + h * self.dk()
    }

    /// Offset of the `[len, len]` weight block of `(b, h)`.
    fn block(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.len * self.len
    }

    pub fn weights_len(&self) -> usize {
        self.batch * self.heads * self.len * self.len
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(y, &x)| *y += alpha * x);
}

/// `softmax(Q Kᵀ / √dk) V` per head, with an optional multiplicative mask on
/// the weights. Returns the output and the pre-mask weights.
pub(crate) fn attention_forward<T: Scalar>(
    dims: AttnDims,
    q: &[T],
    k: &[T],
    v: &[T],
    mask: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let (l, dk) = (dims.len, dims.dk());
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); dims.weights_len()];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let blk = dims.block(b, h);
            for i in 0..l {
                let qi = &q[dims.row(b, h, i)..][..dk];
                let p = &mut probs[blk + i * l..blk + (i + 1) * l];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = dot(qi, &k[dims.row(b, h, j)..][..dk]) * scale;
                }
                let max = p.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                for pj in p.iter_mut() {
                    *pj = (*pj - max).exp();
                    total += *pj;
                }
                let inv = T::one() / total;
                p.iter_mut().for_each(|pj| *pj *= inv);
                let oi = dims.row(b, h, i);
                for j in 0..l {
                    let w = match mask {
                        Some(m) => p[j] * m[blk + i * l + j],
                        None => p[j],
                    };
                    let vj = &v[dims.row(b, h, j)..][..dk];
                    axpy(w, vj, &mut out[oi..oi + dk]);
                }
            }
        }
    }
    (out, probs)
}

/// Gradients `(dq, dk, dv)` of [`attention_forward`] given the output
/// gradient `g`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    dims: AttnDims,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    mask: Option<&[T]>,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (l, dk) = (dims.len, dims.dk());
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dkv = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); l];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let blk = dims.block(b, h);
            for i in 0..l {
                let gi = &g[dims.row(b, h, i)..][..dk];
                let p = &probs[blk + i * l..blk + (i + 1) * l];
                for j in 0..l {
                    let m = mask.map_or(T::one(), |m| m[blk + i * l + j]);
                    let rj = dims.row(b, h, j);
                    dp[j] = dot(gi, &v[rj..rj + dk]) * m;
                    axpy(p[j] * m, gi, &mut dv[rj..rj + dk]);
                }
                let centre = dot(&dp, p);
                let ri = dims.row(b, h, i);
                for j in 0..l {
                    let ds = p[j] * (dp[j] - centre) * scale;
                    let rj = dims.row(b, h, j);
                    axpy(ds, &k[rj..rj + dk], &mut dq[ri..ri + dk]);
                    axpy(ds, &q[ri..ri + dk], &mut dkv[rj..rj + dk]);
                }
            }
        }
    }
    (dq, dkv, dv)
}
