//! GRU, LSTM and Transformer-encoder regressors over lag sequences.
//!
//! A sample is a lag sequence (oldest first) plus a static vector of
//! calendar and identity features. Recurrent models feed `[lag_t ∥ static]`
//! at every step and read the final hidden state. The Transformer embeds the
//! same per-step vectors, adds a sinusoidal encoding, runs pre-norm encoder
//! blocks and mean-pools over positions. Both end in a linear head.

mod cells;
mod train;
mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub use cells::{gru_cell, lstm_cell};
pub use train::{train, EarlyStopping, EpochRecord, StopSignal, TrainData, TrainHistory};
pub use transformer::{attention, encoder_layer, layer_shapes, positional_encoding, LAYER_NORM_EPS};

/// Rows per forward pass at inference.
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("schema mismatch: expected {expected}, got {got}")]
    Schema { expected: String, got: String },
    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Gru,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 200,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub cell: Cell,
    pub hidden: usize,
    pub training: TrainSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub training: TrainSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    Rnn(RnnConfig),
    Transformer(TransformerConfig),
}

impl Arch {
    pub fn gru() -> Self {
        Arch::Rnn(RnnConfig {
            cell: Cell::Gru,
            hidden: 64,
            training: TrainSettings::default(),
        })
    }

    pub fn lstm() -> Self {
        Arch::Rnn(RnnConfig {
            cell: Cell::Lstm,
            hidden: 64,
            training: TrainSettings::default(),
        })
    }

    pub fn transformer() -> Self {
        Arch::Transformer(TransformerConfig {
            d_model: 128,
            heads: 8,
            layers: 4,
            ff_dim: 256,
            dropout: 0.1,
            training: TrainSettings::default(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Rnn(RnnConfig { cell: Cell::Gru, .. }) => "GRU",
            Arch::Rnn(RnnConfig { cell: Cell::Lstm, .. }) => "LSTM",
            Arch::Transformer(_) => "Transformer",
        }
    }

    pub fn training(&self) -> &TrainSettings {
        match self {
            Arch::Rnn(c) => &c.training,
            Arch::Transformer(c) => &c.training,
        }
    }

    pub fn training_mut(&mut self) -> &mut TrainSettings {
        match self {
            Arch::Rnn(c) => &mut c.training,
            Arch::Transformer(c) => &mut c.training,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let t = self.training();
        if t.batch_size == 0 || t.max_epochs == 0 {
            return Err(NeuralError::Config("batch size and epochs must be positive".into()));
        }
        match self {
            Arch::Rnn(c) if c.hidden == 0 => Err(NeuralError::Config("hidden size must be positive".into())),
            Arch::Transformer(c) if c.heads == 0 || c.d_model % c.heads != 0 => Err(NeuralError::Config(format!(
                "d_model {} not divisible by {} heads",
                c.d_model, c.heads
            ))),
            Arch::Transformer(c) if !(0.0..1.0).contains(&c.dropout) => {
                Err(NeuralError::Config(format!("dropout {} not in [0, 1)", c.dropout)))
            }
            _ => Ok(()),
        }
    }
}

/// Parameters of a store bound to tape variables for one forward pass.
pub struct Bound<'t, 'p, T> {
    store: &'p ParamStore<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, 'p, T: Scalar> Bound<'t, 'p, T> {
    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn new(tape: &'t Tape<T>, store: &'p ParamStore<T>) -> Self {
        let vars = store.tensors().iter().map(|t| tape.param(t.clone())).collect();
        Self { store, vars }
    }

    /// Uses already recorded variables, in store order.
    pub fn from_vars(store: &'p ParamStore<T>, vars: Vec<Var<'t, T>>) -> Self {
        assert_eq!(vars.len(), store.len(), "one variable per parameter");
        Self { store, vars }
    }

    pub fn get(&self, name: &str) -> Var<'t, T> {
        let i = self
            .store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {}", name));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Inputs of a batch: `seq: [B, L]` lags oldest first, `stat: [B, S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch<T> {
    pub seq: Tensor<T>,
    pub stat: Tensor<T>,
}

impl<T: Scalar> SeqBatch<T> {
    pub fn rows(&self) -> usize {
        self.seq.shape()[0]
    }

    /// Gathers `rows` of a feature matrix whose first `lag_width` columns are
    /// lags in ascending offset order.
    pub fn from_matrix(x: &[f64], n_cols: usize, lag_width: usize, rows: &[usize]) -> Self {
        let s = n_cols - lag_width;
        let mut seq = Vec::with_capacity(rows.len() * lag_width);
        let mut stat = Vec::with_capacity(rows.len() * s);
        for &r in rows {
            let row = &x[r * n_cols..(r + 1) * n_cols];
            seq.extend(row[..lag_width].iter().rev().map(|&v| T::lit(v)));
            stat.extend(row[lag_width..].iter().map(|&v| T::lit(v)));
        }
        Self {
            seq: Tensor::new(vec![rows.len(), lag_width], seq).expect("sized"),
            stat: Tensor::new(vec![rows.len(), s], stat).expect("sized"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub arch: Arch,
    pub params: ParamStore<T>,
    pub lag_len: usize,
    pub static_len: usize,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform matrices and zero biases.
    pub fn init<R: Rng>(arch: Arch, lag_len: usize, static_len: usize, rng: &mut R) -> Result<Self, NeuralError> {
        arch.validate()?;
        if lag_len == 0 {
            return Err(NeuralError::Empty("lag sequence"));
        }
        let input = 1 + static_len;
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let out_dim = match &arch {
            Arch::Rnn(c) => {
                let h = c.hidden;
                match c.cell {
                    Cell::Gru => {
                        shapes.push(("gru.w_zr".into(), vec![input + h, 2 * h]));
                        shapes.push(("gru.b_zr".into(), vec![2 * h]));
                        shapes.push(("gru.w_h".into(), vec![input + h, h]));
                        shapes.push(("gru.b_h".into(), vec![h]));
                    }
                    Cell::Lstm => {
                        shapes.push(("lstm.w".into(), vec![input + h, 4 * h]));
                        shapes.push(("lstm.b".into(), vec![4 * h]));
                    }
                }
                h
            }
            Arch::Transformer(c) => {
                shapes.push(("embed.w".into(), vec![input, c.d_model]));
                shapes.push(("embed.b".into(), vec![c.d_model]));
                for l in 0..c.layers {
                    shapes.extend(layer_shapes(&format!("layer{}", l), c.d_model, c.ff_dim));
                }
                c.d_model
            }
        };
        shapes.push(("head.w".into(), vec![out_dim, 1]));
        shapes.push(("head.b".into(), vec![1]));
        let mut params = ParamStore::new();
        for (name, shape) in shapes {
            let t = if shape.len() >= 2 {
                Tensor::glorot(&shape, rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        Ok(Self {
            arch,
            params,
            lag_len,
            static_len,
        })
    }

    fn check(&self, batch: &SeqBatch<T>) -> Result<(), NeuralError> {
        let (l, s) = (batch.seq.shape()[1], batch.stat.shape()[1]);
        if l != self.lag_len || s != self.static_len {
            return Err(NeuralError::Schema {
                expected: format!("{} lags + {} static", self.lag_len, self.static_len),
                got: format!("{} lags + {} static", l, s),
            });
        }
        Ok(())
    }

    /// Predictions `[B]` on the tape.
    pub fn forward<'t, R: Rng>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, '_, T>,
        batch: &SeqBatch<T>,
        train: bool,
        rng: &mut R,
    ) -> Result<Var<'t, T>, NeuralError> {
        self.check(batch)?;
        let b = batch.rows();
        let (l, s) = (self.lag_len, self.static_len);
        let summary = match &self.arch {
            Arch::Rnn(c) => {
                let seq = tape.constant(batch.seq.clone());
                let stat = tape.constant(batch.stat.clone());
                let mut h = tape.constant(Tensor::zeros(&[b, c.hidden]));
                let mut cell_state = tape.constant(Tensor::zeros(&[b, c.hidden]));
                for t in 0..l {
                    let x = Var::concat(&[seq.slice(1, t, 1)?, stat], 1)?;
                    match c.cell {
                        Cell::Gru => {
                            h = gru_cell(
                                x,
                                h,
                                p.get("gru.w_zr"),
                                p.get("gru.b_zr"),
                                p.get("gru.w_h"),
                                p.get("gru.b_h"),
                            )?;
                        }
                        Cell::Lstm => {
                            let (hn, cn) = lstm_cell(x, h, cell_state, p.get("lstm.w"), p.get("lstm.b"))?;
                            h = hn;
                            cell_state = cn;
                        }
                    }
                }
                h
            }
            Arch::Transformer(c) => {
                let mut tokens = Vec::with_capacity(b * l * (1 + s));
                for r in 0..b {
                    for t in 0..l {
                        tokens.push(batch.seq.data()[r * l + t]);
                        tokens.extend_from_slice(&batch.stat.data()[r * s..(r + 1) * s]);
                    }
                }
                let tokens = tape.constant(Tensor::new(vec![b, l, 1 + s], tokens)?);
                let pe = tape.constant(positional_encoding(l, c.d_model));
                let mut x = tokens.linear(&p.get("embed.w"), &p.get("embed.b"))?.add(&pe)?;
                for layer in 0..c.layers {
                    x = encoder_layer(x, p, &format!("layer{}", layer), c.heads, c.dropout, train, rng)?;
                }
                x.mean_axis(1)?
            }
        };
        Ok(summary.linear(&p.get("head.w"), &p.get("head.b"))?.reshape(&[b])?)
    }

    /// Dropout-free predictions.
    pub fn predict(&self, batch: &SeqBatch<T>) -> Result<Vec<T>, NeuralError> {
        self.check(batch)?;
        let mut out = Vec::with_capacity(batch.rows());
        let mut rng = crate::rng::Streams::new(0).stream("unused");
        let (l, s) = (self.lag_len, self.static_len);
        let mut start = 0;
        while start < batch.rows() {
            let n = PREDICT_CHUNK.min(batch.rows() - start);
            let chunk = SeqBatch {
                seq: Tensor::new(vec![n, l], batch.seq.data()[start * l..(start + n) * l].to_vec())?,
                stat: Tensor::new(vec![n, s], batch.stat.data()[start * s..(start + n) * s].to_vec())?,
            };
            let tape = Tape::new();
            let vars = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
            let bound = Bound::from_vars(&self.params, vars);
            out.extend_from_slice(self.forward(&tape, &bound, &chunk, false, &mut rng)?.value().data());
            start += n;
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> String {
        self.params.to_checkpoint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn tiny(arch: Arch) -> Arch {
        match arch {
            Arch::Rnn(mut c) => {
                c.hidden = 4;
                Arch::Rnn(c)
            }
            Arch::Transformer(mut c) => {
                c.d_model = 8;
                c.heads = 2;
                c.layers = 2;
                c.ff_dim = 16;
                Arch::Transformer(c)
            }
        }
    }

    fn batch(rows: usize, l: usize, s: usize, seed: u64) -> SeqBatch<f64> {
        let mut rng = Streams::new(seed).stream("data");
        SeqBatch {
            seq: Tensor::uniform(&[rows, l], -1.0, 1.0, &mut rng),
            stat: Tensor::uniform(&[rows, s], 0.0, 1.0, &mut rng),
        }
    }

    #[test]
    fn zero_head_predicts_zero() {
        for arch in [Arch::gru(), Arch::lstm(), Arch::transformer()] {
            let mut m: Model<f64> = Model::init(tiny(arch), 3, 5, &mut Streams::new(1).stream("init")).unwrap();
            *m.params.get_mut("head.w").unwrap() = Tensor::zeros(&m.params.get("head.w").unwrap().shape().to_vec());
            assert!(m.predict(&batch(6, 3, 5, 2)).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_order_does_not_matter() {
        for arch in [Arch::gru(), Arch::lstm(), Arch::transformer()] {
            let m: Model<f64> = Model::init(tiny(arch), 4, 3, &mut Streams::new(3).stream("init")).unwrap();
            let b = batch(5, 4, 3, 4);
            let p = m.predict(&b).unwrap();
            let order = [3usize, 0, 4, 1, 2];
            let perm = SeqBatch {
                seq: Tensor::new(
                    vec![5, 4],
                    order
                        .iter()
                        .flat_map(|&r| b.seq.data()[r * 4..r * 4 + 4].to_vec())
                        .collect(),
                )
                .unwrap(),
                stat: Tensor::new(
                    vec![5, 3],
                    order
                        .iter()
                        .flat_map(|&r| b.stat.data()[r * 3..r * 3 + 3].to_vec())
                        .collect(),
                )
                .unwrap(),
            };
            let q = m.predict(&perm).unwrap();
            for (i, &r) in order.iter().enumerate() {
                assert!((q[i] - p[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_lag_transformer_shapes() {
        let m: Model<f64> = Model::init(tiny(Arch::transformer()), 1, 2, &mut Streams::new(5).stream("init")).unwrap();
        assert_eq!(m.predict(&batch(3, 1, 2, 6)).unwrap().len(), 3);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let m: Model<f64> = Model::init(tiny(Arch::gru()), 3, 5, &mut Streams::new(1).stream("init")).unwrap();
        assert!(matches!(m.predict(&batch(2, 4, 5, 1)), Err(NeuralError::Schema { .. })));
    }

    #[test]
    fn lag_order_is_reversed_to_oldest_first() {
        let x = [1.0, 2.0, 3.0, 9.0, 4.0, 5.0, 6.0, 8.0];
        let b: SeqBatch<f64> = SeqBatch::from_matrix(&x, 4, 3, &[1, 0]);
        assert_eq!(b.seq.data(), &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(b.stat.data(), &[8.0, 9.0]);
    }

    #[test]
    fn transformer_heads_must_divide_width() {
        let mut arch = Arch::transformer();
        if let Arch::Transformer(c) = &mut arch {
            c.heads = 3;
        }
        assert!(matches!(arch.validate(), Err(NeuralError::Config(_))));
    }
}
