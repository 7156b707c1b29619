use std::io::Write;

use rand::seq::SliceRandom;

use super::{Model, NeuralError, SeqBatch};
use crate::numcore::{AdamState, NumError, Tape, Tensor};
use crate::rng::Streams;
use crate::scalar::Scalar;

/// Samples in sequence form.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData<T> {
    pub batch: SeqBatch<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(batch: SeqBatch<T>, y: Vec<T>) -> Self {
        assert_eq!(batch.rows(), y.len(), "one target per sample");
        Self { batch, y }
    }

    /// All rows of a row-major feature matrix.
    pub fn from_matrix(x: &[f64], y: &[f64], n_cols: usize, lag_width: usize) -> Self {
        let rows: Vec<usize> = (0..y.len()).collect();
        Self::new(
            SeqBatch::from_matrix(x, n_cols, lag_width, &rows),
            y.iter().map(|&v| T::lit(v)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (SeqBatch<T>, Tensor<T>) {
        let (l, s) = (self.batch.seq.shape()[1], self.batch.stat.shape()[1]);
        let mut seq = Vec::with_capacity(idx.len() * l);
        let mut stat = Vec::with_capacity(idx.len() * s);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            seq.extend_from_slice(&self.batch.seq.data()[i * l..(i + 1) * l]);
            stat.extend_from_slice(&self.batch.stat.data()[i * s..(i + 1) * s]);
            y.push(self.y[i]);
        }
        (
            SeqBatch {
                seq: Tensor::new(vec![idx.len(), l], seq).expect("sized"),
                stat: Tensor::new(vec![idx.len(), s], stat).expect("sized"),
            },
            Tensor::vector(&y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Wait,
    Stop,
}

/// Patience counter over a validation loss sequence (epochs are 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: Option<f64>,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopSignal {
        if self.best_loss.map_or(true, |b| loss < b) {
            self.best_loss = Some(loss);
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopSignal::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Wait
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    }
}

fn mse<T: Scalar>(pred: &[T], y: &[T]) -> f64 {
    pred.iter().zip(y).map(|(&p, &t)| (p - t).as_f64().powi(2)).sum::<f64>() / y.len() as f64
}

fn diverged(epoch: usize) -> impl Fn(NeuralError) -> NeuralError {
    move |e| match e {
        NeuralError::Num(NumError::NonFinite(op)) => NeuralError::Divergence {
            epoch,
            msg: format!("non-finite value in {}", op),
        },
        other => other,
    }
}

/// Mini-batch Adam on MSE with per-epoch shuffling and early stopping on the
/// validation loss. Returns the parameters of the best epoch.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    data: &TrainData<T>,
    val: &TrainData<T>,
    streams: Streams,
) -> Result<(Model<T>, TrainHistory), NeuralError> {
    if data.is_empty() {
        return Err(NeuralError::Empty("training set"));
    }
    if val.is_empty() {
        return Err(NeuralError::Empty("validation slice"));
    }
    crate::numcore::retain_freed_memory();
    let settings = model.arch.training().clone();
    let batch = settings.batch_size.min(data.len());
    let mut shuffle = streams.stream("shuffle");
    let mut dropout = streams.stream("dropout");
    let mut adam = AdamState::new(settings.learning_rate, model.params.tensors());
    let mut stopper = EarlyStopping::new(settings.patience);
    let mut history = TrainHistory::default();
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=settings.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let (inputs, y) = data.gather(idx);
            let grads = {
                let tape = Tape::new();
                let bound = super::Bound::new(&tape, &model.params);
                let pred = model
                    .forward(&tape, &bound, &inputs, true, &mut dropout)
                    .map_err(diverged(epoch))?;
                let target = tape.constant(y);
                let err = pred.sub(&target).map_err(NeuralError::from)?;
                let loss = err
                    .mul(&err)
                    .and_then(|sq| sq.mean())
                    .map_err(|e| diverged(epoch)(e.into()))?;
                let value = loss.value().item()?.as_f64();
                if !value.is_finite() {
                    return Err(NeuralError::Divergence {
                        epoch,
                        msg: "non-finite loss".into(),
                    });
                }
                total += value * idx.len() as f64;
                let g = tape.backward(loss).map_err(|e| diverged(epoch)(e.into()))?;
                bound.vars().iter().map(|v| g.get(*v)).collect::<Vec<_>>()
            };
            adam.step(model.params.tensors_mut(), &grads)?;
        }
        let val_pred = model.predict(&val.batch).map_err(diverged(epoch))?;
        let val_loss = mse(&val_pred, &val.y);
        if !val_loss.is_finite() {
            return Err(NeuralError::Divergence {
                epoch,
                msg: "non-finite validation loss".into(),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / data.len() as f64,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopSignal::Improved => best_params = model.params.clone(),
            StopSignal::Wait => {}
            StopSignal::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch;
    model.params = best_params;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_validation_stops_at_epoch_21() {
        let mut s = EarlyStopping::new(20);
        let mut stopped = None;
        for epoch in 1..=200 {
            if s.observe(epoch, epoch as f64) == StopSignal::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(21));
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), StopSignal::Improved);
        assert_eq!(s.observe(2, 1.5), StopSignal::Wait);
        assert_eq!(s.observe(3, 0.5), StopSignal::Improved);
        assert_eq!(s.observe(4, 0.5), StopSignal::Wait);
        assert_eq!(s.observe(5, 0.6), StopSignal::Stop);
        assert_eq!(s.best_epoch, 3);
    }
}
