//! Recursive walk-forward forecasting.
//!
//! A forecast origin `o` is the index of the first forecast interval, so the
//! history visible at `o` is `[0, o)`. Step `k` (1-based) predicts interval
//! `o + k − 1` from lags in which the `k − 1` newest values are the model's own
//! earlier predictions. Origins advance through the test partition by one
//! plan step and each starts again from observations only.

mod arima_path;
mod levels;
mod run;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arima::ArimaError;
use crate::features::{CalendarGrid, FeatureError, FeatureSchema, Identity};
use crate::gbt::{Ensemble, GbtError, Rows};
use crate::neural::{Model, NeuralError, SeqBatch};
use crate::numcore::NumError;
use crate::timeseries::{Resolution, SeriesError};

pub use arima_path::{arima_forecast, arima_walk_forward, fit_arima_entity, ArimaEntityFit};
pub use levels::{
    forecast_levels, train_arima, train_on, LevelContext, LevelData, LevelOutput, ModelKind, ModelSettings, Trained,
    TrainedLevel,
};
pub use run::{read_runs, write_runs, ForecastRun, RunLabel};

/// (entity, origin) pairs advanced together through one batch of steps.
const ORIGIN_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{entity}: origin {origin} needs {need} intervals of history")]
    InsufficientHistory { entity: String, origin: usize, need: usize },
    #[error("{0}: no forecast origin fits in the test partition")]
    NoOrigins(String),
    #[error("{model} produced a non-finite forecast for {entity}")]
    NonFinite { model: String, entity: String },
    #[error("model returned {got} predictions for {expected} rows")]
    PredictionCount { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
    #[error("malformed forecast table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Arima(#[from] ArimaError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlanLabel {
    Short,
    Mid,
    Long,
}

impl PlanLabel {
    pub const ALL: [PlanLabel; 3] = [PlanLabel::Short, PlanLabel::Mid, PlanLabel::Long];

    pub fn name(&self) -> &'static str {
        match self {
            PlanLabel::Short => "Short",
            PlanLabel::Mid => "Mid",
            PlanLabel::Long => "Long",
        }
    }
}

impl fmt::Display for PlanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlanLabel {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(PlanLabel::Short),
            "mid" => Ok(PlanLabel::Mid),
            "long" => Ok(PlanLabel::Long),
            _ => Err(EngineError::Config(format!("unknown plan '{}'", s))),
        }
    }
}

/// Recursion depth at the base resolution and the steps that get reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonPlan {
    pub label: PlanLabel,
    pub resolution: Resolution,
    pub depth: usize,
    /// 1-based recursion steps kept in the run, in order.
    pub report_steps: Vec<usize>,
    /// Intervals between consecutive origins.
    pub stride: usize,
}

pub fn plan_for(label: PlanLabel) -> HorizonPlan {
    match label {
        PlanLabel::Short => HorizonPlan {
            label,
            resolution: Resolution::TenMin,
            depth: 3,
            report_steps: vec![1, 2, 3],
            stride: 1,
        },
        PlanLabel::Mid => HorizonPlan {
            label,
            resolution: Resolution::Hourly,
            depth: 8,
            report_steps: vec![2, 4, 6, 8],
            stride: 2,
        },
        PlanLabel::Long => HorizonPlan {
            label,
            resolution: Resolution::Daily,
            depth: 5,
            report_steps: vec![1, 2, 3, 4, 5],
            stride: 1,
        },
    }
}

impl HorizonPlan {
    pub fn steps(&self) -> usize {
        self.report_steps.len()
    }

    /// Lead time of reported step `k` (1-based), e.g. `20min`, `4h`, `3d`.
    pub fn step_label(&self, k: usize) -> String {
        let lead = self.resolution.seconds() * self.report_steps[k - 1] as i64;
        match self.resolution {
            Resolution::TenMin => format!("{}min", lead / 60),
            Resolution::Hourly => format!("{}h", lead / 3600),
            Resolution::Daily => format!("{}d", lead / 86_400),
        }
    }

    /// Origins inside `test` with every recursion step observed.
    pub fn origins(&self, test: &Range<usize>) -> Vec<usize> {
        if test.end < self.depth {
            return Vec::new();
        }
        let last = test.end - self.depth;
        (test.start..=last).step_by(self.stride.max(1)).collect()
    }
}

/// Lag view for one origin: observations before the origin overlaid with the
/// predictions made since.
#[derive(Debug, Clone)]
pub struct LagState<'a> {
    observed: &'a [f64],
    origin: usize,
    depth: usize,
    predictions: Vec<f64>,
}

impl<'a> LagState<'a> {
    /// Seeds from `observed[origin − depth .. origin]`.
    pub fn seed(observed: &'a [f64], origin: usize, depth: usize) -> Option<Self> {
        (origin >= depth && origin <= observed.len()).then(|| Self {
            observed,
            origin,
            depth,
            predictions: Vec::new(),
        })
    }

    /// Value `offset` intervals back from the next target (1 = newest).
    pub fn lag(&self, offset: usize) -> f64 {
        debug_assert!(offset >= 1 && offset <= self.depth);
        let n = self.predictions.len();
        if offset <= n {
            self.predictions[n - offset]
        } else {
            self.observed[self.origin + n - offset]
        }
    }

    pub fn push(&mut self, prediction: f64) {
        self.predictions.push(prediction);
    }

    /// Back to observations through the origin.
    pub fn reset(&mut self) {
        self.predictions.clear();
    }

    /// Steps taken since the last reset.
    pub fn steps(&self) -> usize {
        self.predictions.len()
    }

    /// The `depth` newest values, oldest first.
    pub fn recent(&self) -> Vec<f64> {
        (1..=self.depth).rev().map(|o| self.lag(o)).collect()
    }
}

/// Anything that maps feature rows to one-step predictions.
pub trait StepModel {
    fn predict_rows(&self, x: &[f64], n_cols: usize) -> Result<Vec<f64>, EngineError>;
}

impl StepModel for Ensemble<f64> {
    fn predict_rows(&self, x: &[f64], n_cols: usize) -> Result<Vec<f64>, EngineError> {
        Ok(self.predict(Rows { x, n_cols })?)
    }
}

impl StepModel for Model<f64> {
    fn predict_rows(&self, x: &[f64], n_cols: usize) -> Result<Vec<f64>, EngineError> {
        let rows: Vec<usize> = (0..x.len() / n_cols.max(1)).collect();
        Ok(self.predict(&SeqBatch::from_matrix(x, n_cols, self.lag_len, &rows))?)
    }
}

/// Row-wise function as a model.
pub struct RowFn<F>(pub F);

impl<F: Fn(&[f64]) -> f64> StepModel for RowFn<F> {
    fn predict_rows(&self, x: &[f64], n_cols: usize) -> Result<Vec<f64>, EngineError> {
        Ok(x.chunks_exact(n_cols).map(|r| (self.0)(r)).collect())
    }
}

/// One entity's normalized series with its identity bits.
#[derive(Debug, Clone, Copy)]
pub struct EntityView<'a> {
    pub entity_id: &'a str,
    pub z: &'a [f64],
    pub identity: Identity,
}

/// Shared inputs of a walk-forward pass.
#[derive(Debug, Clone, Copy)]
pub struct WalkSetup<'a> {
    pub schema: &'a FeatureSchema,
    pub calendar: &'a CalendarGrid,
    pub plan: &'a HorizonPlan,
    pub test: &'a Range<usize>,
}

/// Recursive forecasts of every entity at every origin of the test range.
pub fn walk_forward<M: StepModel + ?Sized>(
    model: &M,
    setup: WalkSetup<'_>,
    entities: &[EntityView<'_>],
    label: &RunLabel,
) -> Result<Vec<ForecastRun>, EngineError> {
    let plan = setup.plan;
    let offsets = &setup.schema.lags.offsets;
    let max_lag = setup.schema.lags.max_lag();
    let width = setup.schema.width();
    let origins = plan.origins(setup.test);
    let mut runs = Vec::with_capacity(entities.len());
    for e in entities {
        if origins.is_empty() || *origins.last().unwrap() + plan.depth > e.z.len() {
            return Err(EngineError::NoOrigins(e.entity_id.to_string()));
        }
        if origins[0] < max_lag {
            return Err(EngineError::InsufficientHistory {
                entity: e.entity_id.to_string(),
                origin: origins[0],
                need: max_lag,
            });
        }
        runs.push(ForecastRun::empty(label, e.entity_id, origins.len(), plan.steps()));
    }
    let pairs: Vec<(usize, usize)> = (0..entities.len())
        .flat_map(|ei| (0..origins.len()).map(move |oi| (ei, oi)))
        .collect();
    let mut x = Vec::with_capacity(ORIGIN_CHUNK.min(pairs.len()) * width);
    let mut lags = vec![0.0; offsets.len()];
    for chunk in pairs.chunks(ORIGIN_CHUNK) {
        let mut states: Vec<LagState<'_>> = chunk
            .iter()
            .map(|&(ei, oi)| LagState::seed(entities[ei].z, origins[oi], max_lag).expect("origin checked"))
            .collect();
        for step in 1..=plan.depth {
            x.clear();
            for (state, &(ei, oi)) in states.iter().zip(chunk) {
                for (slot, &o) in lags.iter_mut().zip(offsets) {
                    *slot = state.lag(o);
                }
                let t = origins[oi] + step - 1;
                setup
                    .schema
                    .push_row(&mut x, &lags, setup.calendar.row(t), entities[ei].identity);
            }
            let pred = model.predict_rows(&x, width)?;
            if pred.len() != chunk.len() {
                return Err(EngineError::PredictionCount {
                    expected: chunk.len(),
                    got: pred.len(),
                });
            }
            let slot = plan.report_steps.iter().position(|&s| s == step);
            for ((state, &(ei, oi)), &p) in states.iter_mut().zip(chunk).zip(&pred) {
                if !p.is_finite() {
                    return Err(EngineError::NonFinite {
                        model: label.model.clone(),
                        entity: entities[ei].entity_id.to_string(),
                    });
                }
                state.push(p);
                if let Some(k) = slot {
                    let t = origins[oi] + step - 1;
                    runs[ei].predictions[oi][k] = p;
                    runs[ei].actuals[oi][k] = entities[ei].z[t];
                }
            }
        }
    }
    for run in &mut runs {
        run.origins = origins
            .iter()
            .map(|&o| setup.calendar.t0 + setup.calendar.resolution.duration() * o as i32)
            .collect();
    }
    Ok(runs)
}
