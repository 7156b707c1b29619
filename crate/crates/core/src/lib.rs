//! Forecasting benchmark for electric-vehicle charging load.
//!
//! Raw session exports go through [`ingest`] into [`timeseries`] at three
//! aggregation levels, then [`features`] builds lagged, normalized design
//! matrices. [`arima`], [`gbt`] and [`neural`] fit the five model families
//! and [`engine`] runs the walk-forward evaluation that [`evalreport`] scores.
//!
//! The numerical code is generic over [`scalar::Scalar`]; the aliases below
//! fix it to `f64`, which every pipeline stage uses.

pub mod arima;
pub mod engine;
pub mod evalreport;
pub mod features;
pub mod gbt;
pub mod ingest;
pub mod neural;
pub mod numcore;
pub mod rng;
pub mod scalar;
pub mod timeseries;

pub type Tensor = numcore::Tensor<f64>;
pub type ParamStore = numcore::ParamStore<f64>;
pub type Normalizer = features::Normalizer<f64>;
pub type ArimaModel = arima::ArimaModel<f64>;
pub type ArimaFit = arima::Fitted<f64>;
pub type TrainData = neural::TrainData<f64>;
pub type Ensemble = gbt::Ensemble<f64>;
pub type Tree = gbt::Tree<f64>;
pub type NeuralModel = neural::Model<f64>;
