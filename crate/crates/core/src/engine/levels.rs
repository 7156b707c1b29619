use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    arima_forecast, fit_arima_entity, walk_forward, ArimaEntityFit, EngineError, EntityView, ForecastRun, HorizonPlan,
    RunLabel, WalkSetup,
};
use crate::features::{
    build_matrix, chronological_split, fit_pooled, CalendarGrid, EntityInput, FeatureMatrix, FeatureSchema,
    HolidayTable, Identity, LagSpec, Normalizer, Split,
};
use crate::gbt::{boost, Ensemble, GbtConfig, Rows};
use crate::ingest::City;
use crate::neural::{train, Arch, Model, TrainData};
use crate::numcore::ParamStore;
use crate::rng::Streams;
use crate::timeseries::{CitySeries, EnergySeries, Level};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Arima,
    Gbt,
    Gru,
    Lstm,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Arima,
        ModelKind::Gbt,
        ModelKind::Gru,
        ModelKind::Lstm,
        ModelKind::Transformer,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Arima => "ARIMA",
            ModelKind::Gbt => "GBT",
            ModelKind::Gru => "GRU",
            ModelKind::Lstm => "LSTM",
            ModelKind::Transformer => "Transformer",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EngineError::Config(format!("unknown model '{}'", s)))
    }
}

/// Hyperparameters of the trainable models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub gbt: GbtConfig,
    pub gru: Arch,
    pub lstm: Arch,
    pub transformer: Arch,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            gbt: GbtConfig::default(),
            gru: Arch::gru(),
            lstm: Arch::lstm(),
            transformer: Arch::transformer(),
        }
    }
}

/// One city's series at a plan's resolution and everything needed to train
/// on them.
#[derive(Debug, Clone, Copy)]
pub struct LevelContext<'a> {
    pub city: City,
    pub city_id: &'a str,
    pub series: &'a CitySeries,
    pub lags: &'a LagSpec,
    pub train_fraction: f64,
    pub holidays: &'a HolidayTable,
    pub seed: u64,
    pub settings: &'a ModelSettings,
}

#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub level: Level,
    pub runs: Vec<ForecastRun>,
    /// `(file name, contents)`: training histories, checkpoints, fitted orders.
    pub artifacts: Vec<(String, String)>,
}

fn check_plan(ctx: &LevelContext<'_>, plan: &HorizonPlan) -> Result<(), EngineError> {
    if ctx.series.resolution() != plan.resolution || ctx.lags.resolution != plan.resolution {
        return Err(EngineError::Config(format!(
            "{} plan needs {} series and lags",
            plan.label,
            plan.resolution.name()
        )));
    }
    Ok(())
}

/// Trains `model` separately at station, region and city level and
/// forecasts every entity of each level.
pub fn forecast_levels(
    ctx: &LevelContext<'_>,
    model: ModelKind,
    plan: &HorizonPlan,
) -> Result<Vec<LevelOutput>, EngineError> {
    check_plan(ctx, plan)?;
    let mut out = Vec::with_capacity(Level::ALL.len());
    for level in Level::ALL {
        let data = LevelData::prepare(ctx, plan, level)?;
        let trained = if model == ModelKind::Arima {
            train_arima(&data)?
        } else {
            let (fit, val) = data.matrices()?;
            train_on(ctx, model, plan, &data, &fit, &val)?
        };
        let runs = data.forecast(ctx, model, plan, &trained.model)?;
        out.push(LevelOutput {
            level,
            runs,
            artifacts: trained.artifacts,
        });
    }
    Ok(out)
}

/// Split, normalizer, schema and calendar of one level of a city.
pub struct LevelData<'a> {
    pub level: Level,
    pub entities: Vec<&'a EnergySeries>,
    pub split: Split,
    pub pooled: Normalizer<f64>,
    pub schema: FeatureSchema,
    pub calendar: CalendarGrid,
    pub identities: Vec<Identity>,
}

impl<'a> LevelData<'a> {
    pub fn prepare(ctx: &LevelContext<'a>, plan: &HorizonPlan, level: Level) -> Result<Self, EngineError> {
        check_plan(ctx, plan)?;
        let entities = ctx.series.level(level);
        if entities.is_empty() {
            return Err(EngineError::Config(format!("{} has no {} series", ctx.city_id, level)));
        }
        let len = ctx.series.city.len();
        let split = chronological_split(len, ctx.train_fraction, ctx.lags.max_lag())?;
        let pooled = fit_pooled(&entities, split.train.clone())?;
        let schema = FeatureSchema::new(
            ctx.lags.clone(),
            ctx.series.stations.iter().map(|s| s.entity_id.clone()).collect(),
            ctx.series.regions.iter().map(|r| r.entity_id.clone()).collect(),
        );
        let calendar = CalendarGrid::build(ctx.city, ctx.series.city.t0, plan.resolution, len, ctx.holidays)?;
        let identities = entities
            .iter()
            .map(|e| schema.identity(level, &e.entity_id, &ctx.series.station_region))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            level,
            entities,
            split,
            pooled,
            schema,
            calendar,
            identities,
        })
    }

    fn inputs(&self) -> Vec<EntityInput<'a>> {
        self.entities
            .iter()
            .zip(&self.identities)
            .map(|(&series, &identity)| EntityInput { series, identity })
            .collect()
    }

    /// Fit and validation design matrices of the training partition.
    pub fn matrices(&self) -> Result<(FeatureMatrix, FeatureMatrix), EngineError> {
        let (fit, val) = self.split.fit_and_validation(self.schema.lags.max_lag());
        let inputs = self.inputs();
        let mf = build_matrix(&self.schema, &inputs, &self.pooled, &self.calendar, fit)?;
        let mv = build_matrix(&self.schema, &inputs, &self.pooled, &self.calendar, val)?;
        Ok((mf, mv))
    }

    /// Walk-forward forecasts of every entity over the test partition.
    pub fn forecast(
        &self,
        ctx: &LevelContext<'_>,
        model: ModelKind,
        plan: &HorizonPlan,
        trained: &Trained,
    ) -> Result<Vec<ForecastRun>, EngineError> {
        let label = RunLabel {
            city: ctx.city_id.to_string(),
            model: model.name().to_string(),
            level: self.level,
            plan: plan.label,
        };
        if let Trained::Arima(fits) = trained {
            if fits.len() != self.entities.len() {
                return Err(EngineError::Config(format!(
                    "{} ARIMA fits for {} {} series",
                    fits.len(),
                    self.entities.len(),
                    self.level
                )));
            }
            return self
                .entities
                .iter()
                .zip(fits)
                .map(|(e, fit)| arima_forecast(e, fit, &self.pooled, plan, &self.split.test, &label))
                .collect();
        }
        let z: Vec<Vec<f64>> = self
            .entities
            .iter()
            .map(|e| self.pooled.transform_all(&e.values))
            .collect();
        let views: Vec<EntityView<'_>> = self
            .entities
            .iter()
            .zip(&self.identities)
            .zip(&z)
            .map(|((e, &identity), z)| EntityView {
                entity_id: &e.entity_id,
                z,
                identity,
            })
            .collect();
        let setup = WalkSetup {
            schema: &self.schema,
            calendar: &self.calendar,
            plan,
            test: &self.split.test,
        };
        match trained {
            Trained::Gbt(ens) => walk_forward(ens, setup, &views, &label),
            Trained::Neural(net) => walk_forward(net, setup, &views, &label),
            Trained::Arima(_) => unreachable!("handled above"),
        }
    }
}

/// A fitted model of one level.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    /// One fit per entity, in entity order.
    Arima(Vec<ArimaEntityFit>),
    Gbt(Ensemble<f64>),
    Neural(Model<f64>),
}

const ARIMA_FITS: &str = "arima_fits.json";
const GBT_MODEL: &str = "model.txt";
const NEURAL_ARCH: &str = "arch.json";
const NEURAL_CHECKPOINT: &str = "checkpoint.txt";

impl Trained {
    /// Rebuilds a model from the artifacts written at training time.
    pub fn load(model: ModelKind, artifacts: &[(String, String)]) -> Result<Self, EngineError> {
        let get = |name: &str| {
            artifacts
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, text)| text.as_str())
                .ok_or_else(|| EngineError::Config(format!("{} artifact {} missing", model, name)))
        };
        let bad = |name: &str, e: &dyn fmt::Display| EngineError::Config(format!("{} artifact {}: {}", model, name, e));
        match model {
            ModelKind::Arima => serde_json::from_str(get(ARIMA_FITS)?)
                .map(Trained::Arima)
                .map_err(|e| bad(ARIMA_FITS, &e)),
            ModelKind::Gbt => Ok(Trained::Gbt(Ensemble::from_text(get(GBT_MODEL)?)?)),
            _ => {
                let saved: SavedNet = serde_json::from_str(get(NEURAL_ARCH)?).map_err(|e| bad(NEURAL_ARCH, &e))?;
                let params = ParamStore::from_checkpoint(get(NEURAL_CHECKPOINT)?)?;
                Ok(Trained::Neural(Model {
                    arch: saved.arch,
                    params,
                    lag_len: saved.lag_len,
                    static_len: saved.static_len,
                }))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SavedNet {
    arch: Arch,
    lag_len: usize,
    static_len: usize,
}

pub struct TrainedLevel {
    pub model: Trained,
    /// `(file name, contents)`; enough for [`Trained::load`] plus training
    /// histories and readable summaries.
    pub artifacts: Vec<(String, String)>,
}

/// Per-entity order selection and fit.
pub fn train_arima(data: &LevelData<'_>) -> Result<TrainedLevel, EngineError> {
    let mut fits = Vec::with_capacity(data.entities.len());
    let mut records = String::new();
    for e in &data.entities {
        let fit = fit_arima_entity(e, data.split.train.end)?;
        writeln!(records, "{}", fit.fitted.to_record(&fit.entity_id)).expect("string write");
        fits.push(fit);
    }
    let json = serde_json::to_string_pretty(&fits).map_err(|e| EngineError::Config(e.to_string()))?;
    Ok(TrainedLevel {
        model: Trained::Arima(fits),
        artifacts: vec![("arima_models.tsv".into(), records), (ARIMA_FITS.into(), json)],
    })
}

/// Trains GBT or a neural model on prebuilt fit and validation matrices.
pub fn train_on(
    ctx: &LevelContext<'_>,
    model: ModelKind,
    plan: &HorizonPlan,
    data: &LevelData<'_>,
    fit: &FeatureMatrix,
    val: &FeatureMatrix,
) -> Result<TrainedLevel, EngineError> {
    let width = data.schema.width();
    if fit.width() != width || val.width() != width {
        return Err(EngineError::Config(format!(
            "feature matrices have {} and {} columns, schema has {}",
            fit.width(),
            val.width(),
            width
        )));
    }
    let streams = Streams::new(ctx.seed).derive(&format!("{}/{}/{}/{}", ctx.city_id, plan.label, data.level, model));
    let mut artifacts = Vec::new();
    let trained = match model {
        ModelKind::Arima => return train_arima(data),
        ModelKind::Gbt => {
            let (ens, hist) = boost(
                Rows {
                    x: &fit.x,
                    n_cols: width,
                },
                &fit.y,
                Rows {
                    x: &val.x,
                    n_cols: width,
                },
                &val.y,
                &ctx.settings.gbt,
                &mut streams.stream("subsample"),
            )?;
            let mut csv = String::from("round,train_rmse,val_rmse\n");
            for (i, (t, v)) in hist.train_rmse.iter().zip(&hist.val_rmse).enumerate() {
                writeln!(csv, "{},{},{}", i + 1, t, v).expect("string write");
            }
            artifacts.push(("history.csv".into(), csv));
            artifacts.push((GBT_MODEL.into(), ens.to_text()));
            Trained::Gbt(ens)
        }
        _ => {
            let arch: Arch = match model {
                ModelKind::Gru => ctx.settings.gru.clone(),
                ModelKind::Lstm => ctx.settings.lstm.clone(),
                _ => ctx.settings.transformer.clone(),
            };
            let lag_width = data.schema.lag_width();
            let net = Model::init(arch, lag_width, data.schema.static_width(), &mut streams.stream("init"))?;
            let td = TrainData::from_matrix(&fit.x, &fit.y, width, lag_width);
            let vd = TrainData::from_matrix(&val.x, &val.y, width, lag_width);
            let (net, hist) = train(net, &td, &vd, streams)?;
            let mut csv = Vec::new();
            hist.write_csv(&mut csv)?;
            let saved = SavedNet {
                arch: net.arch.clone(),
                lag_len: net.lag_len,
                static_len: net.static_len,
            };
            artifacts.push(("history.csv".into(), String::from_utf8(csv).expect("ascii csv")));
            artifacts.push((
                NEURAL_ARCH.into(),
                serde_json::to_string_pretty(&saved).map_err(|e| EngineError::Config(e.to_string()))?,
            ));
            artifacts.push((NEURAL_CHECKPOINT.into(), net.checkpoint()));
            Trained::Neural(net)
        }
    };
    Ok(TrainedLevel {
        model: trained,
        artifacts,
    })
}
