use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{EngineError, ForecastRun, HorizonPlan, RunLabel};
use crate::arima::{capped, difference, forecast_with_residuals, residuals, Fitted};
use crate::features::Normalizer;
use crate::timeseries::EnergySeries;

/// One entity's selected model and the standardization it was fitted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaEntityFit {
    pub entity_id: String,
    pub fitted: Fitted<f64>,
    pub own: Normalizer<f64>,
    /// Interval indices of the capped training window.
    pub window: Range<usize>,
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Selects and fits one model on the capped tail of `[0, train_end)`,
/// standardized with the entity's own training mean and deviation.
pub fn fit_arima_entity(series: &EnergySeries, train_end: usize) -> Result<ArimaEntityFit, EngineError> {
    let values = &series.values;
    let window_len = capped(&values[..train_end], series.resolution).len();
    let ws = train_end - window_len;
    let own = Normalizer::fit(&values[..train_end])?;
    let s = own.transform_all(&values[ws..train_end]);
    Ok(ArimaEntityFit {
        entity_id: series.entity_id.clone(),
        fitted: Fitted::select(&s, series.resolution),
        own,
        window: ws..train_end,
    })
}

/// Forecasts every origin of `test` from `fit` without refitting. Residuals
/// run forward from the window start over observations only, and forecasts
/// are mapped into the `pooled` domain used for evaluation.
pub fn arima_forecast(
    series: &EnergySeries,
    fit: &ArimaEntityFit,
    pooled: &Normalizer<f64>,
    plan: &HorizonPlan,
    test: &Range<usize>,
    label: &RunLabel,
) -> Result<ForecastRun, EngineError> {
    let values = &series.values;
    let (ws, train_end) = (fit.window.start, fit.window.end);
    if fit.entity_id != series.entity_id || train_end > values.len() {
        return Err(EngineError::Config(format!(
            "ARIMA fit for {} does not match series {}",
            fit.entity_id, series.entity_id
        )));
    }
    let window_len = train_end - ws;
    let own = &fit.own;
    let s = own.transform_all(values);

    let origins = plan.origins(test);
    match origins.last() {
        Some(&o) if o + plan.depth <= values.len() => {}
        _ => return Err(EngineError::NoOrigins(series.entity_id.clone())),
    }
    if origins[0] < train_end.max(1) {
        return Err(EngineError::InsufficientHistory {
            entity: series.entity_id.clone(),
            origin: origins[0],
            need: train_end.max(1),
        });
    }

    // recursion state over the whole series for the fitted model
    let state = match &fit.fitted {
        Fitted::Model(m) => {
            let d = m.order.d;
            let w = difference(&s[ws..], d)?;
            let presample = mean(&w[..window_len - d]);
            let e = residuals(&w, presample, m.intercept, &m.ar, &m.ma);
            Some((m, d, w, e, m.order.p.max(m.order.q).max(1)))
        }
        Fitted::Persistence => None,
    };

    let z = pooled.transform_all(values);
    let mut run = ForecastRun::empty(label, &series.entity_id, origins.len(), plan.steps());
    for (oi, &o) in origins.iter().enumerate() {
        let path = match &state {
            Some((m, d, w, e, k)) => {
                let nw = o - ws - d;
                forecast_with_residuals(m, &w[nw - k..nw], &e[nw - k..nw], s[o - 1], plan.depth)
            }
            None => vec![s[o - 1]; plan.depth],
        };
        for (slot, &step) in plan.report_steps.iter().enumerate() {
            let p = pooled.transform(own.inverse(path[step - 1]));
            if !p.is_finite() {
                return Err(EngineError::NonFinite {
                    model: label.model.clone(),
                    entity: series.entity_id.clone(),
                });
            }
            run.predictions[oi][slot] = p;
            run.actuals[oi][slot] = z[o + step - 1];
        }
        run.origins.push(series.interval_start(o));
    }
    Ok(run)
}

/// [`fit_arima_entity`] followed by [`arima_forecast`].
pub fn arima_walk_forward(
    series: &EnergySeries,
    train_end: usize,
    pooled: &Normalizer<f64>,
    plan: &HorizonPlan,
    test: &Range<usize>,
    label: &RunLabel,
) -> Result<(ForecastRun, ArimaEntityFit), EngineError> {
    let fit = fit_arima_entity(series, train_end)?;
    let run = arima_forecast(series, &fit, pooled, plan, test, label)?;
    Ok((run, fit))
}
