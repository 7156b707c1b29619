use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{EngineError, PlanLabel};
use crate::timeseries::Level;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// What a run belongs to in the report grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunLabel {
    pub city: String,
    pub model: String,
    pub level: Level,
    pub plan: PlanLabel,
}

/// Normalized predictions and actuals of one entity, `origins × steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub label: RunLabel,
    pub entity_id: String,
    pub origins: Vec<DateTime<Utc>>,
    pub predictions: Vec<Vec<f64>>,
    pub actuals: Vec<Vec<f64>>,
}

impl ForecastRun {
    pub(crate) fn empty(label: &RunLabel, entity_id: &str, origins: usize, steps: usize) -> Self {
        Self {
            label: label.clone(),
            entity_id: entity_id.to_string(),
            origins: Vec::with_capacity(origins),
            predictions: vec![vec![f64::NAN; steps]; origins],
            actuals: vec![vec![f64::NAN; steps]; origins],
        }
    }

    pub fn steps(&self) -> usize {
        self.predictions.first().map_or(0, Vec::len)
    }

    /// `(prediction, actual)` pairs of reported step `k` (1-based).
    pub fn step_pairs(&self, k: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.predictions
            .iter()
            .zip(&self.actuals)
            .map(move |(p, a)| (p[k - 1], a[k - 1]))
    }
}

/// `city,model,level,plan,entity_id,origin_utc,step,prediction,actual`, one
/// line per (origin, step). Floats use the shortest round-trip form.
pub fn write_runs<W: Write>(runs: &[ForecastRun], writer: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "city",
        "model",
        "level",
        "plan",
        "entity_id",
        "origin_utc",
        "step",
        "prediction",
        "actual",
    ])?;
    for r in runs {
        for (oi, origin) in r.origins.iter().enumerate() {
            let stamp = origin.format(TIME_FORMAT).to_string();
            for k in 0..r.steps() {
                w.write_record([
                    r.label.city.as_str(),
                    r.label.model.as_str(),
                    r.label.level.name(),
                    r.label.plan.name(),
                    r.entity_id.as_str(),
                    stamp.as_str(),
                    &(k + 1).to_string(),
                    &r.predictions[oi][k].to_string(),
                    &r.actuals[oi][k].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs<R: Read>(reader: R) -> Result<Vec<ForecastRun>, EngineError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut runs: Vec<ForecastRun> = Vec::new();
    let mut index: HashMap<(RunLabel, String), usize> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| EngineError::Malformed(format!("row {}: {}", line + 2, what));
        if rec.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let label = RunLabel {
            city: rec[0].to_string(),
            model: rec[1].to_string(),
            level: rec[2].parse().map_err(|_| bad("level"))?,
            plan: rec[3].parse().map_err(|_| bad("plan"))?,
        };
        let origin = NaiveDateTime::parse_from_str(&rec[5], TIME_FORMAT)
            .map_err(|_| bad("origin_utc"))?
            .and_utc();
        let step: usize = rec[6].parse().map_err(|_| bad("step"))?;
        let pred: f64 = rec[7].parse().map_err(|_| bad("prediction"))?;
        let actual: f64 = rec[8].parse().map_err(|_| bad("actual"))?;
        let key = (label.clone(), rec[4].to_string());
        let ri = *index.entry(key).or_insert_with(|| {
            runs.push(ForecastRun {
                label,
                entity_id: rec[4].to_string(),
                origins: Vec::new(),
                predictions: Vec::new(),
                actuals: Vec::new(),
            });
            runs.len() - 1
        });
        let run = &mut runs[ri];
        if run.origins.last() != Some(&origin) {
            run.origins.push(origin);
            run.predictions.push(Vec::new());
            run.actuals.push(Vec::new());
        }
        let p = run.predictions.last_mut().unwrap();
        if step != p.len() + 1 {
            return Err(bad("steps out of order"));
        }
        p.push(pred);
        run.actuals.last_mut().unwrap().push(actual);
    }
    for r in &runs {
        let steps = r.steps();
        if steps == 0 || r.predictions.iter().any(|p| p.len() != steps) {
            return Err(EngineError::Malformed(format!("ragged steps for {}", r.entity_id)));
        }
    }
    Ok(runs)
}
