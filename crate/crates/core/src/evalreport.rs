//! Error metrics per report cell and the tables built from them.
//!
//! Everything here works on normalized predictions and actuals as stored in
//! [`ForecastRun`]s. A cell pools the errors of every entity of its level at
//! one reported step before averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{plan_for, ForecastRun, PlanLabel};
use crate::scalar::Scalar;
use crate::timeseries::Level;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{pred} predictions for {actual} actuals")]
    Length { pred: usize, actual: usize },
    #[error("no values to score")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("missing report cell: {0}")]
    MissingCell(String),
    #[error("malformed metrics table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check<T: Scalar>(pred: &[T], actual: &[T]) -> Result<(), EvalError> {
    if pred.len() != actual.len() {
        return Err(EvalError::Length {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    if !pred.iter().all(|v| v.is_finite()) {
        return Err(EvalError::NonFinite("predictions"));
    }
    if !actual.iter().all(|v| v.is_finite()) {
        return Err(EvalError::NonFinite("actuals"));
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &[T], actual: &[T]) -> Result<T, EvalError> {
    check(pred, actual)?;
    let total: T = pred.iter().zip(actual).map(|(&p, &a)| (p - a).abs()).sum();
    Ok(total / T::from_usize_lossy(pred.len()))
}

pub fn rmse<T: Scalar>(pred: &[T], actual: &[T]) -> Result<T, EvalError> {
    check(pred, actual)?;
    let total: T = pred.iter().zip(actual).map(|(&p, &a)| (p - a) * (p - a)).sum();
    Ok((total / T::from_usize_lossy(pred.len())).sqrt())
}

/// Scores of one (dataset, model, level, plan, step) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub dataset: String,
    pub model: String,
    pub level: Level,
    pub plan: PlanLabel,
    /// 1-based reported step.
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

type GroupKey = (String, PlanLabel, String, Level);

/// Micro-averaged cells for every (dataset, plan) in `runs`, with models in
/// the order of `models`. Every model must have runs at every level.
pub fn cellize(runs: &[ForecastRun], models: &[String]) -> Result<Vec<MetricCell>, EvalError> {
    let mut groups: BTreeMap<GroupKey, Vec<&ForecastRun>> = BTreeMap::new();
    for r in runs {
        let l = &r.label;
        groups
            .entry((l.city.clone(), l.plan, l.model.clone(), l.level))
            .or_default()
            .push(r);
    }
    let datasets: BTreeSet<(String, PlanLabel)> = groups.keys().map(|(c, p, _, _)| (c.clone(), *p)).collect();
    let mut cells = Vec::new();
    for (city, plan) in datasets {
        let steps = plan_for(plan).steps();
        for model in models {
            for level in Level::ALL {
                let key = (city.clone(), plan, model.clone(), level);
                let mut group = groups
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| EvalError::MissingCell(format!("{} {} {} {}", city, plan, model, level)))?;
                // fixed accumulation order, independent of how runs were loaded
                group.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
                for step in 1..=steps {
                    let mut pred = Vec::new();
                    let mut actual = Vec::new();
                    for r in &group {
                        if r.steps() != steps {
                            return Err(EvalError::Malformed(format!(
                                "{} has {} steps, {} plan reports {}",
                                r.entity_id,
                                r.steps(),
                                plan,
                                steps
                            )));
                        }
                        for (p, a) in r.step_pairs(step) {
                            pred.push(p);
                            actual.push(a);
                        }
                    }
                    if pred.is_empty() {
                        return Err(EvalError::MissingCell(format!(
                            "{} {} {} {} step {} has no origins",
                            city, plan, model, level, step
                        )));
                    }
                    cells.push(MetricCell {
                        dataset: city.clone(),
                        model: model.clone(),
                        level,
                        plan,
                        step,
                        mae: mae(&pred, &actual)?,
                        rmse: rmse(&pred, &actual)?,
                        n: pred.len(),
                    });
                }
            }
        }
    }
    Ok(cells)
}

const METRIC_COLUMNS: [&str; 9] = ["dataset", "model", "level", "plan", "step", "lead", "mae", "rmse", "n"];

/// Flat cell list; floats in shortest round-trip form.
pub fn write_metrics_csv<W: Write>(cells: &[MetricCell], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRIC_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.dataset.as_str(),
            c.model.as_str(),
            c.level.name(),
            c.plan.name(),
            &c.step.to_string(),
            &plan_for(c.plan).step_label(c.step),
            &c.mae.to_string(),
            &c.rmse.to_string(),
            &c.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricCell>, EvalError> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(METRIC_COLUMNS) {
        return Err(EvalError::Malformed("unexpected header".into()));
    }
    let mut cells = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| EvalError::Malformed(format!("row {}: {}", i + 2, what));
        cells.push(MetricCell {
            dataset: rec[0].to_string(),
            model: rec[1].to_string(),
            level: rec[2].parse().map_err(|_| bad("level"))?,
            plan: rec[3].parse().map_err(|_| bad("plan"))?,
            step: rec[4].parse().map_err(|_| bad("step"))?,
            mae: rec[6].parse().map_err(|_| bad("mae"))?,
            rmse: rec[7].parse().map_err(|_| bad("rmse"))?,
            n: rec[8].parse().map_err(|_| bad("n"))?,
        });
    }
    Ok(cells)
}

/// Settings a report was produced with, printed above the table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportHeader {
    pub title: String,
    pub entries: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Mae,
    Rmse,
}

impl Metric {
    fn of(&self, c: &MetricCell) -> f64 {
        match self {
            Metric::Mae => c.mae,
            Metric::Rmse => c.rmse,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
        }
    }
}

fn level_short(level: Level) -> &'static str {
    match level {
        Level::Station => "St.",
        Level::Region => "Reg.",
        Level::City => "City",
    }
}

/// Markdown table for one plan: rows model × dataset × metric, columns
/// step × level. In each column the minimum over models of every
/// (dataset, metric) is bolded, all of them on ties.
pub fn render_markdown(cells: &[MetricCell], plan: PlanLabel, header: &ReportHeader) -> Result<String, EvalError> {
    let cells: Vec<&MetricCell> = cells.iter().filter(|c| c.plan == plan).collect();
    if cells.is_empty() {
        return Err(EvalError::MissingCell(format!("no {} cells", plan)));
    }
    let hp = plan_for(plan);
    let mut models: Vec<&str> = Vec::new();
    let mut datasets: Vec<&str> = Vec::new();
    for c in &cells {
        if !models.contains(&c.model.as_str()) {
            models.push(&c.model);
        }
        if !datasets.contains(&c.dataset.as_str()) {
            datasets.push(&c.dataset);
        }
    }
    let index: BTreeMap<(&str, &str, Level, usize), &MetricCell> = cells
        .iter()
        .map(|c| ((c.model.as_str(), c.dataset.as_str(), c.level, c.step), *c))
        .collect();
    let get = |m: &str, d: &str, l: Level, s: usize| {
        index
            .get(&(m, d, l, s))
            .copied()
            .ok_or_else(|| EvalError::MissingCell(format!("{} {} {} {} step {}", d, plan, m, l, s)))
    };

    let mut out = String::new();
    writeln!(out, "# {}\n", header.title).expect("string write");
    for (k, v) in &header.entries {
        writeln!(out, "- {}: {}", k, v).expect("string write");
    }
    if !header.entries.is_empty() {
        out.push('\n');
    }
    let mut head = String::from("| Model | Dataset | Metric |");
    let mut rule = String::from("|---|---|---|");
    for s in 1..=hp.steps() {
        for level in Level::ALL {
            write!(head, " {} {} |", hp.step_label(s), level_short(level)).expect("string write");
            rule.push_str("---:|");
        }
    }
    writeln!(out, "{}\n{}", head, rule).expect("string write");
    for model in &models {
        for dataset in &datasets {
            for metric in [Metric::Mae, Metric::Rmse] {
                let mut row = format!("| {} | {} | {} |", model, dataset, metric.name());
                for s in 1..=hp.steps() {
                    for level in Level::ALL {
                        let v = metric.of(get(model, dataset, level, s)?);
                        let mut best = f64::INFINITY;
                        for m in &models {
                            best = best.min(metric.of(get(m, dataset, level, s)?));
                        }
                        if v == best {
                            write!(row, " **{:.2}** |", v).expect("string write");
                        } else {
                            write!(row, " {:.2} |", v).expect("string write");
                        }
                    }
                }
                writeln!(out, "{}", row).expect("string write");
            }
        }
    }
    Ok(out)
}
