use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use evbench::engine::{
    plan_for, read_runs, train_arima, train_on, write_runs, ForecastRun, HorizonPlan, LevelContext, LevelData,
    ModelKind, PlanLabel, Trained,
};
use evbench::evalreport::{cellize, render_markdown, write_metrics_csv, MetricCell, ReportHeader};
use evbench::features::{FeatureMatrix, HolidayTable, Normalizer, Split, VALIDATION_FRACTION};
use evbench::ingest::{parse_sessions, read_sessions, write_manifests, write_sessions, DatasetManifest, SessionRecord};
use evbench::timeseries::{read_series, write_series, CitySeries, Level, Resolution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Dataset, RunConfig};
use crate::PipelineError;

type Result<T> = std::result::Result<T, PipelineError>;

pub const META_FILE: &str = "run_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Series,
    Features,
    Train,
    Forecast,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Series,
        Stage::Features,
        Stage::Train,
        Stage::Forecast,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Series => "series",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Forecast => "forecast",
            Stage::Report => "report",
        }
    }

    pub fn previous(&self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage '{}'", s))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    /// Output path relative to the run directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunMeta {
    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(META_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PipelineError::io(path, e))
}

/// Files written by one stage.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, rel: String, bytes: Vec<u8>) {
        self.files.push((rel, bytes));
    }
}

/// Identifies one trained model: dataset, plan, model and level.
#[derive(Debug, Clone, Copy)]
struct Task<'a> {
    dataset: &'a Dataset,
    plan: PlanLabel,
    model: ModelKind,
    level: Level,
}

impl Task<'_> {
    fn dir(&self) -> String {
        format!("train/{}/{}/{}/{}", self.dataset.id, self.plan, self.model, self.level)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    split: Split,
    pooled: Normalizer<f64>,
    columns: Vec<String>,
}

pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    pool: rayon::ThreadPool,
    holidays: HolidayTable,
}

impl Pipeline {
    /// `jobs` caps the worker threads used inside a stage.
    pub fn new(cfg: RunConfig, jobs: usize) -> Result<Self> {
        let holidays = match &cfg.holidays {
            Some(p) => HolidayTable::from_file(p)?,
            None => HolidayTable::embedded(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Stale(format!("thread pool: {}", e)))?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            pool,
            holidays,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    /// Runs `stages` in order. Existing outputs from a different
    /// configuration are only replaced with `overwrite`.
    pub fn run(&self, stages: &[Stage], overwrite: bool) -> Result<RunMeta> {
        let dir = self.out_dir();
        let mut meta = match RunMeta::read(dir)? {
            Some(m) if m.config_hash == self.hash => m,
            Some(m) if !overwrite && !m.stages.is_empty() => {
                return Err(PipelineError::ConfigChanged {
                    dir: dir.display().to_string(),
                    old: m.config_hash,
                    new: self.hash.clone(),
                })
            }
            _ => RunMeta {
                config_hash: self.hash.clone(),
                stages: BTreeMap::new(),
            },
        };
        for &stage in stages {
            if let Some(prev) = stage.previous() {
                self.require(&meta, stage, prev)?;
            }
            let start = Instant::now();
            let outputs = self.pool.install(|| self.run_stage(stage))?;
            let mut record = StageRecord::default();
            for (rel, bytes) in &outputs.files {
                write_atomic(&dir.join(rel), bytes)?;
                record.artifacts.insert(rel.clone(), sha256(bytes));
            }
            record.seconds = start.elapsed().as_secs_f64();
            // later stages were built from the outputs just replaced
            meta.stages
                .retain(|name, _| name.parse::<Stage>().map(|s| s <= stage).unwrap_or(false));
            meta.stages.insert(stage.name().to_string(), record);
            write_atomic(&dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        }
        Ok(meta)
    }

    fn require(&self, meta: &RunMeta, stage: Stage, prev: Stage) -> Result<()> {
        let missing = PipelineError::MissingStage { stage, missing: prev };
        let record = meta.stages.get(prev.name()).ok_or(missing)?;
        for rel in record.artifacts.keys() {
            if !self.out_dir().join(rel).is_file() {
                return Err(PipelineError::MissingStage { stage, missing: prev });
            }
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage) -> Result<Outputs> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Series => self.series(),
            Stage::Features => self.features(),
            Stage::Train => self.train(),
            Stage::Forecast => self.forecast(),
            Stage::Report => self.report(),
        }
    }

    fn ingest(&self) -> Result<Outputs> {
        let parsed: Vec<(Vec<SessionRecord>, DatasetManifest)> = self
            .cfg
            .datasets
            .par_iter()
            .map(|d| {
                let mut m = DatasetManifest::new(d.city, &d.path, d.columns.clone(), d.timezone.clone());
                m.datetime_formats = d.datetime_formats.clone();
                Ok(parse_sessions(&m)?)
            })
            .collect::<Result<_>>()?;
        let mut out = Outputs::default();
        let mut manifests = Vec::new();
        for (d, (sessions, manifest)) in self.cfg.datasets.iter().zip(parsed) {
            let mut buf = Vec::new();
            write_sessions(&sessions, &mut buf)?;
            out.add(sessions_file(d), buf);
            manifests.push(manifest);
        }
        let mut buf = Vec::new();
        write_manifests(&manifests, &mut buf)?;
        out.add("ingest/manifests.jsonl".into(), buf);
        Ok(out)
    }

    fn sessions(&self, d: &Dataset) -> Result<Vec<SessionRecord>> {
        Ok(read_sessions(read(&self.out_dir().join(sessions_file(d)))?.as_slice())?)
    }

    fn series(&self) -> Result<Outputs> {
        let jobs: Vec<(&Dataset, Resolution)> = self
            .cfg
            .datasets
            .iter()
            .flat_map(|d| self.cfg.resolutions().into_iter().map(move |r| (d, r)))
            .collect();
        let built: Vec<Vec<(String, Vec<u8>)>> = jobs
            .par_iter()
            .map(|&(d, r)| {
                let cs = CitySeries::build(&self.sessions(d)?, &d.id, r)?;
                let dir = series_dir(d, r);
                let mut files = Vec::new();
                for level in Level::ALL {
                    let mut buf = Vec::new();
                    write_series(&cs.level(level), &mut buf)?;
                    files.push((format!("{}/{}.csv", dir, level), buf));
                }
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["station_id", "region_id"])?;
                for (s, reg) in &cs.station_region {
                    w.write_record([s, reg])?;
                }
                let buf = w.into_inner().map_err(|e| PipelineError::Stale(e.to_string()))?;
                files.push((format!("{}/station_regions.csv", dir), buf));
                Ok(files)
            })
            .collect::<Result<_>>()?;
        let mut out = Outputs::default();
        for (rel, bytes) in built.into_iter().flatten() {
            out.add(rel, bytes);
        }
        Ok(out)
    }

    fn load_series(&self, d: &Dataset, r: Resolution) -> Result<CitySeries> {
        let dir = self.out_dir().join(series_dir(d, r));
        let level =
            |l: Level| -> Result<Vec<_>> { Ok(read_series(read(&dir.join(format!("{}.csv", l)))?.as_slice(), l, r)?) };
        let stations = level(Level::Station)?;
        let regions = level(Level::Region)?;
        let city = level(Level::City)?
            .pop()
            .ok_or_else(|| PipelineError::Stale(format!("{}: empty city series", dir.display())))?;
        let mut station_region = BTreeMap::new();
        let bytes = read(&dir.join("station_regions.csv"))?;
        for rec in csv::Reader::from_reader(bytes.as_slice()).records() {
            let rec = rec?;
            station_region.insert(rec[0].to_string(), rec[1].to_string());
        }
        Ok(CitySeries {
            stations,
            regions,
            city,
            station_region,
        })
    }

    /// Series of every (dataset, resolution) in use, in config order.
    fn all_series(&self) -> Result<BTreeMap<(String, Resolution), CitySeries>> {
        let mut out = BTreeMap::new();
        for d in &self.cfg.datasets {
            for r in self.cfg.resolutions() {
                out.insert((d.id.clone(), r), self.load_series(d, r)?);
            }
        }
        Ok(out)
    }

    fn context<'a>(&'a self, d: &'a Dataset, plan: &HorizonPlan, series: &'a CitySeries) -> LevelContext<'a> {
        LevelContext {
            city: d.city,
            city_id: &d.id,
            series,
            lags: &self.cfg.lags[&plan.resolution],
            train_fraction: self.cfg.train_fraction,
            holidays: &self.holidays,
            seed: self.cfg.seed,
            settings: &self.cfg.settings,
        }
    }

    fn level_jobs(&self) -> Vec<(&Dataset, PlanLabel, Level)> {
        let mut jobs = Vec::new();
        for d in &self.cfg.datasets {
            for &p in &self.cfg.plans {
                for level in Level::ALL {
                    jobs.push((d, p, level));
                }
            }
        }
        jobs
    }

    fn tasks(&self) -> Vec<Task<'_>> {
        let mut tasks = Vec::new();
        for (dataset, plan, level) in self.level_jobs() {
            for &model in &self.cfg.models {
                tasks.push(Task {
                    dataset,
                    plan,
                    model,
                    level,
                });
            }
        }
        tasks
    }

    fn features(&self) -> Result<Outputs> {
        let series = self.all_series()?;
        let built: Vec<Vec<(String, Vec<u8>)>> = self
            .level_jobs()
            .par_iter()
            .map(|&(d, p, level)| {
                let plan = plan_for(p);
                let ctx = self.context(d, &plan, &series[&(d.id.clone(), plan.resolution)]);
                let data = LevelData::prepare(&ctx, &plan, level)?;
                let (fit, val) = data.matrices()?;
                let dir = features_dir(d, p, level);
                let meta = FeatureMeta {
                    split: data.split.clone(),
                    pooled: data.pooled,
                    columns: data.schema.columns(),
                };
                let (mut fb, mut vb) = (Vec::new(), Vec::new());
                fit.write_csv(&mut fb)?;
                val.write_csv(&mut vb)?;
                Ok(vec![
                    (format!("{}/fit.csv", dir), fb),
                    (format!("{}/val.csv", dir), vb),
                    (format!("{}/meta.json", dir), serde_json::to_vec_pretty(&meta)?),
                ])
            })
            .collect::<Result<_>>()?;
        let mut out = Outputs::default();
        for (rel, bytes) in built.into_iter().flatten() {
            out.add(rel, bytes);
        }
        Ok(out)
    }

    /// Checks the recomputed split and normalizer against the features stage.
    fn check_features(&self, data: &LevelData<'_>, d: &Dataset, p: PlanLabel) -> Result<()> {
        let dir = features_dir(d, p, data.level);
        let meta: FeatureMeta = serde_json::from_slice(&read(&self.out_dir().join(&dir).join("meta.json"))?)?;
        if meta.split != data.split || meta.pooled != data.pooled || meta.columns != data.schema.columns() {
            return Err(PipelineError::Stale(format!(
                "{} does not match the current series; rerun --stage features",
                dir
            )));
        }
        Ok(())
    }

    fn train(&self) -> Result<Outputs> {
        let series = self.all_series()?;
        let built: Vec<Vec<(String, Vec<u8>)>> = self
            .tasks()
            .par_iter()
            .map(|t| {
                let plan = plan_for(t.plan);
                let ctx = self.context(t.dataset, &plan, &series[&(t.dataset.id.clone(), plan.resolution)]);
                let data = LevelData::prepare(&ctx, &plan, t.level)?;
                self.check_features(&data, t.dataset, t.plan)?;
                let trained = if t.model == ModelKind::Arima {
                    train_arima(&data)?
                } else {
                    let dir = self.out_dir().join(features_dir(t.dataset, t.plan, t.level));
                    let lag_width = data.schema.lag_width();
                    let fit =
                        FeatureMatrix::read_csv(read(&dir.join("fit.csv"))?.as_slice(), lag_width, plan.resolution)?;
                    let val =
                        FeatureMatrix::read_csv(read(&dir.join("val.csv"))?.as_slice(), lag_width, plan.resolution)?;
                    train_on(&ctx, t.model, &plan, &data, &fit, &val)?
                };
                Ok(trained
                    .artifacts
                    .into_iter()
                    .map(|(name, text)| (format!("{}/{}", t.dir(), name), text.into_bytes()))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut out = Outputs::default();
        for (rel, bytes) in built.into_iter().flatten() {
            out.add(rel, bytes);
        }
        Ok(out)
    }

    fn load_trained(&self, t: &Task<'_>) -> Result<Trained> {
        let dir = self.out_dir().join(t.dir());
        let mut artifacts = Vec::new();
        let entries = fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| PipelineError::io(&dir, e))?.path();
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let text = String::from_utf8(read(&path)?)
                .map_err(|_| PipelineError::Stale(format!("{} is not UTF-8", path.display())))?;
            artifacts.push((name, text));
        }
        Ok(Trained::load(t.model, &artifacts)?)
    }

    fn forecast(&self) -> Result<Outputs> {
        let series = self.all_series()?;
        let runs: Vec<Vec<ForecastRun>> = self
            .tasks()
            .par_iter()
            .map(|t| {
                let plan = plan_for(t.plan);
                let ctx = self.context(t.dataset, &plan, &series[&(t.dataset.id.clone(), plan.resolution)]);
                let data = LevelData::prepare(&ctx, &plan, t.level)?;
                let trained = self.load_trained(t)?;
                Ok(data.forecast(&ctx, t.model, &plan, &trained)?)
            })
            .collect::<Result<_>>()?;
        let runs: Vec<ForecastRun> = runs.into_iter().flatten().collect();
        let mut buf = Vec::new();
        write_runs(&runs, &mut buf)?;
        let mut out = Outputs::default();
        out.add(FORECASTS.into(), buf);
        Ok(out)
    }

    fn report(&self) -> Result<Outputs> {
        let runs = read_runs(read(&self.out_dir().join(FORECASTS))?.as_slice())?;
        let models: Vec<String> = self.cfg.models.iter().map(|m| m.name().to_string()).collect();
        let cells = cellize(&runs, &models)?;
        let mut out = Outputs::default();
        let mut buf = Vec::new();
        write_metrics_csv(&cells, &mut buf)?;
        out.add(METRICS.into(), buf);
        for d in &self.cfg.datasets {
            for &p in &self.cfg.plans {
                let mine: Vec<MetricCell> = cells.iter().filter(|c| c.dataset == d.id).cloned().collect();
                let md = render_markdown(&mine, p, &self.header(d, p))?;
                out.add(format!("report/report_{}_{}.md", d.id, p), md.into_bytes());
            }
        }
        Ok(out)
    }

    fn header(&self, d: &Dataset, p: PlanLabel) -> ReportHeader {
        let plan = plan_for(p);
        let lags = &self.cfg.lags[&plan.resolution];
        let offsets: Vec<String> = lags.offsets.iter().map(|o| o.to_string()).collect();
        let steps: Vec<String> = (1..=plan.steps()).map(|k| plan.step_label(k)).collect();
        let models: Vec<&str> = self.cfg.models.iter().map(|m| m.name()).collect();
        ReportHeader {
            title: format!("{} · {} horizon", d.id, p),
            entries: vec![
                ("city".into(), d.city.name().into()),
                ("resolution".into(), plan.resolution.name().into()),
                ("reported leads".into(), steps.join(", ")),
                (
                    "split".into(),
                    format!(
                        "chronological, train fraction {}; last {} of train held out for early stopping",
                        self.cfg.train_fraction, VALIDATION_FRACTION
                    ),
                ),
                ("seed".into(), self.cfg.seed.to_string()),
                ("lag offsets".into(), format!("{} intervals", offsets.join(", "))),
                ("models".into(), models.join(", ")),
                (
                    "forecasting".into(),
                    format!(
                        "recursive walk-forward over the test partition, origins every {} interval(s), no refitting",
                        plan.stride
                    ),
                ),
                (
                    "scale".into(),
                    "errors on z-scored energy, using the pooled training mean and deviation of each level".into(),
                ),
                (
                    "averaging".into(),
                    "micro, pooling the errors of all entities of a level per step".into(),
                ),
                (
                    "bold".into(),
                    "lowest value per column among models; ties all bolded".into(),
                ),
            ],
        }
    }
}

pub const FORECASTS: &str = "forecast/forecasts.csv";
pub const METRICS: &str = "report/metrics.csv";

fn sessions_file(d: &Dataset) -> String {
    format!("ingest/sessions_{}.csv", d.id)
}

fn series_dir(d: &Dataset, r: Resolution) -> String {
    format!("series/{}/{}", d.id, r.name())
}

fn features_dir(d: &Dataset, p: PlanLabel, level: Level) -> String {
    format!("features/{}/{}/{}", d.id, p, level)
}
