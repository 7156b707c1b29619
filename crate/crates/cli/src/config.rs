//! Run configuration: a TOML file, validated as a whole before anything runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use evbench::engine::{ModelKind, ModelSettings, PlanLabel};
use evbench::features::LagSpec;
use evbench::ingest::{City, ColumnMap, Zone};
use evbench::timeseries::Resolution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// One `[[datasets]]` entry as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Name used in file names and reports; defaults to the city name.
    pub id: Option<String>,
    pub city: String,
    pub path: PathBuf,
    pub columns: ColumnMap,
    /// IANA zone for naive timestamps; defaults to the city's zone.
    pub timezone: Option<String>,
    #[serde(default)]
    pub datetime_formats: Vec<String>,
}

/// The file as parsed, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    pub train_fraction: Option<f64>,
    pub seed: Option<u64>,
    /// Lag offsets by resolution name, e.g. `Daily = [1, 2, 7]`.
    #[serde(default)]
    pub lags: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub plans: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    #[serde(default)]
    pub settings: ModelSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub id: String,
    pub city: City,
    pub path: PathBuf,
    pub columns: ColumnMap,
    pub timezone: String,
    pub datetime_formats: Vec<String>,
}

/// A validated configuration with paths resolved against the config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub datasets: Vec<Dataset>,
    pub train_fraction: f64,
    pub seed: u64,
    /// Offsets for every resolution used by an enabled plan.
    pub lags: BTreeMap<Resolution, LagSpec>,
    pub models: Vec<ModelKind>,
    pub plans: Vec<PlanLabel>,
    pub output_dir: PathBuf,
    pub holidays: Option<PathBuf>,
    pub settings: ModelSettings,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RunConfig {
    /// Reads and validates `path`. `output_dir` replaces the configured
    /// output directory when given.
    pub fn load(path: &Path, output_dir: Option<PathBuf>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(vec![format!("cannot read {}: {}", path.display(), e)]))?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Validation(vec![format!("{}: {}", path.display(), e.message())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(raw, base, output_dir)
    }

    /// Checks everything and reports all problems together.
    pub fn from_raw(raw: RawConfig, base: &Path, output_dir: Option<PathBuf>) -> Result<Self, PipelineError> {
        let mut problems = Vec::new();

        if raw.datasets.is_empty() {
            problems.push("no datasets configured".to_string());
        }
        let mut datasets = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, d) in raw.datasets.iter().enumerate() {
            let at = format!("datasets[{}]", i);
            let city = match d.city.parse::<City>() {
                Ok(c) => Some(c),
                Err(e) => {
                    problems.push(format!("{}: {}", at, e));
                    None
                }
            };
            let id =
                d.id.clone()
                    .or_else(|| city.map(|c| c.name().to_string()))
                    .unwrap_or_default();
            if !valid_id(&id) {
                problems.push(format!(
                    "{}: id '{}' must be non-empty ASCII letters, digits, '_' or '-'",
                    at, id
                ));
            } else if !ids.insert(id.clone()) {
                problems.push(format!("{}: duplicate dataset id '{}'", at, id));
            }
            let timezone = match (&d.timezone, city.and_then(|c| c.local_zone())) {
                (Some(z), _) => z.clone(),
                (None, Some(z)) => z.to_string(),
                (None, None) => {
                    if city.is_some() {
                        problems.push(format!("{}: a Custom city needs an explicit timezone", at));
                    }
                    String::new()
                }
            };
            if !timezone.is_empty() {
                if let Err(e) = Zone::parse(&timezone) {
                    problems.push(format!("{}: {}", at, e));
                }
            }
            let path = resolve(base, &d.path);
            if !path.is_file() {
                problems.push(format!("{}: data file {} not found", at, path.display()));
            }
            let c = &d.columns;
            for (name, cols) in [
                ("station", &c.station),
                ("region", &c.region),
                ("start", &c.start),
                ("end", &c.end),
                ("energy", &c.energy),
            ] {
                if cols.is_empty() {
                    problems.push(format!("{}: columns.{} lists no source column", at, name));
                }
            }
            if let Some(city) = city {
                datasets.push(Dataset {
                    id,
                    city,
                    path,
                    columns: d.columns.clone(),
                    timezone,
                    datetime_formats: d.datetime_formats.clone(),
                });
            }
        }

        let train_fraction = raw.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION);
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            problems.push(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                train_fraction
            ));
        }
        if raw.seed.is_none() {
            problems.push("seed must be set explicitly".to_string());
        }

        let mut models = Vec::new();
        for m in &raw.models {
            match m.parse::<ModelKind>() {
                Ok(k) if models.contains(&k) => problems.push(format!("model {} listed twice", k)),
                Ok(k) => models.push(k),
                Err(e) => problems.push(e.to_string()),
            }
        }
        if raw.models.is_empty() {
            problems.push("no models enabled".to_string());
        }
        let mut plans = Vec::new();
        for p in &raw.plans {
            match p.parse::<PlanLabel>() {
                Ok(l) if plans.contains(&l) => problems.push(format!("plan {} listed twice", l)),
                Ok(l) => plans.push(l),
                Err(e) => problems.push(e.to_string()),
            }
        }
        if raw.plans.is_empty() {
            problems.push("no horizon plans enabled".to_string());
        }

        let mut overrides = BTreeMap::new();
        for (name, offsets) in &raw.lags {
            match Resolution::ALL.iter().find(|r| r.name().eq_ignore_ascii_case(name)) {
                Some(&r) => match LagSpec::new(r, offsets.clone()) {
                    Ok(spec) => {
                        overrides.insert(r, spec);
                    }
                    Err(e) => problems.push(format!("lags.{}: {}", name, e)),
                },
                None => problems.push(format!("lags.{}: unknown resolution", name)),
            }
        }
        let mut lags = BTreeMap::new();
        for p in &plans {
            let r = evbench::engine::plan_for(*p).resolution;
            let spec = overrides.get(&r).cloned().unwrap_or_else(|| LagSpec::default_for(r));
            lags.insert(r, spec);
        }

        let holidays = raw.holidays.as_ref().map(|h| resolve(base, h));
        if let Some(h) = &holidays {
            if !h.is_file() {
                problems.push(format!("holiday table {} not found", h.display()));
            }
        }
        for arch in [&raw.settings.gru, &raw.settings.lstm, &raw.settings.transformer] {
            if let Err(e) = arch.validate() {
                problems.push(format!("settings.{}: {}", arch.name(), e));
            }
        }
        let output_dir = match output_dir.or_else(|| raw.output_dir.as_ref().map(|o| resolve(base, o))) {
            Some(o) => o,
            None => {
                problems.push("output_dir is not set".to_string());
                PathBuf::new()
            }
        };

        if !problems.is_empty() {
            return Err(PipelineError::Validation(problems));
        }
        Ok(Self {
            datasets,
            train_fraction,
            seed: raw.seed.expect("checked"),
            lags,
            models,
            plans,
            output_dir,
            holidays,
            settings: raw.settings,
        })
    }

    /// SHA-256 over every setting that affects results; the output
    /// directory is excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn resolutions(&self) -> Vec<Resolution> {
        self.lags.keys().copied().collect()
    }
}
