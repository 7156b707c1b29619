mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use common::*;
use evbench::engine::{forecast_levels, plan_for, read_runs, ForecastRun, LevelContext, PlanLabel};
use evbench::features::HolidayTable;
use evbench::ingest::{read_manifests, read_sessions};
use evbench::timeseries::{read_series, CitySeries, Level, Resolution};
use evbench_cli::pipeline::{RunMeta, FORECASTS, METRICS};
use evbench_cli::{PipelineError, RunConfig};
use sha2::{Digest, Sha256};

const ALL_MODELS: [&str; 5] = ["ARIMA", "GBT", "GRU", "LSTM", "Transformer"];

fn setup(seed: u64, models: &[&str]) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), &small_spec(3));
    let cfg = write_config(dir.path(), "run.toml", &config_text(seed, models, TINY_NETS));
    (dir, cfg.to_str().unwrap().to_string())
}

#[test]
fn config_problems_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
models = ["ARIMA", "Prophet"]
plans = []
train_fraction = 1.5
output_dir = "out"

[lags]
Daily = [3, 2]

[[datasets]]
city = "Atlantis"
path = "missing.csv"
[datasets.columns]
station = []
region = ["r"]
start = ["s"]
end = ["e"]
energy = ["k"]
"#;
    let path = write_config(dir.path(), "bad.toml", text);
    let problems = match RunConfig::load(&path, None) {
        Err(PipelineError::Validation(p)) => p,
        other => panic!("expected validation failure, got {:?}", other.map(|_| ())),
    };
    let all = problems.join("\n");
    for needle in [
        "Atlantis",
        "missing.csv",
        "columns.station",
        "train_fraction",
        "seed",
        "Prophet",
        "no horizon plans",
        "lags.Daily",
    ] {
        assert!(all.contains(needle), "'{}' not reported in:\n{}", needle, all);
    }

    let out = evbench(&["--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Prophet") && stderr(&out).contains("Atlantis"));

    let unknown = write_config(dir.path(), "typo.toml", "seed = 1\nmodel = [\"GBT\"]\n");
    assert!(matches!(
        RunConfig::load(&unknown, None),
        Err(PipelineError::Validation(_))
    ));
    let out = evbench(&["--config", path.to_str().unwrap(), "--stage", "evaluate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn later_stage_without_its_input_names_the_missing_stage() {
    let (_dir, cfg) = setup(1, &["GBT"]);
    let out = evbench(&["--config", &cfg, "--stage", "report"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(
        msg.contains("'forecast'") && msg.contains("--stage forecast"),
        "{}",
        msg
    );

    let out = evbench(&["--config", &cfg, "--stage", "ingest"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = evbench(&["--config", &cfg, "--stage", "features"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("'series'"));
}

#[test]
fn ingest_accounts_for_every_row_and_series_conserve_energy() {
    let (dir, cfg) = setup(1, &["GBT"]);
    let written = write_data(dir.path(), &small_spec(3));
    for stage in ["ingest", "series"] {
        let out = evbench(&["--config", &cfg, "--stage", stage]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out_dir = dir.path().join("out");
    let manifests = read_manifests(fs::File::open(out_dir.join("ingest/manifests.jsonl")).unwrap()).unwrap();
    let m = &manifests[0];
    assert_eq!(m.raw_rows, written);
    assert_eq!(m.records_parsed + m.total_dropped(), written);
    assert!(m.total_dropped() > 0);
    let sessions = read_sessions(fs::File::open(out_dir.join("ingest/sessions_Boulder.csv")).unwrap()).unwrap();
    assert_eq!(sessions.len(), m.records_parsed);

    let kwh: f64 = sessions.iter().map(|s| s.energy_kwh).sum();
    for level in Level::ALL {
        let f = fs::File::open(out_dir.join(format!("series/Boulder/daily/{}.csv", level))).unwrap();
        let series = read_series(f, level, Resolution::Daily).unwrap();
        let total: f64 = series.iter().map(|s| s.total()).sum();
        assert!((total - kwh).abs() <= 1e-9 * kwh, "{} {} vs {}", level, total, kwh);
    }
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn staged_and_parallel_runs_reproduce_a_full_run() {
    let (a, cfg_a) = setup(5, &ALL_MODELS);
    let out = evbench(&["--config", &cfg_a]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (b, cfg_b) = setup(5, &ALL_MODELS);
    for stage in ["ingest", "series", "features", "train", "forecast", "report"] {
        let out = evbench(&["--config", &cfg_b, "--stage", stage, "--jobs", "2"]);
        assert!(out.status.success(), "{}: {}", stage, stderr(&out));
    }
    let (ma, mb) = (a.path().join("out"), b.path().join("out"));
    assert_eq!(fs::read(ma.join(METRICS)).unwrap(), fs::read(mb.join(METRICS)).unwrap());
    assert_eq!(
        fs::read(ma.join(FORECASTS)).unwrap(),
        fs::read(mb.join(FORECASTS)).unwrap()
    );
    assert!(ma.join("report/report_Boulder_Long.md").is_file());

    let meta = RunMeta::read(&ma).unwrap().unwrap();
    assert_eq!(meta.stages.len(), 6);
    for record in meta.stages.values() {
        for (rel, digest) in &record.artifacts {
            assert_eq!(&sha(&ma.join(rel)), digest, "{}", rel);
        }
    }
    let trained = &meta.stages["train"].artifacts;
    assert!(trained.contains_key("train/Boulder/Long/Transformer/city/checkpoint.txt"));
    assert!(trained.contains_key("train/Boulder/Long/ARIMA/station/arima_models.tsv"));

    // rerunning a completed stage rewrites identical files
    let out = evbench(&["--config", &cfg_a, "--stage", "train"]);
    assert!(out.status.success());
    let again = RunMeta::read(&ma).unwrap().unwrap();
    assert_eq!(again.stages["train"].artifacts, meta.stages["train"].artifacts);
    assert!(!again.stages.contains_key("report"), "later stages become stale");
}

#[test]
fn forecasts_from_persisted_models_equal_in_memory_forecasts() {
    let models = ["ARIMA", "GBT", "GRU", "Transformer"];
    let (dir, cfg) = setup(9, &models);
    let out = evbench(&["--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));

    let config = RunConfig::load(Path::new(&cfg), None).unwrap();
    let sessions = read_sessions(fs::File::open(dir.path().join("out/ingest/sessions_Boulder.csv")).unwrap()).unwrap();
    let series = CitySeries::build(&sessions, "Boulder", Resolution::Daily).unwrap();
    let holidays = HolidayTable::embedded();
    let plan = plan_for(PlanLabel::Long);
    let ctx = LevelContext {
        city: config.datasets[0].city,
        city_id: "Boulder",
        series: &series,
        lags: &config.lags[&Resolution::Daily],
        train_fraction: config.train_fraction,
        holidays: &holidays,
        seed: config.seed,
        settings: &config.settings,
    };
    let key = |r: &ForecastRun| (r.label.model.clone(), r.label.level, r.entity_id.clone());
    let mut expected = BTreeMap::new();
    for m in config.models.iter() {
        for level in forecast_levels(&ctx, *m, &plan).unwrap() {
            for r in level.runs {
                expected.insert(key(&r), r);
            }
        }
    }
    let persisted = read_runs(fs::File::open(dir.path().join("out").join(FORECASTS)).unwrap()).unwrap();
    assert_eq!(persisted.len(), expected.len());
    for r in &persisted {
        let e = &expected[&key(r)];
        assert_eq!(r.origins, e.origins);
        assert_eq!(r.predictions, e.predictions, "{:?}", key(r));
        assert_eq!(r.actuals, e.actuals);
    }
}

#[test]
fn changed_config_needs_overwrite() {
    let (dir, cfg) = setup(1, &["GBT"]);
    assert!(evbench(&["--config", &cfg, "--stage", "ingest"]).status.success());
    write_config(dir.path(), "run.toml", &config_text(2, &["GBT"], TINY_NETS));
    let out = evbench(&["--config", &cfg, "--stage", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--overwrite"));
    let out = evbench(&["--config", &cfg, "--stage", "ingest", "--overwrite"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta = RunMeta::read(&dir.path().join("out")).unwrap().unwrap();
    assert_eq!(meta.config_hash, RunConfig::load(Path::new(&cfg), None).unwrap().hash());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let (dir, cfg) = setup(1, &["GBT"]);
    let elsewhere = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_evbench"))
        .args(["--config", &cfg, "--stage", "ingest"])
        .env("EVBENCH_OUTPUT_DIR", &elsewhere)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(elsewhere.join("ingest/sessions_Boulder.csv").is_file());
    assert!(!dir.path().join("out").exists());
}
