#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use evbench_cli::synth::{write_sessions_csv, SynthSpec};

/// Six stations in two regions over 2019.
pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        stations: 6,
        regions: 2,
        first_day: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
        end_day: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        daily_rate: 1.5,
        missing_share: 0.01,
        seed,
    }
}

pub fn write_data(dir: &Path, spec: &SynthSpec) -> usize {
    let f = std::fs::File::create(dir.join("sessions.csv")).unwrap();
    write_sessions_csv(spec, f).unwrap()
}

pub const COLUMNS: &str = r#"
[datasets.columns]
station = ["Station_Name"]
region = ["Zip_Postal_Code"]
start = ["Start_Date___Time"]
end = ["End_Date___Time"]
energy = ["Energy__kWh_"]
"#;

/// Config over `sessions.csv` in `dir` writing to `dir/out`.
pub fn config_text(seed: u64, models: &[&str], extra: &str) -> String {
    let models: Vec<String> = models.iter().map(|m| format!("\"{}\"", m)).collect();
    format!(
        "seed = {}\nmodels = [{}]\nplans = [\"Long\"]\noutput_dir = \"out\"\n{}\n[[datasets]]\ncity = \"Boulder\"\npath = \"sessions.csv\"\n{}",
        seed,
        models.join(", "),
        extra,
        COLUMNS
    )
}

/// Small recurrent and attention models so a run takes seconds.
pub const TINY_NETS: &str = r#"
[settings.gbt]
max_rounds = 40
max_depth = 3
early_stop_patience = 10

[settings.gru.Rnn]
cell = "gru"
hidden = 8
[settings.gru.Rnn.training]
max_epochs = 4

[settings.lstm.Rnn]
cell = "lstm"
hidden = 8
[settings.lstm.Rnn.training]
max_epochs = 4

[settings.transformer.Transformer]
d_model = 8
heads = 2
layers = 1
ff_dim = 16
dropout = 0.1
[settings.transformer.Transformer.training]
max_epochs = 3
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn evbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evbench"))
        .args(args)
        .env_remove("EVBENCH_OUTPUT_DIR")
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
