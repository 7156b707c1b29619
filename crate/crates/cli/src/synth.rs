//! Synthetic charging sessions shaped like a small municipal network.
//!
//! Stations belong to regions round-robin. Daily arrivals per station are
//! Poisson with a weekday bump, an annual cycle and slow growth; a few rows
//! carry an empty energy field, as real exports do.

use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use evbench::ingest::ColumnMap;
use evbench::rng::Streams;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub stations: usize,
    pub regions: usize,
    pub first_day: NaiveDate,
    /// Exclusive.
    pub end_day: NaiveDate,
    /// Mean arrivals per station per day before modulation.
    pub daily_rate: f64,
    /// Share of rows written without an energy value.
    pub missing_share: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 27 stations in 5 regions, January 2018 through March 2021.
    pub fn boulder_like(seed: u64) -> Self {
        Self {
            stations: 27,
            regions: 5,
            first_day: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            end_day: NaiveDate::from_ymd_opt(2021, 4, 1).expect("valid date"),
            daily_rate: 0.75,
            missing_share: 0.004,
            seed,
        }
    }
}

pub const STATION_COLUMN: &str = "Station_Name";
pub const REGION_COLUMN: &str = "Zip_Postal_Code";
pub const START_COLUMN: &str = "Start_Date___Time";
pub const END_COLUMN: &str = "End_Date___Time";
pub const ENERGY_COLUMN: &str = "Energy__kWh_";

/// Column map matching [`write_sessions_csv`].
pub fn column_map() -> ColumnMap {
    ColumnMap {
        station: vec![STATION_COLUMN.into()],
        region: vec![REGION_COLUMN.into()],
        start: vec![START_COLUMN.into()],
        end: vec![END_COLUMN.into()],
        energy: vec![ENERGY_COLUMN.into()],
    }
}

/// Writes the raw export with naive local timestamps; returns the row count.
pub fn write_sessions_csv<W: Write>(spec: &SynthSpec, writer: W) -> csv::Result<usize> {
    let streams = Streams::new(spec.seed);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ObjectID",
        STATION_COLUMN,
        REGION_COLUMN,
        START_COLUMN,
        END_COLUMN,
        ENERGY_COLUMN,
    ])?;
    let start_hour = Normal::new(13.0f64, 3.5).expect("valid normal");
    let duration = Exp::new(1.0f64 / 2.5).expect("valid rate");
    let total_days = (spec.end_day - spec.first_day).num_days() as f64;
    let mut rows = 0usize;
    for s in 0..spec.stations {
        let mut rng = streams.stream(&format!("station{}", s));
        let name = format!("Station {:02}", s + 1);
        let zip = format!("803{:02}", s % spec.regions + 1);
        let popularity = 0.6 + 0.8 * rng.gen::<f64>();
        let power = 3.0 + 4.0 * rng.gen::<f64>();
        let mut day = spec.first_day;
        while day < spec.end_day {
            let t = (day - spec.first_day).num_days() as f64;
            let weekday = !matches!(day.weekday(), Weekday::Sat | Weekday::Sun);
            let season = 1.0 + 0.25 * (2.0 * std::f64::consts::PI * day.ordinal() as f64 / 365.25).sin();
            let growth = 0.7 + 0.6 * t / total_days;
            let rate = spec.daily_rate * popularity * season * growth * if weekday { 1.2 } else { 0.7 };
            let n = Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize;
            for _ in 0..n {
                let h = start_hour.sample(&mut rng).clamp(0.0, 23.9);
                let start = day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::seconds((h * 3600.0) as i64);
                let hours = duration.sample(&mut rng).clamp(0.1, 12.0);
                let end = start + Duration::seconds((hours * 3600.0) as i64).max(Duration::minutes(1));
                let energy = if rng.gen::<f64>() < spec.missing_share {
                    String::new()
                } else {
                    format!("{:.3}", (hours * power).min(80.0))
                };
                rows += 1;
                w.write_record([
                    rows.to_string(),
                    name.clone(),
                    zip.clone(),
                    start.format("%Y/%m/%d %H:%M:%S").to_string(),
                    end.format("%Y/%m/%d %H:%M:%S").to_string(),
                    energy,
                ])?;
            }
            day = day.succ_opt().expect("in range");
        }
    }
    w.flush()?;
    Ok(rows)
}
