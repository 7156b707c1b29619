//! Supervised view of the series: lagged targets, calendar indicators and
//! identity one-hots, all in the z-scored domain.
//!
//! Column order of a row is fixed:
//!
//! ```text
//! lag_<o> for o in offsets (ascending) | calendar (21) | station one-hot | region one-hot
//! ```
//!
//! Station rows set both their station and region bit. Region rows set only
//! their region bit and city rows leave the identity block at zero.

mod calendar;
mod normalize;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::City;
use crate::timeseries::{EnergySeries, Level, Resolution};

pub use calendar::{calendar_of, local_date, CalendarFeatures, HolidayTable, CALENDAR_WIDTH};
pub use normalize::{Normalizer, NORMALIZER_EPSILON};

/// Share of the training partition held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("holiday table: {0}")]
    HolidayTable(String),
    #[error("year {year} outside the holiday table for {city} (covered: {range:?})")]
    YearOutOfRange {
        city: City,
        year: i32,
        range: Option<(i32, i32)>,
    },
    #[error("invalid lag offsets: {0}")]
    InvalidLags(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("entity {entity}: length {len} cannot satisfy max lag {max_lag}")]
    UnsatisfiableLags { entity: String, len: usize, max_lag: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("malformed feature file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub resolution: Resolution,
    pub offsets: Vec<usize>,
}

impl LagSpec {
    pub fn new(resolution: Resolution, offsets: Vec<usize>) -> Result<Self, FeatureError> {
        if offsets.is_empty() {
            return Err(FeatureError::InvalidLags("no offsets".into()));
        }
        if offsets[0] == 0 || offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::InvalidLags(format!(
                "{:?} must be positive and strictly increasing",
                offsets
            )));
        }
        Ok(Self { resolution, offsets })
    }

    pub fn default_for(resolution: Resolution) -> Self {
        let offsets = match resolution {
            Resolution::TenMin => vec![1, 2, 3, 6, 144, 1008],
            Resolution::Hourly => vec![1, 2, 3, 24, 168],
            Resolution::Daily => vec![1, 2, 7, 14, 28],
        };
        Self { resolution, offsets }
    }

    pub fn max_lag(&self) -> usize {
        *self.offsets.last().expect("validated non-empty")
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Chronological partition shared by every entity of a city.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Target indices used to fit models and the held-out validation tail.
    pub fn fit_and_validation(&self, max_lag: usize) -> (Range<usize>, Range<usize>) {
        let n_val = validation_len(self.train.len());
        let cut = self.train.end - n_val;
        (max_lag..cut, cut..self.train.end)
    }
}

fn validation_len(train_len: usize) -> usize {
    ((train_len as f64 * VALIDATION_FRACTION).floor() as usize).max(1)
}

pub fn chronological_split(len: usize, train_fraction: f64, max_lag: usize) -> Result<Split, FeatureError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FeatureError::InvalidSplit(format!(
            "train fraction {} not in (0, 1)",
            train_fraction
        )));
    }
    let n_train = (len as f64 * train_fraction).floor() as usize;
    if n_train < max_lag + 1 {
        return Err(FeatureError::InvalidSplit(format!(
            "train partition of {} intervals leaves no rows after max lag {}",
            n_train, max_lag
        )));
    }
    if n_train >= len {
        return Err(FeatureError::InvalidSplit(format!(
            "test partition empty for length {}",
            len
        )));
    }
    Ok(Split {
        train: 0..n_train,
        test: n_train..len,
    })
}

/// Identity bits of one entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Identity {
    pub station: Option<usize>,
    pub region: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub lags: LagSpec,
    pub station_ids: Vec<String>,
    pub region_ids: Vec<String>,
}

impl FeatureSchema {
    pub fn new(lags: LagSpec, station_ids: Vec<String>, region_ids: Vec<String>) -> Self {
        Self {
            lags,
            station_ids,
            region_ids,
        }
    }

    pub fn lag_width(&self) -> usize {
        self.lags.len()
    }

    /// Calendar and identity columns.
    pub fn static_width(&self) -> usize {
        CALENDAR_WIDTH + self.station_ids.len() + self.region_ids.len()
    }

    pub fn width(&self) -> usize {
        self.lag_width() + self.static_width()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.lags.offsets.iter().map(|o| format!("lag_{}", o)).collect();
        cols.extend(CalendarFeatures::column_names());
        cols.extend(self.station_ids.iter().map(|s| format!("station_{}", s)));
        cols.extend(self.region_ids.iter().map(|r| format!("region_{}", r)));
        cols
    }

    pub fn identity(
        &self,
        level: Level,
        entity_id: &str,
        station_region: &BTreeMap<String, String>,
    ) -> Result<Identity, FeatureError> {
        let region_index = |r: &str| {
            self.region_ids
                .iter()
                .position(|x| x == r)
                .ok_or_else(|| FeatureError::UnknownEntity(r.to_string()))
        };
        match level {
            Level::Station => {
                let station = self
                    .station_ids
                    .iter()
                    .position(|x| x == entity_id)
                    .ok_or_else(|| FeatureError::UnknownEntity(entity_id.to_string()))?;
                let region = station_region
                    .get(entity_id)
                    .ok_or_else(|| FeatureError::UnknownEntity(entity_id.to_string()))?;
                Ok(Identity {
                    station: Some(station),
                    region: Some(region_index(region)?),
                })
            }
            Level::Region => Ok(Identity {
                station: None,
                region: Some(region_index(entity_id)?),
            }),
            Level::City => Ok(Identity::default()),
        }
    }

    /// Appends one row. `lags_z` follows the offset order.
    pub fn push_row(&self, out: &mut Vec<f64>, lags_z: &[f64], calendar: &[f64; CALENDAR_WIDTH], id: Identity) {
        debug_assert_eq!(lags_z.len(), self.lag_width());
        out.extend_from_slice(lags_z);
        out.extend_from_slice(calendar);
        let start = out.len();
        out.resize(start + self.station_ids.len() + self.region_ids.len(), 0.0);
        if let Some(s) = id.station {
            out[start + s] = 1.0;
        }
        if let Some(r) = id.region {
            out[start + self.station_ids.len() + r] = 1.0;
        }
    }
}

/// Calendar rows for every interval of a grid, evaluated at the interval
/// midpoint in the city's local time.
#[derive(Debug, Clone, PartialEq)]
pub struct CalendarGrid {
    pub t0: DateTime<Utc>,
    pub resolution: Resolution,
    rows: Vec<[f64; CALENDAR_WIDTH]>,
}

impl CalendarGrid {
    pub fn build(
        city: City,
        t0: DateTime<Utc>,
        resolution: Resolution,
        len: usize,
        table: &HolidayTable,
    ) -> Result<Self, FeatureError> {
        let half = resolution.duration() / 2;
        let mut rows = Vec::with_capacity(len);
        let mut memo: Option<(chrono::NaiveDate, [f64; CALENDAR_WIDTH])> = None;
        for i in 0..len {
            let mid = t0 + resolution.duration() * i as i32 + half;
            let date = local_date(mid, city);
            let row = match memo {
                Some((d, row)) if d == date => row,
                _ => {
                    let row = calendar_of(mid, city, table)?.to_row();
                    memo = Some((date, row));
                    row
                }
            };
            rows.push(row);
        }
        Ok(Self { t0, resolution, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64; CALENDAR_WIDTH] {
        &self.rows[i]
    }

    fn check(&self, series: &EnergySeries) -> Result<(), FeatureError> {
        if series.t0 != self.t0 || series.resolution != self.resolution || series.len() > self.len() {
            return Err(FeatureError::GridMismatch(format!(
                "{} ({} @ {}, {} intervals) vs calendar ({} @ {}, {})",
                series.entity_id,
                series.resolution.name(),
                series.t0,
                series.len(),
                self.resolution.name(),
                self.t0,
                self.len()
            )));
        }
        Ok(())
    }
}

/// Pooled normalizer over the training targets of a set of series.
pub fn fit_pooled(series: &[&EnergySeries], train: Range<usize>) -> Result<Normalizer<f64>, FeatureError> {
    let pooled: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values[train.start..train.end.min(s.len())].iter().copied())
        .collect();
    Normalizer::fit(&pooled)
}

pub struct EntityInput<'a> {
    pub series: &'a EnergySeries,
    pub identity: Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowKey {
    pub entity: usize,
    pub t: usize,
}

/// Dense row-major design matrix with normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub lag_width: usize,
    pub entity_ids: Vec<String>,
    pub t0: DateTime<Utc>,
    pub resolution: Resolution,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub keys: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.x[i * w..(i + 1) * w]
    }

    /// Rows whose target index lies in `range`, order preserved.
    pub fn select(&self, range: Range<usize>) -> FeatureMatrix {
        let w = self.width();
        let mut out = FeatureMatrix {
            columns: self.columns.clone(),
            lag_width: self.lag_width,
            entity_ids: self.entity_ids.clone(),
            t0: self.t0,
            resolution: self.resolution,
            x: Vec::new(),
            y: Vec::new(),
            keys: Vec::new(),
        };
        for (i, k) in self.keys.iter().enumerate() {
            if range.contains(&k.t) {
                out.x.extend_from_slice(&self.x[i * w..(i + 1) * w]);
                out.y.push(self.y[i]);
                out.keys.push(*k);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["entity_id".to_string(), "interval_start_utc".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("target".to_string());
        w.write_record(&header)?;
        let step = self.resolution.duration();
        for (i, k) in self.keys.iter().enumerate() {
            let t = self.t0 + step * k.t as i32;
            let mut rec = vec![
                self.entity_ids[k.entity].clone(),
                t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            ];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, lag_width: usize, resolution: Resolution) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3
            || header[0] != "entity_id"
            || header[1] != "interval_start_utc"
            || header.last().map(String::as_str) != Some("target")
        {
            return Err(FeatureError::Malformed(format!("unexpected header {:?}", header)));
        }
        let columns = header[2..header.len() - 1].to_vec();
        let width = columns.len();
        let mut entity_ids: Vec<String> = Vec::new();
        let mut raw: Vec<(usize, DateTime<Utc>)> = Vec::new();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let entity = match entity_ids.iter().position(|e| e == &rec[0]) {
                Some(i) => i,
                None => {
                    entity_ids.push(rec[0].to_string());
                    entity_ids.len() - 1
                }
            };
            let t = DateTime::parse_from_rfc3339(&rec[1])
                .map_err(|e| FeatureError::Malformed(format!("{}: {}", &rec[1], e)))?
                .with_timezone(&Utc);
            raw.push((entity, t));
            for field in rec.iter().skip(2).take(width) {
                x.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| FeatureError::Malformed(format!("{}: {}", field, e)))?,
                );
            }
            let target = &rec[width + 2];
            y.push(
                target
                    .parse::<f64>()
                    .map_err(|e| FeatureError::Malformed(format!("{}: {}", target, e)))?,
            );
        }
        let t0 = raw.iter().map(|r| r.1).min().unwrap_or_default();
        let secs = resolution.seconds();
        let keys = raw
            .iter()
            .map(|&(entity, t)| {
                let dt = (t - t0).num_seconds();
                if dt % secs != 0 {
                    return Err(FeatureError::GridMismatch(format!(
                        "{} off the {} grid",
                        t,
                        resolution.name()
                    )));
                }
                Ok(RowKey {
                    entity,
                    t: (dt / secs) as usize,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            columns,
            lag_width,
            entity_ids,
            t0,
            resolution,
            x,
            y,
            keys,
        })
    }
}

/// Rows for targets `t ∈ targets ∩ [max_lag, len)` of every entity, entity
/// order first, then time.
pub fn build_matrix(
    schema: &FeatureSchema,
    entities: &[EntityInput<'_>],
    normalizer: &Normalizer<f64>,
    calendar: &CalendarGrid,
    targets: Range<usize>,
) -> Result<FeatureMatrix, FeatureError> {
    let max_lag = schema.lags.max_lag();
    let first = entities.first().ok_or(FeatureError::EmptyInput("build_matrix"))?;
    let mut m = FeatureMatrix {
        columns: schema.columns(),
        lag_width: schema.lag_width(),
        entity_ids: entities.iter().map(|e| e.series.entity_id.clone()).collect(),
        t0: first.series.t0,
        resolution: first.series.resolution,
        x: Vec::new(),
        y: Vec::new(),
        keys: Vec::new(),
    };
    let mut lags = vec![0.0; schema.lag_width()];
    for (ei, e) in entities.iter().enumerate() {
        let s = e.series;
        calendar.check(s)?;
        if s.resolution != schema.lags.resolution {
            return Err(FeatureError::GridMismatch(format!(
                "{} is {}, lags are {}",
                s.entity_id,
                s.resolution.name(),
                schema.lags.resolution.name()
            )));
        }
        if s.len() <= max_lag {
            return Err(FeatureError::UnsatisfiableLags {
                entity: s.entity_id.clone(),
                len: s.len(),
                max_lag,
            });
        }
        let z = normalizer.transform_all(&s.values);
        for t in targets.start.max(max_lag)..targets.end.min(s.len()) {
            for (slot, &o) in lags.iter_mut().zip(&schema.lags.offsets) {
                *slot = z[t - o];
            }
            schema.push_row(&mut m.x, &lags, calendar.row(t), e.identity);
            m.y.push(z[t]);
            m.keys.push(RowKey { entity: ei, t });
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn series(id: &str, values: Vec<f64>, res: Resolution) -> EnergySeries {
        EnergySeries {
            entity_id: id.into(),
            level: Level::Station,
            resolution: res,
            t0: Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            values,
        }
    }

    fn toy_schema(offsets: Vec<usize>) -> FeatureSchema {
        FeatureSchema::new(
            LagSpec::new(Resolution::Daily, offsets).unwrap(),
            vec!["s1".into()],
            vec!["r1".into()],
        )
    }

    fn toy_matrix(values: Vec<f64>, offsets: Vec<usize>) -> FeatureMatrix {
        let s = series("s1", values, Resolution::Daily);
        let schema = toy_schema(offsets);
        let cal = CalendarGrid::build(City::Boulder, s.t0, s.resolution, s.len(), &HolidayTable::embedded()).unwrap();
        let id = Identity {
            station: Some(0),
            region: Some(0),
        };
        build_matrix(
            &schema,
            &[EntityInput {
                series: &s,
                identity: id,
            }],
            &Normalizer::identity(),
            &cal,
            0..s.len(),
        )
        .unwrap()
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            chronological_split(10, 0.8, 1).unwrap(),
            Split {
                train: 0..8,
                test: 8..10
            }
        );
        assert_eq!(
            chronological_split(5, 0.8, 1).unwrap(),
            Split {
                train: 0..4,
                test: 4..5
            }
        );
        assert!(matches!(
            chronological_split(100, 0.2, 30),
            Err(FeatureError::InvalidSplit(_))
        ));
        assert!(chronological_split(10, 1.0, 1).is_err());
        assert!(chronological_split(10, 0.0, 1).is_err());
    }

    #[test]
    fn validation_is_last_tenth_of_train() {
        let split = chronological_split(1000, 0.8, 28).unwrap();
        let (fit, val) = split.fit_and_validation(28);
        assert_eq!(fit, 28..720);
        assert_eq!(val, 720..800);
    }

    #[test]
    fn lag_spec_validation() {
        assert!(LagSpec::new(Resolution::Daily, vec![]).is_err());
        assert!(LagSpec::new(Resolution::Daily, vec![0, 1]).is_err());
        assert!(LagSpec::new(Resolution::Daily, vec![2, 2]).is_err());
        assert_eq!(LagSpec::default_for(Resolution::TenMin).max_lag(), 1008);
        assert_eq!(LagSpec::default_for(Resolution::Hourly).max_lag(), 168);
        assert_eq!(LagSpec::default_for(Resolution::Daily).offsets, vec![1, 2, 7, 14, 28]);
    }

    #[test]
    fn single_lag_rows() {
        let m = toy_matrix(vec![1.0, 2.0, 3.0, 4.0], vec![1]);
        assert_eq!(m.rows(), 3);
        let pairs: Vec<(f64, f64)> = (0..3).map(|i| (m.row(i)[0], m.y[i])).collect();
        assert_eq!(pairs, vec![(1.0, 2.0), (2.0, 3.0), (3.0, 4.0)]);
    }

    #[test]
    fn trim_equals_max_lag() {
        assert_eq!(toy_matrix(vec![1.0, 2.0, 3.0, 4.0], vec![1, 2]).rows(), 2);
    }

    #[test]
    fn unsatisfiable_lags() {
        let s = series("s1", vec![1.0, 2.0], Resolution::Daily);
        let cal = CalendarGrid::build(City::Boulder, s.t0, s.resolution, 2, &HolidayTable::embedded()).unwrap();
        let err = build_matrix(
            &toy_schema(vec![2]),
            &[EntityInput {
                series: &s,
                identity: Identity::default(),
            }],
            &Normalizer::identity(),
            &cal,
            0..2,
        )
        .unwrap_err();
        assert!(matches!(err, FeatureError::UnsatisfiableLags { .. }));
    }

    #[test]
    fn boulder_daily_width() {
        let stations: Vec<String> = (0..27).map(|i| format!("s{}", i)).collect();
        let regions: Vec<String> = (0..5).map(|i| format!("r{}", i)).collect();
        let schema = FeatureSchema::new(LagSpec::default_for(Resolution::Daily), stations, regions);
        assert_eq!(schema.width(), 5 + 2 + 7 + 12 + 27 + 5);
        assert_eq!(schema.columns().len(), schema.width());
    }

    #[test]
    fn identity_blocks_by_level() {
        let schema = FeatureSchema::new(
            LagSpec::default_for(Resolution::Daily),
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
        );
        let map: BTreeMap<String, String> = [("a".into(), "y".into()), ("b".into(), "x".into())].into();
        let id = schema.identity(Level::Station, "a", &map).unwrap();
        assert_eq!((id.station, id.region), (Some(0), Some(1)));
        let id = schema.identity(Level::Region, "x", &map).unwrap();
        assert_eq!((id.station, id.region), (None, Some(0)));
        assert_eq!(schema.identity(Level::City, "city", &map).unwrap(), Identity::default());
        assert!(schema.identity(Level::Station, "zz", &map).is_err());

        let mut row = Vec::new();
        schema.push_row(&mut row, &[0.0; 5], &[0.0; CALENDAR_WIDTH], id);
        assert_eq!(row.len(), schema.width());
        assert_eq!(row[5 + CALENDAR_WIDTH..], [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_round_trip() {
        let m = toy_matrix((0..40).map(f64::from).collect(), vec![1, 7]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("entity_id,interval_start_utc,lag_1,lag_7,is_holiday"));
        let back = FeatureMatrix::read_csv(&buf[..], 2, Resolution::Daily).unwrap();
        assert_eq!(back.x, m.x);
        assert_eq!(back.y, m.y);
        assert_eq!(back.columns, m.columns);
        // t0 is re-anchored at the first row
        assert_eq!(back.keys[0].t, 0);
        assert_eq!(back.keys.len(), m.keys.len());
    }

    proptest! {
        #[test]
        fn rows_never_see_the_future(values in proptest::collection::vec(0.0f64..10.0, 30..60), cut in 10usize..29) {
            let n = values.len();
            let base = toy_matrix(values.clone(), vec![1, 3, 7]);
            let mut perturbed = values.clone();
            for v in perturbed.iter_mut().skip(cut) {
                *v += 100.0;
            }
            let other = toy_matrix(perturbed, vec![1, 3, 7]);
            prop_assert_eq!(base.rows(), n - 7);
            for i in 0..base.rows() {
                if base.keys[i].t <= cut {
                    prop_assert_eq!(base.row(i), other.row(i));
                }
            }
        }

        #[test]
        fn normalizer_ignores_test_values(values in proptest::collection::vec(0.0f64..10.0, 20..80), bump in 1.0f64..1e3) {
            let s = series("s1", values.clone(), Resolution::Daily);
            let split = chronological_split(s.len(), 0.8, 1).unwrap();
            let a = fit_pooled(&[&s], split.train.clone()).unwrap();
            let mut t = s.clone();
            for v in t.values[split.test.clone()].iter_mut() {
                *v += bump;
            }
            let b = fit_pooled(&[&t], split.train).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn train_targets_standardised(values in proptest::collection::vec(0.0f64..50.0, 40..120)) {
            let s = series("s1", values, Resolution::Daily);
            let split = chronological_split(s.len(), 0.8, 1).unwrap();
            let n = fit_pooled(&[&s], split.train.clone()).unwrap();
            prop_assume!(n.std > 1e-3);
            let z = n.transform_all(&s.values[split.train]);
            let m = Normalizer::fit(&z).unwrap();
            prop_assert!(m.mean.abs() < 1e-9);
            prop_assert!((m.std - 1.0).abs() < 1e-9);
        }
    }
}
