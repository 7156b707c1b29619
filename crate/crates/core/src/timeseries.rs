//! Fixed-interval energy series: rasterisation, resampling and spatial aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SessionRecord;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("{what} {at} is not aligned to the {resolution} grid")]
    Misaligned {
        what: &'static str,
        at: DateTime<Utc>,
        resolution: Resolution,
    },
    #[error("session at station {station} ({start}..{end}) lies outside the grid span")]
    OutsideSpan {
        station: String,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("cannot resample {from} to {to}: target must be coarser")]
    NotCoarser { from: Resolution, to: Resolution },
    #[error("series {0} length is not a whole number of target intervals")]
    PartialInterval(String),
    #[error("series grids differ: {0}")]
    GridMismatch(String),
    #[error("no group assigned to entity {0}")]
    Ungrouped(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
    #[error("malformed series table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    TenMin,
    Hourly,
    Daily,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::TenMin, Resolution::Hourly, Resolution::Daily];

    pub fn seconds(&self) -> i64 {
        match self {
            Resolution::TenMin => 600,
            Resolution::Hourly => 3600,
            Resolution::Daily => 86_400,
        }
    }

    pub fn duration(&self) -> Duration {
        Duration::seconds(self.seconds())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Resolution::TenMin => "10min",
            Resolution::Hourly => "hourly",
            Resolution::Daily => "daily",
        }
    }

    pub fn is_aligned(&self, t: DateTime<Utc>) -> bool {
        t.timestamp().rem_euclid(self.seconds()) == 0
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resolution {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "10min" | "tenmin" | "ten_min" => Ok(Resolution::TenMin),
            "hourly" | "1h" => Ok(Resolution::Hourly),
            "daily" | "1d" => Ok(Resolution::Daily),
            _ => Err(SeriesError::Unknown {
                kind: "resolution",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Station,
    Region,
    City,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Station, Level::Region, Level::City];

    pub fn name(&self) -> &'static str {
        match self {
            Level::Station => "station",
            Level::Region => "region",
            Level::City => "city",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "station" => Ok(Level::Station),
            "region" => Ok(Level::Region),
            "city" => Ok(Level::City),
            _ => Err(SeriesError::Unknown {
                kind: "level",
                value: s.to_string(),
            }),
        }
    }
}

/// kWh per interval for one entity. Index `i` covers `[t0 + iΔ, t0 + (i+1)Δ)`;
/// intervals without activity hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySeries {
    pub entity_id: String,
    pub level: Level,
    pub resolution: Resolution,
    pub t0: DateTime<Utc>,
    pub values: Vec<f64>,
}

impl EnergySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn interval_start(&self, i: usize) -> DateTime<Utc> {
        self.t0 + Duration::seconds(self.resolution.seconds() * i as i64)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn same_grid(&self, other: &EnergySeries) -> bool {
        self.resolution == other.resolution && self.t0 == other.t0 && self.values.len() == other.values.len()
    }
}

/// Half-open grid span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Span {
    pub fn intervals(&self, resolution: Resolution) -> usize {
        ((self.end - self.start).num_seconds() / resolution.seconds()).max(0) as usize
    }
}

/// First session start floored to UTC midnight through last session end
/// ceiled to UTC midnight.
pub fn city_span(sessions: &[SessionRecord]) -> Option<Span> {
    let day = Resolution::Daily.seconds();
    let first = sessions.iter().map(|s| s.start.timestamp()).min()?;
    let last = sessions.iter().map(|s| s.end.timestamp()).max()?;
    let start = first.div_euclid(day) * day;
    let end = (last + day - 1).div_euclid(day) * day;
    Some(Span {
        start: DateTime::from_timestamp(start, 0)?,
        end: DateTime::from_timestamp(end.max(start + day), 0)?,
    })
}

/// Spread each session's energy over the intervals it overlaps, in proportion
/// to overlap duration. Returns one station series per station id, sorted.
pub fn rasterize(
    sessions: &[SessionRecord],
    resolution: Resolution,
    span: Span,
) -> Result<Vec<EnergySeries>, SeriesError> {
    for (what, at) in [("span start", span.start), ("span end", span.end)] {
        if !resolution.is_aligned(at) {
            return Err(SeriesError::Misaligned { what, at, resolution });
        }
    }
    let n = span.intervals(resolution);
    let dt = resolution.seconds();
    let t0 = span.start.timestamp();
    let mut by_station: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        if s.start < span.start || s.end > span.end {
            return Err(SeriesError::OutsideSpan {
                station: s.station_id.clone(),
                start: s.start,
                end: s.end,
            });
        }
        let values = by_station.entry(s.station_id.as_str()).or_insert_with(|| vec![0.0; n]);
        let a = s.start.timestamp() - t0;
        let b = s.end.timestamp() - t0;
        let duration = (b - a) as f64;
        let first = a.div_euclid(dt);
        let last = (b - 1).div_euclid(dt);
        for idx in first..=last {
            let lo = (idx * dt).max(a);
            let hi = ((idx + 1) * dt).min(b);
            values[idx as usize] += s.energy_kwh * (hi - lo) as f64 / duration;
        }
    }
    Ok(by_station
        .into_iter()
        .map(|(id, values)| EnergySeries {
            entity_id: id.to_string(),
            level: Level::Station,
            resolution,
            t0: span.start,
            values,
        })
        .collect())
}

/// Sum consecutive intervals into a coarser resolution.
pub fn resample(series: &EnergySeries, target: Resolution) -> Result<EnergySeries, SeriesError> {
    if target.seconds() <= series.resolution.seconds() {
        return Err(SeriesError::NotCoarser {
            from: series.resolution,
            to: target,
        });
    }
    if !target.is_aligned(series.t0) {
        return Err(SeriesError::Misaligned {
            what: "series start",
            at: series.t0,
            resolution: target,
        });
    }
    let factor = (target.seconds() / series.resolution.seconds()) as usize;
    if series.values.len() % factor != 0 {
        return Err(SeriesError::PartialInterval(series.entity_id.clone()));
    }
    Ok(EnergySeries {
        entity_id: series.entity_id.clone(),
        level: series.level,
        resolution: target,
        t0: series.t0,
        values: series.values.chunks(factor).map(|c| c.iter().sum()).collect(),
    })
}

/// Sum member series into one series per group. `group` maps every member
/// entity id to its group id. Members are added in entity-id order.
pub fn aggregate(
    series_list: &[EnergySeries],
    group: &BTreeMap<String, String>,
    level: Level,
) -> Result<Vec<EnergySeries>, SeriesError> {
    let first = series_list.first().ok_or(SeriesError::Empty("aggregate input"))?;
    let mut members: BTreeMap<&str, Vec<&EnergySeries>> = BTreeMap::new();
    for s in series_list {
        if !s.same_grid(first) {
            return Err(SeriesError::GridMismatch(format!(
                "{} ({}, {}, {}) vs {} ({}, {}, {})",
                s.entity_id,
                s.resolution,
                s.t0,
                s.len(),
                first.entity_id,
                first.resolution,
                first.t0,
                first.len()
            )));
        }
        let g = group
            .get(&s.entity_id)
            .ok_or_else(|| SeriesError::Ungrouped(s.entity_id.clone()))?;
        members.entry(g.as_str()).or_default().push(s);
    }
    Ok(members
        .into_iter()
        .map(|(g, mut ms)| {
            ms.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
            let mut values = vec![0.0; first.len()];
            for m in ms {
                for (acc, v) in values.iter_mut().zip(&m.values) {
                    *acc += v;
                }
            }
            EnergySeries {
                entity_id: g.to_string(),
                level,
                resolution: first.resolution,
                t0: first.t0,
                values,
            }
        })
        .collect())
}

/// Region of each station: the most frequent `region_id` among its sessions,
/// ties broken by the lexicographically smallest id.
pub fn station_regions(sessions: &[SessionRecord]) -> BTreeMap<String, String> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for s in sessions {
        *counts
            .entry(s.station_id.as_str())
            .or_default()
            .entry(s.region_id.as_str())
            .or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(station, regions)| {
            let best = regions
                .iter()
                .fold(None::<(&str, usize)>, |best, (&r, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((r, c)),
                })
                .map(|(r, _)| r)
                .unwrap_or_default();
            (station.to_string(), best.to_string())
        })
        .collect()
}

/// Station, region and city series of one city on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CitySeries {
    pub stations: Vec<EnergySeries>,
    pub regions: Vec<EnergySeries>,
    pub city: EnergySeries,
    pub station_region: BTreeMap<String, String>,
}

impl CitySeries {
    /// Rasterise onto the 10-minute grid, resample to `resolution` if
    /// coarser, then aggregate.
    pub fn build(sessions: &[SessionRecord], city_id: &str, resolution: Resolution) -> Result<Self, SeriesError> {
        let span = city_span(sessions).ok_or(SeriesError::Empty("sessions"))?;
        let base = rasterize(sessions, Resolution::TenMin, span)?;
        let stations = if resolution == Resolution::TenMin {
            base
        } else {
            base.iter().map(|s| resample(s, resolution)).collect::<Result<_, _>>()?
        };
        Self::from_stations(stations, station_regions(sessions), city_id)
    }

    pub fn from_stations(
        stations: Vec<EnergySeries>,
        station_region: BTreeMap<String, String>,
        city_id: &str,
    ) -> Result<Self, SeriesError> {
        let regions = aggregate(&stations, &station_region, Level::Region)?;
        let all: BTreeMap<String, String> = regions
            .iter()
            .map(|r| (r.entity_id.clone(), city_id.to_string()))
            .collect();
        let city = aggregate(&regions, &all, Level::City)?
            .pop()
            .ok_or(SeriesError::Empty("regions"))?;
        Ok(Self {
            stations,
            regions,
            city,
            station_region,
        })
    }

    pub fn level(&self, level: Level) -> Vec<&EnergySeries> {
        match level {
            Level::Station => self.stations.iter().collect(),
            Level::Region => self.regions.iter().collect(),
            Level::City => vec![&self.city],
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.city.resolution
    }
}

/// Long-format table `entity_id,interval_start_utc,kwh`.
pub fn write_series<W: Write>(series: &[&EnergySeries], writer: W) -> Result<(), SeriesError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["entity_id", "interval_start_utc", "kwh"])?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            w.write_record([
                s.entity_id.clone(),
                s.interval_start(i).to_rfc3339_opts(SecondsFormat::Secs, true),
                v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Inverse of [`write_series`]; rows of one entity must be contiguous and
/// consecutive on the grid.
pub fn read_series<R: Read>(reader: R, level: Level, resolution: Resolution) -> Result<Vec<EnergySeries>, SeriesError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<EnergySeries> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || SeriesError::Malformed(format!("{:?}", rec));
        let t = DateTime::parse_from_rfc3339(&rec[1])
            .map_err(|_| bad())?
            .with_timezone(&Utc);
        let v: f64 = rec[2].parse().map_err(|_| bad())?;
        match out.last_mut() {
            Some(s) if s.entity_id == rec[0] => {
                if s.interval_start(s.values.len()) != t {
                    return Err(bad());
                }
                s.values.push(v);
            }
            _ => out.push(EnergySeries {
                entity_id: rec[0].to_string(),
                level,
                resolution,
                t0: t,
                values: vec![v],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::City;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 6, 1, h, m, 0).unwrap()
    }

    fn sess(station: &str, region: &str, start: DateTime<Utc>, end: DateTime<Utc>, kwh: f64) -> SessionRecord {
        SessionRecord {
            city: City::Custom,
            station_id: station.into(),
            region_id: region.into(),
            start,
            end,
            energy_kwh: kwh,
        }
    }

    fn day_span() -> Span {
        Span {
            start: at(0, 0),
            end: at(0, 0) + Duration::days(1),
        }
    }

    fn idx(h: u32, m: u32) -> usize {
        ((h * 60 + m) / 10) as usize
    }

    #[test]
    fn proportional_allocation() {
        let out = rasterize(
            &[sess("s", "r", at(10, 5), at(10, 25), 6.0)],
            Resolution::TenMin,
            day_span(),
        )
        .unwrap();
        let v = &out[0].values;
        assert_eq!(v[idx(10, 0)], 1.5);
        assert_eq!(v[idx(10, 10)], 3.0);
        assert_eq!(v[idx(10, 20)], 1.5);
        assert_eq!(v.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn single_interval_containment() {
        let out = rasterize(
            &[sess("s", "r", at(10, 0), at(10, 10), 4.0)],
            Resolution::TenMin,
            day_span(),
        )
        .unwrap();
        assert_eq!(out[0].values[idx(10, 0)], 4.0);
        assert_eq!(out[0].values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn superposition() {
        let out = rasterize(
            &[
                sess("s", "r", at(10, 0), at(10, 10), 2.0),
                sess("s", "r", at(10, 5), at(10, 15), 2.0),
            ],
            Resolution::TenMin,
            day_span(),
        )
        .unwrap();
        assert_eq!(out[0].values[idx(10, 0)], 3.0);
        assert_eq!(out[0].values[idx(10, 10)], 1.0);
    }

    #[test]
    fn rasterize_errors() {
        let bad = Span {
            start: at(0, 5),
            end: at(0, 5) + Duration::days(1),
        };
        assert!(matches!(
            rasterize(&[], Resolution::TenMin, bad),
            Err(SeriesError::Misaligned { .. })
        ));
        let s = sess("s", "r", at(23, 0), at(23, 0) + Duration::hours(2), 1.0);
        assert!(matches!(
            rasterize(&[s], Resolution::TenMin, day_span()),
            Err(SeriesError::OutsideSpan { .. })
        ));
    }

    fn series(values: Vec<f64>, res: Resolution) -> EnergySeries {
        EnergySeries {
            entity_id: "e".into(),
            level: Level::Station,
            resolution: res,
            t0: at(0, 0),
            values,
        }
    }

    #[test]
    fn resample_examples() {
        assert_eq!(
            resample(&series(vec![1.0; 6], Resolution::TenMin), Resolution::Hourly)
                .unwrap()
                .values,
            vec![6.0]
        );
        assert_eq!(
            resample(&series(vec![0.0; 144], Resolution::TenMin), Resolution::Daily)
                .unwrap()
                .values,
            vec![0.0]
        );
        assert!(matches!(
            resample(&series(vec![0.0; 24], Resolution::Hourly), Resolution::TenMin),
            Err(SeriesError::NotCoarser { .. })
        ));
        let mut shifted = series(vec![0.0; 6], Resolution::TenMin);
        shifted.t0 = at(0, 10);
        assert!(matches!(
            resample(&shifted, Resolution::Hourly),
            Err(SeriesError::Misaligned { .. })
        ));
        assert!(matches!(
            resample(&series(vec![0.0; 7], Resolution::TenMin), Resolution::Hourly),
            Err(SeriesError::PartialInterval(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let mut a = series(vec![1.0, 2.0], Resolution::Daily);
        a.entity_id = "a".into();
        let mut b = series(vec![3.0, 4.0], Resolution::Daily);
        b.entity_id = "b".into();
        let mut c = series(vec![9.0, 9.0], Resolution::Daily);
        c.entity_id = "c".into();
        let group: BTreeMap<String, String> = [("a", "r1"), ("b", "r1"), ("c", "r2")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let out = aggregate(&[a.clone(), b, c.clone()], &group, Level::Region).unwrap();
        assert_eq!(out[0].values, vec![4.0, 6.0]);
        assert_eq!(out[1].values, c.values, "single member region equals its station");
        let mut longer = a.clone();
        longer.values.push(0.0);
        assert!(matches!(
            aggregate(&[a, longer], &group, Level::Region),
            Err(SeriesError::GridMismatch(_))
        ));
    }

    #[test]
    fn station_region_majority() {
        let s = vec![
            sess("s1", "zb", at(1, 0), at(2, 0), 1.0),
            sess("s1", "za", at(3, 0), at(4, 0), 1.0),
            sess("s1", "zb", at(5, 0), at(6, 0), 1.0),
            sess("s2", "zc", at(5, 0), at(6, 0), 1.0),
            sess("s2", "za", at(7, 0), at(8, 0), 1.0),
        ];
        let m = station_regions(&s);
        assert_eq!(m["s1"], "zb");
        assert_eq!(m["s2"], "za");
    }

    #[test]
    fn city_span_is_whole_days() {
        let s = vec![sess("s", "r", at(10, 5), at(10, 25), 1.0)];
        let span = city_span(&s).unwrap();
        assert_eq!(span.start, at(0, 0));
        assert_eq!(span.end, at(0, 0) + Duration::days(1));
    }

    #[test]
    fn series_csv_round_trip() {
        let mut a = series(vec![1.5, 0.0, 2.25], Resolution::Hourly);
        a.entity_id = "x".into();
        let mut b = a.clone();
        b.entity_id = "y".into();
        let mut buf = Vec::new();
        write_series(&[&a, &b], &mut buf).unwrap();
        assert_eq!(
            read_series(&buf[..], Level::Station, Resolution::Hourly).unwrap(),
            vec![a, b]
        );
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<SessionRecord>> {
        proptest::collection::vec(
            (0usize..4, 0usize..2, 0i64..2 * 86_400, 1i64..40_000, 0.0f64..80.0),
            1..40,
        )
        .prop_map(|raw| {
            raw.into_iter()
                .map(|(st, rg, off, dur, kwh)| {
                    let start = at(0, 0) + Duration::seconds(off);
                    sess(
                        &format!("s{}", st),
                        &format!("r{}", (st + rg) % 3),
                        start,
                        start + Duration::seconds(dur),
                        kwh,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn energy_is_conserved_across_levels(sessions in arb_sessions()) {
            let cs = CitySeries::build(&sessions, "city", Resolution::TenMin).unwrap();
            let total: f64 = sessions.iter().map(|s| s.energy_kwh).sum();
            let st: f64 = cs.stations.iter().map(EnergySeries::total).sum();
            let rg: f64 = cs.regions.iter().map(EnergySeries::total).sum();
            let ct = cs.city.total();
            let tol = 1e-9 * total.max(1.0);
            prop_assert!((st - total).abs() <= tol);
            prop_assert!((rg - total).abs() <= tol);
            prop_assert!((ct - total).abs() <= tol);
            prop_assert!(cs.city.values.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn resample_then_daily_equals_direct_daily(sessions in arb_sessions()) {
            let span = city_span(&sessions).unwrap();
            let fine = rasterize(&sessions, Resolution::TenMin, span).unwrap();
            let direct = rasterize(&sessions, Resolution::Daily, span).unwrap();
            for (f, d) in fine.iter().zip(&direct) {
                let r = resample(f, Resolution::Daily).unwrap();
                for (a, b) in r.values.iter().zip(&d.values) {
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }

        #[test]
        fn resample_preserves_sum(values in proptest::collection::vec(0.0f64..50.0, 288)) {
            let oracle: f64 = values.iter().sum();
            let s = series(values, Resolution::TenMin);
            let d = resample(&s, Resolution::Daily).unwrap();
            prop_assert_eq!(d.values.len(), 2);
            prop_assert!((d.total() - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }
    }
}
