//! Session CSV ingestion: column mapping, timestamp handling, integrity checks.
//!
//! Each city's export has its own column names and timestamp conventions.
//! A [`DatasetManifest`] names the source columns for the five canonical
//! fields; rows failing a check are dropped and counted by reason.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Duration, LocalResult, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("column `{column}` (for {field}) not present in {path}")]
    MissingColumn {
        field: &'static str,
        column: String,
        path: PathBuf,
    },
    #[error("column map has no source column for {0}")]
    EmptyColumnMap(&'static str),
    #[error("no valid session rows in {0}")]
    NoValidRows(PathBuf),
    #[error("unknown time zone `{0}`")]
    UnknownZone(String),
    #[error("unknown city `{0}`")]
    UnknownCity(String),
    #[error("malformed session table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum City {
    PaloAlto,
    Boulder,
    Dundee,
    Perth,
    Custom,
}

impl City {
    pub const ALL: [City; 5] = [City::PaloAlto, City::Boulder, City::Dundee, City::Perth, City::Custom];

    pub fn name(&self) -> &'static str {
        match self {
            City::PaloAlto => "PaloAlto",
            City::Boulder => "Boulder",
            City::Dundee => "Dundee",
            City::Perth => "Perth",
            City::Custom => "Custom",
        }
    }

    /// Civil time zone of the city; `None` for [`City::Custom`].
    pub fn local_zone(&self) -> Option<&'static str> {
        match self {
            City::PaloAlto => Some("America/Los_Angeles"),
            City::Boulder => Some("America/Denver"),
            City::Dundee => Some("Europe/London"),
            City::Perth => Some("Australia/Perth"),
            City::Custom => None,
        }
    }
}

impl fmt::Display for City {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for City {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "paloalto" => Ok(City::PaloAlto),
            "boulder" => Ok(City::Boulder),
            "dundee" => Ok(City::Dundee),
            "perth" => Ok(City::Perth),
            "custom" => Ok(City::Custom),
            _ => Err(IngestError::UnknownCity(s.to_string())),
        }
    }
}

/// One validated charging session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub city: City,
    pub station_id: String,
    pub region_id: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub energy_kwh: f64,
}

/// Source column(s) for each canonical field. When several columns are
/// listed their trimmed values are joined with a single space, which is how
/// separate date and time columns are merged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub station: Vec<String>,
    pub region: Vec<String>,
    pub start: Vec<String>,
    pub end: Vec<String>,
    pub energy: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingValue,
    UnparseableTimestamp,
    EndNotAfterStart,
    NegativeEnergy,
}

pub const UTC_NATIVE: &str = "utc-native";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub city: City,
    pub source_path: PathBuf,
    pub column_map: ColumnMap,
    /// IANA zone used for timestamps without an explicit offset, or `utc-native`.
    pub timezone: String,
    /// Extra chrono formats tried before the built-in list.
    #[serde(default)]
    pub datetime_formats: Vec<String>,
    #[serde(default)]
    pub raw_rows: usize,
    #[serde(default)]
    pub records_parsed: usize,
    #[serde(default)]
    pub records_dropped: BTreeMap<DropReason, usize>,
    /// Human-readable note on how naive timestamps were interpreted.
    #[serde(default)]
    pub timezone_note: String,
}

impl DatasetManifest {
    pub fn new(
        city: City,
        source_path: impl Into<PathBuf>,
        column_map: ColumnMap,
        timezone: impl Into<String>,
    ) -> Self {
        Self {
            city,
            source_path: source_path.into(),
            column_map,
            timezone: timezone.into(),
            datetime_formats: Vec::new(),
            raw_rows: 0,
            records_parsed: 0,
            records_dropped: BTreeMap::new(),
            timezone_note: String::new(),
        }
    }

    pub fn total_dropped(&self) -> usize {
        self.records_dropped.values().sum()
    }
}

/// Zone used to interpret naive timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Zone {
    Utc,
    Named(Tz),
}

impl Zone {
    pub fn parse(name: &str) -> Result<Self, IngestError> {
        if name.eq_ignore_ascii_case(UTC_NATIVE) || name.eq_ignore_ascii_case("utc") {
            return Ok(Zone::Utc);
        }
        name.parse::<Tz>()
            .map(Zone::Named)
            .map_err(|_| IngestError::UnknownZone(name.to_string()))
    }

    pub fn resolve(&self, local: NaiveDateTime) -> DateTime<Utc> {
        match self {
            Zone::Utc => Utc.from_utc_datetime(&local),
            Zone::Named(tz) => resolve_local(tz, local),
        }
    }
}

fn resolve_local(tz: &Tz, local: NaiveDateTime) -> DateTime<Utc> {
    match tz.from_local_datetime(&local) {
        LocalResult::Single(t) => t.with_timezone(&Utc),
        // fold: the first occurrence carries the earlier (pre-transition) offset
        LocalResult::Ambiguous(first, _) => first.with_timezone(&Utc),
        LocalResult::None => {
            // spring-forward gap: keep the offset in force before the gap,
            // which moves the wall time forward by the gap width
            let before = tz
                .from_local_datetime(&(local - Duration::hours(6)))
                .earliest()
                .expect("six hours before a gap is a valid local time");
            let offset = before.offset().clone();
            let utc_naive = local - chrono::Offset::fix(&offset);
            Utc.from_utc_datetime(&utc_naive)
        }
    }
}

/// Convert a naive local timestamp in `zone` to UTC.
pub fn to_utc(local: NaiveDateTime, zone: &str) -> Result<DateTime<Utc>, IngestError> {
    Ok(Zone::parse(zone)?.resolve(local))
}

const OFFSET_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f%:z",
    "%Y-%m-%d %H:%M:%S%.f%:z",
    "%Y-%m-%d %H:%M:%S%#z",
    "%Y/%m/%d %H:%M:%S%#z",
    "%Y-%m-%dT%H:%M:%S%#z",
];

const NAIVE_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%m/%d/%y %H:%M",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
    "%d.%m.%Y %H:%M:%S",
    "%d.%m.%Y %H:%M",
];

/// Parse a timestamp string. Strings carrying an offset are converted
/// directly; naive ones are interpreted in `zone`. Fractional seconds are
/// truncated.
pub fn parse_timestamp(raw: &str, zone: &Zone, extra_formats: &[String]) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    let truncate = |t: DateTime<Utc>| DateTime::from_timestamp(t.timestamp(), 0).unwrap_or(t);
    for f in extra_formats {
        if let Ok(t) = DateTime::parse_from_str(s, f) {
            return Some(truncate(t.with_timezone(&Utc)));
        }
        if let Ok(n) = NaiveDateTime::parse_from_str(s, f) {
            return Some(truncate(zone.resolve(n)));
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(truncate(t.with_timezone(&Utc)));
    }
    for f in OFFSET_FORMATS {
        if let Ok(t) = DateTime::parse_from_str(s, f) {
            return Some(truncate(t.with_timezone(&Utc)));
        }
    }
    for f in NAIVE_FORMATS {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, f) {
            return Some(truncate(zone.resolve(n)));
        }
    }
    None
}

/// A raw row after typing: `None` marks an empty field.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub station: Option<String>,
    pub region: Option<String>,
    pub start: Option<Option<DateTime<Utc>>>,
    pub end: Option<Option<DateTime<Utc>>>,
    /// Non-numeric energy text is treated as a missing value.
    pub energy: Option<f64>,
}

/// Integrity checks in order: missing value, unparseable timestamp,
/// end ≤ start, negative energy.
pub fn validate_session(city: City, row: ParsedRow) -> Result<SessionRecord, DropReason> {
    let (station, region, start, end, energy) = match row {
        ParsedRow {
            station: Some(st),
            region: Some(rg),
            start: Some(s),
            end: Some(e),
            energy: Some(en),
        } if !st.is_empty() && !rg.is_empty() => (st, rg, s, e, en),
        _ => return Err(DropReason::MissingValue),
    };
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(DropReason::UnparseableTimestamp),
    };
    if end <= start {
        return Err(DropReason::EndNotAfterStart);
    }
    if energy < 0.0 {
        return Err(DropReason::NegativeEnergy);
    }
    Ok(SessionRecord {
        city,
        station_id: station,
        region_id: region,
        start,
        end,
        energy_kwh: energy,
    })
}

fn column_indices(
    headers: &csv::StringRecord,
    field: &'static str,
    columns: &[String],
    path: &Path,
) -> Result<Vec<usize>, IngestError> {
    if columns.is_empty() {
        return Err(IngestError::EmptyColumnMap(field));
    }
    columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == c.as_str())
                .ok_or_else(|| IngestError::MissingColumn {
                    field,
                    column: c.clone(),
                    path: path.to_path_buf(),
                })
        })
        .collect()
}

fn joined(record: &csv::StringRecord, idx: &[usize]) -> Option<String> {
    let mut parts = Vec::with_capacity(idx.len());
    for &i in idx {
        let v = record.get(i).map(str::trim).unwrap_or("");
        if v.is_empty()
            || v.eq_ignore_ascii_case("nan")
            || v.eq_ignore_ascii_case("null")
            || v.eq_ignore_ascii_case("na")
        {
            return None;
        }
        parts.push(v);
    }
    Some(parts.join(" "))
}

fn parse_energy(s: &str) -> Option<f64> {
    let v: f64 = s.replace(',', "").parse().ok()?;
    v.is_finite().then_some(v)
}

/// Read, validate and count every row of the manifest's source file.
pub fn parse_sessions(manifest: &DatasetManifest) -> Result<(Vec<SessionRecord>, DatasetManifest), IngestError> {
    let path = &manifest.source_path;
    if !path.exists() {
        return Err(IngestError::FileNotFound(path.clone()));
    }
    let zone = Zone::parse(&manifest.timezone)?;
    let file = std::fs::File::open(path)?;
    parse_sessions_from_reader(manifest, &zone, file)
}

fn parse_sessions_from_reader<R: Read>(
    manifest: &DatasetManifest,
    zone: &Zone,
    reader: R,
) -> Result<(Vec<SessionRecord>, DatasetManifest), IngestError> {
    let path = &manifest.source_path;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let map = &manifest.column_map;
    let station_idx = column_indices(&headers, "station", &map.station, path)?;
    let region_idx = column_indices(&headers, "region", &map.region, path)?;
    let start_idx = column_indices(&headers, "start", &map.start, path)?;
    let end_idx = column_indices(&headers, "end", &map.end, path)?;
    let energy_idx = column_indices(&headers, "energy", &map.energy, path)?;

    let mut out = manifest.clone();
    out.raw_rows = 0;
    out.records_parsed = 0;
    out.records_dropped = BTreeMap::new();
    out.timezone_note = match zone {
        Zone::Utc => "naive timestamps read as UTC".to_string(),
        Zone::Named(tz) => format!("naive timestamps read as local time in {}", tz.name()),
    };

    let mut records = Vec::new();
    let mut byte_record = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut byte_record)? {
        out.raw_rows += 1;
        let record = csv::StringRecord::from_byte_record_lossy(byte_record.clone());
        let ts = |idx: &[usize]| joined(&record, idx).map(|s| parse_timestamp(&s, zone, &manifest.datetime_formats));
        let row = ParsedRow {
            station: joined(&record, &station_idx),
            region: joined(&record, &region_idx),
            start: ts(&start_idx),
            end: ts(&end_idx),
            energy: joined(&record, &energy_idx).and_then(|s| parse_energy(&s)),
        };
        match validate_session(manifest.city, row) {
            Ok(rec) => {
                out.records_parsed += 1;
                records.push(rec);
            }
            Err(reason) => *out.records_dropped.entry(reason).or_insert(0) += 1,
        }
    }
    if records.is_empty() {
        return Err(IngestError::NoValidRows(path.clone()));
    }
    Ok((records, out))
}

const SESSION_HEADER: [&str; 6] = ["city", "station_id", "region_id", "start_utc", "end_utc", "energy_kwh"];

/// Canonical session table: `city,station_id,region_id,start_utc,end_utc,energy_kwh`
/// with RFC 3339 second-precision timestamps.
pub fn write_sessions<W: Write>(records: &[SessionRecord], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SESSION_HEADER)?;
    for r in records {
        w.write_record([
            r.city.name().to_string(),
            r.station_id.clone(),
            r.region_id.clone(),
            r.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.end.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.energy_kwh.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions<R: Read>(reader: R) -> Result<Vec<SessionRecord>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SESSION_HEADER {
        return Err(IngestError::Malformed(format!("unexpected header {:?}", headers)));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| IngestError::Malformed(format!("{}: {:?}", what, rec));
        let ts = |i: usize| {
            DateTime::parse_from_rfc3339(&rec[i])
                .map(|t| t.with_timezone(&Utc))
                .map_err(|_| bad("timestamp"))
        };
        out.push(SessionRecord {
            city: rec[0].parse()?,
            station_id: rec[1].to_string(),
            region_id: rec[2].to_string(),
            start: ts(3)?,
            end: ts(4)?,
            energy_kwh: rec[5].parse().map_err(|_| bad("energy"))?,
        });
    }
    Ok(out)
}

/// One JSON object per line.
pub fn write_manifests<W: Write>(manifests: &[DatasetManifest], mut writer: W) -> Result<(), IngestError> {
    for m in manifests {
        serde_json::to_writer(&mut writer, m)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifests<R: Read>(mut reader: R) -> Result<Vec<DatasetManifest>, IngestError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(IngestError::from))
        .collect()
}
