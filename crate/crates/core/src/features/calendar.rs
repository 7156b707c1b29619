//! Calendar indicators and the per-city holiday tables.
//!
//! The table file is plain text, one holiday per line:
//!
//! ```text
//! YYYY-MM-DD<TAB>City[<TAB>name]
//! ```
//!
//! Lines starting with `#` are comments. A city's covered year range is the
//! span of years that appear for it in the file.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, Utc, Weekday};
use chrono_tz::Tz;

use super::FeatureError;
use crate::ingest::City;

const EMBEDDED: &str = include_str!("../../data/holidays.tsv");

/// Number of calendar columns: holiday, weekend, 7 weekdays, 12 months.
pub const CALENDAR_WIDTH: usize = 2 + 7 + 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolidayTable {
    days: BTreeMap<City, BTreeSet<NaiveDate>>,
}

impl HolidayTable {
    pub fn embedded() -> Self {
        Self::parse(EMBEDDED).expect("embedded holiday table is well formed")
    }

    pub fn empty() -> Self {
        Self { days: BTreeMap::new() }
    }

    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let mut days: BTreeMap<City, BTreeSet<NaiveDate>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let bad = || FeatureError::HolidayTable(format!("line {}: {}", i + 1, line));
            let date = NaiveDate::parse_from_str(fields.next().ok_or_else(bad)?, "%Y-%m-%d").map_err(|_| bad())?;
            let city: City = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            days.entry(city).or_default().insert(date);
        }
        Ok(Self { days })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FeatureError::HolidayTable(format!("{}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    /// Inclusive year coverage for `city`.
    pub fn year_range(&self, city: City) -> Option<(i32, i32)> {
        let set = self.days.get(&city)?;
        Some((set.first()?.year(), set.last()?.year()))
    }

    /// Whether `date` is a holiday for `city`. [`City::Custom`] has no
    /// holidays and accepts any year.
    pub fn is_holiday(&self, city: City, date: NaiveDate) -> Result<bool, FeatureError> {
        if city == City::Custom {
            return Ok(false);
        }
        match self.year_range(city) {
            Some((lo, hi)) if (lo..=hi).contains(&date.year()) => Ok(self.days[&city].contains(&date)),
            range => Err(FeatureError::YearOutOfRange {
                city,
                year: date.year(),
                range,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarFeatures {
    pub is_holiday: bool,
    pub is_weekend: bool,
    /// Monday = 0.
    pub day_of_week: u32,
    /// January = 0.
    pub month: u32,
}

impl CalendarFeatures {
    /// `[holiday, weekend, dow one-hot(7), month one-hot(12)]`.
    pub fn to_row(&self) -> [f64; CALENDAR_WIDTH] {
        let mut row = [0.0; CALENDAR_WIDTH];
        row[0] = f64::from(u8::from(self.is_holiday));
        row[1] = f64::from(u8::from(self.is_weekend));
        row[2 + self.day_of_week as usize] = 1.0;
        row[9 + self.month as usize] = 1.0;
        row
    }

    pub fn column_names() -> Vec<String> {
        let mut names = vec!["is_holiday".to_string(), "is_weekend".to_string()];
        for d in ["mon", "tue", "wed", "thu", "fri", "sat", "sun"] {
            names.push(format!("dow_{}", d));
        }
        for m in 1..=12 {
            names.push(format!("month_{:02}", m));
        }
        names
    }
}

/// Local civil date of `t` in the city's zone (UTC for [`City::Custom`]).
pub fn local_date(t: DateTime<Utc>, city: City) -> NaiveDate {
    match city.local_zone() {
        Some(zone) => {
            let tz: Tz = zone.parse().expect("built-in zone names are valid");
            t.with_timezone(&tz).date_naive()
        }
        None => t.date_naive(),
    }
}

pub fn calendar_of(t: DateTime<Utc>, city: City, table: &HolidayTable) -> Result<CalendarFeatures, FeatureError> {
    let date = local_date(t, city);
    let weekday = date.weekday();
    Ok(CalendarFeatures {
        is_holiday: table.is_holiday(city, date)?,
        is_weekend: matches!(weekday, Weekday::Sat | Weekday::Sun),
        day_of_week: weekday.num_days_from_monday(),
        month: date.month0(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn noon(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    #[test]
    fn christmas_everywhere() {
        let table = HolidayTable::embedded();
        for city in [City::PaloAlto, City::Boulder, City::Dundee, City::Perth] {
            assert!(
                calendar_of(noon(2018, 12, 25), city, &table).unwrap().is_holiday,
                "{city}"
            );
        }
    }

    #[test]
    fn independence_day_is_us_only() {
        let table = HolidayTable::embedded();
        assert!(calendar_of(noon(2019, 7, 4), City::Boulder, &table).unwrap().is_holiday);
        assert!(!calendar_of(noon(2019, 7, 4), City::Dundee, &table).unwrap().is_holiday);
    }

    #[test]
    fn wednesday_in_june() {
        let table = HolidayTable::embedded();
        let c = calendar_of(noon(2018, 6, 6), City::Boulder, &table).unwrap();
        assert!(!c.is_weekend);
        assert_eq!(c.day_of_week, 2);
        let row = c.to_row();
        assert_eq!(row[2..9].iter().sum::<f64>(), 1.0);
        assert_eq!(row[9..].iter().sum::<f64>(), 1.0);
        assert_eq!(row[2 + 2], 1.0);
        assert_eq!(row[9 + 5], 1.0);
    }

    #[test]
    fn local_calendar_follows_city_zone() {
        let table = HolidayTable::embedded();
        // 2018-06-09 03:00Z is Friday evening in Denver, Saturday in Perth
        let t = Utc.with_ymd_and_hms(2018, 6, 9, 3, 0, 0).unwrap();
        assert!(!calendar_of(t, City::Boulder, &table).unwrap().is_weekend);
        assert!(calendar_of(t, City::Perth, &table).unwrap().is_weekend);
    }

    #[test]
    fn year_outside_table_is_an_error() {
        let table = HolidayTable::embedded();
        assert!(matches!(
            calendar_of(noon(2030, 1, 1), City::Dundee, &table),
            Err(FeatureError::YearOutOfRange { .. })
        ));
        assert!(calendar_of(noon(2030, 1, 1), City::Custom, &table).is_ok());
    }

    #[test]
    fn tables_cover_dataset_ranges() {
        let table = HolidayTable::embedded();
        let cover = |c, lo, hi| {
            let (a, b) = table.year_range(c).unwrap();
            a <= lo && b >= hi
        };
        assert!(cover(City::PaloAlto, 2011, 2020));
        assert!(cover(City::Boulder, 2018, 2021));
        assert!(cover(City::Dundee, 2017, 2018));
        assert!(cover(City::Perth, 2016, 2019));
    }
}
