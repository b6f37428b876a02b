//! Loading of device readings and market data, gap filling, and aggregation
//! of raw readings into hourly, group and daily activation series.
//!
//! Readings are 15-minute average power values in watts. Observation gaps are
//! filled with the inactive value 0 and flagged in a parallel mask so that
//! downstream feature extraction can emit "is missing" indicators.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUARTERS_PER_HOUR: usize = 4;
pub const HOURS_PER_DAY: usize = 24;
pub const QUARTERS_PER_DAY: usize = QUARTERS_PER_HOUR * HOURS_PER_DAY;
pub const DEFAULT_THRESHOLD_WATTS: f64 = 5.0;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn quarter_stride() -> Duration {
    Duration::minutes(15)
}

/// Day of week with Monday = 0.
pub fn weekday_index(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(raw, "%m/%d/%Y"))
        .ok()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Hourly,
    Group,
    Daily,
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Resolution::Hourly => "hourly",
            Resolution::Group => "group",
            Resolution::Daily => "daily",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hourly" => Ok(Resolution::Hourly),
            "group" => Ok(Resolution::Group),
            "daily" => Ok(Resolution::Daily),
            other => Err(Error::Argument(format!("unknown resolution `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Readings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingSeries {
    pub device_id: String,
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl ReadingSeries {
    pub fn new(
        device_id: impl Into<String>,
        start: NaiveDateTime,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != missing.len() {
            return Err(Error::Validation(format!(
                "values ({}) and missing mask ({}) differ in length",
                values.len(),
                missing.len()
            )));
        }
        if start.minute() % 15 != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::Validation(format!(
                "start {start} is not aligned to the 15-minute grid"
            )));
        }
        for (i, (&v, &m)) in values.iter().zip(&missing).enumerate() {
            if !m && !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("reading {i} has invalid power {v}")));
            }
        }
        Ok(ReadingSeries {
            device_id: device_id.into(),
            start,
            values,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + quarter_stride() * i as i32
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Align the series to whole local days. Quarters before `start` on the
    /// first day are padded as missing; a trailing partial day is dropped.
    pub fn day_grid(&self) -> Result<DayGrid> {
        let first_day = self.start.date();
        let lead = (self.start.hour() as usize) * QUARTERS_PER_HOUR + self.start.minute() as usize / 15;
        let total = lead + self.values.len();
        let days = total / QUARTERS_PER_DAY;
        if days == 0 {
            return Err(Error::InsufficientData(format!(
                "series covers {} readings, less than one full day",
                self.values.len()
            )));
        }
        let n = days * QUARTERS_PER_DAY;
        let mut values = vec![0.0; n];
        let mut missing = vec![true; n];
        for i in 0..self.values.len() {
            let q = lead + i;
            if q >= n {
                break;
            }
            if !self.missing[i] {
                values[q] = self.values[i];
                missing[q] = false;
            }
        }
        Ok(DayGrid {
            first_day,
            values,
            missing,
        })
    }
}

/// Readings laid out on whole days, 96 quarters per day, gaps zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct DayGrid {
    pub first_day: NaiveDate,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl DayGrid {
    pub fn days(&self) -> usize {
        self.values.len() / QUARTERS_PER_DAY
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    pub fn weekday(&self, day: usize) -> usize {
        weekday_index(self.date(day))
    }
}

pub fn load_readings(path: impl AsRef<Path>, expected_stride: Duration) -> Result<ReadingSeries> {
    let path = path.as_ref();
    load_readings_from_reader(open(path)?, expected_stride)
}

pub fn load_readings_from_reader<R: Read>(reader: R, expected_stride: Duration) -> Result<ReadingSeries> {
    if expected_stride != quarter_stride() {
        return Err(Error::Argument(format!(
            "only a 15-minute stride is supported, got {} s",
            expected_stride.num_seconds()
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ts_col = header_index(&headers, "timestamp")?;
    let dev_col = header_index(&headers, "device_id")?;
    let watts_col = header_index(&headers, "watts")?;

    let mut device_id: Option<String> = None;
    let mut rows: BTreeMap<NaiveDateTime, Option<f64>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Parse {
            row,
            message: format!("malformed timestamp `{}`", field(ts_col)),
        })?;
        let dev = field(dev_col).to_string();
        match &device_id {
            None => device_id = Some(dev),
            Some(d) if *d != dev => {
                return Err(Error::Validation(format!(
                    "row {row}: device `{dev}` differs from `{d}`; one device per file"
                )))
            }
            Some(_) => {}
        }
        let raw = field(watts_col);
        let watts = if raw.is_empty() {
            None
        } else {
            let w: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("malformed watts `{raw}`"),
            })?;
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!("row {row}: negative power {w}")));
            }
            Some(w)
        };
        if rows.insert(ts, watts).is_some() {
            return Err(Error::Conflict(format!("duplicate timestamp {ts} at row {row}")));
        }
    }

    let (&start, _) = rows
        .iter()
        .next()
        .ok_or_else(|| Error::InsufficientData("no readings".into()))?;
    let (&end, _) = rows.iter().next_back().expect("non-empty");
    let stride_min = expected_stride.num_minutes();
    let len = ((end - start).num_minutes() / stride_min) as usize + 1;
    let mut values = vec![0.0; len];
    let mut missing = vec![true; len];
    for (ts, watts) in rows {
        let offset = (ts - start).num_minutes();
        if offset % stride_min != 0 || (ts - start).num_seconds() % 60 != 0 {
            return Err(Error::Validation(format!(
                "timestamp {ts} is off the {stride_min}-minute grid"
            )));
        }
        if let Some(w) = watts {
            let i = (offset / stride_min) as usize;
            values[i] = w;
            missing[i] = false;
        }
    }
    ReadingSeries::new(device_id.unwrap_or_default(), start, values, missing)
}

pub fn write_readings(path: impl AsRef<Path>, series: &ReadingSeries) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_readings_to(file, series)
}

pub fn write_readings_to<W: Write>(writer: W, series: &ReadingSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "device_id", "watts"])?;
    for i in 0..series.len() {
        let ts = series.timestamp(i).format("%Y-%m-%dT%H:%M:%S").to_string();
        let watts = if series.missing[i] {
            String::new()
        } else {
            series.values[i].to_string()
        };
        w.write_record([ts.as_str(), series.device_id.as_str(), watts.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<readings writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Market
// ---------------------------------------------------------------------------

pub const MARKET_COLUMNS: [&str; 7] = [
    "Date",
    "Hour",
    "Up-regulation Volume",
    "Down-regulation Volume",
    "Up-regulation Price",
    "Down-Regulation price",
    "spot price",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRecord {
    pub timestamp: NaiveDateTime,
    pub spot_price: f64,
    /// MWh, >= 0.
    pub up_volume: f64,
    /// MWh, <= 0.
    pub down_volume: f64,
    pub up_price: f64,
    pub down_price: f64,
}

impl MarketRecord {
    /// Signed imbalance: positive when up-regulation is needed.
    pub fn imbalance(&self) -> f64 {
        self.up_volume - self.down_volume.abs()
    }

    fn validate(&self) -> Result<()> {
        let vals = [
            self.spot_price,
            self.up_volume,
            self.down_volume,
            self.up_price,
            self.down_price,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{}: non-finite value", self.timestamp)));
        }
        if self.up_volume < 0.0 {
            return Err(Error::Validation(format!(
                "{}: up-regulation volume {} is negative",
                self.timestamp, self.up_volume
            )));
        }
        if self.down_volume > 0.0 {
            return Err(Error::Validation(format!(
                "{}: down-regulation volume {} is positive",
                self.timestamp, self.down_volume
            )));
        }
        if self.up_volume != 0.0 && self.down_volume != 0.0 {
            return Err(Error::Invariant(format!(
                "{}: both up ({}) and down ({}) regulation volumes are nonzero",
                self.timestamp, self.up_volume, self.down_volume
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub records: Vec<MarketRecord>,
}

impl MarketSeries {
    pub fn new(records: Vec<MarketRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
        }
        for w in records.windows(2) {
            if w[1].timestamp - w[0].timestamp != Duration::hours(1) {
                return Err(Error::Validation(format!(
                    "market hours not contiguous between {} and {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        Ok(MarketSeries { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let first = self.records.first()?.timestamp;
        let delta = ts - first;
        if delta < Duration::zero() || delta.num_seconds() % 3600 != 0 {
            return None;
        }
        let i = delta.num_hours() as usize;
        (i < self.records.len()).then_some(i)
    }

    /// The `k` hourly records starting at `start`.
    pub fn window(&self, start: NaiveDateTime, k: usize) -> Result<&[MarketRecord]> {
        let i = self
            .index_of(start)
            .ok_or_else(|| Error::Coverage(format!("market data does not contain hour {start}")))?;
        if i + k > self.records.len() {
            return Err(Error::Coverage(format!(
                "market data ends before {}",
                start + Duration::hours(k as i64 - 1)
            )));
        }
        Ok(&self.records[i..i + k])
    }
}

pub fn load_market(path: impl AsRef<Path>) -> Result<MarketSeries> {
    let path = path.as_ref();
    load_market_from_reader(open(path)?)
}

pub fn load_market_from_reader<R: Read>(reader: R) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = MARKET_COLUMNS
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<_>>()?;

    let mut by_time: BTreeMap<NaiveDateTime, MarketRecord> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let field = |c: usize| record.get(cols[c]).unwrap_or("");
        let date = parse_date(field(0)).ok_or_else(|| Error::Parse {
            row,
            message: format!("malformed date `{}`", field(0)),
        })?;
        let hour: u32 = field(1).parse().ok().filter(|h| *h < 24).ok_or_else(|| Error::Parse {
            row,
            message: format!("malformed hour `{}`", field(1)),
        })?;
        let num = |c: usize| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("malformed {} `{}`", MARKET_COLUMNS[c], field(c)),
            })
        };
        let timestamp = date.and_hms_opt(hour, 0, 0).expect("hour < 24");
        let rec = MarketRecord {
            timestamp,
            up_volume: num(2)?,
            down_volume: num(3)?,
            up_price: num(4)?,
            down_price: num(5)?,
            spot_price: num(6)?,
        };
        rec.validate().map_err(|e| match e {
            Error::Invariant(m) => Error::Invariant(format!("row {row}: {m}")),
            Error::Validation(m) => Error::Validation(format!("row {row}: {m}")),
            other => other,
        })?;
        if by_time.insert(timestamp, rec).is_some() {
            return Err(Error::Conflict(format!(
                "duplicate market hour {timestamp} at row {row}"
            )));
        }
    }
    MarketSeries::new(by_time.into_values().collect())
}

pub fn write_market(path: impl AsRef<Path>, market: &MarketSeries) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_market_to(file, market)
}

pub fn write_market_to<W: Write>(writer: W, market: &MarketSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MARKET_COLUMNS)?;
    for r in &market.records {
        w.write_record([
            r.timestamp.format("%Y-%m-%d").to_string(),
            r.timestamp.hour().to_string(),
            r.up_volume.to_string(),
            r.down_volume.to_string(),
            r.up_price.to_string(),
            r.down_price.to_string(),
            r.spot_price.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<market writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Activation series
// ---------------------------------------------------------------------------

/// Ordered partition of the hours 0..23 into `m` groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    groups: Vec<Vec<usize>>,
}

impl GroupSpec {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Argument("group spec has no groups".into()));
        }
        let mut seen = [false; HOURS_PER_DAY];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Argument("group spec contains an empty group".into()));
            }
            for &h in g {
                if h >= HOURS_PER_DAY {
                    return Err(Error::Argument(format!("hour {h} out of range 0..23")));
                }
                if seen[h] {
                    return Err(Error::Argument(format!("hour {h} appears in two groups")));
                }
                seen[h] = true;
            }
        }
        if let Some(h) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("group spec does not cover hour {h}")));
        }
        let groups = groups
            .into_iter()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        Ok(GroupSpec { groups })
    }

    /// Contiguous groups starting at each of `starts` (the first must be 0).
    pub fn contiguous(starts: &[usize]) -> Result<Self> {
        if starts.first() != Some(&0) {
            return Err(Error::Argument("contiguous groups must start at hour 0".into()));
        }
        let mut groups = Vec::with_capacity(starts.len());
        for (i, &s) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(HOURS_PER_DAY);
            if end <= s {
                return Err(Error::Argument("group starts must be increasing".into()));
            }
            groups.push((s..end).collect());
        }
        GroupSpec::new(groups)
    }

    pub fn whole_day() -> Self {
        GroupSpec {
            groups: vec![(0..HOURS_PER_DAY).collect()],
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of_hour(&self, hour: usize) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(&hour))
            .expect("group spec covers every hour")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOptions {
    pub threshold_watts: f64,
    /// Mark every hour with a reading at or above threshold instead of only
    /// the switch-on hour.
    pub label_operating_hours: bool,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            threshold_watts: DEFAULT_THRESHOLD_WATTS,
            label_operating_hours: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSeries {
    pub resolution: Resolution,
    pub group_spec: Option<GroupSpec>,
    pub first_day: NaiveDate,
    pub days: Vec<Vec<u8>>,
    pub missing: Vec<Vec<bool>>,
    /// Raw readings missing per day; carried unchanged through aggregation.
    pub missing_readings: Vec<usize>,
}

impl ActivationSeries {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn slots_per_day(&self) -> usize {
        match self.resolution {
            Resolution::Hourly => HOURS_PER_DAY,
            Resolution::Group => self.group_spec.as_ref().map_or(0, GroupSpec::len),
            Resolution::Daily => 1,
        }
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    pub fn weekday(&self, day: usize) -> usize {
        weekday_index(self.date(day))
    }

    pub fn is_active_day(&self, day: usize) -> bool {
        self.days[day].iter().any(|&v| v == 1)
    }

    /// First hour of each slot, used to place slot-level features and
    /// predictions on the clock.
    pub fn slot_first_hour(&self, slot: usize) -> usize {
        match self.resolution {
            Resolution::Hourly => slot,
            Resolution::Group => self.group_spec.as_ref().expect("group spec")[slot][0],
            Resolution::Daily => 0,
        }
    }

    pub fn total_missing_readings(&self) -> usize {
        self.missing_readings.iter().sum()
    }

    pub fn positive_count(&self) -> usize {
        self.days.iter().flatten().filter(|&&v| v == 1).count()
    }

    /// Keep days `range` (used for splits and fold construction).
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> ActivationSeries {
        ActivationSeries {
            resolution: self.resolution,
            group_spec: self.group_spec.clone(),
            first_day: self.date(range.start),
            days: self.days[range.clone()].to_vec(),
            missing: self.missing[range.clone()].to_vec(),
            missing_readings: self.missing_readings[range].to_vec(),
        }
    }

    /// Chronological split at `floor(days * train_fraction)`.
    pub fn split(&self, train_fraction: f64) -> Result<(ActivationSeries, ActivationSeries)> {
        split(self, train_fraction)
    }
}

impl std::ops::Index<usize> for GroupSpec {
    type Output = Vec<usize>;

    fn index(&self, i: usize) -> &Vec<usize> {
        &self.groups[i]
    }
}

pub fn to_hourly(r: &ReadingSeries, threshold_watts: f64) -> Result<ActivationSeries> {
    to_hourly_with(
        r,
        &LabelOptions {
            threshold_watts,
            label_operating_hours: false,
        },
    )
}

pub fn to_hourly_with(r: &ReadingSeries, opts: &LabelOptions) -> Result<ActivationSeries> {
    if !(opts.threshold_watts > 0.0) {
        return Err(Error::Argument(format!(
            "activation threshold must be positive, got {}",
            opts.threshold_watts
        )));
    }
    let grid = r.day_grid()?;
    Ok(grid_to_hourly(&grid, opts))
}

pub(crate) fn grid_to_hourly(grid: &DayGrid, opts: &LabelOptions) -> ActivationSeries {
    let thr = opts.threshold_watts;
    let n_days = grid.days();
    let mut days = Vec::with_capacity(n_days);
    let mut missing = Vec::with_capacity(n_days);
    let mut missing_readings = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let mut labels = vec![0u8; HOURS_PER_DAY];
        let mut miss = vec![false; HOURS_PER_DAY];
        for (h, (label, m)) in labels.iter_mut().zip(miss.iter_mut()).enumerate() {
            let base = d * QUARTERS_PER_DAY + h * QUARTERS_PER_HOUR;
            let mut hit = false;
            let mut all_missing = true;
            for q in base..base + QUARTERS_PER_HOUR {
                all_missing &= grid.missing[q];
                let on = grid.values[q] >= thr;
                let prev = if q == 0 { 0.0 } else { grid.values[q - 1] };
                if on && (opts.label_operating_hours || prev < thr) {
                    hit = true;
                }
            }
            *label = u8::from(hit);
            *m = all_missing;
        }
        let start = d * QUARTERS_PER_DAY;
        missing_readings.push(
            grid.missing[start..start + QUARTERS_PER_DAY]
                .iter()
                .filter(|&&m| m)
                .count(),
        );
        days.push(labels);
        missing.push(miss);
    }
    ActivationSeries {
        resolution: Resolution::Hourly,
        group_spec: None,
        first_day: grid.first_day,
        days,
        missing,
        missing_readings,
    }
}

fn aggregate(h: &ActivationSeries, spec: &GroupSpec) -> Result<(Vec<Vec<u8>>, Vec<Vec<bool>>)> {
    if h.resolution != Resolution::Hourly {
        return Err(Error::Argument(format!(
            "expected an hourly series, got {}",
            h.resolution
        )));
    }
    let mut days = Vec::with_capacity(h.len());
    let mut missing = Vec::with_capacity(h.len());
    for (day, miss) in h.days.iter().zip(&h.missing) {
        days.push(
            spec.groups()
                .iter()
                .map(|g| u8::from(g.iter().any(|&hr| day[hr] == 1)))
                .collect(),
        );
        missing.push(spec.groups().iter().map(|g| g.iter().all(|&hr| miss[hr])).collect());
    }
    Ok((days, missing))
}

pub fn to_group(h: &ActivationSeries, spec: &GroupSpec) -> Result<ActivationSeries> {
    let spec = GroupSpec::new(spec.groups.clone())?;
    let (days, missing) = aggregate(h, &spec)?;
    Ok(ActivationSeries {
        resolution: Resolution::Group,
        group_spec: Some(spec),
        first_day: h.first_day,
        days,
        missing,
        missing_readings: h.missing_readings.clone(),
    })
}

pub fn to_daily(h: &ActivationSeries) -> Result<ActivationSeries> {
    let (days, missing) = aggregate(h, &GroupSpec::whole_day())?;
    Ok(ActivationSeries {
        resolution: Resolution::Daily,
        group_spec: None,
        first_day: h.first_day,
        days,
        missing,
        missing_readings: h.missing_readings.clone(),
    })
}

/// Per-hour activation frequency over the non-missing days of an hourly series.
pub fn hourly_frequencies(h: &ActivationSeries) -> Result<[f64; HOURS_PER_DAY]> {
    if h.resolution != Resolution::Hourly {
        return Err(Error::Argument("expected an hourly series".into()));
    }
    let mut freq = [0.0; HOURS_PER_DAY];
    for (hr, f) in freq.iter_mut().enumerate() {
        let (mut on, mut seen) = (0usize, 0usize);
        for (day, miss) in h.days.iter().zip(&h.missing) {
            if !miss[hr] {
                seen += 1;
                on += day[hr] as usize;
            }
        }
        *f = if seen == 0 { 0.0 } else { on as f64 / seen as f64 };
    }
    Ok(freq)
}

fn sse(prefix: &[f64], prefix_sq: &[f64], i: usize, j: usize) -> f64 {
    let n = (j - i) as f64;
    let s = prefix[j] - prefix[i];
    let sq = prefix_sq[j] - prefix_sq[i];
    (sq - s * s / n).max(0.0)
}

/// Within-group sum of squared deviations of `freq` for a partition.
pub fn partition_cost(freq: &[f64], spec: &GroupSpec) -> f64 {
    spec.groups()
        .iter()
        .map(|g| {
            let mean = g.iter().map(|&h| freq[h]).sum::<f64>() / g.len() as f64;
            g.iter().map(|&h| (freq[h] - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Contiguous partition of the 24 hours into `m` groups minimizing the
/// within-group variance of activation frequency. Equal-cost partitions are
/// broken towards balanced group sizes.
pub fn derive_groups(h: &ActivationSeries, m: usize) -> Result<GroupSpec> {
    if !(1..=HOURS_PER_DAY).contains(&m) {
        return Err(Error::Argument(format!("group count {m} outside 1..=24")));
    }
    let freq = hourly_frequencies(h)?;
    derive_groups_from_frequencies(&freq, m)
}

pub fn derive_groups_from_frequencies(freq: &[f64], m: usize) -> Result<GroupSpec> {
    let n = freq.len();
    if n != HOURS_PER_DAY || !(1..=n).contains(&m) {
        return Err(Error::Argument(format!(
            "need 24 frequencies and 1 <= m <= 24, got {n} and {m}"
        )));
    }
    const TOL: f64 = 1e-12;
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + freq[i];
        prefix_sq[i + 1] = prefix_sq[i] + freq[i] * freq[i];
    }
    // best[g][j]: (cost, balance, split) for the first j hours in g groups.
    let inf = (f64::INFINITY, usize::MAX, 0usize);
    let mut best = vec![vec![inf; n + 1]; m + 1];
    best[0][0] = (0.0, 0, 0);
    for g in 1..=m {
        for j in g..=n {
            let mut cur = inf;
            for i in (g - 1)..j {
                let (pc, pb, _) = best[g - 1][i];
                if !pc.is_finite() {
                    continue;
                }
                let c = pc + sse(&prefix, &prefix_sq, i, j);
                let b = pb + (j - i) * (j - i);
                let better = c < cur.0 - TOL || ((c - cur.0).abs() <= TOL && b < cur.1);
                if better {
                    cur = (c, b, i);
                }
            }
            best[g][j] = cur;
        }
    }
    let mut starts = Vec::with_capacity(m);
    let mut j = n;
    for g in (1..=m).rev() {
        let i = best[g][j].2;
        starts.push(i);
        j = i;
    }
    starts.reverse();
    GroupSpec::contiguous(&starts)
}

pub fn split(x: &ActivationSeries, train_fraction: f64) -> Result<(ActivationSeries, ActivationSeries)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let d = x.len();
    if d < 2 {
        return Err(Error::InsufficientData(format!("cannot split {d} day(s)")));
    }
    let cut = split_point(d, train_fraction);
    Ok((x.slice_days(0..cut), x.slice_days(cut..d)))
}

/// Number of training days for a chronological split, clamped so that both
/// sides are non-empty.
pub fn split_point(days: usize, train_fraction: f64) -> usize {
    let raw = (days as f64 * train_fraction + 1e-9).floor() as usize;
    raw.clamp(1, days.saturating_sub(1).max(1))
}
