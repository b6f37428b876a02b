//! Feature vectors for the activation classifier.
//!
//! Every prediction point (day, slot) gets a vector made of fixed-order
//! blocks: lagged activation states, calendar one-hots, time since the last
//! active day, season, one "is missing" flag per lag position, and
//! multiplicative interactions between calendar blocks.

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ActivationSeries, Resolution, HOURS_PER_DAY};

/// Days of history required before the first prediction point.
pub const WARMUP_DAYS: usize = 7;
const HOURLY_LAGS: usize = 24;
const DAILY_LAGS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Categorical {
    HourOfDay,
    DayOfWeek,
    IsWeekend,
    LastOperation,
    Season,
}

impl Categorical {
    pub fn width(self) -> usize {
        match self {
            Categorical::HourOfDay => 24,
            Categorical::DayOfWeek => 7,
            Categorical::IsWeekend => 1,
            Categorical::LastOperation => 7,
            Categorical::Season => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Categorical::HourOfDay => "hour_of_day",
            Categorical::DayOfWeek => "day_of_week",
            Categorical::IsWeekend => "is_weekend",
            Categorical::LastOperation => "last_operation",
            Categorical::Season => "season",
        }
    }

    fn available(self, resolution: Resolution) -> bool {
        !(self == Categorical::HourOfDay && resolution == Resolution::Daily)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Block {
    Lags { width: usize },
    Categorical { feature: Categorical },
    LagMissing { width: usize },
    Interaction { left: Categorical, right: Categorical },
}

impl Block {
    pub fn width(&self) -> usize {
        match *self {
            Block::Lags { width } | Block::LagMissing { width } => width,
            Block::Categorical { feature } => feature.width(),
            Block::Interaction { left, right } => left.width() * right.width(),
        }
    }

    fn name(&self) -> String {
        match *self {
            Block::Lags { width } => format!("last{width}"),
            Block::Categorical { feature } => feature.name().to_string(),
            Block::LagMissing { width } => format!("missing{width}"),
            Block::Interaction { left, right } => format!("{}*{}", left.name(), right.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Interaction pairs; `None` selects the per-resolution default.
    pub interactions: Option<Vec<(Categorical, Categorical)>>,
    /// Feed the model's own predictions back as today's lag states at
    /// forecast time instead of observed history.
    pub recursive: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            interactions: None,
            recursive: false,
        }
    }
}

pub fn default_interactions(resolution: Resolution) -> Vec<(Categorical, Categorical)> {
    match resolution {
        Resolution::Hourly | Resolution::Group => vec![
            (Categorical::HourOfDay, Categorical::DayOfWeek),
            (Categorical::IsWeekend, Categorical::HourOfDay),
        ],
        Resolution::Daily => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub resolution: Resolution,
    pub blocks: Vec<Block>,
    pub recursive: bool,
}

impl FeatureLayout {
    pub fn new(resolution: Resolution, config: &FeatureConfig) -> Result<Self> {
        let lags = match resolution {
            Resolution::Daily => DAILY_LAGS,
            _ => HOURLY_LAGS,
        };
        let mut blocks = vec![Block::Lags { width: lags }];
        for feature in [
            Categorical::HourOfDay,
            Categorical::DayOfWeek,
            Categorical::IsWeekend,
            Categorical::LastOperation,
            Categorical::Season,
        ] {
            if feature.available(resolution) {
                blocks.push(Block::Categorical { feature });
            }
        }
        blocks.push(Block::LagMissing { width: lags });
        let pairs = config
            .interactions
            .clone()
            .unwrap_or_else(|| default_interactions(resolution));
        for (left, right) in pairs {
            if !left.available(resolution) || !right.available(resolution) {
                return Err(Error::Argument(format!(
                    "interaction {}*{} uses a block absent at {resolution} resolution",
                    left.name(),
                    right.name()
                )));
            }
            blocks.push(Block::Interaction { left, right });
        }
        Ok(FeatureLayout {
            resolution,
            blocks,
            recursive: config.recursive,
        })
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Offset of the first column of `block` within a feature vector.
    pub fn offset_of(&self, block: &Block) -> Option<usize> {
        let mut off = 0;
        for b in &self.blocks {
            if b == block {
                return Some(off);
            }
            off += b.width();
        }
        None
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for b in &self.blocks {
            let base = b.name();
            for i in 0..b.width() {
                names.push(format!("{base}[{i}]"));
            }
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub day: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub keys: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            width: self.width,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            keys: indices.iter().map(|&i| self.keys[i]).collect(),
        }
    }
}

pub fn season_index(date: NaiveDate) -> usize {
    match date.month() {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

/// One-hot position for "n days since the last active day", n in 1..=6 or >= 7.
pub fn last_operation_index(x: &ActivationSeries, day: usize) -> usize {
    (1..=6)
        .find(|&n| day >= n && x.is_active_day(day - n))
        .map_or(6, |n| n - 1)
}

fn categorical_values(x: &ActivationSeries, day: usize, slot: usize, feature: Categorical) -> Vec<f64> {
    let mut v = vec![0.0; feature.width()];
    let date = x.date(day);
    let dow = x.weekday(day);
    match feature {
        Categorical::HourOfDay => v[x.slot_first_hour(slot)] = 1.0,
        Categorical::DayOfWeek => v[dow] = 1.0,
        Categorical::IsWeekend => v[0] = if dow >= 5 { 1.0 } else { 0.0 },
        Categorical::LastOperation => v[last_operation_index(x, day)] = 1.0,
        Categorical::Season => v[season_index(date)] = 1.0,
    }
    v
}

/// Feature vector for prediction point (`day`, `slot`) using observed history.
pub fn extract(x: &ActivationSeries, day: usize, slot: usize, layout: &FeatureLayout) -> Result<Vec<f64>> {
    extract_with_today(x, day, slot, layout, None)
}

/// As [`extract`], but lag positions falling on `day` itself read from
/// `today` (predicted states for slots before `slot`) when given.
pub fn extract_with_today(
    x: &ActivationSeries,
    day: usize,
    slot: usize,
    layout: &FeatureLayout,
    today: Option<&[u8]>,
) -> Result<Vec<f64>> {
    if layout.resolution != x.resolution {
        return Err(Error::Argument(format!(
            "layout is {} but series is {}",
            layout.resolution, x.resolution
        )));
    }
    let spd = x.slots_per_day();
    if slot >= spd {
        return Err(Error::Argument(format!(
            "slot {slot} out of range for {} resolution ({spd} slots)",
            x.resolution
        )));
    }
    if day < WARMUP_DAYS || day >= x.len() {
        return Err(Error::InsufficientData(format!(
            "day {day} needs {WARMUP_DAYS} days of history within a {}-day series",
            x.len()
        )));
    }

    // (value, missing) for each lag position, oldest first.
    let lags: Vec<(f64, bool)> = match x.resolution {
        Resolution::Daily => (1..=DAILY_LAGS)
            .rev()
            .map(|n| {
                let d = day - n;
                let miss = x.missing[d][0];
                (if miss { 0.0 } else { x.days[d][0] as f64 }, miss)
            })
            .collect(),
        _ => {
            let here = (day * spd + slot) as i64;
            (1..=HOURLY_LAGS as i64)
                .rev()
                .map(|n| {
                    let g = here - n;
                    if g < 0 {
                        return (0.0, true);
                    }
                    let (d, s) = (g as usize / spd, g as usize % spd);
                    if d == day {
                        if let Some(t) = today {
                            return (t[s] as f64, false);
                        }
                    }
                    let miss = x.missing[d][s];
                    (if miss { 0.0 } else { x.days[d][s] as f64 }, miss)
                })
                .collect()
        }
    };

    let mut out = Vec::with_capacity(layout.width());
    for block in &layout.blocks {
        match *block {
            Block::Lags { .. } => out.extend(lags.iter().map(|&(v, _)| v)),
            Block::LagMissing { .. } => out.extend(lags.iter().map(|&(_, m)| if m { 1.0 } else { 0.0 })),
            Block::Categorical { feature } => out.extend(categorical_values(x, day, slot, feature)),
            Block::Interaction { left, right } => {
                let l = categorical_values(x, day, slot, left);
                let r = categorical_values(x, day, slot, right);
                for a in &l {
                    out.extend(r.iter().map(|b| a * b));
                }
            }
        }
    }
    debug_assert_eq!(out.len(), layout.width());
    Ok(out)
}

/// One row per (day, slot) after the warm-up, in chronological order.
pub fn build_matrix(x: &ActivationSeries, layout: &FeatureLayout) -> Result<FeatureMatrix> {
    if x.len() <= WARMUP_DAYS {
        return Err(Error::InsufficientData(format!(
            "{} days leave nothing after the {WARMUP_DAYS}-day warm-up",
            x.len()
        )));
    }
    let spd = x.slots_per_day();
    let per_day: Vec<Vec<(Vec<f64>, u8, RowKey)>> = (WARMUP_DAYS..x.len())
        .into_par_iter()
        .map(|day| {
            (0..spd)
                .map(|slot| {
                    let row = extract(x, day, slot, layout)?;
                    Ok((row, x.days[day][slot], RowKey { day, slot }))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = per_day.iter().map(Vec::len).sum();
    let mut m = FeatureMatrix {
        width: layout.width(),
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        keys: Vec::with_capacity(n),
    };
    for (row, y, key) in per_day.into_iter().flatten() {
        m.rows.push(row);
        m.labels.push(y);
        m.keys.push(key);
    }
    Ok(m)
}

/// Hours of day covered by a slot at the series' resolution.
pub fn slot_hours(x: &ActivationSeries, slot: usize) -> Vec<usize> {
    match x.resolution {
        Resolution::Hourly => vec![slot],
        Resolution::Group => x.group_spec.as_ref().expect("group spec").groups()[slot].clone(),
        Resolution::Daily => (0..HOURS_PER_DAY).collect(),
    }
}
