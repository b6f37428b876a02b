//! Pattern sequence matching: operation duration and per-unit energy of a
//! predicted activation, estimated as the average of matching historical runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    DayGrid, GroupSpec, ReadingSeries, Resolution, DEFAULT_THRESHOLD_WATTS, QUARTERS_PER_DAY, QUARTERS_PER_HOUR,
};

const HOURS_PER_QUARTER: f64 = 0.25;
const WATTS_PER_KILOWATT: f64 = 1000.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyUnit {
    /// kWh per clock hour touched by the run.
    #[default]
    Hour,
    /// kWh per 15-minute reading.
    Quarter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Divide every unit by the number of runs; shorter runs add zeros.
    #[default]
    AbsentAsZero,
    /// Divide each unit by the number of runs that reach it.
    PresentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmOptions {
    pub threshold_watts: f64,
    pub unit: EnergyUnit,
    pub averaging: Averaging,
}

impl Default for PsmOptions {
    fn default() -> Self {
        PsmOptions {
            threshold_watts: DEFAULT_THRESHOLD_WATTS,
            unit: EnergyUnit::Hour,
            averaging: Averaging::AbsentAsZero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub unit: EnergyUnit,
    pub units: Vec<f64>,
}

impl EnergyProfile {
    pub fn hourly(units: Vec<f64>) -> Self {
        EnergyProfile {
            unit: EnergyUnit::Hour,
            units,
        }
    }

    pub fn duration(&self) -> usize {
        self.units.len()
    }

    pub fn total(&self) -> f64 {
        self.units.iter().sum()
    }

    /// Hourly units; quarter profiles are summed four at a time from the start.
    pub fn to_hourly(&self) -> Vec<f64> {
        match self.unit {
            EnergyUnit::Hour => self.units.clone(),
            EnergyUnit::Quarter => self.units.chunks(QUARTERS_PER_HOUR).map(|c| c.iter().sum()).collect(),
        }
    }
}

/// One historical operation: from a switch-on until power falls below threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub day: usize,
    /// Quarter of the day (0..96) of the switch-on reading.
    pub start_quarter: usize,
    pub weekday: usize,
    /// Energy per unit in kWh.
    pub units: Vec<f64>,
}

impl Run {
    pub fn start_hour(&self) -> usize {
        self.start_quarter / QUARTERS_PER_HOUR
    }
}

/// Runs found in a reading grid before quarter `end`. With `cross_midnight`
/// a run continues into the next day; otherwise it ends at midnight.
pub fn extract_runs(grid: &DayGrid, end: usize, cross_midnight: bool, opts: &PsmOptions) -> Vec<Run> {
    let end = end.min(grid.values.len());
    let thr = opts.threshold_watts;
    let on = |q: usize| !grid.missing[q] && grid.values[q] >= thr;
    let mut runs = Vec::new();
    let mut q = 0;
    while q < end {
        let prev_on = q > 0 && on(q - 1);
        if !on(q) || prev_on {
            q += 1;
            continue;
        }
        let day = q / QUARTERS_PER_DAY;
        let limit = if cross_midnight {
            end
        } else {
            ((day + 1) * QUARTERS_PER_DAY).min(end)
        };
        let mut stop = q;
        while stop < limit && on(stop) {
            stop += 1;
        }
        runs.push(Run {
            day,
            start_quarter: q % QUARTERS_PER_DAY,
            weekday: grid.weekday(day),
            units: run_units(&grid.values[q..stop], q % QUARTERS_PER_HOUR, opts.unit),
        });
        q = stop.max(q + 1);
    }
    runs
}

/// Watt readings of a run to kWh units. Watts are summed before converting
/// so integral readings give exactly rounded unit energies.
fn run_units(watts: &[f64], first_offset: usize, unit: EnergyUnit) -> Vec<f64> {
    let to_kwh = |w: f64| w * HOURS_PER_QUARTER / WATTS_PER_KILOWATT;
    match unit {
        EnergyUnit::Quarter => watts.iter().map(|&w| to_kwh(w)).collect(),
        EnergyUnit::Hour => {
            let mut out = Vec::new();
            let mut acc = 0.0;
            let mut pos = first_offset;
            for &w in watts {
                acc += w;
                pos += 1;
                if pos == QUARTERS_PER_HOUR {
                    out.push(to_kwh(acc));
                    acc = 0.0;
                    pos = 0;
                }
            }
            if pos != 0 {
                out.push(to_kwh(acc));
            }
            out
        }
    }
}

/// Average a set of run profiles. Duration is ⌈Σ len / n⌉.
pub fn average_profile(runs: &[&[f64]], averaging: Averaging, unit: EnergyUnit) -> Result<EnergyProfile> {
    let n = runs.len();
    if n == 0 {
        return Err(Error::EmptyHistory("no runs to average".into()));
    }
    let total_len: usize = runs.iter().map(|r| r.len()).sum();
    let l = total_len.div_ceil(n).max(1);
    let units = (0..l)
        .map(|j| {
            let sum: f64 = runs.iter().filter_map(|r| r.get(j)).sum();
            let count = match averaging {
                Averaging::AbsentAsZero => n,
                Averaging::PresentOnly => runs.iter().filter(|r| r.len() > j).count(),
            };
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    Ok(EnergyProfile { unit, units })
}

/// Historical runs used to answer profile queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmHistory {
    /// Runs followed across midnight (hourly and group queries).
    pub runs: Vec<Run>,
    /// Runs cut at midnight (daily queries).
    pub day_runs: Vec<Run>,
    pub unit: EnergyUnit,
    pub averaging: Averaging,
}

impl PsmHistory {
    /// History from the first `days` whole days of `grid`.
    pub fn from_grid(grid: &DayGrid, days: usize, opts: &PsmOptions) -> Self {
        let end = days * QUARTERS_PER_DAY;
        PsmHistory {
            runs: extract_runs(grid, end, true, opts),
            day_runs: extract_runs(grid, end, false, opts),
            unit: opts.unit,
            averaging: opts.averaging,
        }
    }

    pub fn from_readings(r: &ReadingSeries, days: Option<usize>, opts: &PsmOptions) -> Result<Self> {
        let grid = r.day_grid()?;
        let days = days.unwrap_or(grid.days()).min(grid.days());
        Ok(Self::from_grid(&grid, days, opts))
    }

    fn profile_of<'a>(&self, pool: &'a [Run], matches: impl Fn(&Run) -> bool, what: &str) -> Result<EnergyProfile> {
        let mut chosen: Vec<&'a [f64]> = pool.iter().filter(|r| matches(r)).map(|r| r.units.as_slice()).collect();
        if chosen.is_empty() {
            chosen = pool.iter().map(|r| r.units.as_slice()).collect();
        }
        if chosen.is_empty() {
            return Err(Error::EmptyHistory(format!("no activations in history for {what}")));
        }
        average_profile(&chosen, self.averaging, self.unit)
    }

    pub fn hourly_profile(&self, hour: usize) -> Result<EnergyProfile> {
        self.profile_of(&self.runs, |r| r.start_hour() == hour, &format!("hour {hour}"))
    }

    pub fn group_profile(&self, spec: &GroupSpec, group: usize) -> Result<EnergyProfile> {
        let members = spec
            .groups()
            .get(group)
            .ok_or_else(|| Error::Argument(format!("group {group} out of range")))?;
        self.profile_of(
            &self.runs,
            |r| members.contains(&r.start_hour()),
            &format!("group {group}"),
        )
    }

    pub fn daily_profile(&self, weekday: usize) -> Result<EnergyProfile> {
        self.profile_of(&self.day_runs, |r| r.weekday == weekday, &format!("weekday {weekday}"))
    }

    /// Profile for a prediction at `slot` of a day with `weekday`.
    pub fn profile_for(
        &self,
        resolution: Resolution,
        spec: Option<&GroupSpec>,
        slot: usize,
        weekday: usize,
    ) -> Result<EnergyProfile> {
        match resolution {
            Resolution::Hourly => self.hourly_profile(slot),
            Resolution::Group => {
                let spec = spec.ok_or_else(|| Error::Argument("group resolution needs a group spec".into()))?;
                self.group_profile(spec, slot)
            }
            Resolution::Daily => self.daily_profile(weekday),
        }
    }
}
