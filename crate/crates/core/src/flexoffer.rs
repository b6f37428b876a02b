//! Micro flex-offers: a predicted activation's energy profile together with
//! the window of hours in which it may start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ActivationSeries, GroupSpec, Resolution, HOURS_PER_DAY};
use crate::psm::EnergyProfile;

pub const MAX_TAU: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub day: usize,
    pub slot: usize,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexOffer {
    /// Hour index into the scheduling horizon; also the forecast start.
    pub earliest_start: usize,
    pub latest_start: usize,
    /// Energy per hour once started.
    pub profile: Vec<f64>,
    pub origin: Origin,
}

impl FlexOffer {
    pub fn new(anchor: usize, tau: usize, profile: Vec<f64>, origin: Origin) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::Argument("flex-offer profile is empty".into()));
        }
        if profile.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::Argument(
                "flex-offer profile has a negative or non-finite unit".into(),
            ));
        }
        Ok(FlexOffer {
            earliest_start: anchor,
            latest_start: anchor + tau,
            profile,
            origin,
        })
    }

    pub fn anchor(&self) -> usize {
        self.earliest_start
    }

    pub fn tau(&self) -> usize {
        self.latest_start - self.earliest_start
    }

    pub fn duration(&self) -> usize {
        self.profile.len()
    }

    pub fn energy(&self) -> f64 {
        self.profile.iter().sum()
    }

    /// Same offer with its profile multiplied by `factor` (unit conversion).
    pub fn scaled(&self, factor: f64) -> FlexOffer {
        FlexOffer {
            profile: self.profile.iter().map(|e| e * factor).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub origin: Origin,
    pub weekday: usize,
    pub probability: f64,
    pub profile: EnergyProfile,
}

/// Historical switch-on counts per hour, used to place group and daily
/// predictions on the clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorTable {
    pub hour_counts: Vec<usize>,
    /// `weekday_hour_counts[weekday][hour]`.
    pub weekday_hour_counts: Vec<Vec<usize>>,
}

fn argmax_lowest(counts: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (h, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|b| c > counts[b]) {
            best = Some(h);
        }
    }
    best
}

impl AnchorTable {
    pub fn from_hourly(h: &ActivationSeries) -> Result<Self> {
        if h.resolution != Resolution::Hourly {
            return Err(Error::Argument(format!(
                "anchor table needs hourly labels, got {}",
                h.resolution
            )));
        }
        let mut t = AnchorTable {
            hour_counts: vec![0; HOURS_PER_DAY],
            weekday_hour_counts: vec![vec![0; HOURS_PER_DAY]; 7],
        };
        for d in 0..h.len() {
            let w = h.weekday(d);
            for hr in 0..HOURS_PER_DAY {
                if h.days[d][hr] == 1 && !h.missing[d][hr] {
                    t.hour_counts[hr] += 1;
                    t.weekday_hour_counts[w][hr] += 1;
                }
            }
        }
        Ok(t)
    }

    /// Start hour of a prediction. Ties go to the earliest hour.
    pub fn anchor(
        &self,
        resolution: Resolution,
        spec: Option<&GroupSpec>,
        slot: usize,
        weekday: usize,
    ) -> Result<usize> {
        match resolution {
            Resolution::Hourly => {
                if slot >= HOURS_PER_DAY {
                    return Err(Error::Argument(format!("hour {slot} out of range")));
                }
                Ok(slot)
            }
            Resolution::Group => {
                let spec = spec.ok_or_else(|| Error::Argument("group resolution needs a group spec".into()))?;
                let members = spec
                    .groups()
                    .get(slot)
                    .ok_or_else(|| Error::Argument(format!("group {slot} out of range")))?;
                let mut best = members[0];
                for &h in members {
                    if self.hour_counts[h] > self.hour_counts[best]
                        || (self.hour_counts[h] == self.hour_counts[best] && h < best)
                    {
                        best = h;
                    }
                }
                Ok(best)
            }
            Resolution::Daily => {
                if weekday >= 7 {
                    return Err(Error::Argument(format!("weekday {weekday} out of range")));
                }
                Ok(argmax_lowest(&self.weekday_hour_counts[weekday])
                    .or_else(|| argmax_lowest(&self.hour_counts))
                    .unwrap_or(0))
            }
        }
    }
}

/// Offers for every prediction with probability at or above `threshold`,
/// each free to start up to `tau` hours after its anchor. Profiles are taken
/// in hourly units; the result is ordered by (anchor, origin).
pub fn assemble(
    predictions: &[Prediction],
    threshold: f64,
    tau: usize,
    anchors: &AnchorTable,
    spec: Option<&GroupSpec>,
) -> Result<Vec<FlexOffer>> {
    if tau > MAX_TAU {
        return Err(Error::Argument(format!("tau must be within 0..={MAX_TAU}, got {tau}")));
    }
    let mut offers = Vec::new();
    for p in predictions.iter().filter(|p| p.probability >= threshold) {
        let anchor = anchors.anchor(p.origin.resolution, spec, p.origin.slot, p.weekday)?;
        offers.push(FlexOffer::new(anchor, tau, p.profile.to_hourly(), p.origin)?);
    }
    offers.sort_by_key(|o| (o.earliest_start, o.origin));
    Ok(offers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn pred(slot: usize, probability: f64, resolution: Resolution) -> Prediction {
        Prediction {
            origin: Origin {
                day: 0,
                slot,
                resolution,
            },
            weekday: 3,
            probability,
            profile: EnergyProfile::hourly(vec![1.6, 1.1]),
        }
    }

    fn empty_table() -> AnchorTable {
        AnchorTable {
            hour_counts: vec![0; 24],
            weekday_hour_counts: vec![vec![0; 24]; 7],
        }
    }

    #[test]
    fn evening_window() {
        let offers = assemble(&[pred(21, 0.9, Resolution::Hourly)], 0.5, 7, &empty_table(), None).unwrap();
        assert_eq!(offers.len(), 1);
        let o = &offers[0];
        assert_eq!((o.earliest_start, o.latest_start), (21, 28));
        // last start 04:00 the next morning, two hours of operation
        assert_eq!((o.latest_start - 24, o.duration()), (4, 2));
        assert_eq!(o.latest_start - o.earliest_start + 1, 8);
    }

    #[test]
    fn tau_zero_and_threshold() {
        let ps = [pred(5, 0.4, Resolution::Hourly), pred(3, 0.6, Resolution::Hourly)];
        let offers = assemble(&ps, 0.5, 0, &empty_table(), None).unwrap();
        assert_eq!(offers.len(), 1);
        assert_eq!(offers[0].earliest_start, offers[0].latest_start);
        assert!(assemble(&[], 0.5, 3, &empty_table(), None).unwrap().is_empty());
        assert!(assemble(&ps, 0.5, 25, &empty_table(), None).is_err());
        let both = assemble(&ps, 0.1, 2, &empty_table(), None).unwrap();
        assert_eq!(both[0].earliest_start, 3);
    }

    #[test]
    fn group_anchor_follows_frequency() {
        let first = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
        let mut days = vec![vec![0u8; 24]; 10];
        for (d, day) in days.iter_mut().enumerate() {
            day[18] = 1;
            if d % 2 == 0 {
                day[16] = 1;
            }
        }
        let h = ActivationSeries {
            resolution: Resolution::Hourly,
            group_spec: None,
            first_day: first,
            missing: vec![vec![false; 24]; 10],
            missing_readings: vec![0; 10],
            days,
        };
        let t = AnchorTable::from_hourly(&h).unwrap();
        let spec = GroupSpec::contiguous(&[0, 8, 16]).unwrap();
        assert_eq!(t.anchor(Resolution::Group, Some(&spec), 2, 0).unwrap(), 18);
        // no activity in the group: first member hour
        assert_eq!(t.anchor(Resolution::Group, Some(&spec), 0, 0).unwrap(), 0);
        assert_eq!(t.anchor(Resolution::Daily, None, 0, 2).unwrap(), 18);
    }
}
