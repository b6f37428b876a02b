//! Seeded synthetic device readings and market series in the ingest formats.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    weekday_index, MarketRecord, MarketSeries, ReadingSeries, HOURS_PER_DAY, QUARTERS_PER_DAY, QUARTERS_PER_HOUR,
};
use crate::market::modeled_price;

pub const MIN_DEVICE_DAYS: usize = 14;
const MAX_DURATION: usize = 4;
const MIN_UNIT_KWH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsagePattern {
    /// Switch-on probability per `[weekday][hour]`.
    pub probs: Vec<Vec<f64>>,
    /// Relative weights of run durations of 1..=4 hours.
    pub duration_weights: Vec<f64>,
    /// Mean energy per operating hour, kWh.
    pub unit_energy_kwh: f64,
    /// Relative standard deviation of the per-hour energy.
    pub energy_spread: f64,
    /// 0 keeps the table, 1 replaces it by its mean.
    pub noise: f64,
    /// Per-reading probability that a gap of missing readings starts.
    pub missing_rate: f64,
}

impl UsagePattern {
    /// A washing-machine-like habit: weekday evenings and weekend late
    /// mornings, a low background rate elsewhere.
    pub fn household(noise: f64) -> Self {
        let mut probs = vec![vec![0.004; HOURS_PER_DAY]; 7];
        for (w, row) in probs.iter_mut().enumerate() {
            if w < 5 {
                row[7] = 0.08;
                row[18] = 0.35;
                row[19] = 0.15;
            } else {
                row[10] = 0.4;
                row[11] = 0.15;
                row[16] = 0.15;
            }
        }
        UsagePattern {
            probs,
            duration_weights: vec![0.2, 0.5, 0.2, 0.1],
            unit_energy_kwh: 1.0,
            energy_spread: 0.2,
            noise,
            missing_rate: 0.0,
        }
    }

    /// A strong daily routine with a fixed two-hour program: weekday evenings
    /// at 18:00 and weekend mornings at 10:00 with probability `peak`, rare
    /// use elsewhere.
    pub fn routine(peak: f64, noise: f64) -> Self {
        let mut probs = vec![vec![0.002; HOURS_PER_DAY]; 7];
        for (w, row) in probs.iter_mut().enumerate() {
            row[if w < 5 { 18 } else { 10 }] = peak;
        }
        UsagePattern {
            probs,
            duration_weights: vec![0.0, 1.0],
            unit_energy_kwh: 1.0,
            energy_spread: 0.0,
            noise,
            missing_rate: 0.0,
        }
    }

    /// One activation per week at `hour` on `weekday`, nothing else.
    pub fn weekly(weekday: usize, hour: usize) -> Self {
        let mut probs = vec![vec![0.0; HOURS_PER_DAY]; 7];
        probs[weekday][hour] = 1.0;
        UsagePattern {
            probs,
            duration_weights: vec![0.0, 1.0, 0.0, 0.0],
            unit_energy_kwh: 1.0,
            energy_spread: 0.0,
            noise: 0.0,
            missing_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != 7 || self.probs.iter().any(|r| r.len() != HOURS_PER_DAY) {
            return Err(Error::Argument("probability table must be 7 x 24".into()));
        }
        if self.probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Argument("probabilities must lie in [0, 1]".into()));
        }
        if self.duration_weights.is_empty()
            || self.duration_weights.len() > MAX_DURATION
            || self.duration_weights.iter().any(|w| !(*w >= 0.0))
            || self.duration_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Argument(format!(
                "duration weights need 1..={MAX_DURATION} non-negative entries with a positive sum"
            )));
        }
        for (name, v) in [("noise", self.noise), ("missing_rate", self.missing_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.unit_energy_kwh > 0.0) || !(self.energy_spread >= 0.0) {
            return Err(Error::Argument("energy mean must be > 0 and spread >= 0".into()));
        }
        Ok(())
    }

    /// Probability table after mixing in noise.
    pub fn effective_probs(&self) -> Vec<Vec<f64>> {
        let n = (7 * HOURS_PER_DAY) as f64;
        let mean = self.probs.iter().flatten().sum::<f64>() / n;
        self.probs
            .iter()
            .map(|row| row.iter().map(|p| (1.0 - self.noise) * p + self.noise * mean).collect())
            .collect()
    }
}

fn draw_duration(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i + 1;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0) + 1
}

/// Readings of one device for `days` days from midnight of `start`.
///
/// A run drawn for hour h switches on at h:15 and lasts a whole number of
/// hours; the reading at h:00 is kept idle so every draw produces exactly
/// one switch-on in hour h.
pub fn gen_device(pattern: &UsagePattern, start: NaiveDate, days: usize, seed: u64) -> Result<ReadingSeries> {
    pattern.validate()?;
    if days < MIN_DEVICE_DAYS {
        return Err(Error::Argument(format!(
            "need at least {MIN_DEVICE_DAYS} days, got {days}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = pattern.effective_probs();
    let energy = Normal::new(0.0, 1.0).expect("unit normal");
    let n = days * QUARTERS_PER_DAY;
    let mut watts = vec![0.0f64; n];
    for d in 0..days {
        let w = weekday_index(start + Duration::days(d as i64));
        for h in 0..HOURS_PER_DAY {
            if rng.random::<f64>() >= probs[w][h] {
                continue;
            }
            let base = d * QUARTERS_PER_DAY + h * QUARTERS_PER_HOUR;
            let len = draw_duration(&mut rng, &pattern.duration_weights);
            // a new draw cuts short whatever is still running
            let reach = (base + 1 + MAX_DURATION * QUARTERS_PER_HOUR).min(n);
            watts[base..reach].iter_mut().for_each(|w| *w = 0.0);
            for u in 0..len {
                let kwh = (pattern.unit_energy_kwh * (1.0 + pattern.energy_spread * energy.sample(&mut rng)))
                    .max(MIN_UNIT_KWH);
                // one hour at W watts is W/1000 kWh
                let w_on = (kwh * 1000.0).round();
                for q in 0..QUARTERS_PER_HOUR {
                    let i = base + 1 + u * QUARTERS_PER_HOUR + q;
                    if i < n {
                        watts[i] = w_on;
                    }
                }
            }
        }
    }
    let mut missing = vec![false; n];
    if pattern.missing_rate > 0.0 {
        let mut i = 0;
        while i < n {
            if rng.random::<f64>() < pattern.missing_rate {
                let gap = rng.random_range(1..=8usize);
                for m in missing.iter_mut().skip(i).take(gap) {
                    *m = true;
                }
                i += gap;
            } else {
                i += 1;
            }
        }
    }
    for (v, m) in watts.iter_mut().zip(&missing) {
        if *m {
            *v = 0.0;
        }
    }
    ReadingSeries::new(
        "synthetic",
        start.and_hms_opt(0, 0, 0).expect("midnight"),
        watts,
        missing,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceStyle {
    /// Regulation prices exactly from the volume model.
    #[default]
    Modeled,
    /// Model prices with multiplicative noise on the spread, as observed
    /// prices would scatter around any fitted relation.
    Perturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSpec {
    /// Mean spot price, currency per MWh.
    pub spot_level: f64,
    /// Standard deviation of the hourly signed imbalance, MWh.
    pub imbalance_scale: f64,
    /// Lag-one autocorrelation of the imbalance.
    pub persistence: f64,
    pub style: PriceStyle,
}

impl Default for MarketSpec {
    fn default() -> Self {
        MarketSpec {
            spot_level: 40.0,
            imbalance_scale: 0.002,
            persistence: 0.7,
            style: PriceStyle::Modeled,
        }
    }
}

/// Hourly market for `days` days from midnight of `start`.
pub fn gen_market(start: NaiveDate, days: usize, seed: u64, spec: &MarketSpec) -> Result<MarketSeries> {
    if days == 0 {
        return Err(Error::Argument("market needs at least one day".into()));
    }
    if !(spec.spot_level > 0.0) || !(spec.imbalance_scale >= 0.0) || !(0.0..1.0).contains(&spec.persistence) {
        return Err(Error::Argument(
            "spot level must be > 0, imbalance scale >= 0, persistence in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = (1.0 - spec.persistence * spec.persistence).sqrt();
    let t0 = start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut state = unit.sample(&mut rng);
    let mut records = Vec::with_capacity(days * HOURS_PER_DAY);
    for i in 0..days * HOURS_PER_DAY {
        let hour = (i % HOURS_PER_DAY) as f64;
        let daily = 1.0 + 0.25 * (std::f64::consts::TAU * (hour - 7.0) / 24.0).sin();
        let spot = (spec.spot_level * daily * (1.0 + 0.1 * unit.sample(&mut rng))).max(1.0);
        state = spec.persistence * state + innovation * unit.sample(&mut rng);
        let m = spec.imbalance_scale * state;
        let (up, down) = if m > 0.0 { (m, 0.0) } else { (0.0, m.min(0.0)) };
        let jitter = match spec.style {
            PriceStyle::Modeled => 1.0,
            PriceStyle::Perturbed => (1.0 + 0.1 * unit.sample(&mut rng)).max(0.0),
        };
        let up_price = spot + (modeled_price(spot, up) - spot) * jitter;
        let down_price = spot + (modeled_price(spot, down) - spot) * jitter;
        records.push(MarketRecord {
            timestamp: t0 + Duration::hours(i as i64),
            spot_price: spot,
            up_volume: up,
            down_volume: down,
            up_price,
            down_price,
        });
    }
    MarketSeries::new(records)
}
