//! Regulating-market arithmetic: the volume-dependent price model, the
//! regulation cost of an imbalance, forecast-error losses and savings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MarketRecord;

/// Device energies are in kWh, market volumes in MWh.
pub const KWH_TO_MWH: f64 = 1e-3;

const DOWN_BASE: f64 = -0.334;
const DOWN_SLOPE: f64 = 0.0005;
const UP_BASE: f64 = 0.238;
const UP_SLOPE: f64 = 0.0034;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMode {
    /// Regulation prices from the market file's up/down price columns.
    Observed,
    /// Regulation prices from the volume model, recomputed for every volume.
    #[default]
    Modeled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Second loss term is volume times updated-price-to-spot spread.
    #[default]
    Literal,
    /// Second loss term is volume times the price change only.
    Marginal,
}

/// Regulation price for spot `p_s`, up volume `v_u >= 0` and down volume `v_d <= 0`.
pub fn regulation_price(p_s: f64, v_u: f64, v_d: f64) -> Result<f64> {
    if v_u > 0.0 && v_d < 0.0 {
        return Err(Error::Invariant(format!(
            "both up ({v_u}) and down ({v_d}) regulation active"
        )));
    }
    let mut p = p_s;
    if v_d < 0.0 {
        p += DOWN_BASE * p_s + DOWN_SLOPE * (p_s * v_d);
    }
    if v_u > 0.0 {
        p += UP_BASE * p_s + UP_SLOPE * (p_s * v_u);
    }
    Ok(p)
}

/// Modeled price for a signed imbalance `m`.
pub fn modeled_price(p_s: f64, m: f64) -> f64 {
    if m > 0.0 {
        regulation_price(p_s, m, 0.0)
    } else {
        regulation_price(p_s, 0.0, m)
    }
    .expect("one direction only")
}

/// Regulation price applicable at imbalance `m` in hour `rec`.
pub fn price(rec: &MarketRecord, m: f64, mode: PriceMode) -> f64 {
    match mode {
        PriceMode::Modeled => modeled_price(rec.spot_price, m),
        PriceMode::Observed => {
            if m > 0.0 {
                rec.up_price
            } else if m < 0.0 {
                rec.down_price
            } else {
                rec.spot_price
            }
        }
    }
}

/// |p(m) − p_s| for hour `rec`.
pub fn spread(rec: &MarketRecord, m: f64, mode: PriceMode) -> f64 {
    (price(rec, m, mode) - rec.spot_price).abs()
}

/// Per-hour signed imbalance in MWh: positive needs up-regulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignedImbalance(pub Vec<f64>);

impl SignedImbalance {
    pub fn from_records(records: &[MarketRecord]) -> Self {
        SignedImbalance(records.iter().map(MarketRecord::imbalance).collect())
    }

    pub fn zeros(k: usize) -> Self {
        SignedImbalance(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_abs(&self) -> f64 {
        self.0.iter().map(|m| m.abs()).sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Move `e` of demand from `from` to `to` in place.
    pub fn shift(&mut self, from: usize, to: usize, e: f64) {
        if from == to {
            return;
        }
        self.0[from] -= e;
        self.0[to] += e;
    }
}

pub fn apply_shift(m: &SignedImbalance, from: usize, to: usize, e: f64) -> Result<SignedImbalance> {
    if from >= m.len() || to >= m.len() {
        return Err(Error::Argument(format!(
            "shift {from} -> {to} outside a {}-hour horizon",
            m.len()
        )));
    }
    if !(e >= 0.0) {
        return Err(Error::Argument(format!("shifted energy must be >= 0, got {e}")));
    }
    let mut out = m.clone();
    out.shift(from, to, e);
    Ok(out)
}

fn check_len(records: &[MarketRecord], n: usize) -> Result<()> {
    if records.len() < n {
        return Err(Error::Coverage(format!(
            "{n} hours requested, market slice has {}",
            records.len()
        )));
    }
    Ok(())
}

/// Σ |m(i)| · |p(i) − p_s(i)| with prices evaluated at `m` itself.
pub fn cost_of(records: &[MarketRecord], m: &SignedImbalance, mode: PriceMode) -> Result<f64> {
    check_len(records, m.len())?;
    Ok(m.0
        .iter()
        .zip(records)
        .map(|(&mi, rec)| mi.abs() * spread(rec, mi, mode))
        .sum())
}

/// R − E summed hour by hour, so hours the schedule left alone add exactly 0.
pub fn cost_reduction(
    records: &[MarketRecord],
    m: &SignedImbalance,
    m_bar: &SignedImbalance,
    mode: PriceMode,
) -> Result<f64> {
    if m.len() != m_bar.len() {
        return Err(Error::Argument(format!(
            "imbalance lengths differ ({} vs {})",
            m.len(),
            m_bar.len()
        )));
    }
    check_len(records, m.len())?;
    Ok(m.0
        .iter()
        .zip(&m_bar.0)
        .zip(records)
        .map(|((&a, &b), rec)| {
            if a == b {
                0.0
            } else {
                a.abs() * spread(rec, a, mode) - b.abs() * spread(rec, b, mode)
            }
        })
        .sum())
}

/// Regulation cost of the recorded volumes.
pub fn regulation_cost(records: &[MarketRecord], mode: PriceMode) -> Result<f64> {
    cost_of(records, &SignedImbalance::from_records(records), mode)
}

/// Regulation cost after scheduling, on the updated imbalance `m_bar`.
pub fn expected_cost(records: &[MarketRecord], m_bar: &SignedImbalance, mode: PriceMode) -> Result<f64> {
    cost_of(records, m_bar, mode)
}

/// Loss of one hour with regulation need `m`, actual demand `f` and
/// forecast demand `f_hat` (all MWh).
pub fn hour_loss(rec: &MarketRecord, m: f64, f: f64, f_hat: f64, price_mode: PriceMode, loss_mode: LossMode) -> f64 {
    let dev = f - f_hat;
    if dev == 0.0 {
        return 0.0;
    }
    let first = dev.abs() * spread(rec, m, price_mode);
    // the updated price always comes from the volume model: the market file
    // has no price for a volume that never occurred
    let p_bar = modeled_price(rec.spot_price, m + dev);
    let second = match loss_mode {
        LossMode::Literal => m.abs() * (p_bar - rec.spot_price).abs(),
        LossMode::Marginal => m.abs() * (p_bar - price(rec, m, price_mode)).abs(),
    };
    first + second
}

/// Forecast-error loss over a horizon; `m` is the regulation need the
/// forecast was scheduled against.
pub fn forecast_loss(
    actual: &[f64],
    forecast: &[f64],
    records: &[MarketRecord],
    m: &SignedImbalance,
    price_mode: PriceMode,
    loss_mode: LossMode,
) -> Result<f64> {
    if actual.len() != forecast.len() || actual.len() != m.len() {
        return Err(Error::Argument(format!(
            "actual ({}), forecast ({}) and imbalance ({}) lengths differ",
            actual.len(),
            forecast.len(),
            m.len()
        )));
    }
    check_len(records, m.len())?;
    Ok((0..m.len())
        .map(|i| hour_loss(&records[i], m.0[i], actual[i], forecast[i], price_mode, loss_mode))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourCost {
    pub m: f64,
    pub m_bar: f64,
    pub regulation: f64,
    pub expected: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub r: f64,
    pub e: f64,
    pub delta_r: f64,
    pub loss: f64,
    pub net: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hours: Vec<HourCost>,
}

pub fn savings(r: f64, e: f64, l: f64) -> Result<CostReport> {
    if e > r {
        return Err(Error::ScheduleRegression {
            regulation: r,
            expected: e,
        });
    }
    Ok(savings_unchecked(r, e, l))
}

/// As [`savings`] but accepts E > R (negative ΔR).
pub fn savings_unchecked(r: f64, e: f64, l: f64) -> CostReport {
    CostReport {
        r,
        e,
        delta_r: r - e,
        loss: l,
        net: r - e - l,
        hours: Vec::new(),
    }
}
