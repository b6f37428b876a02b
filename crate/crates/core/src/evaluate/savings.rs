//! Savings of scheduling forecast flexibility against a regulating market,
//! net of the losses caused by forecast errors.
//!
//! Each evaluated day gets its own horizon starting at midnight. The market's
//! recorded imbalance is taken as the imbalance the forecast was bought
//! against: moving a forecast offer away from its anchor frees its energy
//! there and demands it at the new start. At delivery a correctly predicted
//! device runs at its scheduled start with its actual profile, a false alarm
//! runs nowhere, and a missed activation runs at its actual time.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flexoffer::{FlexOffer, Origin, MAX_TAU};
use crate::ingest::{MarketSeries, Resolution, HOURS_PER_DAY};
use crate::market::{cost_reduction, hour_loss, LossMode, PriceMode, SignedImbalance, KWH_TO_MWH};
use crate::scheduler::{processing_order, schedule_auto, try_place, Objective, SchedulerOptions, DEFAULT_BUDGET};

use super::f1;

/// Actual operation on an evaluated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActualRun {
    /// Hour of day of the switch-on.
    pub start_hour: usize,
    /// Slot of the switch-on at the evaluated resolution.
    pub slot: usize,
    /// kWh per hour.
    pub profile: Vec<f64>,
}

/// Forecast slot: score and the offer it becomes when predicted positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotForecast {
    pub score: f64,
    pub label: u8,
    pub anchor: usize,
    /// kWh per hour.
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayInput {
    pub day: usize,
    pub date: NaiveDate,
    pub slots: Vec<SlotForecast>,
    pub actual: Vec<ActualRun>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsOptions {
    pub price_mode: PriceMode,
    pub loss_mode: LossMode,
    pub strict: bool,
    pub objective: Objective,
    pub budget: u128,
    pub resolution: Resolution,
}

impl Default for SavingsOptions {
    fn default() -> Self {
        SavingsOptions {
            price_mode: PriceMode::Modeled,
            loss_mode: LossMode::Literal,
            strict: true,
            objective: Objective::Volume,
            budget: DEFAULT_BUDGET,
            resolution: Resolution::Hourly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub tau: usize,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub delta_r: f64,
    pub loss: f64,
    pub net: f64,
    pub pct_optimal: Option<f64>,
    pub tp_gain: f64,
    pub fp_loss: f64,
    pub fn_loss: f64,
    pub optimal_delta_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub rows: Vec<SavingsRow>,
}

impl SavingsReport {
    /// Row with the largest net savings for each τ, in τ order.
    pub fn best_per_tau(&self) -> Vec<SavingsRow> {
        let mut taus: Vec<usize> = self.rows.iter().map(|r| r.tau).collect();
        taus.sort_unstable();
        taus.dedup();
        taus.iter()
            .filter_map(|&t| {
                self.rows
                    .iter()
                    .filter(|r| r.tau == t)
                    .fold(None::<SavingsRow>, |b, r| match b {
                        Some(b) if b.net >= r.net => Some(b),
                        _ => Some(*r),
                    })
            })
            .collect()
    }

    pub fn row(&self, tau: usize, threshold: f64) -> Option<&SavingsRow> {
        self.rows.iter().find(|r| r.tau == tau && r.threshold == threshold)
    }
}

/// Per-day accounting result.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub delta_r: f64,
    pub loss: f64,
    pub tp_gain: f64,
    pub fp_loss: f64,
    pub fn_loss: f64,
}

impl DayOutcome {
    pub fn net(&self) -> f64 {
        self.delta_r - self.loss
    }
}

fn mwh(profile: &[f64]) -> Vec<f64> {
    profile.iter().map(|e| e * KWH_TO_MWH).collect()
}

/// Everything needed to re-score one day under a fixed schedule.
struct DayCase<'a> {
    records: &'a [crate::ingest::MarketRecord],
    m: SignedImbalance,
    offers: Vec<FlexOffer>,
    starts: Vec<usize>,
    /// Actual run matched to each offer (TP) or `None` (FP).
    matched: Vec<Option<usize>>,
    runs: Vec<(usize, Vec<f64>)>,
    /// Runs no offer predicted.
    unmatched: Vec<usize>,
}

impl DayCase<'_> {
    /// (ΔR, L) with only the flagged offers and unmatched runs present.
    fn score(&self, offer_on: &[bool], fn_on: &[bool], opts: &SavingsOptions) -> (f64, f64) {
        let k = self.m.len();
        let mut m_bar = self.m.clone();
        for idx in processing_order(&self.offers) {
            if offer_on[idx] {
                try_place(&mut m_bar, &self.offers[idx], self.starts[idx], false).expect("start fits the horizon");
            }
        }
        let mut f = vec![0.0; k];
        let mut f_hat = vec![0.0; k];
        let put = |v: &mut Vec<f64>, at: usize, p: &[f64]| {
            for (j, e) in p.iter().enumerate() {
                if at + j < k {
                    v[at + j] += e;
                }
            }
        };
        for (i, o) in self.offers.iter().enumerate() {
            let run = self.matched[i];
            if offer_on[i] {
                put(&mut f_hat, self.starts[i], &o.profile);
                if let Some(r) = run {
                    put(&mut f, self.starts[i], &self.runs[r].1);
                }
            } else if let Some(r) = run {
                put(&mut f, self.runs[r].0, &self.runs[r].1);
            }
        }
        for (u, &r) in self.unmatched.iter().enumerate() {
            if fn_on[u] {
                put(&mut f, self.runs[r].0, &self.runs[r].1);
            }
        }
        let delta_r = cost_reduction(self.records, &self.m, &m_bar, opts.price_mode).expect("covered");
        let loss: f64 = (0..k)
            .map(|i| {
                hour_loss(
                    &self.records[i],
                    m_bar.0[i],
                    f[i],
                    f_hat[i],
                    opts.price_mode,
                    opts.loss_mode,
                )
            })
            .sum();
        (delta_r, loss)
    }
}

fn horizon_len(tau: usize, offers: &[FlexOffer], runs: &[(usize, Vec<f64>)]) -> usize {
    let longest_run = runs
        .iter()
        .map(|r| r.1.len())
        .chain(offers.iter().map(|o| o.duration()))
        .max()
        .unwrap_or(0);
    let mut k = HOURS_PER_DAY + tau;
    for o in offers {
        k = k.max(o.anchor() + o.duration());
    }
    for (start, p) in runs {
        k = k.max(start + p.len());
    }
    // a correctly predicted run may start as late as 23 + τ
    k.max(HOURS_PER_DAY + tau - 1 + longest_run)
}

/// Net savings of one day at one threshold and τ, with its decomposition.
/// Offers for the slots of `day` scoring at least `threshold`, profiles in
/// MWh, ordered by (anchor, origin).
pub fn day_offers(day: &DayInput, tau: usize, threshold: f64, resolution: Resolution) -> Result<Vec<FlexOffer>> {
    let mut offers = Vec::new();
    for (slot, s) in day.slots.iter().enumerate() {
        if s.score >= threshold {
            let origin = Origin {
                day: day.day,
                slot,
                resolution,
            };
            offers.push(FlexOffer::new(s.anchor, tau, mwh(&s.profile), origin)?);
        }
    }
    offers.sort_by_key(|o| (o.earliest_start, o.origin));
    Ok(offers)
}

/// Scheduled offers of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub day: usize,
    pub date: NaiveDate,
    pub offers: Vec<FlexOffer>,
    pub starts: Vec<usize>,
    /// False when the exact solver's budget forced the greedy fallback.
    pub exact: bool,
    /// Σ|m| − Σ|m̄| over the horizon, MWh.
    pub volume_reduction: f64,
    /// R − E over the horizon.
    pub delta_r: f64,
}

struct Plan<'a> {
    records: &'a [crate::ingest::MarketRecord],
    m: SignedImbalance,
    offers: Vec<FlexOffer>,
    runs: Vec<(usize, Vec<f64>)>,
    schedule: crate::scheduler::Schedule,
    exact: bool,
}

fn plan<'a>(
    day: &DayInput,
    market: &'a MarketSeries,
    tau: usize,
    threshold: f64,
    opts: &SavingsOptions,
) -> Result<Plan<'a>> {
    let offers = day_offers(day, tau, threshold, opts.resolution)?;
    let runs: Vec<(usize, Vec<f64>)> = day.actual.iter().map(|r| (r.start_hour, mwh(&r.profile))).collect();
    let k = horizon_len(tau, &offers, &runs);
    let start = day.date.and_hms_opt(0, 0, 0).expect("midnight");
    let records = market.window(start, k)?;
    let m = SignedImbalance::from_records(records);
    let sched_opts = SchedulerOptions {
        strict: opts.strict,
        budget: opts.budget,
        max_end: Some(HOURS_PER_DAY + tau - 1),
    };
    let (schedule, exact) = schedule_auto(&offers, &m, &sched_opts, opts.objective, records, opts.price_mode)?;
    Ok(Plan {
        records,
        m,
        offers,
        runs,
        schedule,
        exact,
    })
}

pub fn schedule_day(
    day: &DayInput,
    market: &MarketSeries,
    tau: usize,
    threshold: f64,
    opts: &SavingsOptions,
) -> Result<DaySchedule> {
    let p = plan(day, market, tau, threshold, opts)?;
    let delta_r = cost_reduction(p.records, &p.m, &p.schedule.imbalance, opts.price_mode)?;
    Ok(DaySchedule {
        day: day.day,
        date: day.date,
        volume_reduction: p.m.total_abs() - p.schedule.imbalance.total_abs(),
        delta_r,
        offers: p.offers,
        starts: p.schedule.starts,
        exact: p.exact,
    })
}

/// Net savings of one day at one threshold and τ, with its decomposition.
pub fn evaluate_day(
    day: &DayInput,
    market: &MarketSeries,
    tau: usize,
    threshold: f64,
    opts: &SavingsOptions,
) -> Result<DayOutcome> {
    let Plan {
        records,
        m,
        offers,
        runs,
        schedule,
        ..
    } = plan(day, market, tau, threshold, opts)?;

    let mut taken = vec![false; runs.len()];
    let matched: Vec<Option<usize>> = offers
        .iter()
        .map(|o| {
            let hit = (0..runs.len()).find(|&r| !taken[r] && day.actual[r].slot == o.origin.slot);
            if let Some(r) = hit {
                taken[r] = true;
            }
            hit
        })
        .collect();
    let unmatched: Vec<usize> = (0..runs.len()).filter(|&r| !taken[r]).collect();

    let case = DayCase {
        records,
        m,
        offers,
        starts: schedule.starts,
        matched,
        runs,
        unmatched,
    };
    let all_offers = vec![true; case.offers.len()];
    let all_fn = vec![true; case.unmatched.len()];
    let (delta_r, loss) = case.score(&all_offers, &all_fn, opts);
    let net = delta_r - loss;

    let mut out = DayOutcome {
        delta_r,
        loss,
        ..DayOutcome::default()
    };
    for i in 0..case.offers.len() {
        let mut on = all_offers.clone();
        on[i] = false;
        let (d, l) = case.score(&on, &all_fn, opts);
        let contribution = net - (d - l);
        if case.matched[i].is_some() {
            out.tp_gain += contribution;
        } else {
            out.fp_loss -= contribution;
        }
    }
    for u in 0..case.unmatched.len() {
        let mut on = all_fn.clone();
        on[u] = false;
        let (d, l) = case.score(&all_offers, &on, opts);
        out.fn_loss += (d - l) - net;
    }
    Ok(out)
}

/// ΔR of the perfect-forecast schedule for one day.
pub fn optimal_day(day: &DayInput, market: &MarketSeries, tau: usize, opts: &SavingsOptions) -> Result<f64> {
    optimal_day_checked(day, market, tau, opts).map(|(d, _)| d)
}

/// As [`optimal_day`], also reporting whether the exact solver ran.
pub fn optimal_day_checked(
    day: &DayInput,
    market: &MarketSeries,
    tau: usize,
    opts: &SavingsOptions,
) -> Result<(f64, bool)> {
    let runs: Vec<(usize, Vec<f64>)> = day.actual.iter().map(|r| (r.start_hour, mwh(&r.profile))).collect();
    let offers: Vec<FlexOffer> = day
        .actual
        .iter()
        .map(|r| {
            let origin = Origin {
                day: day.day,
                slot: r.slot,
                resolution: opts.resolution,
            };
            FlexOffer::new(r.start_hour, tau, mwh(&r.profile), origin)
        })
        .collect::<Result<_>>()?;
    let k = horizon_len(tau, &offers, &runs);
    let start = day.date.and_hms_opt(0, 0, 0).expect("midnight");
    let records = market.window(start, k)?;
    let m = SignedImbalance::from_records(records);
    let sched_opts = SchedulerOptions {
        strict: opts.strict,
        budget: opts.budget,
        max_end: Some(HOURS_PER_DAY + tau - 1),
    };
    let (s, exact) = schedule_auto(&offers, &m, &sched_opts, opts.objective, records, opts.price_mode)?;
    Ok((cost_reduction(records, &m, &s.imbalance, opts.price_mode)?, exact))
}

fn slot_metrics(days: &[DayInput], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for s in days.iter().flat_map(|d| &d.slots) {
        match (s.label == 1, s.score >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (p, r, f1(p, r))
}

/// One row per (τ, threshold): accuracy of the binarized forecast next to
/// the savings it earns, summed over all days.
pub fn savings_sweep(
    days: &[DayInput],
    market: &MarketSeries,
    taus: &[usize],
    thresholds: &[f64],
    opts: &SavingsOptions,
) -> Result<SavingsReport> {
    if let Some(&t) = taus.iter().find(|&&t| t > MAX_TAU) {
        return Err(Error::Argument(format!("tau must be within 0..={MAX_TAU}, got {t}")));
    }
    let optimal: Vec<f64> = taus
        .par_iter()
        .map(|&tau| {
            days.iter()
                .map(|d| optimal_day(d, market, tau, opts))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64)> = (0..taus.len())
        .flat_map(|ti| thresholds.iter().map(move |&t| (ti, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(ti, threshold)| {
            let tau = taus[ti];
            let mut acc = DayOutcome::default();
            for d in days {
                let o = evaluate_day(d, market, tau, threshold, opts)?;
                acc.delta_r += o.delta_r;
                acc.loss += o.loss;
                acc.tp_gain += o.tp_gain;
                acc.fp_loss += o.fp_loss;
                acc.fn_loss += o.fn_loss;
            }
            let (precision, recall, f1) = slot_metrics(days, threshold);
            let opt = optimal[ti];
            Ok(SavingsRow {
                tau,
                threshold,
                precision,
                recall,
                f1,
                delta_r: acc.delta_r,
                loss: acc.loss,
                net: acc.net(),
                pct_optimal: (opt > 0.0).then(|| 100.0 * acc.net() / opt),
                tp_gain: acc.tp_gain,
                fp_loss: acc.fp_loss,
                fn_loss: acc.fn_loss,
                optimal_delta_r: opt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SavingsReport { rows })
}
