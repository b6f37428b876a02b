//! Placement of flex-offers inside their windows so that the total
//! regulation volume (or cost) over the horizon shrinks as much as possible.
//!
//! Offers are placed one after another in a fixed processing order: total
//! energy descending, ties by input position. Strict-mode legality of a
//! placement depends on the imbalance left by earlier placements, so every
//! solver and the brute-force oracle in the tests share this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flexoffer::FlexOffer;
use crate::ingest::MarketRecord;
use crate::market::{cost_of, PriceMode, SignedImbalance};

pub const DEFAULT_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Σ|m| − Σ|m̄|.
    #[default]
    Volume,
    /// R − E under the given price mode.
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerOptions {
    /// Non-trivial placements need down-regulation at every placed hour
    /// larger than the placed energy, and may not enlarge or flip the
    /// imbalance of any hour they touch.
    pub strict: bool,
    pub budget: u128,
    /// Last hour an operation may occupy; defaults to the horizon end.
    pub max_end: Option<usize>,
}

impl Default for SchedulerOptions {
    fn default() -> Self {
        SchedulerOptions {
            strict: true,
            budget: DEFAULT_BUDGET,
            max_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Start hour per offer, aligned with the input offers.
    pub starts: Vec<usize>,
    pub imbalance: SignedImbalance,
    pub objective: f64,
}

/// How leaves are scored.
#[derive(Clone, Copy)]
pub enum Scorer<'a> {
    Volume,
    Cost(&'a [MarketRecord], PriceMode),
}

impl Scorer<'_> {
    /// Quantity being reduced; the objective is its drop from the baseline.
    fn burden(&self, m: &SignedImbalance) -> f64 {
        match *self {
            Scorer::Volume => m.total_abs(),
            Scorer::Cost(records, mode) => cost_of(records, m, mode).expect("records cover horizon"),
        }
    }
}

/// Offer indices in placement order.
pub fn processing_order(offers: &[FlexOffer]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..offers.len()).collect();
    order.sort_by(|&a, &b| offers[b].energy().total_cmp(&offers[a].energy()));
    order
}

/// Candidate starts for an offer, ascending; the anchor is always first.
pub fn candidate_starts(offer: &FlexOffer, max_end: usize) -> Vec<usize> {
    let l = offer.duration();
    (offer.earliest_start..=offer.latest_start)
        .filter(|&s| s == offer.earliest_start || s + l - 1 <= max_end)
        .collect()
}

/// Hours changed by moving `offer` from its anchor to `s`, with their deltas.
fn deltas(offer: &FlexOffer, s: usize, k: usize) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(2 * offer.duration());
    let mut add = |h: usize, d: f64| {
        if h >= k {
            return;
        }
        match out.iter_mut().find(|(x, _)| *x == h) {
            Some(e) => e.1 += d,
            None => out.push((h, d)),
        }
    };
    for (j, &e) in offer.profile.iter().enumerate() {
        add(offer.earliest_start + j, -e);
        add(s + j, e);
    }
    out
}

/// Apply the move of `offer` to `s` if legal; returns the overwritten hours
/// so the caller can restore them exactly.
pub fn try_place(m: &mut SignedImbalance, offer: &FlexOffer, s: usize, strict: bool) -> Option<Vec<(usize, f64)>> {
    if s == offer.earliest_start {
        return Some(Vec::new());
    }
    let k = m.len();
    if s + offer.duration() > k {
        return None;
    }
    if strict {
        for (j, &e) in offer.profile.iter().enumerate() {
            let before = m.0[s + j];
            if !(before < 0.0 && -before > e) {
                return None;
            }
        }
    }
    let ds = deltas(offer, s, k);
    if strict {
        for &(h, d) in &ds {
            let before = m.0[h];
            let after = before + d;
            if after.abs() > before.abs() || after * before < 0.0 {
                return None;
            }
        }
    }
    let mut saved = Vec::with_capacity(ds.len());
    for (h, d) in ds {
        saved.push((h, m.0[h]));
        m.0[h] += d;
    }
    Some(saved)
}

fn restore(m: &mut SignedImbalance, saved: &[(usize, f64)]) {
    for &(h, v) in saved.iter().rev() {
        m.0[h] = v;
    }
}

fn check_offers(offers: &[FlexOffer], m: &SignedImbalance) -> Result<()> {
    for (i, o) in offers.iter().enumerate() {
        if o.earliest_start > o.latest_start || o.profile.is_empty() {
            return Err(Error::Argument(format!("offer {i} is malformed")));
        }
        if o.earliest_start >= m.len() {
            return Err(Error::Argument(format!(
                "offer {i} anchors at hour {} outside a {}-hour horizon",
                o.earliest_start,
                m.len()
            )));
        }
    }
    Ok(())
}

fn max_end(m: &SignedImbalance, opts: &SchedulerOptions) -> usize {
    opts.max_end.map_or(m.len() - 1, |e| e.min(m.len() - 1))
}

struct Search<'a> {
    offers: &'a [FlexOffer],
    order: Vec<usize>,
    cands: Vec<Vec<usize>>,
    /// Σ 2·energy of offers from position i of the order onward.
    suffix_bound: Vec<f64>,
    strict: bool,
    scorer: Scorer<'a>,
    base: f64,
    m: SignedImbalance,
    current: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize) {
        if depth == self.order.len() {
            let obj = self.base - self.scorer.burden(&self.m);
            if self.best.as_ref().is_none_or(|(b, _)| obj > *b) {
                self.best = Some((obj, self.current.clone()));
            }
            return;
        }
        if let (Scorer::Volume, Some((best, _))) = (self.scorer, &self.best) {
            let cur = self.m.total_abs();
            let bound = (self.base - cur) + self.suffix_bound[depth].min(cur);
            if bound < *best - 1e-12 * (1.0 + best.abs()) {
                return;
            }
        }
        let idx = self.order[depth];
        let offer = &self.offers[idx];
        for ci in 0..self.cands[idx].len() {
            let s = self.cands[idx][ci];
            if let Some(saved) = try_place(&mut self.m, offer, s, self.strict) {
                self.current[idx] = s;
                self.dfs(depth + 1);
                restore(&mut self.m, &saved);
            }
        }
        self.current[idx] = offer.earliest_start;
    }
}

fn exact(offers: &[FlexOffer], m: &SignedImbalance, opts: &SchedulerOptions, scorer: Scorer) -> Result<Schedule> {
    check_offers(offers, m)?;
    let end = max_end(m, opts);
    let cands: Vec<Vec<usize>> = offers.iter().map(|o| candidate_starts(o, end)).collect();
    let leaves = cands
        .iter()
        .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
        .unwrap_or(u128::MAX);
    if leaves > opts.budget {
        return Err(Error::BudgetExceeded {
            leaves,
            budget: opts.budget,
        });
    }
    let order = processing_order(offers);
    let mut suffix_bound = vec![0.0; order.len() + 1];
    for i in (0..order.len()).rev() {
        suffix_bound[i] = suffix_bound[i + 1] + 2.0 * offers[order[i]].energy();
    }
    let mut search = Search {
        offers,
        order,
        cands,
        suffix_bound,
        strict: opts.strict,
        scorer,
        base: scorer.burden(m),
        m: m.clone(),
        current: offers.iter().map(|o| o.earliest_start).collect(),
        best: None,
    };
    search.dfs(0);
    let (objective, starts) = search.best.expect("the all-anchor leaf is always legal");
    let imbalance = replay(offers, m, &starts, opts.strict)?;
    Ok(Schedule {
        starts,
        imbalance,
        objective,
    })
}

/// Exhaustive search for the placement with the largest volume reduction.
pub fn schedule_exact(offers: &[FlexOffer], m: &SignedImbalance, opts: &SchedulerOptions) -> Result<Schedule> {
    exact(offers, m, opts, Scorer::Volume)
}

/// As [`schedule_exact`] but scoring placements by regulation-cost reduction.
pub fn schedule_exact_cost(
    offers: &[FlexOffer],
    m: &SignedImbalance,
    records: &[MarketRecord],
    price_mode: PriceMode,
    opts: &SchedulerOptions,
) -> Result<Schedule> {
    check_records(records, m)?;
    exact(offers, m, opts, Scorer::Cost(records, price_mode))
}

fn check_records(records: &[MarketRecord], m: &SignedImbalance) -> Result<()> {
    if records.len() < m.len() {
        return Err(Error::Coverage(format!(
            "{} market hours for a {}-hour horizon",
            records.len(),
            m.len()
        )));
    }
    Ok(())
}

fn greedy(offers: &[FlexOffer], m: &SignedImbalance, opts: &SchedulerOptions, scorer: Scorer) -> Result<Schedule> {
    check_offers(offers, m)?;
    let end = max_end(m, opts);
    let base = scorer.burden(m);
    let mut cur = m.clone();
    let mut starts: Vec<usize> = offers.iter().map(|o| o.earliest_start).collect();
    for idx in processing_order(offers) {
        let offer = &offers[idx];
        let before = scorer.burden(&cur);
        let mut best: Option<(f64, usize)> = None;
        for s in candidate_starts(offer, end) {
            if s == offer.earliest_start {
                continue;
            }
            if let Some(saved) = try_place(&mut cur, offer, s, opts.strict) {
                let gain = before - scorer.burden(&cur);
                restore(&mut cur, &saved);
                if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, s));
                }
            }
        }
        if let Some((_, s)) = best {
            try_place(&mut cur, offer, s, opts.strict).expect("placement was legal a moment ago");
            starts[idx] = s;
        }
    }
    let objective = base - scorer.burden(&cur);
    Ok(Schedule {
        starts,
        imbalance: cur,
        objective,
    })
}

/// One pass over offers by descending energy, each moved to its single
/// best start given the placements before it.
pub fn schedule_greedy(offers: &[FlexOffer], m: &SignedImbalance, opts: &SchedulerOptions) -> Result<Schedule> {
    greedy(offers, m, opts, Scorer::Volume)
}

pub fn schedule_greedy_cost(
    offers: &[FlexOffer],
    m: &SignedImbalance,
    records: &[MarketRecord],
    price_mode: PriceMode,
    opts: &SchedulerOptions,
) -> Result<Schedule> {
    check_records(records, m)?;
    greedy(offers, m, opts, Scorer::Cost(records, price_mode))
}

/// Exact when within budget, greedy otherwise. The flag reports which ran.
pub fn schedule_auto(
    offers: &[FlexOffer],
    m: &SignedImbalance,
    opts: &SchedulerOptions,
    objective: Objective,
    records: &[MarketRecord],
    price_mode: PriceMode,
) -> Result<(Schedule, bool)> {
    let res = match objective {
        Objective::Volume => schedule_exact(offers, m, opts),
        Objective::Cost => schedule_exact_cost(offers, m, records, price_mode, opts),
    };
    match res {
        Ok(s) => Ok((s, true)),
        Err(Error::BudgetExceeded { leaves, budget }) => {
            log::debug!("exact scheduler needs {leaves} leaves (budget {budget}); using greedy");
            let s = match objective {
                Objective::Volume => schedule_greedy(offers, m, opts)?,
                Objective::Cost => schedule_greedy_cost(offers, m, records, price_mode, opts)?,
            };
            Ok((s, false))
        }
        Err(e) => Err(e),
    }
}

/// Schedule of perfect-forecast offers (actual runs anchored at their actual
/// start hours, each with window `tau`).
pub fn optimal_baseline(
    actual: &[FlexOffer],
    tau: usize,
    m: &SignedImbalance,
    opts: &SchedulerOptions,
) -> Result<Schedule> {
    let offers: Vec<FlexOffer> = actual
        .iter()
        .map(|o| FlexOffer {
            latest_start: o.earliest_start + tau,
            ..o.clone()
        })
        .collect();
    schedule_exact(&offers, m, opts)
}

/// Imbalance after moving every offer to `starts`, placing in processing order.
pub fn replay(offers: &[FlexOffer], m: &SignedImbalance, starts: &[usize], strict: bool) -> Result<SignedImbalance> {
    if starts.len() != offers.len() {
        return Err(Error::Argument(format!(
            "{} starts for {} offers",
            starts.len(),
            offers.len()
        )));
    }
    let mut cur = m.clone();
    for idx in processing_order(offers) {
        let o = &offers[idx];
        let s = starts[idx];
        if s < o.earliest_start || s > o.latest_start {
            return Err(Error::Invariant(format!(
                "offer {idx} starts at {s}, outside [{}, {}]",
                o.earliest_start, o.latest_start
            )));
        }
        if try_place(&mut cur, o, s, strict).is_none() {
            return Err(Error::Invariant(format!("offer {idx} cannot start at {s}")));
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flexoffer::Origin;
    use crate::ingest::Resolution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn offer(anchor: usize, tau: usize, profile: Vec<f64>) -> FlexOffer {
        let origin = Origin {
            day: 0,
            slot: anchor,
            resolution: Resolution::Hourly,
        };
        FlexOffer::new(anchor, tau, profile, origin).unwrap()
    }

    fn opts(strict: bool) -> SchedulerOptions {
        SchedulerOptions {
            strict,
            ..SchedulerOptions::default()
        }
    }

    /// Every assignment in lexicographic order of the processing order.
    fn brute_force(offers: &[FlexOffer], m: &SignedImbalance, strict: bool) -> (f64, Vec<usize>) {
        let order = processing_order(offers);
        let end = m.len() - 1;
        let cands: Vec<Vec<usize>> = offers.iter().map(|o| candidate_starts(o, end)).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut pick = vec![0usize; offers.len()];
        loop {
            let mut starts: Vec<usize> = offers.iter().map(|o| o.earliest_start).collect();
            for (pos, &idx) in order.iter().enumerate() {
                starts[idx] = cands[idx][pick[pos]];
            }
            if let Ok(mb) = replay(offers, m, &starts, strict) {
                let obj = m.total_abs() - mb.total_abs();
                if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                    best = Some((obj, starts));
                }
            }
            let mut pos = order.len();
            loop {
                if pos == 0 {
                    return best.unwrap();
                }
                pos -= 1;
                pick[pos] += 1;
                if pick[pos] < cands[order[pos]].len() {
                    break;
                }
                pick[pos] = 0;
            }
        }
    }

    #[test]
    fn single_offer_moves_to_down_regulation() {
        let m = SignedImbalance(vec![10.0, -10.0]);
        let s = schedule_exact(&[offer(0, 1, vec![5.0])], &m, &opts(true)).unwrap();
        assert_eq!(s.starts, vec![1]);
        assert_eq!(s.objective, 10.0);
        assert_eq!(s.imbalance.0, vec![5.0, -5.0]);
    }

    #[test]
    fn inflexible_and_zero_imbalance() {
        let m = SignedImbalance(vec![10.0, -10.0, 3.0]);
        let s = schedule_exact(&[offer(0, 0, vec![5.0])], &m, &opts(true)).unwrap();
        assert_eq!((s.starts[0], s.objective), (0, 0.0));
        let z = SignedImbalance::zeros(4);
        for strict in [true, false] {
            let s = schedule_exact(&[offer(0, 3, vec![1.0])], &z, &opts(strict)).unwrap();
            assert_eq!((s.starts[0], s.objective), (0, 0.0));
        }
    }

    #[test]
    fn strict_needs_room() {
        // the down-regulated hour holds only 4, less than the 5 placed
        let m = SignedImbalance(vec![10.0, -4.0]);
        let s = schedule_exact(&[offer(0, 1, vec![5.0])], &m, &opts(true)).unwrap();
        assert_eq!(s.starts, vec![0]);
        let s = schedule_exact(&[offer(0, 1, vec![5.0])], &m, &opts(false)).unwrap();
        assert_eq!((s.starts[0], s.objective), (1, 8.0));
    }

    #[test]
    fn budget_refusal() {
        let m = SignedImbalance::zeros(48);
        let offers: Vec<FlexOffer> = (0..5).map(|i| offer(i, 24, vec![1.0])).collect();
        let o = SchedulerOptions {
            budget: 1000,
            ..opts(false)
        };
        assert!(matches!(
            schedule_exact(&offers, &m, &o),
            Err(Error::BudgetExceeded { .. })
        ));
        let (s, exact) = schedule_auto(&offers, &m, &o, Objective::Volume, &[], PriceMode::Modeled).unwrap();
        assert!(!exact);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn greedy_examples() {
        let m = SignedImbalance(vec![10.0, -10.0]);
        let one = [offer(0, 1, vec![5.0])];
        assert_eq!(
            schedule_greedy(&one, &m, &opts(true)).unwrap(),
            schedule_exact(&one, &m, &opts(true)).unwrap()
        );
        let m = SignedImbalance(vec![4.0, -4.0, 0.0, 2.0, -2.0]);
        let two = [offer(0, 1, vec![2.0]), offer(3, 1, vec![1.0])];
        let g = schedule_greedy(&two, &m, &opts(false)).unwrap();
        let e = schedule_exact(&two, &m, &opts(false)).unwrap();
        assert_eq!(g.objective, e.objective);
        assert_eq!(g.starts, e.starts);
    }

    #[test]
    fn greedy_can_lose_to_exact() {
        // greedy moves the big offer first and blocks the better joint plan
        let m = SignedImbalance(vec![3.0, -4.0, 2.0, -2.0]);
        let offers = [offer(0, 1, vec![3.0]), offer(1, 2, vec![2.0])];
        let g = schedule_greedy(&offers, &m, &opts(false)).unwrap();
        let e = schedule_exact(&offers, &m, &opts(false)).unwrap();
        assert!(g.objective <= e.objective);
    }

    fn dyadic(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
        rng.random_range(lo..=hi) as f64 / 4.0
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<FlexOffer>, SignedImbalance) {
        let k = rng.random_range(2..=6);
        let m = SignedImbalance((0..k).map(|_| dyadic(rng, -40, 40)).collect());
        let n = rng.random_range(1..=3);
        let offers = (0..n)
            .map(|_| {
                let l = rng.random_range(1..=2usize.min(k));
                let anchor = rng.random_range(0..=k - l);
                let tau = rng.random_range(0..=3);
                offer(anchor, tau, (0..l).map(|_| dyadic(rng, 1, 20)).collect())
            })
            .collect();
        (offers, m)
    }

    #[test]
    fn exact_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..600 {
            let (offers, m) = random_instance(&mut rng);
            for strict in [true, false] {
                let s = schedule_exact(&offers, &m, &opts(strict)).unwrap();
                let (obj, starts) = brute_force(&offers, &m, strict);
                assert_eq!(s.objective, obj);
                assert_eq!(s.starts, starts);
                assert!(s.objective >= 0.0);
                for (o, &st) in offers.iter().zip(&s.starts) {
                    assert!(o.earliest_start <= st && st <= o.latest_start);
                }
                let g = schedule_greedy(&offers, &m, &opts(strict)).unwrap();
                assert!(g.objective <= s.objective && g.objective >= 0.0);
                assert_eq!(replay(&offers, &m, &g.starts, strict).unwrap(), g.imbalance);
            }
        }
    }

    #[test]
    fn objective_monotone_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (offers, _) = random_instance(&mut rng);
            let m = SignedImbalance((0..12).map(|_| dyadic(&mut rng, -40, 40)).collect());
            for strict in [true, false] {
                let mut last = f64::NEG_INFINITY;
                for tau in 0..=5 {
                    let o: Vec<FlexOffer> = offers
                        .iter()
                        .map(|x| FlexOffer {
                            latest_start: x.earliest_start + tau,
                            ..x.clone()
                        })
                        .collect();
                    let s = schedule_exact(&o, &m, &opts(strict)).unwrap();
                    assert!(s.objective >= last);
                    last = s.objective;
                }
            }
        }
    }

    #[test]
    fn strict_schedules_never_raise_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let (offers, m) = random_instance(&mut rng);
            let records: Vec<MarketRecord> =
                m.0.iter()
                    .map(|&v| {
                        let spot = dyadic(&mut rng, 40, 400);
                        let (up, down) = if v > 0.0 { (v, 0.0) } else { (0.0, v) };
                        MarketRecord {
                            timestamp: chrono::NaiveDate::from_ymd_opt(2016, 1, 1)
                                .unwrap()
                                .and_hms_opt(0, 0, 0)
                                .unwrap(),
                            spot_price: spot,
                            up_volume: up,
                            down_volume: down,
                            up_price: spot * 1.3,
                            down_price: spot * 0.6,
                        }
                    })
                    .collect();
            let s = schedule_exact(&offers, &m, &opts(true)).unwrap();
            for mode in [PriceMode::Modeled, PriceMode::Observed] {
                let r = cost_of(&records, &m, mode).unwrap();
                let e = cost_of(&records, &s.imbalance, mode).unwrap();
                assert!(e <= r + 1e-9, "{e} > {r}");
            }
            let c = schedule_exact_cost(&offers, &m, &records, PriceMode::Modeled, &opts(true)).unwrap();
            assert!(c.objective >= 0.0);
        }
    }

    #[test]
    fn perfect_forecast_baseline() {
        let m = SignedImbalance(vec![0.0, 6.0, 0.0, -3.0, 0.0]);
        let actual = [offer(1, 0, vec![2.0])];
        let s = optimal_baseline(&actual, 2, &m, &opts(true)).unwrap();
        assert_eq!(s.starts, vec![3]);
        assert_eq!(s.imbalance.0, vec![0.0, 4.0, 0.0, -1.0, 0.0]);
        let none = optimal_baseline(&[], 2, &m, &opts(true)).unwrap();
        assert_eq!(none.objective, 0.0);
    }
}
