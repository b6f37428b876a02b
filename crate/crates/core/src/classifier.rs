//! L1-penalized logistic regression for activation prediction, plus the
//! frequency-table pattern-matching baseline.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{f1_sweep, pr_auc};
use crate::features::{FeatureLayout, FeatureMatrix};
use crate::ingest::ActivationSeries;

/// Probabilities are kept at least this far from 0 and 1 inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// (π, 1 − π) without cancellation.
fn probs(z: f64) -> (f64, f64) {
    if z >= 0.0 {
        let e = (-z).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = z.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

fn log_lik(y: f64, z: f64) -> f64 {
    let (p, q) = probs(z);
    y * p.max(PROB_EPS).ln() + (1.0 - y) * q.max(PROB_EPS).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassWeights {
    /// Every sample weighs 1.
    Unit,
    /// w_c = n / (2 n_c).
    Balanced,
    Fixed {
        negative: f64,
        positive: f64,
    },
}

impl ClassWeights {
    pub fn resolve(&self, labels: &[u8]) -> Result<[f64; 2]> {
        match *self {
            ClassWeights::Unit => Ok([1.0, 1.0]),
            ClassWeights::Balanced => {
                let n1 = labels.iter().filter(|&&y| y == 1).count();
                let n0 = labels.len() - n1;
                if n0 == 0 || n1 == 0 {
                    return Err(Error::DegenerateData("balanced weights need both classes".into()));
                }
                let n = labels.len() as f64;
                Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
            }
            ClassWeights::Fixed { negative, positive } => {
                if !(negative > 0.0 && positive > 0.0) || !negative.is_finite() || !positive.is_finite() {
                    return Err(Error::Argument(format!(
                        "class weights must be positive, got ({negative}, {positive})"
                    )));
                }
                Ok([negative, positive])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iter: usize,
    /// Stop once the relative change of the objective falls below this.
    pub tol: f64,
    /// Keep the objective after every accepted iterate in the model metadata.
    pub record_history: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iter: 5000,
            tol: 1e-8,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<FeatureLayout>,
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub class_weights: [f64; 2],
    pub threshold: f64,
    pub meta: TrainMeta,
}

impl LogisticModel {
    pub fn zeros(width: usize) -> Self {
        LogisticModel {
            layout: None,
            intercept: 0.0,
            weights: vec![0.0; width],
            lambda: 0.0,
            class_weights: [1.0, 1.0],
            threshold: 0.5,
            meta: TrainMeta::default(),
        }
    }

    pub fn with_layout(mut self, layout: FeatureLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Argument(format!(
                "feature vector has width {}, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.decision(x)?))
    }

    pub fn predict_matrix(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        data.rows.iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn zero_weights(&self) -> usize {
        self.weights.iter().filter(|&&w| w == 0.0).count()
    }
}

pub fn predict_proba(m: &LogisticModel, x: &[f64]) -> Result<f64> {
    m.predict_proba(x)
}

fn check_data(m: &LogisticModel, data: &FeatureMatrix) -> Result<()> {
    if data.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if data.width != m.width() {
        return Err(Error::Argument(format!(
            "data width {} but model width {}",
            data.width,
            m.width()
        )));
    }
    Ok(())
}

/// Penalized weighted log-likelihood at the model's parameters (to be maximized).
pub fn objective(m: &LogisticModel, data: &FeatureMatrix, class_weights: [f64; 2]) -> Result<f64> {
    check_data(m, data)?;
    let mut ll = 0.0;
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        let z = m.decision(row)?;
        ll += class_weights[y as usize] * log_lik(y as f64, z);
    }
    Ok(ll - m.lambda * m.weights.iter().map(|w| w.abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

/// Gradient of the smooth (log-likelihood) part of [`objective`].
pub fn gradient(m: &LogisticModel, data: &FeatureMatrix, class_weights: [f64; 2]) -> Result<Gradient> {
    check_data(m, data)?;
    let mut g = Gradient {
        intercept: 0.0,
        weights: vec![0.0; m.width()],
    };
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        let r = class_weights[y as usize] * (y as f64 - sigmoid(m.decision(row)?));
        g.intercept += r;
        for (gj, xj) in g.weights.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    Ok(g)
}

/// Row-compressed copy of the design matrix; rows are mostly one-hot.
struct Design {
    p: usize,
    indptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Design {
    fn new(data: &FeatureMatrix, cw: [f64; 2]) -> Self {
        let mut d = Design {
            p: data.width,
            indptr: vec![0],
            idx: Vec::new(),
            val: Vec::new(),
            y: Vec::with_capacity(data.len()),
            w: Vec::with_capacity(data.len()),
        };
        for (row, &y) in data.rows.iter().zip(&data.labels) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    d.idx.push(j as u32);
                    d.val.push(v);
                }
            }
            d.indptr.push(d.idx.len());
            d.y.push(y as f64);
            d.w.push(cw[y as usize]);
        }
        d
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    /// Margins for parameters `theta` (index 0 is the intercept).
    fn margins(&self, theta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut z = theta[0];
            for k in self.indptr[i]..self.indptr[i + 1] {
                z += self.val[k] * theta[1 + self.idx[k] as usize];
            }
            *o = z;
        }
    }

    /// Negative log-likelihood given margins.
    fn loss(&self, z: &[f64]) -> f64 {
        -z.iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((&z, &y), &w)| w * log_lik(y, z))
            .sum::<f64>()
    }

    /// Gradient of the negative log-likelihood given margins.
    fn loss_grad(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..self.n() {
            let r = self.w[i] * (sigmoid(z[i]) - self.y[i]);
            out[0] += r;
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[1 + self.idx[k] as usize] += r * self.val[k];
            }
        }
    }
}

fn l1(theta: &[f64]) -> f64 {
    theta[1..].iter().map(|t| t.abs()).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Fit by accelerated proximal gradient with backtracking, restarting the
/// momentum whenever an extrapolated step fails to improve the objective.
pub fn train(
    data: &FeatureMatrix,
    lambda: f64,
    class_weights: ClassWeights,
    opts: &TrainOptions,
) -> Result<LogisticModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("lambda must be >= 0, got {lambda}")));
    }
    let pos = data.positives();
    if data.is_empty() || pos == 0 || pos == data.len() {
        return Err(Error::DegenerateData(format!(
            "training data needs both classes ({} rows, {pos} positive)",
            data.len()
        )));
    }
    let cw = class_weights.resolve(&data.labels)?;
    let d = Design::new(data, cw);
    let p1 = d.p + 1;
    let n = d.n();

    let penalized = |loss: f64, th: &[f64]| loss + lambda * l1(th);

    let mut x = vec![0.0; p1];
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut zbuf = vec![0.0; n];
    d.margins(&x, &mut zbuf);
    let mut fx = penalized(d.loss(&zbuf), &x);
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut grad = vec![0.0; p1];
    let mut cand = vec![0.0; p1];
    let mut meta = TrainMeta::default();
    if opts.record_history {
        meta.history.push(-fx);
    }
    let mut restarted = false;

    for it in 0..opts.max_iter {
        meta.iterations = it + 1;
        d.margins(&y, &mut zbuf);
        let gy = d.loss(&zbuf);
        d.loss_grad(&zbuf, &mut grad);
        let fz_loss = loop {
            cand[0] = y[0] - grad[0] / lip;
            for j in 1..p1 {
                cand[j] = soft_threshold(y[j] - grad[j] / lip, lambda / lip);
            }
            d.margins(&cand, &mut zbuf);
            let gz = d.loss(&zbuf);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for j in 0..p1 {
                let dj = cand[j] - y[j];
                lin += grad[j] * dj;
                sq += dj * dj;
            }
            if gz <= gy + lin + 0.5 * lip * sq + 1e-12 * gy.abs().max(1.0) || !lip.is_finite() {
                break gz;
            }
            lip *= 2.0;
        };
        let fz = penalized(fz_loss, &cand);
        if fz <= fx {
            let change = fx - fz;
            x_prev.copy_from_slice(&x);
            x.copy_from_slice(&cand);
            let f_old = fx;
            fx = fz;
            if opts.record_history {
                meta.history.push(-fx);
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            for j in 0..p1 {
                y[j] = x[j] + beta * (x[j] - x_prev[j]);
            }
            t = t_next;
            restarted = false;
            if change <= opts.tol * f_old.abs().max(f64::MIN_POSITIVE) {
                meta.converged = true;
                break;
            }
        } else {
            if restarted {
                // a plain proximal step from x cannot improve: x is optimal to
                // machine precision
                meta.converged = true;
                break;
            }
            t = 1.0;
            y.copy_from_slice(&x);
            restarted = true;
        }
        lip *= 0.9;
    }

    meta.objective = -fx;
    Ok(LogisticModel {
        layout: None,
        intercept: x[0],
        weights: x[1..].to_vec(),
        lambda,
        class_weights: cw,
        threshold: 0.5,
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversampleOptions {
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub class_weights: ClassWeights,
    pub train: TrainOptions,
    /// Applied to the training part of each fold only.
    pub oversample: Option<OversampleOptions>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 5,
            class_weights: ClassWeights::Unit,
            train: TrainOptions::default(),
            oversample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_auc_pr: Option<f64>,
    pub fold_auc_pr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    pub table: Vec<CvRow>,
    /// Out-of-fold scores of the best λ, aligned with the input rows; `None`
    /// where that row's fold was skipped.
    pub oof_scores: Vec<Option<f64>>,
}

/// Row ranges of chronological folds; fold boundaries fall between days.
pub fn fold_ranges(data: &FeatureMatrix, folds: usize) -> Vec<std::ops::Range<usize>> {
    let mut day_starts: Vec<usize> = Vec::new();
    for (i, k) in data.keys.iter().enumerate() {
        if i == 0 || data.keys[i - 1].day != k.day {
            day_starts.push(i);
        }
    }
    let nd = day_starts.len();
    (0..folds)
        .map(|f| {
            let a = f * nd / folds;
            let b = (f + 1) * nd / folds;
            let start = day_starts.get(a).copied().unwrap_or(data.len());
            let end = day_starts.get(b).copied().unwrap_or(data.len());
            start..end
        })
        .collect()
}

fn fold_job(
    data: &FeatureMatrix,
    test: &std::ops::Range<usize>,
    lambda: f64,
    opts: &CvOptions,
) -> Result<Option<Vec<f64>>> {
    let test_idx: Vec<usize> = test.clone().collect();
    let train_idx: Vec<usize> = (0..data.len()).filter(|i| !test.contains(i)).collect();
    let test_m = data.select(&test_idx);
    let mut train_m = data.select(&train_idx);
    let tp = test_m.positives();
    let trp = train_m.positives();
    if tp == 0 || trp == 0 || trp == train_m.len() {
        return Ok(None);
    }
    if let Some(o) = opts.oversample {
        train_m = oversample(&train_m, o.ratio, o.seed)?;
    }
    let model = train(&train_m, lambda, opts.class_weights, &opts.train)?;
    Ok(Some(model.predict_matrix(&test_m)?))
}

/// k-fold cross-validation over contiguous day blocks, scoring mean AUC-PR.
pub fn cross_validate(data: &FeatureMatrix, lambda_grid: &[f64], opts: &CvOptions) -> Result<CvResult> {
    if opts.folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {}", opts.folds)));
    }
    if lambda_grid.is_empty() {
        return Err(Error::Argument("empty lambda grid".into()));
    }
    let ranges = fold_ranges(data, opts.folds);
    let jobs: Vec<(usize, usize)> = (0..lambda_grid.len())
        .flat_map(|l| (0..ranges.len()).map(move |f| (l, f)))
        .collect();
    let results: Vec<Option<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(l, f)| fold_job(data, &ranges[f], lambda_grid[l], opts))
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(lambda_grid.len());
    for (l, &lambda) in lambda_grid.iter().enumerate() {
        let mut aucs = Vec::with_capacity(ranges.len());
        for (f, range) in ranges.iter().enumerate() {
            let auc = match &results[l * ranges.len() + f] {
                Some(scores) => Some(pr_auc(scores, &data.labels[range.clone()])?),
                None => {
                    warn!("lambda {lambda}: fold {f} has a single class, skipped");
                    None
                }
            };
            aucs.push(auc);
        }
        let got: Vec<f64> = aucs.iter().flatten().copied().collect();
        let mean = if got.is_empty() {
            None
        } else {
            Some(got.iter().sum::<f64>() / got.len() as f64)
        };
        table.push(CvRow {
            lambda,
            mean_auc_pr: mean,
            fold_auc_pr: aucs,
        });
    }

    let mut best: Option<(usize, f64)> = None;
    for (l, row) in table.iter().enumerate() {
        let Some(m) = row.mean_auc_pr else { continue };
        best = match best {
            None => Some((l, m)),
            Some((bl, bm)) => {
                let tie = (m - bm).abs() <= 1e-12;
                if (!tie && m > bm) || (tie && row.lambda > table[bl].lambda) {
                    Some((l, m))
                } else {
                    Some((bl, bm))
                }
            }
        };
    }
    let Some((bl, _)) = best else {
        return Err(Error::InsufficientData(
            "every cross-validation fold has a single class".into(),
        ));
    };
    let mut oof = vec![None; data.len()];
    for (f, range) in ranges.iter().enumerate() {
        if let Some(scores) = &results[bl * ranges.len() + f] {
            for (i, s) in range.clone().zip(scores) {
                oof[i] = Some(*s);
            }
        }
    }
    Ok(CvResult {
        best_lambda: lambda_grid[bl],
        table,
        oof_scores: oof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Distinct score maximizing F1 of `score >= t`; ties go to the larger t.
pub fn select_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdChoice> {
    let rows = f1_sweep(scores, labels)?;
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.f1 > best.f1 {
            best = *r;
        }
    }
    Ok(ThresholdChoice {
        threshold: best.threshold,
        f1: best.f1,
    })
}

/// Duplicate minority-class rows (uniformly, with replacement) until the
/// minority count is `round(ratio * original)`; rows are then ordered by key.
pub fn oversample(data: &FeatureMatrix, ratio: f64, seed: u64) -> Result<FeatureMatrix> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::Argument(format!("oversampling ratio must be >= 1, got {ratio}")));
    }
    let pos = data.positives();
    let minority: u8 = if pos <= data.len() - pos { 1 } else { 0 };
    let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == minority).collect();
    if members.is_empty() {
        return Ok(data.clone());
    }
    let target = (ratio * members.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for _ in members.len()..target {
        idx.push(members[rng.random_range(0..members.len())]);
    }
    idx.sort_by_key(|&i| data.keys[i]);
    Ok(data.select(&idx))
}

/// Historical activation frequency per (slot, weekday).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmModel {
    /// `table[slot][weekday]`, `None` when never observed.
    pub table: Vec<[Option<f64>; 7]>,
    pub slot_freq: Vec<Option<f64>>,
    pub global: f64,
    pub threshold: f64,
}

pub fn pm_fit(train: &ActivationSeries) -> Result<PmModel> {
    let spd = train.slots_per_day();
    let mut hits = vec![[0usize; 7]; spd];
    let mut seen = vec![[0usize; 7]; spd];
    for d in 0..train.len() {
        let w = train.weekday(d);
        for s in 0..spd {
            if !train.missing[d][s] {
                seen[s][w] += 1;
                hits[s][w] += train.days[d][s] as usize;
            }
        }
    }
    let total_seen: usize = seen.iter().flatten().sum();
    if total_seen == 0 {
        return Err(Error::InsufficientData("no observed slots to fit PM".into()));
    }
    let total_hits: usize = hits.iter().flatten().sum();
    let freq = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    Ok(PmModel {
        table: (0..spd)
            .map(|s| std::array::from_fn(|w| freq(hits[s][w], seen[s][w])))
            .collect(),
        slot_freq: (0..spd)
            .map(|s| freq(hits[s].iter().sum(), seen[s].iter().sum()))
            .collect(),
        global: total_hits as f64 / total_seen as f64,
        threshold: 0.5,
    })
}

impl PmModel {
    pub fn predict(&self, weekday: usize, slot: usize) -> Result<f64> {
        if slot >= self.table.len() || weekday >= 7 {
            return Err(Error::Argument(format!(
                "(weekday {weekday}, slot {slot}) outside a {}-slot table",
                self.table.len()
            )));
        }
        Ok(self.table[slot][weekday]
            .or(self.slot_freq[slot])
            .unwrap_or(self.global))
    }
}

pub fn pm_predict(m: &PmModel, weekday: usize, slot: usize) -> Result<f64> {
    m.predict(weekday, slot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowKey;
    use crate::ingest::Resolution;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> FeatureMatrix {
        let keys = (0..rows.len()).map(|i| RowKey { day: i, slot: 0 }).collect();
        FeatureMatrix {
            width: rows.first().map_or(0, Vec::len),
            rows,
            labels,
            keys,
        }
    }

    #[test]
    fn predict_proba_examples() {
        let m = LogisticModel::zeros(3);
        assert_eq!(m.predict_proba(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let mut m = LogisticModel::zeros(1);
        m.weights[0] = 1.0;
        assert_eq!(m.predict_proba(&[0.0]).unwrap(), 0.5);
        m.intercept = 3f64.ln();
        assert_abs_diff_eq!(m.predict_proba(&[0.0]).unwrap(), 0.75, epsilon = 1e-15);
        assert!(matches!(m.predict_proba(&[0.0, 1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn single_sample_objective() {
        let data = matrix(vec![vec![0.0]], vec![1]);
        let o = objective(&LogisticModel::zeros(1), &data, [1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(o, 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn separated_extreme_scores_approach_zero() {
        let data = matrix(vec![vec![1.0], vec![-1.0]], vec![1, 0]);
        let mut m = LogisticModel::zeros(1);
        m.weights[0] = 40.0;
        let o = objective(&m, &data, [1.0, 1.0]).unwrap();
        assert!(o <= 0.0 && o > -1e-15);
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (LogisticModel, FeatureMatrix) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let mut m = LogisticModel::zeros(p);
        m.intercept = rng.random_range(-1.0..1.0);
        for w in &mut m.weights {
            *w = rng.random_range(-2.0..2.0);
        }
        (m, matrix(rows, labels))
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let (m, data) = random_problem(&mut rng, 20, 4);
            let cw = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let g = gradient(&m, &data, cw).unwrap();
            let mut up = m.clone();
            let mut dn = m.clone();
            up.intercept += h;
            dn.intercept -= h;
            let fd = (objective(&up, &data, cw).unwrap() - objective(&dn, &data, cw).unwrap()) / (2.0 * h);
            assert!((fd - g.intercept).abs() <= 1e-5);
            for j in 0..m.width() {
                let mut up = m.clone();
                let mut dn = m.clone();
                up.weights[j] += h;
                dn.weights[j] -= h;
                let fd = (objective(&up, &data, cw).unwrap() - objective(&dn, &data, cw).unwrap()) / (2.0 * h);
                assert!((fd - g.weights[j]).abs() <= 1e-5, "{fd} vs {}", g.weights[j]);
            }
        }
    }

    #[test]
    fn separable_one_dimensional() {
        let xs = [-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0];
        let rows = xs.iter().map(|&x| vec![x]).collect();
        let labels = xs.iter().map(|&x| (x > 0.0) as u8).collect();
        let data = matrix(rows, labels);
        let m = train(&data, 1e-6, ClassWeights::Unit, &TrainOptions::default()).unwrap();
        for (row, y) in data.rows.iter().zip(&data.labels) {
            let p = m.predict_proba(row).unwrap();
            assert_eq!((p >= 0.5) as u8, *y);
        }
    }

    #[test]
    fn independent_labels_give_base_rate_intercept() {
        // every feature pattern carries the same 1-in-4 positive rate
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..8 {
                    rows.push(vec![a as f64, b as f64]);
                    labels.push((k < 2) as u8);
                }
            }
        }
        let data = matrix(rows, labels);
        let m = train(&data, 0.0, ClassWeights::Unit, &TrainOptions::default()).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-3), "{:?}", m.weights);
        assert_abs_diff_eq!(m.intercept, (0.25f64 / 0.75).ln(), epsilon = 1e-3);
    }

    #[test]
    fn huge_lambda_zeroes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, data) = random_problem(&mut rng, 50, 5);
        let m = train(&data, 1e3 * 50.0, ClassWeights::Unit, &TrainOptions::default()).unwrap();
        assert_eq!(m.zero_weights(), 5);
    }

    #[test]
    fn ascent_property_and_sparsity_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..8).map(|_| rng.random_range(0..2) as f64).collect())
            .collect();
        let labels: Vec<u8> = rows
            .iter()
            .map(|r| {
                let z = 2.0 * r[0] - 1.5 * r[1] + 0.5 * r[2] - 1.0;
                (rng.random::<f64>() < sigmoid(z)) as u8
            })
            .collect();
        let data = matrix(rows, labels);
        let opts = TrainOptions {
            record_history: true,
            ..TrainOptions::default()
        };
        let mut last_zeros = 0;
        for lambda in [0.0, 0.5, 2.0, 8.0, 32.0] {
            let m = train(&data, lambda, ClassWeights::Unit, &opts).unwrap();
            for w in m.meta.history.windows(2) {
                assert!(w[1] >= w[0], "objective decreased: {} -> {}", w[0], w[1]);
            }
            assert!(m.zero_weights() >= last_zeros);
            last_zeros = m.zero_weights();
        }
        assert!(last_zeros > 0);
    }

    #[test]
    fn class_weights_equal_replication() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(0..2) as f64).collect())
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 5 == 0) as u8).collect();
        let data = matrix(rows.clone(), labels.clone());
        let ratio = 4.0; // 32 negatives / 8 positives
        let weighted = train(
            &data,
            0.5,
            ClassWeights::Fixed {
                negative: 1.0,
                positive: ratio,
            },
            &TrainOptions::default(),
        )
        .unwrap();
        let mut rrows = Vec::new();
        let mut rlabels = Vec::new();
        for (r, &y) in rows.iter().zip(&labels) {
            let copies = if y == 1 { 4 } else { 1 };
            for _ in 0..copies {
                rrows.push(r.clone());
                rlabels.push(y);
            }
        }
        let replicated = train(
            &matrix(rrows, rlabels),
            0.5,
            ClassWeights::Unit,
            &TrainOptions::default(),
        )
        .unwrap();
        let rel = (weighted.meta.objective - replicated.meta.objective).abs() / replicated.meta.objective.abs();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn single_class_is_degenerate() {
        let data = matrix(vec![vec![1.0], vec![0.0]], vec![0, 0]);
        assert!(matches!(
            train(&data, 1.0, ClassWeights::Unit, &TrainOptions::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn balanced_weights() {
        let w = ClassWeights::Balanced.resolve(&[1, 0, 0, 0]).unwrap();
        assert_eq!(w, [4.0 / 6.0, 2.0]);
    }

    fn patterned(n_days: usize) -> FeatureMatrix {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut keys = Vec::new();
        for d in 0..n_days {
            for s in 0..4 {
                let mut r = vec![0.0; 4];
                r[s] = 1.0;
                rows.push(r);
                labels.push((s == 1 && d % 3 != 0) as u8);
                keys.push(RowKey { day: d, slot: s });
            }
        }
        FeatureMatrix {
            width: 4,
            rows,
            labels,
            keys,
        }
    }

    #[test]
    fn cross_validation_basics() {
        let data = patterned(30);
        let r = cross_validate(&data, &[1e-6], &CvOptions::default()).unwrap();
        assert_eq!(r.best_lambda, 1e-6);
        assert!(r.oof_scores.iter().all(Option::is_some));

        let r = cross_validate(&data, &[0.1, 0.1], &CvOptions::default()).unwrap();
        assert_eq!(r.table[0].mean_auc_pr, r.table[1].mean_auc_pr);

        let r = cross_validate(&data, &[1e-6, 1e4], &CvOptions::default()).unwrap();
        assert_eq!(r.best_lambda, 1e-6);

        let ranges = fold_ranges(&data, 3);
        assert_eq!(ranges, vec![0..40, 40..80, 80..120]);
        assert!(cross_validate(&data, &[], &CvOptions::default()).is_err());
        let opts = CvOptions {
            folds: 1,
            ..CvOptions::default()
        };
        assert!(cross_validate(&data, &[1.0], &opts).is_err());
    }

    #[test]
    fn threshold_selection() {
        let c = select_threshold(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap();
        assert_eq!(c.threshold, 0.1);
        assert_abs_diff_eq!(c.f1, 0.8, epsilon = 1e-15);

        let c = select_threshold(&[0.9, 0.7, 0.4, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!((c.threshold, c.f1), (0.7, 1.0));

        let c = select_threshold(&[0.3; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(c.threshold, 0.3);
        assert_abs_diff_eq!(c.f1, 2.0 * 0.5 / 1.5);
        assert!(select_threshold(&[0.3], &[0]).is_err());
    }

    #[test]
    fn oversampling() {
        let mut labels = vec![0u8; 50];
        labels[..10].iter_mut().for_each(|y| *y = 1);
        let rows = (0..50).map(|i| vec![i as f64]).collect();
        let data = matrix(rows, labels);
        assert_eq!(oversample(&data, 1.0, 1).unwrap(), data);
        let o = oversample(&data, 3.0, 1).unwrap();
        assert_eq!(o.positives(), 30);
        assert_eq!(o.len() - o.positives(), 40);
        assert_eq!(o, oversample(&data, 3.0, 1).unwrap());
        assert!(o.keys.windows(2).all(|w| w[0] <= w[1]));
        assert!(oversample(&data, 0.5, 1).is_err());
    }

    fn hourly(days: Vec<Vec<u8>>, first: NaiveDate) -> ActivationSeries {
        let n = days.len();
        ActivationSeries {
            resolution: Resolution::Hourly,
            group_spec: None,
            first_day: first,
            missing: vec![vec![false; 24]; n],
            missing_readings: vec![0; n],
            days,
        }
    }

    #[test]
    fn pattern_matching_counts() {
        // 2016-01-07 is a Thursday; 8 weeks of history
        let first = NaiveDate::from_ymd_opt(2016, 1, 7).unwrap();
        let mut days = vec![vec![0u8; 24]; 56];
        for (k, d) in (0..56).step_by(7).enumerate() {
            if k % 2 == 0 {
                days[d][17] = 1;
            }
        }
        let m = pm_fit(&hourly(days, first)).unwrap();
        assert_eq!(m.predict(3, 17).unwrap(), 0.5);
        assert_eq!(m.predict(3, 3).unwrap(), 0.0);

        // only Thursdays observed: other weekdays fall back to the slot rate
        let mut x = hourly(vec![vec![0u8; 24]; 1], first);
        x.days[0][5] = 1;
        let m = pm_fit(&x).unwrap();
        assert_eq!(m.predict(0, 5).unwrap(), 1.0);
        assert!(m.predict(7, 0).is_err());
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = LogisticModel::zeros(6);
        for w in &mut m.weights {
            *w = f64::from_bits(rng.next_u64() >> 2);
        }
        m.intercept = -1.0 / 3.0;
        let s = crate::canonical::to_string(&m).unwrap();
        let back: LogisticModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn proba_monotone_in_z(a in -30.0f64..30.0, b in -30.0f64..30.0) {
            prop_assume!(a < b);
            prop_assert!(sigmoid(a) <= sigmoid(b));
            prop_assert!(sigmoid(a) > 0.0 && sigmoid(b) < 1.0);
        }
    }
}
