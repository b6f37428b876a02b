//! In-memory pipeline stages. The command-line stages wrap these with
//! artifact files; tests and benchmarks call them directly.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use flexsim_core::classifier::{
    cross_validate, oversample, pm_fit, select_threshold, train, CvOptions, CvRow, OversampleOptions,
};
use flexsim_core::evaluate::{
    f1_sweep, pr_curve, savings_sweep, schedule_day, ActualRun, DayInput, DaySchedule, F1Row, PrCurve, SavingsOptions,
    SavingsReport, SavingsRow, SlotForecast,
};
use flexsim_core::features::{build_matrix, extract, extract_with_today, FeatureConfig, FeatureLayout, WARMUP_DAYS};
use flexsim_core::flexoffer::AnchorTable;
use flexsim_core::ingest::{derive_groups, split_point, to_daily, to_group, to_hourly_with, LabelOptions};
use flexsim_core::psm::{extract_runs, EnergyProfile, PsmHistory, PsmOptions};
use flexsim_core::synth::{gen_device, gen_market, UsagePattern};
use flexsim_core::{
    ActivationSeries, ClassWeights, GroupSpec, LogisticModel, MarketSeries, PmModel, ReadingSeries, Resolution,
    TrainOptions,
};

use crate::config::{ExperimentConfig, ModelKind, PatternKind};
use crate::error::{CliError, StageExt};

const MAX_RUN_HOURS: usize = 24;
const MARKET_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Synthetic device readings and market for `cfg.synth`.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<(ReadingSeries, MarketSeries), CliError> {
    let s = &cfg.synth;
    let mut pattern = match s.pattern {
        PatternKind::Household => UsagePattern::household(s.noise),
        PatternKind::Routine => UsagePattern::routine(s.peak, s.noise),
    };
    pattern.missing_rate = s.missing_rate;
    let readings = gen_device(&pattern, s.start, s.days, cfg.seed).stage("synth")?;
    let market = gen_market(
        s.start,
        s.days + s.market_extra_days,
        cfg.seed ^ MARKET_SEED_SALT,
        &s.market,
    )
    .stage("synth")?;
    Ok((readings, market))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub device_id: String,
    pub hourly: ActivationSeries,
    /// Labels at the configured resolution (same as `hourly` when hourly).
    pub series: ActivationSeries,
    pub group_spec: Option<GroupSpec>,
    /// First test day.
    pub split_day: usize,
}

impl Ingested {
    pub fn resolution(&self) -> Resolution {
        self.series.resolution
    }
}

pub fn ingest(readings: &ReadingSeries, cfg: &ExperimentConfig) -> Result<Ingested, CliError> {
    let labels = LabelOptions {
        threshold_watts: cfg.threshold_watts,
        label_operating_hours: cfg.label_operating_hours,
    };
    let hourly = to_hourly_with(readings, &labels).stage("ingest")?;
    let split_day = split_point(hourly.len(), cfg.train_fraction);
    if split_day <= WARMUP_DAYS || split_day >= hourly.len() {
        return Err(CliError::Core {
            stage: "ingest",
            source: flexsim_core::Error::InsufficientData(format!(
                "{} days split at day {split_day}: need more than {WARMUP_DAYS} training days and at least one test day",
                hourly.len()
            )),
        });
    }
    let (series, group_spec) = match cfg.resolution {
        Resolution::Hourly => (hourly.clone(), None),
        Resolution::Group => {
            let spec = match &cfg.groups {
                Some(g) => GroupSpec::new(g.clone()).stage("ingest")?,
                // groups come from training days only
                None => derive_groups(&hourly.slice_days(0..split_day), cfg.group_count).stage("ingest")?,
            };
            (to_group(&hourly, &spec).stage("ingest")?, Some(spec))
        }
        Resolution::Daily => (to_daily(&hourly).stage("ingest")?, None),
    };
    Ok(Ingested {
        device_id: readings.device_id.clone(),
        hourly,
        series,
        group_spec,
        split_day,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Logistic(LogisticModel),
    Pm(PmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model_kind: ModelKind,
    pub resolution: Resolution,
    pub layout: FeatureLayout,
    pub model: Model,
    pub best_lambda: Option<f64>,
    pub cv: Vec<CvRow>,
    /// Decision threshold chosen by maximum F1 on training scores.
    pub threshold: f64,
    pub threshold_f1: f64,
    pub train_rows: usize,
    pub train_positives: usize,
}

pub fn layout_for(resolution: Resolution, cfg: &ExperimentConfig) -> Result<FeatureLayout, CliError> {
    let fc = FeatureConfig {
        interactions: cfg.interactions.clone(),
        recursive: cfg.recursive,
    };
    FeatureLayout::new(resolution, &fc).stage("features")
}

pub fn fit(ing: &Ingested, cfg: &ExperimentConfig) -> Result<Trained, CliError> {
    let layout = layout_for(ing.resolution(), cfg)?;
    let all = build_matrix(&ing.series, &layout).stage("features")?;
    let train_idx: Vec<usize> = (0..all.len()).filter(|&i| all.keys[i].day < ing.split_day).collect();
    let data = all.select(&train_idx);
    let train_rows = data.len();
    let train_positives = data.positives();

    match cfg.model {
        ModelKind::Nlr | ModelKind::Lr => {
            let class_weights = if cfg.model == ModelKind::Lr {
                ClassWeights::Balanced
            } else {
                ClassWeights::Unit
            };
            let topts = TrainOptions {
                max_iter: cfg.max_iter,
                tol: cfg.tol,
                record_history: false,
            };
            let over = cfg.oversample.then_some(OversampleOptions {
                ratio: cfg.oversample_ratio,
                seed: cfg.seed,
            });
            let cv_opts = CvOptions {
                folds: cfg.folds,
                class_weights,
                train: topts,
                oversample: over,
            };
            let cv = cross_validate(&data, &cfg.lambda_grid, &cv_opts).stage("classifier")?;
            let (oof, oof_labels): (Vec<f64>, Vec<u8>) = cv
                .oof_scores
                .iter()
                .zip(&data.labels)
                .filter_map(|(s, &y)| s.map(|s| (s, y)))
                .unzip();
            let choice = select_threshold(&oof, &oof_labels).stage("classifier")?;
            let fit_data = match over {
                Some(o) => oversample(&data, o.ratio, o.seed).stage("classifier")?,
                None => data,
            };
            let mut model = train(&fit_data, cv.best_lambda, class_weights, &topts)
                .stage("classifier")?
                .with_layout(layout.clone());
            model.threshold = choice.threshold;
            Ok(Trained {
                model_kind: cfg.model,
                resolution: ing.resolution(),
                layout,
                model: Model::Logistic(model),
                best_lambda: Some(cv.best_lambda),
                cv: cv.table,
                threshold: choice.threshold,
                threshold_f1: choice.f1,
                train_rows,
                train_positives,
            })
        }
        ModelKind::Pm => {
            let mut pm = pm_fit(&ing.series.slice_days(0..ing.split_day)).stage("classifier")?;
            let scores: Vec<f64> = data
                .keys
                .iter()
                .map(|k| pm.predict(ing.series.weekday(k.day), k.slot))
                .collect::<Result<_, _>>()
                .stage("classifier")?;
            let choice = select_threshold(&scores, &data.labels).stage("classifier")?;
            pm.threshold = choice.threshold;
            Ok(Trained {
                model_kind: cfg.model,
                resolution: ing.resolution(),
                layout,
                model: Model::Pm(pm),
                best_lambda: None,
                cv: Vec::new(),
                threshold: choice.threshold,
                threshold_f1: choice.f1,
                train_rows,
                train_positives,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub resolution: Resolution,
    pub threshold: f64,
    pub days: Vec<DayInput>,
}

impl Forecast {
    pub fn scores(&self) -> Vec<f64> {
        self.days.iter().flat_map(|d| d.slots.iter().map(|s| s.score)).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.days.iter().flat_map(|d| d.slots.iter().map(|s| s.label)).collect()
    }
}

fn slot_of(ing: &Ingested, hour: usize) -> usize {
    match ing.resolution() {
        Resolution::Hourly => hour,
        Resolution::Group => ing.group_spec.as_ref().expect("group spec").group_of_hour(hour),
        Resolution::Daily => 0,
    }
}

fn day_scores(ing: &Ingested, trained: &Trained, day: usize) -> Result<Vec<f64>, CliError> {
    let x = &ing.series;
    let spd = x.slots_per_day();
    match &trained.model {
        Model::Pm(pm) => (0..spd)
            .map(|s| pm.predict(x.weekday(day), s))
            .collect::<Result<_, _>>()
            .stage("forecast"),
        Model::Logistic(m) if trained.layout.recursive => {
            let mut today: Vec<u8> = Vec::with_capacity(spd);
            let mut out = Vec::with_capacity(spd);
            for s in 0..spd {
                let row = extract_with_today(x, day, s, &trained.layout, Some(&today)).stage("forecast")?;
                let p = m.predict_proba(&row).stage("forecast")?;
                today.push((p >= trained.threshold) as u8);
                out.push(p);
            }
            Ok(out)
        }
        Model::Logistic(m) => (0..spd)
            .map(|s| m.predict_proba(&extract(x, day, s, &trained.layout)?))
            .collect::<Result<_, _>>()
            .stage("forecast"),
    }
}

/// Scores, offer shapes, and actual runs for every test day.
pub fn forecast(
    ing: &Ingested,
    trained: &Trained,
    readings: &ReadingSeries,
    cfg: &ExperimentConfig,
) -> Result<Forecast, CliError> {
    if trained.resolution != ing.resolution() {
        return Err(CliError::Stale(format!(
            "model was trained at {} resolution but the ingested data is {}",
            trained.resolution,
            ing.resolution()
        )));
    }
    let grid = readings.day_grid().stage("forecast")?;
    let psm_opts = PsmOptions {
        threshold_watts: cfg.threshold_watts,
        unit: cfg.psm_unit,
        averaging: cfg.psm_averaging,
    };
    let history = PsmHistory::from_grid(&grid, ing.split_day, &psm_opts);
    let anchors = AnchorTable::from_hourly(&ing.hourly.slice_days(0..ing.split_day)).stage("flexoffer")?;
    let spec = ing.group_spec.as_ref();
    let res = ing.resolution();

    let mut actual: BTreeMap<usize, Vec<ActualRun>> = BTreeMap::new();
    for run in extract_runs(&grid, grid.values.len(), true, &psm_opts) {
        if run.day < ing.split_day {
            continue;
        }
        let mut profile = EnergyProfile {
            unit: psm_opts.unit,
            units: run.units.clone(),
        }
        .to_hourly();
        profile.truncate(MAX_RUN_HOURS);
        actual.entry(run.day).or_default().push(ActualRun {
            start_hour: run.start_hour(),
            slot: slot_of(ing, run.start_hour()),
            profile,
        });
    }

    let mut profiles: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut days = Vec::new();
    for day in ing.split_day..ing.series.len() {
        let weekday = ing.series.weekday(day);
        let scores = day_scores(ing, trained, day)?;
        let mut slots = Vec::with_capacity(scores.len());
        for (slot, score) in scores.into_iter().enumerate() {
            let key = (slot, if res == Resolution::Daily { weekday } else { 0 });
            let profile = match profiles.get(&key) {
                Some(p) => p.clone(),
                None => {
                    let p = history.profile_for(res, spec, slot, weekday).stage("psm")?.to_hourly();
                    profiles.insert(key, p.clone());
                    p
                }
            };
            slots.push(SlotForecast {
                score,
                label: ing.series.days[day][slot],
                anchor: anchors.anchor(res, spec, slot, weekday).stage("flexoffer")?,
                profile,
            });
        }
        days.push(DayInput {
            day,
            date: ing.series.date(day),
            slots,
            actual: actual.remove(&day).unwrap_or_default(),
        });
    }
    Ok(Forecast {
        resolution: res,
        threshold: trained.threshold,
        days,
    })
}

pub fn savings_options(cfg: &ExperimentConfig, resolution: Resolution) -> SavingsOptions {
    SavingsOptions {
        price_mode: cfg.price_mode,
        loss_mode: cfg.loss_mode,
        strict: cfg.strict,
        objective: cfg.objective,
        budget: cfg.budget as u128,
        resolution,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: usize,
    pub optimal_delta_r: f64,
    /// Threshold with the largest net savings.
    pub best_threshold: f64,
    pub best_net: f64,
    pub best_pct_optimal: Option<f64>,
    pub selected_net: f64,
    pub selected_pct_optimal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc_pr: f64,
    pub pr_curve: PrCurve,
    pub f1_sweep: Vec<F1Row>,
    /// Threshold chosen on training data.
    pub selected_threshold: f64,
    /// Threshold with the highest F1 on the test days.
    pub best_f1_threshold: f64,
    pub best_f1: f64,
    pub test_slots: usize,
    pub test_positives: usize,
    pub savings: SavingsReport,
    pub taus: Vec<TauSummary>,
}

impl Evaluation {
    pub fn rows_at(&self, threshold: f64) -> Vec<SavingsRow> {
        self.savings
            .rows
            .iter()
            .filter(|r| r.threshold == threshold)
            .copied()
            .collect()
    }
}

pub fn evaluate(fc: &Forecast, market: &MarketSeries, cfg: &ExperimentConfig) -> Result<Evaluation, CliError> {
    let scores = fc.scores();
    let labels = fc.labels();
    let curve = pr_curve(&scores, &labels).stage("evaluate")?;
    let sweep = f1_sweep(&scores, &labels).stage("evaluate")?;
    let best = sweep
        .iter()
        .copied()
        .fold(None::<F1Row>, |b, r| match b {
            Some(b) if b.f1 >= r.f1 => Some(b),
            _ => Some(r),
        })
        .expect("sweep is non-empty");
    let mut thresholds = cfg.thresholds.clone();
    thresholds.push(fc.threshold);
    thresholds.push(best.threshold);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let opts = savings_options(cfg, fc.resolution);
    let savings = savings_sweep(&fc.days, market, &cfg.taus, &thresholds, &opts).stage("evaluate")?;
    let mut taus: Vec<TauSummary> = Vec::new();
    for b in savings.best_per_tau() {
        let sel = savings.row(b.tau, fc.threshold).expect("selected threshold evaluated");
        taus.push(TauSummary {
            tau: b.tau,
            optimal_delta_r: b.optimal_delta_r,
            best_threshold: b.threshold,
            best_net: b.net,
            best_pct_optimal: b.pct_optimal,
            selected_net: sel.net,
            selected_pct_optimal: sel.pct_optimal,
        });
    }
    Ok(Evaluation {
        auc_pr: curve.auc,
        pr_curve: curve,
        f1_sweep: sweep,
        selected_threshold: fc.threshold,
        best_f1_threshold: best.threshold,
        best_f1: best.f1,
        test_slots: labels.len(),
        test_positives: labels.iter().filter(|&&y| y == 1).count(),
        savings,
        taus,
    })
}

/// Schedules of every test day at the model threshold.
pub fn schedule(
    fc: &Forecast,
    market: &MarketSeries,
    tau: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<DaySchedule>, CliError> {
    let opts = savings_options(cfg, fc.resolution);
    fc.days
        .iter()
        .map(|d| schedule_day(d, market, tau, fc.threshold, &opts))
        .collect::<Result<_, _>>()
        .stage("schedule")
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ingested: Ingested,
    pub trained: Trained,
    pub forecast: Forecast,
    pub evaluation: Evaluation,
}

pub fn run_in_memory(
    readings: &ReadingSeries,
    market: &MarketSeries,
    cfg: &ExperimentConfig,
) -> Result<RunOutput, CliError> {
    let ingested = ingest(readings, cfg)?;
    let trained = fit(&ingested, cfg)?;
    let forecast = forecast(&ingested, &trained, readings, cfg)?;
    let evaluation = evaluate(&forecast, market, cfg)?;
    Ok(RunOutput {
        ingested,
        trained,
        forecast,
        evaluation,
    })
}

pub fn first_test_date(ing: &Ingested) -> NaiveDate {
    ing.series.date(ing.split_day)
}
