//! File-backed stages. Every JSON artifact records the SHA-256 of the files
//! it was built from; a stage that loads an artifact whose inputs have
//! changed since refuses to continue.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flexsim_core::evaluate::{DaySchedule, SavingsRow};
use flexsim_core::ingest::{load_market, load_readings, quarter_stride, write_market, write_readings};
use flexsim_core::{canonical, MarketSeries, ReadingSeries};

use crate::config::ExperimentConfig;
use crate::error::{CliError, StageExt};
use crate::pipeline::{self, Evaluation, Forecast, Ingested, TauSummary, Trained};

pub const INGEST: &str = "ingest.json";
pub const MODEL: &str = "model.json";
pub const FORECAST: &str = "forecast.json";
pub const SCHEDULE: &str = "schedule.json";
pub const EVALUATE: &str = "evaluate.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PR_CURVE_CSV: &str = "pr_curve.csv";
pub const F1_SWEEP_CSV: &str = "f1_sweep.csv";
pub const SAVINGS_THRESHOLD_CSV: &str = "savings_threshold.csv";
pub const SAVINGS_TAU_CSV: &str = "savings_tau.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

const READINGS_KEY: &str = "readings";
const MARKET_KEY: &str = "market";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub stage: String,
    /// Input name to SHA-256 of its bytes when this artifact was written.
    pub upstream: BTreeMap<String, String>,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOutput {
    pub tau: usize,
    pub threshold: f64,
    pub days: Vec<DaySchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub auc_pr: f64,
    pub selected_threshold: f64,
    pub best_f1_threshold: f64,
    pub best_f1: f64,
    pub test_slots: usize,
    pub test_positives: usize,
    pub taus: Vec<TauSummary>,
    pub savings: Vec<SavingsRow>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::MissingFile(path.display().to_string())
    } else {
        CliError::Internal(format!("{}: {e}", path.display()))
    }
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.display().to_string()))
    }
}

/// Runs stages against one output directory, remembering what it wrote.
pub struct Stages {
    pub cfg: ExperimentConfig,
    written: Vec<PathBuf>,
    quiet: bool,
}

impl Stages {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Stages {
            cfg,
            written: Vec::new(),
            quiet: false,
        }
    }

    /// Suppress stdout summaries.
    pub fn quiet(mut self) -> Self {
        self.quiet = true;
        self
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn input_path(&self, key: &str) -> PathBuf {
        match key {
            READINGS_KEY => self.cfg.readings.clone(),
            MARKET_KEY => self.cfg.market.clone(),
            other => self.path(other),
        }
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(self.out())
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", self.out().display())))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.ensure_out()?;
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn write_artifact<T: Serialize>(
        &mut self,
        name: &str,
        stage: &'static str,
        inputs: &[&str],
        data: &T,
    ) -> Result<(), CliError> {
        let mut upstream = BTreeMap::new();
        for key in inputs {
            upstream.insert(key.to_string(), sha256_file(&self.input_path(key))?);
        }
        let art = Artifact {
            stage: stage.to_string(),
            upstream,
            data,
        };
        let text = canonical::to_string(&art).stage(stage)?;
        self.write_text(name, &text)
    }

    /// Load an artifact and check it against the current state of its inputs.
    /// `None` when the file does not exist.
    fn load_artifact<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, CliError> {
        let path = self.path(name);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CliError::Internal(format!("{}: {e}", path.display()))),
        };
        let art: Artifact<T> = serde_json::from_str(&text)
            .map_err(|e| CliError::Stale(format!("{} is unreadable ({e}); re-run its stage", path.display())))?;
        for (key, recorded) in &art.upstream {
            let input = self.input_path(key);
            if !input.is_file() {
                return Err(CliError::Stale(format!(
                    "{name} was built from {}, which no longer exists",
                    input.display()
                )));
            }
            let now = sha256_file(&input)?;
            if &now != recorded {
                return Err(CliError::Stale(format!(
                    "{name} was built from a different {} (sha256 {} then, {} now); re-run `flexsim {}`",
                    input.display(),
                    &recorded[..12.min(recorded.len())],
                    &now[..12],
                    art.stage
                )));
            }
        }
        Ok(Some(art.data))
    }

    pub fn write_resolved_config(&mut self) -> Result<(), CliError> {
        let text = canonical::to_string(&self.cfg).stage("config")?;
        self.write_text(RESOLVED_CONFIG, &text)
    }

    fn readings(&self) -> Result<ReadingSeries, CliError> {
        require(&self.cfg.readings)?;
        load_readings(&self.cfg.readings, quarter_stride()).stage("ingest")
    }

    fn market(&self) -> Result<MarketSeries, CliError> {
        require(&self.cfg.market)?;
        load_market(&self.cfg.market).stage("ingest")
    }

    /// Write synthetic readings and market files at the configured input paths.
    pub fn synth(&mut self) -> Result<(), CliError> {
        let (readings, market) = pipeline::synthesize(&self.cfg)?;
        for p in [&self.cfg.readings, &self.cfg.market] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
            }
        }
        write_readings(&self.cfg.readings, &readings).stage("synth")?;
        write_market(&self.cfg.market, &market).stage("synth")?;
        self.say(format!(
            "wrote {} readings to {} and {} market hours to {}",
            readings.values.len(),
            self.cfg.readings.display(),
            market.records.len(),
            self.cfg.market.display()
        ));
        Ok(())
    }

    pub fn ingest(&mut self) -> Result<Ingested, CliError> {
        let readings = self.readings()?;
        // fail early on a market file the later stages could not use
        self.market()?;
        let ing = pipeline::ingest(&readings, &self.cfg)?;
        self.write_artifact(INGEST, "ingest", &[READINGS_KEY, MARKET_KEY], &ing)?;
        let positives: usize = ing.series.days.iter().flatten().map(|&y| y as usize).sum();
        self.say(format!(
            "{}: {} days at {} resolution, {} activations, test from {}",
            ing.device_id,
            ing.series.len(),
            ing.resolution(),
            positives,
            pipeline::first_test_date(&ing)
        ));
        Ok(ing)
    }

    fn ingested(&mut self) -> Result<Ingested, CliError> {
        match self.load_artifact::<Ingested>(INGEST)? {
            Some(ing) if ing.resolution() == self.cfg.resolution => Ok(ing),
            Some(ing) => Err(CliError::Stale(format!(
                "{INGEST} holds {} labels but {} was requested; re-run `flexsim ingest`",
                ing.resolution(),
                self.cfg.resolution
            ))),
            None => self.ingest(),
        }
    }

    pub fn train(&mut self) -> Result<Trained, CliError> {
        let ing = self.ingested()?;
        let trained = pipeline::fit(&ing, &self.cfg)?;
        self.write_artifact(MODEL, "train", &[INGEST], &trained)?;
        let mut lines = vec![format!(
            "{:?} model on {} rows ({} positive)",
            trained.model_kind, trained.train_rows, trained.train_positives
        )];
        for row in &trained.cv {
            let auc = row.mean_auc_pr.map_or("n/a".to_string(), |a| format!("{a:.4}"));
            lines.push(format!("  lambda {:<8} cv auc-pr {auc}", row.lambda));
        }
        if let Some(l) = trained.best_lambda {
            lines.push(format!("best lambda {l}"));
        }
        lines.push(format!(
            "threshold {:.4} (training F1 {:.4})",
            trained.threshold, trained.threshold_f1
        ));
        self.say(lines.join("\n"));
        Ok(trained)
    }

    fn trained(&mut self) -> Result<Trained, CliError> {
        match self.load_artifact::<Trained>(MODEL)? {
            Some(t) => Ok(t),
            None => self.train(),
        }
    }

    pub fn forecast(&mut self) -> Result<Forecast, CliError> {
        let trained = self.trained()?;
        let ing = self.ingested()?;
        let readings = self.readings()?;
        let fc = pipeline::forecast(&ing, &trained, &readings, &self.cfg)?;
        self.write_artifact(FORECAST, "forecast", &[INGEST, MODEL, READINGS_KEY], &fc)?;
        let predicted = fc.scores().iter().filter(|&&s| s >= fc.threshold).count();
        let runs: usize = fc.days.iter().map(|d| d.actual.len()).sum();
        self.say(format!(
            "{} test days, {predicted} predicted activations, {runs} actual runs",
            fc.days.len()
        ));
        Ok(fc)
    }

    fn forecasted(&mut self) -> Result<Forecast, CliError> {
        match self.load_artifact::<Forecast>(FORECAST)? {
            Some(f) => Ok(f),
            None => self.forecast(),
        }
    }

    /// Schedule every test day at the largest configured τ.
    pub fn schedule(&mut self) -> Result<ScheduleOutput, CliError> {
        let fc = self.forecasted()?;
        let market = self.market()?;
        let tau = *self.cfg.taus.iter().max().expect("validated non-empty");
        let days = pipeline::schedule(&fc, &market, tau, &self.cfg)?;
        let out = ScheduleOutput {
            tau,
            threshold: fc.threshold,
            days,
        };
        self.write_artifact(SCHEDULE, "schedule", &[FORECAST, MARKET_KEY], &out)?;
        let mut lines = vec![format!(
            "{:<10} {:>6} {:>14} {:>14} {:>6}",
            "date", "offers", "volume_red", "delta_r", "exact"
        )];
        for d in &out.days {
            lines.push(format!(
                "{:<10} {:>6} {:>14.6} {:>14.4} {:>6}",
                d.date.to_string(),
                d.offers.len(),
                d.volume_reduction,
                d.delta_r,
                d.exact
            ));
        }
        let total: f64 = out.days.iter().map(|d| d.delta_r).sum();
        lines.push(format!("tau {tau}: total delta_r {total:.4}"));
        self.say(lines.join("\n"));
        Ok(out)
    }

    pub fn evaluate(&mut self) -> Result<Evaluation, CliError> {
        let fc = self.forecasted()?;
        let market = self.market()?;
        let ev = pipeline::evaluate(&fc, &market, &self.cfg)?;
        self.write_artifact(EVALUATE, "evaluate", &[FORECAST, MARKET_KEY], &ev)?;
        self.say(format!(
            "AUC-PR {:.4} over {} test slots ({} positive); best test F1 {:.4} at threshold {:.4}",
            ev.auc_pr, ev.test_slots, ev.test_positives, ev.best_f1, ev.best_f1_threshold
        ));
        Ok(ev)
    }

    pub fn report(&mut self) -> Result<Report, CliError> {
        let ev: Evaluation = self.load_artifact(EVALUATE)?.ok_or_else(|| {
            CliError::Stale(format!(
                "{} not found; run `flexsim evaluate` before `flexsim report`",
                self.path(EVALUATE).display()
            ))
        })?;
        let report = Report {
            auc_pr: ev.auc_pr,
            selected_threshold: ev.selected_threshold,
            best_f1_threshold: ev.best_f1_threshold,
            best_f1: ev.best_f1,
            test_slots: ev.test_slots,
            test_positives: ev.test_positives,
            taus: ev.taus.clone(),
            savings: ev.savings.rows.clone(),
        };
        let text = canonical::to_string(&report).stage("report")?;
        self.write_text(REPORT_JSON, &text)?;
        self.write_text(REPORT_CSV, &tau_csv(&ev.taus)?)?;
        self.write_text(SAVINGS_TAU_CSV, &savings_rows_csv(&ev.savings.best_per_tau())?)?;
        self.write_text(SAVINGS_THRESHOLD_CSV, &savings_rows_csv(&ev.savings.rows)?)?;
        self.write_text(PR_CURVE_CSV, &pr_csv(&ev)?)?;
        self.write_text(F1_SWEEP_CSV, &f1_csv(&ev)?)?;
        self.say(summary_table(&report));
        Ok(report)
    }

    /// All stages from fresh, removing everything written if one fails.
    pub fn run(&mut self) -> Result<Report, CliError> {
        let result = self.run_inner();
        if result.is_err() {
            for p in self.written.drain(..) {
                let _ = std::fs::remove_file(p);
            }
        }
        result
    }

    fn run_inner(&mut self) -> Result<Report, CliError> {
        self.write_resolved_config()?;
        self.ingest()?;
        self.train()?;
        self.forecast()?;
        self.schedule()?;
        self.evaluate()?;
        self.report()
    }
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(",")).expect("in-memory write");
    for r in rows {
        writeln!(out, "{}", r.join(",")).expect("in-memory write");
    }
    String::from_utf8(out).map_err(|e| CliError::Internal(e.to_string()))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn tau_csv(taus: &[TauSummary]) -> Result<String, CliError> {
    csv_string(
        &[
            "tau",
            "optimal_delta_r",
            "best_threshold",
            "best_net",
            "best_pct_optimal",
            "selected_net",
            "selected_pct_optimal",
        ],
        taus.iter()
            .map(|t| {
                vec![
                    t.tau.to_string(),
                    num(t.optimal_delta_r),
                    num(t.best_threshold),
                    num(t.best_net),
                    opt(t.best_pct_optimal),
                    num(t.selected_net),
                    opt(t.selected_pct_optimal),
                ]
            })
            .collect(),
    )
}

const SAVINGS_HEADER: [&str; 13] = [
    "tau",
    "threshold",
    "precision",
    "recall",
    "f1",
    "delta_r",
    "loss",
    "net",
    "pct_optimal",
    "tp_gain",
    "fp_loss",
    "fn_loss",
    "optimal_delta_r",
];

fn savings_row(r: &SavingsRow) -> Vec<String> {
    vec![
        r.tau.to_string(),
        num(r.threshold),
        num(r.precision),
        num(r.recall),
        num(r.f1),
        num(r.delta_r),
        num(r.loss),
        num(r.net),
        opt(r.pct_optimal),
        num(r.tp_gain),
        num(r.fp_loss),
        num(r.fn_loss),
        num(r.optimal_delta_r),
    ]
}

fn savings_rows_csv(rows: &[SavingsRow]) -> Result<String, CliError> {
    csv_string(&SAVINGS_HEADER, rows.iter().map(savings_row).collect())
}

fn pr_csv(ev: &Evaluation) -> Result<String, CliError> {
    csv_string(
        &["threshold", "precision", "recall"],
        ev.pr_curve
            .points
            .iter()
            .map(|p| vec![num(p.threshold), num(p.precision), num(p.recall)])
            .collect(),
    )
}

fn f1_csv(ev: &Evaluation) -> Result<String, CliError> {
    csv_string(
        &["threshold", "precision", "recall", "f1"],
        ev.f1_sweep
            .iter()
            .map(|r| vec![num(r.threshold), num(r.precision), num(r.recall), num(r.f1)])
            .collect(),
    )
}

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |p| format!("{p:.1}%"))
}

pub fn summary_table(r: &Report) -> String {
    let mut lines = vec![
        format!(
            "AUC-PR {:.4}   selected threshold {:.4}   best test F1 {:.4} at {:.4}",
            r.auc_pr, r.selected_threshold, r.best_f1, r.best_f1_threshold
        ),
        format!(
            "{:>4} {:>12} {:>9} {:>12} {:>9} {:>12} {:>9}",
            "tau", "optimal", "best_t", "best_net", "best_%", "sel_net", "sel_%"
        ),
    ];
    for t in &r.taus {
        lines.push(format!(
            "{:>4} {:>12.4} {:>9.4} {:>12.4} {:>9} {:>12.4} {:>9}",
            t.tau,
            t.optimal_delta_r,
            t.best_threshold,
            t.best_net,
            pct(t.best_pct_optimal),
            t.selected_net,
            pct(t.selected_pct_optimal)
        ));
    }
    lines.join("\n")
}
