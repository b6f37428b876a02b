//! Experiment configuration: JSON file, defaults, and command-line overrides.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use flexsim_core::features::Categorical;
use flexsim_core::psm::{Averaging, EnergyUnit};
use flexsim_core::synth::MarketSpec;
use flexsim_core::{LossMode, Objective, PriceMode, Resolution};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Logistic regression with unit class weights.
    #[default]
    Nlr,
    /// Logistic regression weighted by inverse class frequency.
    Lr,
    /// Per-(slot, weekday) frequency table.
    Pm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    /// Several habitual hours per day of moderate probability.
    #[default]
    Household,
    /// One habitual hour per day with probability `peak`.
    Routine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub pattern: PatternKind,
    /// Habitual-hour probability of the routine pattern.
    pub peak: f64,
    pub days: usize,
    pub start: NaiveDate,
    pub noise: f64,
    pub missing_rate: f64,
    /// Extra market days after the last device day, so late offers can be priced.
    pub market_extra_days: usize,
    pub market: MarketSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pattern: PatternKind::Household,
            peak: 0.9,
            days: 365,
            start: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            noise: 0.3,
            missing_rate: 0.0,
            market_extra_days: 2,
            market: MarketSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub readings: PathBuf,
    pub market: PathBuf,
    pub output_dir: PathBuf,
    pub resolution: Resolution,
    /// Number of hour groups derived from training frequencies.
    pub group_count: usize,
    /// Explicit hour groups; overrides `group_count`.
    pub groups: Option<Vec<Vec<usize>>>,
    pub threshold_watts: f64,
    pub label_operating_hours: bool,
    pub train_fraction: f64,
    pub model: ModelKind,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub oversample: bool,
    pub oversample_ratio: f64,
    pub interactions: Option<Vec<(Categorical, Categorical)>>,
    pub recursive: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub psm_unit: EnergyUnit,
    pub psm_averaging: Averaging,
    pub taus: Vec<usize>,
    /// Savings thresholds; the selected and the best-F1 thresholds are always added.
    pub thresholds: Vec<f64>,
    pub strict: bool,
    pub objective: Objective,
    pub budget: u64,
    pub price_mode: PriceMode,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub synth: SynthConfig,
}

pub fn default_thresholds() -> Vec<f64> {
    let mut t = vec![0.02, 0.05];
    t.extend((2..20).map(|i| i as f64 / 20.0));
    t
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            readings: "readings.csv".into(),
            market: "market.csv".into(),
            output_dir: "out".into(),
            resolution: Resolution::Hourly,
            group_count: 3,
            groups: None,
            threshold_watts: flexsim_core::ingest::DEFAULT_THRESHOLD_WATTS,
            label_operating_hours: false,
            train_fraction: 0.8,
            model: ModelKind::Nlr,
            lambda_grid: vec![1e-6, 1e-3, 1.0, 10.0, 100.0],
            folds: 5,
            oversample: false,
            oversample_ratio: 2.0,
            interactions: None,
            recursive: false,
            max_iter: 5000,
            tol: 1e-8,
            psm_unit: EnergyUnit::Hour,
            psm_averaging: Averaging::AbsentAsZero,
            taus: (1..=24).collect(),
            thresholds: default_thresholds(),
            strict: true,
            objective: Objective::Volume,
            budget: flexsim_core::scheduler::DEFAULT_BUDGET as u64,
            price_mode: PriceMode::Modeled,
            loss_mode: LossMode::Literal,
            seed: 0,
            jobs: None,
            synth: SynthConfig::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau: Option<usize>,
    pub resolution: Option<Resolution>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Parse a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.readings, &mut cfg.market, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.tau {
            self.taus = vec![t];
        }
        if let Some(r) = o.resolution {
            self.resolution = r;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.threshold_watts > 0.0) {
            return bad(format!("threshold_watts must be > 0, got {}", self.threshold_watts));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if !(1..=24).contains(&self.group_count) {
            return bad(format!("group_count must lie in 1..=24, got {}", self.group_count));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("lambda_grid needs at least one finite value >= 0".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if !(self.oversample_ratio >= 1.0) {
            return bad(format!("oversample_ratio must be >= 1, got {}", self.oversample_ratio));
        }
        if self.taus.is_empty() || self.taus.iter().any(|&t| t > flexsim_core::flexoffer::MAX_TAU) {
            return bad("taus must be a non-empty list within 0..=24".into());
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("thresholds must lie in [0, 1]".into());
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return bad("max_iter must be > 0 and tol > 0".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1".into());
        }
        if self.synth.days < flexsim_core::synth::MIN_DEVICE_DAYS {
            return bad(format!(
                "synth.days must be >= {}, got {}",
                flexsim_core::synth::MIN_DEVICE_DAYS,
                self.synth.days
            ));
        }
        if !(0.0..=1.0).contains(&self.synth.peak) {
            return bad(format!("synth.peak must lie in [0, 1], got {}", self.synth.peak));
        }
        if let Some(g) = &self.groups {
            flexsim_core::GroupSpec::new(g.clone()).map_err(|e| CliError::Config(format!("groups: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = flexsim_core::canonical::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"resolution": "daily", "taus": [0, 3]}"#).unwrap();
        assert_eq!(cfg.resolution, Resolution::Daily);
        assert_eq!(cfg.taus, vec![0, 3]);
        assert_eq!(cfg.folds, 5);
        assert_eq!(cfg.thresholds, default_thresholds());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"resolutoin": "daily"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"synth": {"dayz": 3}}"#).is_err());
    }

    #[test]
    fn flags_win() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            tau: Some(24),
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!((cfg.taus.clone(), cfg.seed), (vec![24], 9));
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.train_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.taus = vec![25];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.groups = Some(vec![(0..12).collect()]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn threshold_grid() {
        let t = default_thresholds();
        assert_eq!(t.len(), 20);
        assert_eq!((t[0], t[2], t[19]), (0.02, 0.1, 0.95));
    }
}
