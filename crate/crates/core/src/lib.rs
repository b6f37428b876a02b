//! Forecasting device activations, turning them into flex-offers and
//! pricing their schedule against a regulating market.

pub mod canonical;
pub mod classifier;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod flexoffer;
pub mod ingest;
pub mod market;
pub mod psm;
pub mod scheduler;
pub mod synth;

pub use error::{Error, Result};

pub use classifier::{ClassWeights, CvOptions, CvResult, LogisticModel, PmModel, TrainOptions};
pub use evaluate::{ConfusionBreakdown, DayInput, PrCurve, SavingsOptions, SavingsReport, SavingsRow};
pub use features::{FeatureConfig, FeatureLayout, FeatureMatrix};
pub use flexoffer::{AnchorTable, FlexOffer, Origin};
pub use ingest::{ActivationSeries, DayGrid, GroupSpec, MarketRecord, MarketSeries, ReadingSeries, Resolution};
pub use market::{LossMode, PriceMode, SignedImbalance};
pub use psm::{EnergyProfile, PsmHistory, PsmOptions};
pub use scheduler::{Objective, Schedule, SchedulerOptions};
pub use synth::{MarketSpec, UsagePattern};
