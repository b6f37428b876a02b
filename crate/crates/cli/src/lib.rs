//! Pipeline orchestration behind the `flexsim` command.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod stages;

pub use config::{ExperimentConfig, ModelKind, Overrides, PatternKind};
pub use error::CliError;
pub use stages::Stages;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Train,
    Forecast,
    Schedule,
    Evaluate,
    Synth,
    Report,
    Run,
}

/// Run one command against a validated config.
pub fn execute(command: Command, cfg: ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let mut st = Stages::new(cfg);
    match command {
        Command::Synth => st.synth(),
        Command::Run => st.run().map(drop),
        other => {
            st.write_resolved_config()?;
            match other {
                Command::Ingest => st.ingest().map(drop),
                Command::Train => st.train().map(drop),
                Command::Forecast => st.forecast().map(drop),
                Command::Schedule => st.schedule().map(drop),
                Command::Evaluate => st.evaluate().map(drop),
                Command::Report => st.report().map(drop),
                Command::Synth | Command::Run => unreachable!(),
            }
        }
    }
}
