//! Batch driver for the `cavsqueeze` library: TOML scenario configs, runs and
//! sweeps over atom number, a self-check suite, and CSV/JSON/SVG output.

pub mod commands;
pub mod config;
pub mod plot;
pub mod scenario;
pub mod summary;
pub mod table;
pub mod verify;

pub use commands::CliError;
pub use config::{parse_config, ScenarioConfig};
pub use table::parse_csv;
