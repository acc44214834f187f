//! Cache consistency for mobile clients using absolute validity intervals
//! (AVI), a designated transfer agent (DTA) that multicasts to its group,
//! and a deterministic discrete-event simulator to compare it against
//! periodic timestamp broadcast.
//!
//! ```
//! use avicast::config::ScenarioConfig;
//!
//! let cfg = ScenarioConfig::from_toml("num_clients = 3\nnum_items = 5\nhorizon = 5000").unwrap();
//! let run = avicast::runner::run_checked(&cfg, 7).unwrap();
//! assert!(run.violations.is_empty());
//! println!("{}", run.output.metrics.csv_row(7, cfg.strategy));
//! ```

pub mod avi;
pub mod baseline;
pub mod check;
pub mod config;
pub mod election;
pub mod metrics;
pub mod model;
pub mod node;
pub mod runner;
pub mod sim;

pub use config::{ConfigError, ScenarioConfig, Strategy};
pub use metrics::Metrics;
pub use model::{ItemId, NodeId, SimTime, Ticks};
pub use sim::{run, RunOutput, TraceLog};
