//! Experiment harness: TOML configuration, Monte-Carlo pipelines and the
//! long-format CSV result table.

pub mod config;
pub mod experiments;
pub mod results;
pub mod stats;

pub use config::{read_config, ExperimentConfig, ExperimentId, ResolvedConfig};
pub use experiments::{run_experiment, run_resolved};
pub use results::{read_results_file, write_results_file, ResultTable, Row, Selector};
