//! File formats and evaluation metrics.

mod config;
mod dataset;
mod metrics;
mod records;

pub use config::{
    apply_solver_setting, beidou_shell, format_solver_config, parse_key_values, parse_scenario_config,
    parse_solver_config, read_scenario_config, read_solver_config, scenario_preset,
};
pub use dataset::{format_dataset, parse_dataset, read_dataset, write_dataset, DATASET_COLUMNS, DATASET_VERSION};
pub use metrics::{evaluate, EpochError, ErrorMetrics};
pub use records::{
    format_injections, format_report, format_trajectory, parse_injections, parse_trajectory, read_trajectory,
    write_trajectory, INJECTION_VERSION, TRAJECTORY_VERSION,
};
