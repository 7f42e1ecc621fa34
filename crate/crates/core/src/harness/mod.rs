//! Scenario presets, experiment orchestration and output files.

pub mod config;
pub mod emit;
pub mod experiment;

pub use config::{merge, preset, preset_defaults, ConstraintConfig, NetworkKind, ScenarioConfig, PRESETS};
pub use emit::{curves_csv, emit, line_chart, summary_json, CSV_HEADER};
pub use experiment::{
    build_scenario, families, gain_to_loss, run_experiment, steady_state_mean, steady_state_schedule, to_db, window_converged,
    BuiltScenario, CurveRow, FamilyResult, FamilySpec, FamilySummary, GainToLoss, OutputBundle, Summary,
    DB_FLOOR,
};
