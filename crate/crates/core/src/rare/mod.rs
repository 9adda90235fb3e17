//! Escape events: regions, control schedules, controlled simulation,
//! least-action paths, and Monte Carlo estimators.

pub mod controlled;
pub mod escape;
pub mod mc;
pub mod region;
pub mod schedule;

pub use controlled::{simulate_controlled, ControlledRun, OccupationRecord};
pub use escape::{minimize_escape_action, EscapeOptions, EscapePath};
pub use mc::{
    estimate_escape_mc, exit_time_csv, mean_exit_time, EscapeRow, EscapeTable, ExitTimeRow,
    SamplingMode,
};
pub use region::{EscapeRegion, Geometry};
pub use schedule::{
    build_control_schedule, default_burn_in, mixed_reference_measure, write_trace_csv,
    BlockControl, ControlSchedule, KernelKind, MixedReference, TraceRow,
};
