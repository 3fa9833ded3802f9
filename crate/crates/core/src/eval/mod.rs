//! Prequential evaluation, measures, rank aggregation and sweep experiments.

pub mod measures;
pub mod prequential;
pub mod summary;
pub mod sweeps;

pub use measures::{
    average_accuracy, final_accuracy, metrics_reports, rank_values, ranks, recovery_reference,
    recovery_speed, MetricsReport, RecoveryMode, FINISH_CHUNKS,
};
pub use prequential::{prequential_run, RunRecord};
pub use summary::{
    meta_table, render_recovery, stddev, summarize_scenario, MeasureSpread, MetaTable, SummaryEntry, MEASURES,
};
pub use sweeps::{
    arch_sweep, average_bound, bound_experiment, eligible_layers, engagement_sweep, ArchRank, ArchRow,
    ArchSweep, BoundRow, EngagementRow, ARCH_LIST,
};
