//! CSV ingestion, splitting into consecutive periods, the period-pair test
//! pipeline, and report serialization.

mod csv_io;
mod pipeline;
mod split;

pub use csv_io::{read_panel_csv, read_raw_csv, write_panel_csv, CsvOptions, LoadedPanel, RawPanel};
pub use pipeline::{
    level_key, read_report, render_report, run_pipeline, write_report, FailureRecord,
    PairReport, PipelineConfig, PipelineReport, ReportFormat, ResultRecord, SCHEMA_VERSION,
};
pub use split::{
    split_by_label, Period, PeriodSplit, SplitOptions, SplitRule, DEFAULT_MIN_COVERAGE,
    DEFAULT_MIN_T,
};
