//! Bias-audit engine for automated employment decision tools: selection
//! and scoring rates, impact ratios and four-fifths flags over historical
//! hiring data, plus census representativity benchmarks, stage-funnel
//! metrics, proxy-feature screening, verification sampling, and
//! deterministic report rendering.
//!
//! The crate is a library; the `aedt-audit` binary in the companion CLI
//! crate orchestrates full audit runs.

pub mod benchmark;
pub mod domain;
pub mod ingest;
pub mod metrics;
pub mod proxy;
pub mod report;

pub use benchmark::{fetch_benchmark, load_benchmark, nyc_2020, CensusBenchmark, FetchConfig};
pub use domain::{
    validate_record, ApplicantRecord, AuditDataset, DemographicCategory, GroupingMode, Phase,
    RaceEthnicity, Sex, StageOutcome, Vocabulary,
};
pub use ingest::{
    check_data_window, check_jurisdiction, parse_dataset, write_dataset_csv, DataFormat,
    ParseFailures, SchemaBinding,
};
pub use metrics::{
    apply_four_fifths, apply_small_group_policy, bias_delta, compute_table, impact_ratios,
    scoring_rate_table, selection_rate_table, stage_funnel, CategoryStats, GroupKey,
    PolicyConfig, SmallGroupMode, SmallGroupPolicy, StatFlag, StatsTable, TableBasis, Warning,
    WarningCode,
};
pub use proxy::{contingency_table, cramers_v, proxy_screen, AssociationFinding, ProtectedAxis};
pub use report::{
    assemble_report, dataset_fingerprint, render_report, verification_sample, AuditOptions,
    AuditReport, RenderFormat, ReportInputs, SampleManifest,
};
