//! Report assembly and rendering, plus deterministic verification-sample
//! manifests.
//!
//! JSON output is canonical: keys sorted, displayed rates rounded to four
//! decimal places, byte-identical across runs and platforms. Markdown and
//! HTML are projections of the same rounded values and never recompute
//! metrics. Flags are always computed on unrounded values before rendering.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmark::{representativity, CensusBenchmark, RepresentativityEntry};
use crate::domain::{AuditDataset, GroupingMode, Phase};
use crate::ingest::{
    check_data_window, check_jurisdiction, JurisdictionCheckResult, WindowCheckResult,
};
use crate::metrics::{
    bias_delta, compute_table, stage_funnel, BiasDelta, CategoryStats, GroupKey, MetricsError,
    PolicyConfig, SmallGroupMode, StageTable, StatFlag, StatsTable, TableBasis, Warning,
    WarningCode,
};
use crate::proxy::{proxy_screen, AssociationFinding, ProtectedAxis};

/// Policy settings echoed into the report for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    pub small_group_threshold: f64,
    pub small_group_mode: SmallGroupMode,
    pub four_fifths_threshold: f64,
    pub proxy_threshold: f64,
    pub groupings: Vec<GroupingMode>,
    pub strict: bool,
    pub benchmark_share_tolerance_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub total: u64,
    pub input_phase: u64,
    pub output_phase: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Tool descriptor, name and version.
    pub tool: String,
    /// Date stamped on the report; defaults to the dataset as-of date so
    /// identical inputs render identical bytes.
    pub report_date: NaiveDate,
    pub source_description: String,
    pub as_of_date: NaiveDate,
    pub data_window: WindowCheckResult,
    pub jurisdiction_check: Option<JurisdictionCheckResult>,
    pub policy: PolicySettings,
    pub record_counts: RecordCounts,
    /// Phase the main tables describe (output when both phases exist).
    pub audited_phase: Phase,
    pub notes: Vec<String>,
}

/// Scoring tables, or an explicit not-applicable marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSection {
    pub available: bool,
    pub reason: Option<String>,
    pub tables: Vec<StatsTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    /// One table per grouping mode and stage.
    pub selection: Vec<StatsTable>,
    pub scoring: ScoringSection,
}

/// Population whose shares are compared against the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativityBasis {
    /// Everyone who entered the funnel.
    Applicants,
    /// Those advanced at the final stage.
    Selected,
}

impl RepresentativityBasis {
    fn label(&self) -> &'static str {
        match self {
            RepresentativityBasis::Applicants => "applicants",
            RepresentativityBasis::Selected => "selected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativityTable {
    pub basis: RepresentativityBasis,
    pub grouping: GroupingMode,
    pub entries: Vec<RepresentativityEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativitySection {
    pub available: bool,
    pub reason: Option<String>,
    pub region: Option<String>,
    pub vintage: Option<i32>,
    pub tables: Vec<RepresentativityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDeltaTable {
    pub grouping: GroupingMode,
    pub basis: TableBasis,
    pub entries: Vec<BiasDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDeltaSection {
    pub available: bool,
    pub reason: Option<String>,
    /// The measure is the change in impact ratio, an approximation of
    /// outlier-performance improvement.
    pub note: String,
    pub tables: Vec<BiasDeltaTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyAxisFindings {
    pub protected_axis: ProtectedAxis,
    pub findings: Vec<AssociationFinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySection {
    pub threshold: f64,
    /// False when the dataset carries no features to screen.
    pub screened: bool,
    pub note: String,
    pub axes: Vec<ProxyAxisFindings>,
}

/// The complete, renderable audit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: ReportMetadata,
    pub tables: ReportTables,
    pub stage_funnel: Vec<StageTable>,
    pub representativity: RepresentativitySection,
    pub bias_deltas: BiasDeltaSection,
    pub proxy_findings: ProxySection,
    pub warnings: Vec<Warning>,
}

/// Inputs controlling one audit computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub policy: PolicyConfig,
    pub proxy_threshold: f64,
    pub groupings: Vec<GroupingMode>,
    pub jurisdiction: Option<String>,
    pub strict: bool,
    pub benchmark_share_tolerance_pp: f64,
    /// Overrides the report date; defaults to the dataset as-of date.
    pub report_date: Option<NaiveDate>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            proxy_threshold: 0.3,
            groupings: GroupingMode::ALL.to_vec(),
            jurisdiction: None,
            strict: false,
            benchmark_share_tolerance_pp: 0.5,
            report_date: None,
        }
    }
}

/// Everything `assemble_report` consumes.
pub struct ReportInputs<'a> {
    pub dataset: &'a AuditDataset,
    pub options: &'a AuditOptions,
    pub benchmark: Option<&'a CensusBenchmark>,
    /// Warnings raised before assembly (benchmark cross-checks, explicit
    /// record filtering); surfaced first in the report warning list.
    pub prior_warnings: Vec<Warning>,
}

fn tool_descriptor() -> String {
    format!("aedt-audit {}", env!("CARGO_PKG_VERSION"))
}

/// Shares of the population advanced at the final stage, as a stats table
/// usable for representativity.
fn selected_population_table(
    dataset: &AuditDataset,
    grouping: GroupingMode,
) -> Option<StatsTable> {
    let last_stage = dataset.stage_names().last()?.clone();
    let counts = crate::metrics::advanced_counts(dataset, &last_stage, grouping).ok()?;
    let total: u64 = counts.values().sum();
    if total == 0 {
        return None;
    }
    Some(StatsTable {
        grouping,
        basis: TableBasis::Population,
        entries: counts
            .into_iter()
            .map(|(category, count)| CategoryStats {
                category,
                count,
                share: count as f64 / total as f64,
                rate: None,
                impact_ratio: None,
                flags: BTreeSet::new(),
            })
            .collect(),
        warnings: Vec::new(),
    })
}

/// Compute every requested table and assemble the full report.
///
/// When both phases are present the main tables describe the output phase
/// and the bias-delta section compares input against output; with a single
/// phase the delta section is marked unavailable.
pub fn assemble_report(inputs: ReportInputs<'_>) -> Result<AuditReport, MetricsError> {
    let ReportInputs {
        dataset,
        options,
        benchmark,
        prior_warnings,
    } = inputs;
    options.policy.validate()?;

    let mut groupings: Vec<GroupingMode> = Vec::new();
    for grouping in &options.groupings {
        if !groupings.contains(grouping) {
            groupings.push(*grouping);
        }
    }
    if groupings.is_empty() {
        groupings = GroupingMode::ALL.to_vec();
    }

    let mut warnings: Vec<Warning> = Vec::new();

    // Data-requirement checks always run against the full dataset.
    let window = check_data_window(dataset);
    if window.out_of_window > 0 {
        warnings.push(Warning::new(
            WarningCode::OutOfWindow,
            format!(
                "{} record(s) dated outside the 12-month window {} to {}",
                window.out_of_window, window.window_start, window.window_end
            ),
            format!("ids={}", window.offending_ids.join(",")),
        ));
    }
    let jurisdiction_check = options.jurisdiction.as_ref().map(|tag| {
        let result = check_jurisdiction(dataset, tag);
        if result.non_matching > 0 {
            warnings.push(Warning::new(
                WarningCode::JurisdictionMismatch,
                format!(
                    "{} record(s) not tagged with jurisdiction {tag:?}",
                    result.non_matching
                ),
                format!("ids={}", result.offending_ids.join(",")),
            ));
        }
        result
    });
    warnings.extend(prior_warnings);

    let input_count = dataset.phase_records(Phase::Input).len() as u64;
    let output_count = dataset.phase_records(Phase::Output).len() as u64;

    // Main tables describe the output phase when both phases are present.
    let (audited, audited_phase) = if output_count > 0 && input_count > 0 {
        (
            dataset
                .filtered(|r| r.phase == Phase::Output)
                .expect("output phase is non-empty"),
            Phase::Output,
        )
    } else if output_count > 0 {
        (dataset.clone(), Phase::Output)
    } else {
        (dataset.clone(), Phase::Input)
    };

    let mut selection = Vec::new();
    for grouping in &groupings {
        for stage in audited.stage_names().to_vec() {
            let table = compute_table(
                &audited,
                &TableBasis::Selection { stage },
                *grouping,
                &options.policy,
            )?;
            warnings.extend(table.warnings.iter().cloned());
            selection.push(table);
        }
    }

    let scoring = {
        let mut tables = Vec::new();
        let mut reason = None;
        for grouping in &groupings {
            match compute_table(&audited, &TableBasis::Scoring, *grouping, &options.policy) {
                Ok(table) => {
                    warnings.extend(table.warnings.iter().cloned());
                    tables.push(table);
                }
                Err(MetricsError::NoScores) => {
                    reason = Some("no record carries a score".to_string());
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        let available = reason.is_none();
        if let Some(reason) = &reason {
            warnings.push(Warning::new(
                WarningCode::SectionUnavailable,
                format!("scoring tables not applicable: {reason}"),
                "section=scoring".to_string(),
            ));
            tables.clear();
        }
        ScoringSection {
            available,
            reason,
            tables,
        }
    };

    // Funnel grouping: intersectional when requested, else the first mode.
    let funnel_grouping = if groupings.contains(&GroupingMode::Intersectional) {
        GroupingMode::Intersectional
    } else {
        groupings[0]
    };
    let funnel = stage_funnel(&audited, funnel_grouping, &options.policy)?;
    for table in &funnel {
        warnings.extend(
            table
                .warnings
                .iter()
                .filter(|w| w.code == WarningCode::FunnelMonotonicity)
                .cloned(),
        );
    }

    let representativity_section = match benchmark {
        Some(benchmark) => {
            let mut tables = Vec::new();
            for grouping in &groupings {
                let first_stage = audited.stage_names()[0].clone();
                let applicants = crate::metrics::selection_rate_table(
                    &audited,
                    &first_stage,
                    *grouping,
                )?;
                let (entries, rep_warnings) = representativity(&applicants, benchmark)
                    .expect("benchmark is non-empty by construction");
                warnings.extend(rep_warnings);
                tables.push(RepresentativityTable {
                    basis: RepresentativityBasis::Applicants,
                    grouping: *grouping,
                    entries,
                });

                if let Some(selected) = selected_population_table(&audited, *grouping) {
                    let (entries, rep_warnings) = representativity(&selected, benchmark)
                        .expect("benchmark is non-empty by construction");
                    warnings.extend(rep_warnings);
                    tables.push(RepresentativityTable {
                        basis: RepresentativityBasis::Selected,
                        grouping: *grouping,
                        entries,
                    });
                }
            }

            // Benchmark categories with population but no presence among
            // the selected applicants are part of the story; disclose them.
            if let Some(selected) = selected_population_table(&audited, funnel_grouping) {
                let present: BTreeSet<GroupKey> =
                    selected.entries.iter().map(|e| e.category).collect();
                for (key, count) in benchmark.collapse(funnel_grouping) {
                    if count > 0 && !present.contains(&key) {
                        warnings.push(Warning::new(
                            WarningCode::AbsentFromOutcomes,
                            format!(
                                "benchmark category {} is absent from the selected population",
                                key.label()
                            ),
                            format!(
                                "benchmark={} {}, grouping={funnel_grouping}, category={}",
                                benchmark.region,
                                benchmark.vintage,
                                key.label()
                            ),
                        ));
                    }
                }
            }

            RepresentativitySection {
                available: true,
                reason: None,
                region: Some(benchmark.region.clone()),
                vintage: Some(benchmark.vintage),
                tables,
            }
        }
        None => {
            warnings.push(Warning::new(
                WarningCode::SectionUnavailable,
                "representativity not computed: no benchmark configured".to_string(),
                "section=representativity".to_string(),
            ));
            RepresentativitySection {
                available: false,
                reason: Some("no benchmark configured".to_string()),
                region: None,
                vintage: None,
                tables: Vec::new(),
            }
        }
    };

    let bias_deltas = if input_count > 0 && output_count > 0 {
        let input_set = dataset
            .filtered(|r| r.phase == Phase::Input)
            .expect("input phase is non-empty");
        let output_set = dataset
            .filtered(|r| r.phase == Phase::Output)
            .expect("output phase is non-empty");

        let mut bases: Vec<TableBasis> = input_set
            .stage_names()
            .iter()
            .map(|stage| TableBasis::Selection {
                stage: stage.clone(),
            })
            .collect();
        let both_scored = input_set.records().iter().any(|r| r.score.is_some())
            && output_set.records().iter().any(|r| r.score.is_some());
        if both_scored {
            bases.push(TableBasis::Scoring);
        }

        let mut tables = Vec::new();
        for grouping in &groupings {
            for basis in &bases {
                let input_table = compute_table(&input_set, basis, *grouping, &options.policy)?;
                let output_table =
                    compute_table(&output_set, basis, *grouping, &options.policy)?;
                let entries = bias_delta(&input_table, &output_table)
                    .expect("groupings match by construction");
                tables.push(BiasDeltaTable {
                    grouping: *grouping,
                    basis: basis.clone(),
                    entries,
                });
            }
        }
        BiasDeltaSection {
            available: true,
            reason: None,
            note: "delta is the change in impact ratio from input-phase to output-phase data, \
                   an approximation of outlier-performance improvement"
                .to_string(),
            tables,
        }
    } else {
        let reason = if output_count == 0 {
            "no output-phase records"
        } else {
            "no input-phase records"
        };
        warnings.push(Warning::new(
            WarningCode::SectionUnavailable,
            format!("bias deltas not computed: {reason}"),
            "section=bias_deltas".to_string(),
        ));
        BiasDeltaSection {
            available: false,
            reason: Some(reason.to_string()),
            note: "delta is the change in impact ratio from input-phase to output-phase data, \
                   an approximation of outlier-performance improvement"
                .to_string(),
            tables: Vec::new(),
        }
    };

    let has_features = audited
        .records()
        .iter()
        .any(|r| !r.features.is_empty());
    let proxy_findings = if has_features {
        ProxySection {
            threshold: options.proxy_threshold,
            screened: true,
            note: "association screening heuristic over outcome data; flagged features are \
                   candidates for review, not legal findings"
                .to_string(),
            axes: vec![
                ProxyAxisFindings {
                    protected_axis: ProtectedAxis::Sex,
                    findings: proxy_screen(&audited, ProtectedAxis::Sex, options.proxy_threshold),
                },
                ProxyAxisFindings {
                    protected_axis: ProtectedAxis::RaceEthnicity,
                    findings: proxy_screen(
                        &audited,
                        ProtectedAxis::RaceEthnicity,
                        options.proxy_threshold,
                    ),
                },
            ],
        }
    } else {
        ProxySection {
            threshold: options.proxy_threshold,
            screened: false,
            note: "none screened: the dataset carries no auxiliary features".to_string(),
            axes: Vec::new(),
        }
    };

    let metadata = ReportMetadata {
        tool: tool_descriptor(),
        report_date: options.report_date.unwrap_or(dataset.as_of_date),
        source_description: dataset.source_description.clone(),
        as_of_date: dataset.as_of_date,
        data_window: window,
        jurisdiction_check,
        policy: PolicySettings {
            small_group_threshold: options.policy.small_group.threshold,
            small_group_mode: options.policy.small_group.mode,
            four_fifths_threshold: options.policy.four_fifths_threshold,
            proxy_threshold: options.proxy_threshold,
            groupings: groupings.clone(),
            strict: options.strict,
            benchmark_share_tolerance_pp: options.benchmark_share_tolerance_pp,
        },
        record_counts: RecordCounts {
            total: dataset.len() as u64,
            input_phase: input_count,
            output_phase: output_count,
        },
        audited_phase,
        notes: vec![
            "selection, scoring and impact-ratio tables measure proportional outcomes across \
             categories"
                .to_string(),
            "rates are rendered to 4 decimal places; all flags are computed on unrounded values"
                .to_string(),
        ],
    };

    Ok(AuditReport {
        metadata,
        tables: ReportTables { selection, scoring },
        stage_funnel: funnel,
        representativity: representativity_section,
        bias_deltas,
        proxy_findings,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFormat {
    Json,
    Markdown,
    Html,
}

impl RenderFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            RenderFormat::Json => "json",
            RenderFormat::Markdown => "md",
            RenderFormat::Html => "html",
        }
    }
}

fn round4(x: f64) -> f64 {
    let rounded = (x * 10_000.0).round() / 10_000.0;
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

fn round_floats(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(number) => {
            if number.is_f64() {
                let rounded = round4(number.as_f64().expect("checked is_f64"));
                *number = serde_json::Number::from_f64(rounded)
                    .expect("rounded report values are finite");
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// The report as a canonical JSON value: keys sorted, displayed floats
/// rounded to 4 decimal places.
pub fn canonical_value(report: &AuditReport) -> serde_json::Value {
    let mut value = serde_json::to_value(report).expect("report serializes");
    round_floats(&mut value);
    value
}

/// Render the report. JSON is canonical and byte-deterministic; Markdown
/// and HTML are projections of the same rounded values.
pub fn render_report(report: &AuditReport, format: RenderFormat) -> Vec<u8> {
    let value = canonical_value(report);
    match format {
        RenderFormat::Json => {
            let mut bytes =
                serde_json::to_vec_pretty(&value).expect("canonical value serializes");
            bytes.push(b'\n');
            bytes
        }
        RenderFormat::Markdown => {
            let rounded: AuditReport =
                serde_json::from_value(value).expect("canonical value round-trips");
            render_markdown(&rounded).into_bytes()
        }
        RenderFormat::Html => {
            let rounded: AuditReport =
                serde_json::from_value(value).expect("canonical value round-trips");
            render_html(&rounded).into_bytes()
        }
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_else(|| "n/a".to_string())
}

fn fmt_flags(flags: &BTreeSet<StatFlag>) -> String {
    if flags.is_empty() {
        return "-".to_string();
    }
    flags
        .iter()
        .map(|f| {
            serde_json::to_value(f)
                .expect("flag serializes")
                .as_str()
                .expect("flag is a string")
                .to_string()
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn stats_rows(entries: &[CategoryStats]) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|e| {
            vec![
                e.category.label(),
                e.count.to_string(),
                e.share.to_string(),
                fmt_opt(e.rate),
                fmt_opt(e.impact_ratio),
                fmt_flags(&e.flags),
            ]
        })
        .collect()
}

const STATS_HEADER: [&str; 6] = ["category", "count", "share", "rate", "impact ratio", "flags"];

fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str("| ");
    out.push_str(&header.join(" | "));
    out.push_str(" |\n|");
    for _ in header {
        out.push_str(" --- |");
    }
    out.push('\n');
    for row in rows {
        out.push_str("| ");
        out.push_str(&row.join(" | "));
        out.push_str(" |\n");
    }
    out
}

fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let meta = &report.metadata;
    out.push_str("# Bias Audit Report\n\n");
    out.push_str(&format!("- tool: {}\n", meta.tool));
    out.push_str(&format!("- report date: {}\n", meta.report_date));
    out.push_str(&format!("- source: {}\n", meta.source_description));
    out.push_str(&format!("- as-of date: {}\n", meta.as_of_date));
    out.push_str(&format!(
        "- records: {} total ({} input phase, {} output phase); tables describe the {} phase\n",
        meta.record_counts.total,
        meta.record_counts.input_phase,
        meta.record_counts.output_phase,
        meta.audited_phase.label()
    ));
    out.push_str(&format!(
        "- data window: {} to {} ({} in, {} out)\n",
        meta.data_window.window_start,
        meta.data_window.window_end,
        meta.data_window.in_window,
        meta.data_window.out_of_window
    ));
    if let Some(check) = &meta.jurisdiction_check {
        out.push_str(&format!(
            "- jurisdiction {:?}: {} matching, {} non-matching\n",
            check.expected, check.matching, check.non_matching
        ));
    }
    out.push_str(&format!(
        "- policy: small-group threshold {} ({:?} mode), four-fifths threshold {}, proxy threshold {}\n",
        meta.policy.small_group_threshold,
        serde_json::to_value(meta.policy.small_group_mode)
            .expect("mode serializes")
            .as_str()
            .expect("mode is a string"),
        meta.policy.four_fifths_threshold,
        meta.policy.proxy_threshold
    ));
    for note in &meta.notes {
        out.push_str(&format!("- note: {note}\n"));
    }
    out.push('\n');

    out.push_str("## Selection rates\n\n");
    for table in &report.tables.selection {
        out.push_str(&format!(
            "### {} — grouping {}\n\n",
            table.basis, table.grouping
        ));
        out.push_str(&markdown_table(&STATS_HEADER, &stats_rows(&table.entries)));
        out.push('\n');
    }

    out.push_str("## Scoring rates\n\n");
    if report.tables.scoring.available {
        for table in &report.tables.scoring.tables {
            out.push_str(&format!("### scoring — grouping {}\n\n", table.grouping));
            out.push_str(&markdown_table(&STATS_HEADER, &stats_rows(&table.entries)));
            out.push('\n');
        }
    } else {
        out.push_str(&format!(
            "not applicable: {}\n\n",
            report.tables.scoring.reason.as_deref().unwrap_or("unavailable")
        ));
    }

    out.push_str("## Stage funnel\n\n");
    for table in &report.stage_funnel {
        out.push_str(&format!(
            "### stage {} — grouping {} (denominator: reached stage)\n\n",
            table.stage_name, table.grouping
        ));
        out.push_str(&markdown_table(&STATS_HEADER, &stats_rows(&table.entries)));
        out.push('\n');
    }

    out.push_str("## Representativity\n\n");
    if report.representativity.available {
        out.push_str(&format!(
            "benchmark: {} ({})\n\n",
            report.representativity.region.as_deref().unwrap_or("?"),
            report
                .representativity
                .vintage
                .map(|v| v.to_string())
                .unwrap_or_else(|| "?".to_string())
        ));
        for table in &report.representativity.tables {
            out.push_str(&format!(
                "### basis {} — grouping {}\n\n",
                table.basis.label(),
                table.grouping
            ));
            let rows: Vec<Vec<String>> = table
                .entries
                .iter()
                .map(|e| {
                    vec![
                        e.category.label(),
                        e.outcome_share.to_string(),
                        fmt_opt(e.benchmark_share),
                        fmt_opt(e.index),
                    ]
                })
                .collect();
            out.push_str(&markdown_table(
                &["category", "outcome share", "benchmark share", "index"],
                &rows,
            ));
            out.push('\n');
        }
    } else {
        out.push_str(&format!(
            "not available: {}\n\n",
            report.representativity.reason.as_deref().unwrap_or("unavailable")
        ));
    }

    out.push_str("## Bias deltas (input vs output)\n\n");
    out.push_str(&format!("{}\n\n", report.bias_deltas.note));
    if report.bias_deltas.available {
        for table in &report.bias_deltas.tables {
            out.push_str(&format!(
                "### {} — grouping {}\n\n",
                table.basis, table.grouping
            ));
            let rows: Vec<Vec<String>> = table
                .entries
                .iter()
                .map(|e| {
                    vec![
                        e.category.label(),
                        fmt_opt(e.input_impact_ratio),
                        fmt_opt(e.output_impact_ratio),
                        fmt_opt(e.delta),
                        serde_json::to_value(e.direction)
                            .expect("direction serializes")
                            .as_str()
                            .expect("direction is a string")
                            .to_string(),
                    ]
                })
                .collect();
            out.push_str(&markdown_table(
                &["category", "input IR", "output IR", "delta", "direction"],
                &rows,
            ));
            out.push('\n');
        }
    } else {
        out.push_str(&format!(
            "not available: {}\n\n",
            report.bias_deltas.reason.as_deref().unwrap_or("unavailable")
        ));
    }

    out.push_str("## Proxy feature screening\n\n");
    out.push_str(&format!("{}\n\n", report.proxy_findings.note));
    if report.proxy_findings.screened {
        out.push_str(&format!(
            "flag threshold: {}\n\n",
            report.proxy_findings.threshold
        ));
        for axis in &report.proxy_findings.axes {
            out.push_str(&format!("### against {}\n\n", axis.protected_axis.label()));
            let rows: Vec<Vec<String>> = axis
                .findings
                .iter()
                .map(|f| {
                    vec![
                        f.feature.clone(),
                        "cramers_v".to_string(),
                        fmt_opt(f.value),
                        f.sample_size.to_string(),
                        if f.flagged { "yes" } else { "no" }.to_string(),
                        if f.notes.is_empty() {
                            "-".to_string()
                        } else {
                            f.notes.join("; ")
                        },
                    ]
                })
                .collect();
            out.push_str(&markdown_table(
                &["feature", "statistic", "value", "n", "flagged", "notes"],
                &rows,
            ));
            out.push('\n');
        }
    }

    out.push_str("## Warnings\n\n");
    if report.warnings.is_empty() {
        out.push_str("none\n");
    } else {
        for warning in &report.warnings {
            out.push_str(&format!(
                "- `{}` {} ({})\n",
                serde_json::to_value(warning.code)
                    .expect("code serializes")
                    .as_str()
                    .expect("code is a string"),
                warning.message,
                warning.context
            ));
        }
    }
    out
}

fn escape_html(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn html_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::from("<table>\n<thead><tr>");
    for cell in header {
        out.push_str(&format!("<th>{}</th>", escape_html(cell)));
    }
    out.push_str("</tr></thead>\n<tbody>\n");
    for row in rows {
        out.push_str("<tr>");
        for cell in row {
            out.push_str(&format!("<td>{}</td>", escape_html(cell)));
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</tbody>\n</table>\n");
    out
}

/// Static, script-free, print-friendly HTML built from the Markdown
/// projection's content.
fn render_html(report: &AuditReport) -> String {
    // Reuse the markdown section structure by converting its headings and
    // tables; the numbers are identical because both read the same rounded
    // report.
    let markdown = render_markdown(report);
    let mut body = String::new();
    let mut lines = markdown.lines().peekable();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix("### ") {
            body.push_str(&format!("<h3>{}</h3>\n", escape_html(rest)));
        } else if let Some(rest) = line.strip_prefix("## ") {
            body.push_str(&format!("<h2>{}</h2>\n", escape_html(rest)));
        } else if let Some(rest) = line.strip_prefix("# ") {
            body.push_str(&format!("<h1>{}</h1>\n", escape_html(rest)));
        } else if line.starts_with('|') {
            // Collect the whole markdown table.
            let mut rows: Vec<Vec<String>> = Vec::new();
            let parse_row = |l: &str| -> Vec<String> {
                l.trim_matches('|')
                    .split('|')
                    .map(|c| c.trim().to_string())
                    .collect()
            };
            let header = parse_row(line);
            lines.next(); // separator row
            while let Some(next) = lines.peek() {
                if next.starts_with('|') {
                    rows.push(parse_row(lines.next().expect("peeked")));
                } else {
                    break;
                }
            }
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            body.push_str(&html_table(&header_refs, &rows));
        } else if let Some(rest) = line.strip_prefix("- ") {
            body.push_str(&format!("<p class=\"item\">{}</p>\n", escape_html(rest)));
        } else if !line.is_empty() {
            body.push_str(&format!("<p>{}</p>\n", escape_html(line)));
        }
    }

    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Bias Audit Report</title>\n<style>\n\
         body {{ font-family: Georgia, serif; margin: 2rem auto; max-width: 60rem; color: #111; }}\n\
         table {{ border-collapse: collapse; margin: 0.5rem 0 1rem; width: 100%; }}\n\
         th, td {{ border: 1px solid #999; padding: 0.25rem 0.5rem; text-align: left; }}\n\
         th {{ background: #eee; }}\n\
         h1, h2, h3 {{ page-break-after: avoid; }}\n\
         .item {{ margin: 0.1rem 0; }}\n\
         @media print {{ body {{ margin: 0.5in; }} }}\n\
         </style>\n</head>\n<body>\n{body}</body>\n</html>\n"
    )
}

// ---------------------------------------------------------------------------
// Verification sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("sample fraction {value} is outside [0, 1]")]
    InvalidFraction { value: f64 },
}

/// A reproducible verification sample: the designated subset of records
/// for in-depth third-party re-verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub fraction: f64,
    /// Sorted ids of the selected records.
    pub selected_ids: Vec<String>,
    /// Hash of the canonical serialization of the sampled dataset.
    pub dataset_fingerprint: String,
}

/// SHA-256 over a canonical CSV serialization of the dataset (records
/// sorted by id, fixed column order, features sorted by name), prefixed
/// with the algorithm name. Independent of input record order.
pub fn dataset_fingerprint(dataset: &AuditDataset) -> String {
    let mut records: Vec<_> = dataset.records().iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "id",
            "event_date",
            "jurisdiction",
            "sex",
            "race_ethnicity",
            "phase",
            "score",
            "stages",
            "features",
        ])
        .expect("in-memory write");
    for record in records {
        let stages = record
            .stage_outcomes
            .iter()
            .map(|(name, outcome)| format!("{name}={}", outcome.label()))
            .collect::<Vec<_>>()
            .join(";");
        let features = record
            .features
            .iter()
            .map(|(name, value)| format!("{name}={value}"))
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([
                record.id.as_str(),
                &record.event_date.format("%Y-%m-%d").to_string(),
                record.jurisdiction.as_str(),
                record.category.sex.label(),
                record.category.race_ethnicity.label(),
                record.phase.label(),
                &record.score.map(|s| s.to_string()).unwrap_or_default(),
                &stages,
                &features,
            ])
            .expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    format!("sha256:{}", hex::encode(Sha256::digest(&bytes)))
}

/// Unbiased draw in [0, range) from the ChaCha20 keystream: take 64-bit
/// words, accept values below the largest multiple of `range`, and reduce.
fn uniform_index(rng: &mut ChaCha20Rng, range: u64) -> u64 {
    debug_assert!(range > 0);
    let zone = (u64::MAX / range) * range;
    loop {
        let value = rng.next_u64();
        if value < zone {
            return value % range;
        }
    }
}

/// Draw a seeded verification sample of floor(fraction x n) records.
///
/// The generator is ChaCha20 keyed with the 64-bit seed (little-endian,
/// zero-padded to 32 bytes); ids are sorted before a partial Fisher-Yates
/// shuffle, so the selection is independent of input record order and
/// reproducible from (dataset, fraction, seed) alone.
pub fn verification_sample(
    dataset: &AuditDataset,
    fraction: f64,
    seed: u64,
) -> Result<SampleManifest, SampleError> {
    if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(SampleError::InvalidFraction { value: fraction });
    }

    let mut ids: Vec<String> = dataset.records().iter().map(|r| r.id.clone()).collect();
    ids.sort();
    let n = ids.len();

    // floor(fraction x n), tolerating float representation of decimal
    // fractions (0.29 x 100 must select 29, not 28).
    let product = fraction * n as f64;
    let take = if (product - product.round()).abs() < 1e-9 {
        product.round() as usize
    } else {
        product.floor() as usize
    }
    .min(n);

    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);

    for i in 0..take {
        let j = i + uniform_index(&mut rng, (n - i) as u64) as usize;
        ids.swap(i, j);
    }
    let mut selected: Vec<String> = ids.into_iter().take(take).collect();
    selected.sort();

    Ok(SampleManifest {
        seed,
        fraction,
        selected_ids: selected,
        dataset_fingerprint: dataset_fingerprint(dataset),
    })
}
