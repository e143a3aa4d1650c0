//! Dataset ingestion: column binding, CSV/JSON parsing, and the data
//! requirement checks (12-month window, jurisdiction tag).
//!
//! Parsing never fails fast: one pass reports every problem in the input,
//! each with row and column context.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_record, ApplicantRecord, AuditDataset, FeatureValue, Phase, StageOutcome,
    Vocabulary,
};

/// Input file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Json,
}

fn default_date_format() -> String {
    "%Y-%m-%d".to_string()
}

fn default_phase() -> Phase {
    Phase::Output
}

/// Maps dataset fields onto source columns. Stage order in the binding
/// defines the funnel order for the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaBinding {
    pub id: String,
    pub event_date: String,
    pub sex: String,
    pub race_ethnicity: String,
    #[serde(default)]
    pub jurisdiction: Option<String>,
    #[serde(default)]
    pub score: Option<String>,
    #[serde(default)]
    pub phase: Option<String>,
    /// Phase assigned when no phase column is bound or the cell is empty.
    #[serde(default = "default_phase")]
    pub default_phase: Phase,
    /// Ordered (stage name, column name) pairs.
    pub stages: Vec<(String, String)>,
    /// Columns loaded into the auxiliary feature map.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default = "default_date_format")]
    pub date_format: String,
}

impl SchemaBinding {
    pub fn validate(&self) -> Result<(), ParseFailures> {
        let mut issues = Vec::new();
        for (field, value) in [
            ("id", &self.id),
            ("event_date", &self.event_date),
            ("sex", &self.sex),
            ("race_ethnicity", &self.race_ethnicity),
        ] {
            if value.is_empty() {
                issues.push(ParseIssue::new(
                    IssueCode::MissingColumn,
                    None,
                    Some(field.to_string()),
                    format!("binding for required field {field:?} is empty"),
                ));
            }
        }
        if self.stages.is_empty() {
            issues.push(ParseIssue::new(
                IssueCode::MissingColumn,
                None,
                None,
                "binding must name at least one stage column".to_string(),
            ));
        }
        let mut names = BTreeSet::new();
        for (name, _) in &self.stages {
            if !names.insert(name) {
                issues.push(ParseIssue::new(
                    IssueCode::MalformedInput,
                    None,
                    None,
                    format!("stage name {name:?} bound twice"),
                ));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ParseFailures { issues })
        }
    }

    /// Every column the binding references, in output order.
    pub fn columns(&self) -> Vec<String> {
        let mut columns = vec![
            self.id.clone(),
            self.event_date.clone(),
        ];
        columns.extend(self.jurisdiction.clone());
        columns.push(self.sex.clone());
        columns.push(self.race_ethnicity.clone());
        columns.extend(self.score.clone());
        columns.extend(self.phase.clone());
        columns.extend(self.stages.iter().map(|(_, col)| col.clone()));
        columns.extend(self.features.iter().cloned());
        columns
    }
}

/// Machine-readable parse failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueCode {
    MalformedInput,
    MissingColumn,
    UnknownLabel,
    DuplicateId,
    InvalidDate,
    InvalidValue,
    RecordInvariant,
}

/// One parse or validation failure with its location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub code: IssueCode,
    /// 1-based line number (CSV, header = line 1) or record ordinal (JSON).
    pub row: Option<u64>,
    pub column: Option<String>,
    pub message: String,
}

impl ParseIssue {
    fn new(code: IssueCode, row: Option<u64>, column: Option<String>, message: String) -> Self {
        Self {
            code,
            row,
            column,
            message,
        }
    }
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.row, &self.column) {
            (Some(row), Some(col)) => write!(f, "row {row}, column {col:?}: {}", self.message),
            (Some(row), None) => write!(f, "row {row}: {}", self.message),
            (None, Some(col)) => write!(f, "column {col:?}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

/// Every failure found in one ingestion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailures {
    pub issues: Vec<ParseIssue>,
}

impl fmt::Display for ParseFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ingestion failure(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseFailures {}

/// One source row, independent of file format.
struct RawRow {
    row: u64,
    cells: BTreeMap<String, String>,
}

impl RawRow {
    fn cell(&self, column: &str) -> &str {
        self.cells.get(column).map(String::as_str).unwrap_or("")
    }
}

fn read_csv_rows(bytes: &[u8], issues: &mut Vec<ParseIssue>) -> Option<(Vec<String>, Vec<RawRow>)> {
    let text = match std::str::from_utf8(bytes) {
        Ok(text) => text,
        Err(err) => {
            issues.push(ParseIssue::new(
                IssueCode::MalformedInput,
                None,
                None,
                format!("input is not valid UTF-8: {err}"),
            ));
            return None;
        }
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = match reader.headers() {
        Ok(headers) => headers.iter().map(str::to_string).collect(),
        Err(err) => {
            issues.push(ParseIssue::new(
                IssueCode::MalformedInput,
                Some(1),
                None,
                format!("cannot read header row: {err}"),
            ));
            return None;
        }
    };

    let mut rows = Vec::new();
    for (index, result) in reader.records().enumerate() {
        // Header occupies line 1; data rows follow.
        let line = index as u64 + 2;
        match result {
            Ok(record) => {
                let line = record
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(line);
                let cells = headers
                    .iter()
                    .cloned()
                    .zip(record.iter().map(str::to_string))
                    .collect();
                rows.push(RawRow { row: line, cells });
            }
            Err(err) => issues.push(ParseIssue::new(
                IssueCode::MalformedInput,
                Some(line),
                None,
                err.to_string(),
            )),
        }
    }
    Some((headers, rows))
}

fn read_json_rows(
    bytes: &[u8],
    issues: &mut Vec<ParseIssue>,
) -> Option<(Vec<String>, Vec<RawRow>)> {
    let value: serde_json::Value = match serde_json::from_slice(bytes) {
        Ok(value) => value,
        Err(err) => {
            issues.push(ParseIssue::new(
                IssueCode::MalformedInput,
                None,
                None,
                format!("invalid JSON: {err}"),
            ));
            return None;
        }
    };

    let Some(records) = value.get("records").and_then(|r| r.as_array()) else {
        issues.push(ParseIssue::new(
            IssueCode::MalformedInput,
            None,
            None,
            "expected a top-level object with a \"records\" array".to_string(),
        ));
        return None;
    };

    let mut seen_columns = BTreeSet::new();
    let mut rows = Vec::new();
    for (index, entry) in records.iter().enumerate() {
        let row = index as u64 + 1;
        let Some(object) = entry.as_object() else {
            issues.push(ParseIssue::new(
                IssueCode::MalformedInput,
                Some(row),
                None,
                "record is not a JSON object".to_string(),
            ));
            continue;
        };
        let mut cells = BTreeMap::new();
        for (key, value) in object {
            seen_columns.insert(key.clone());
            let cell = match value {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(s) => s.trim().to_string(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    issues.push(ParseIssue::new(
                        IssueCode::InvalidValue,
                        Some(row),
                        Some(key.clone()),
                        format!("unsupported nested value {other}"),
                    ));
                    continue;
                }
            };
            cells.insert(key.clone(), cell);
        }
        rows.push(RawRow { row, cells });
    }
    Some((seen_columns.into_iter().collect(), rows))
}

fn normalize_token(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

fn parse_outcome(cell: &str) -> Result<StageOutcome, String> {
    match normalize_token(cell).as_str() {
        "" | "not_reached" => Ok(StageOutcome::NotReached),
        "advanced" => Ok(StageOutcome::Advanced),
        "not_advanced" => Ok(StageOutcome::NotAdvanced),
        other => Err(format!(
            "unrecognized stage outcome {other:?} (expected advanced, not_advanced or not_reached)"
        )),
    }
}

fn parse_phase(cell: &str, fallback: Phase) -> Result<Phase, String> {
    match normalize_token(cell).as_str() {
        "" => Ok(fallback),
        "input" => Ok(Phase::Input),
        "output" => Ok(Phase::Output),
        other => Err(format!(
            "unrecognized phase {other:?} (expected input or output)"
        )),
    }
}

/// Parse a dataset, reporting every failure in the input rather than the
/// first one. On success, every record passes `validate_record`.
pub fn parse_dataset(
    bytes: &[u8],
    format: DataFormat,
    binding: &SchemaBinding,
    vocabulary: &Vocabulary,
    source_description: &str,
    as_of_date: NaiveDate,
) -> Result<AuditDataset, ParseFailures> {
    binding.validate()?;

    let mut issues = Vec::new();
    let parsed = match format {
        DataFormat::Csv => read_csv_rows(bytes, &mut issues),
        DataFormat::Json => read_json_rows(bytes, &mut issues),
    };
    let Some((columns, rows)) = parsed else {
        return Err(ParseFailures { issues });
    };

    // Every bound column must exist in the source.
    let available: BTreeSet<&str> = columns.iter().map(String::as_str).collect();
    let mut missing = false;
    for column in binding.columns() {
        if !available.contains(column.as_str()) {
            missing = true;
            issues.push(ParseIssue::new(
                IssueCode::MissingColumn,
                None,
                Some(column.clone()),
                "bound column not present in input".to_string(),
            ));
        }
    }
    if missing {
        return Err(ParseFailures { issues });
    }

    let mut first_seen: BTreeMap<String, u64> = BTreeMap::new();
    let mut records = Vec::new();

    for raw in &rows {
        let before = issues.len();

        let id = raw.cell(&binding.id).to_string();
        if id.is_empty() {
            issues.push(ParseIssue::new(
                IssueCode::RecordInvariant,
                Some(raw.row),
                Some(binding.id.clone()),
                "empty_id: record id is empty".to_string(),
            ));
        } else if let Some(first) = first_seen.get(&id) {
            issues.push(ParseIssue::new(
                IssueCode::DuplicateId,
                Some(raw.row),
                Some(binding.id.clone()),
                format!("duplicate id {id:?}: rows {first} and {}", raw.row),
            ));
        } else {
            first_seen.insert(id.clone(), raw.row);
        }

        let date_cell = raw.cell(&binding.event_date);
        let event_date = match NaiveDate::parse_from_str(date_cell, &binding.date_format) {
            Ok(date) => Some(date),
            Err(err) => {
                issues.push(ParseIssue::new(
                    IssueCode::InvalidDate,
                    Some(raw.row),
                    Some(binding.event_date.clone()),
                    format!("cannot parse date {date_cell:?} with {:?}: {err}", binding.date_format),
                ));
                None
            }
        };

        let sex = match vocabulary.canonicalize_sex(raw.cell(&binding.sex)) {
            Ok(sex) => Some(sex),
            Err(err) => {
                issues.push(ParseIssue::new(
                    IssueCode::UnknownLabel,
                    Some(raw.row),
                    Some(binding.sex.clone()),
                    err.to_string(),
                ));
                None
            }
        };
        let race = match vocabulary.canonicalize_race(raw.cell(&binding.race_ethnicity)) {
            Ok(race) => Some(race),
            Err(err) => {
                issues.push(ParseIssue::new(
                    IssueCode::UnknownLabel,
                    Some(raw.row),
                    Some(binding.race_ethnicity.clone()),
                    err.to_string(),
                ));
                None
            }
        };

        let jurisdiction = binding
            .jurisdiction
            .as_ref()
            .map(|col| raw.cell(col).to_string())
            .unwrap_or_default();

        let score = match &binding.score {
            Some(col) => {
                let cell = raw.cell(col);
                if cell.is_empty() {
                    None
                } else {
                    match cell.parse::<f64>() {
                        Ok(value) => Some(value),
                        Err(_) => {
                            issues.push(ParseIssue::new(
                                IssueCode::InvalidValue,
                                Some(raw.row),
                                Some(col.clone()),
                                format!("score {cell:?} is not a number"),
                            ));
                            None
                        }
                    }
                }
            }
            None => None,
        };

        let phase = match &binding.phase {
            Some(col) => match parse_phase(raw.cell(col), binding.default_phase) {
                Ok(phase) => phase,
                Err(message) => {
                    issues.push(ParseIssue::new(
                        IssueCode::InvalidValue,
                        Some(raw.row),
                        Some(col.clone()),
                        message,
                    ));
                    binding.default_phase
                }
            },
            None => binding.default_phase,
        };

        let mut stage_outcomes = Vec::with_capacity(binding.stages.len());
        for (stage, column) in &binding.stages {
            match parse_outcome(raw.cell(column)) {
                Ok(outcome) => stage_outcomes.push((stage.clone(), outcome)),
                Err(message) => {
                    issues.push(ParseIssue::new(
                        IssueCode::InvalidValue,
                        Some(raw.row),
                        Some(column.clone()),
                        message,
                    ));
                }
            }
        }

        let mut features = BTreeMap::new();
        for column in &binding.features {
            let cell = raw.cell(column);
            if cell.is_empty() {
                continue;
            }
            let value = match cell.parse::<f64>() {
                Ok(number) if number.is_finite() => FeatureValue::Numeric(number),
                _ => FeatureValue::Categorical(cell.to_string()),
            };
            features.insert(column.clone(), value);
        }

        if issues.len() > before {
            continue;
        }

        let record = ApplicantRecord {
            id,
            event_date: event_date.expect("checked above"),
            jurisdiction,
            category: crate::domain::DemographicCategory::new(
                sex.expect("checked above"),
                race.expect("checked above"),
            ),
            stage_outcomes,
            score,
            features,
            phase,
        };

        let violations = validate_record(&record);
        if violations.is_empty() {
            records.push(record);
        } else {
            for violation in violations {
                issues.push(ParseIssue::new(
                    IssueCode::RecordInvariant,
                    Some(raw.row),
                    None,
                    format!("{}: {}", violation.code.as_str(), violation.detail),
                ));
            }
        }
    }

    if records.is_empty() && issues.is_empty() {
        issues.push(ParseIssue::new(
            IssueCode::MalformedInput,
            None,
            None,
            "input contains no records".to_string(),
        ));
    }
    if !issues.is_empty() {
        return Err(ParseFailures { issues });
    }

    AuditDataset::new(records, source_description, as_of_date).map_err(|err| ParseFailures {
        issues: vec![ParseIssue::new(
            IssueCode::MalformedInput,
            None,
            None,
            err.to_string(),
        )],
    })
}

/// Serialize a dataset back to CSV with the same binding. Parsing the
/// output with the same binding reproduces the dataset field for field.
pub fn write_dataset_csv(dataset: &AuditDataset, binding: &SchemaBinding) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(binding.columns())
        .expect("in-memory write");

    for record in dataset.records() {
        let mut cells: Vec<String> = vec![
            record.id.clone(),
            record.event_date.format(&binding.date_format).to_string(),
        ];
        if binding.jurisdiction.is_some() {
            cells.push(record.jurisdiction.clone());
        }
        cells.push(record.category.sex.label().to_string());
        cells.push(record.category.race_ethnicity.label().to_string());
        if binding.score.is_some() {
            cells.push(record.score.map(|s| s.to_string()).unwrap_or_default());
        }
        if binding.phase.is_some() {
            cells.push(record.phase.label().to_string());
        }
        for (stage, _) in &binding.stages {
            let outcome = record
                .outcome_at(stage)
                .expect("dataset stages are consistent");
            cells.push(outcome.label().to_string());
        }
        for column in &binding.features {
            cells.push(
                record
                    .features
                    .get(column)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&cells).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}

/// Result of the 12-month data-window check. The window is
/// [as_of minus 12 calendar months, as_of], both endpoints included;
/// records dated exactly twelve months before the reference date count as
/// in-window. Checking never mutates the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheckResult {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub in_window: u64,
    pub out_of_window: u64,
    pub offending_ids: Vec<String>,
}

/// Partition records by the 12-calendar-month window ending at the
/// dataset's as-of date (month arithmetic clamps to month end).
pub fn check_data_window(dataset: &AuditDataset) -> WindowCheckResult {
    let end = dataset.as_of_date;
    let start = end
        .checked_sub_months(Months::new(12))
        .unwrap_or(NaiveDate::MIN);

    let mut in_window = 0;
    let mut out_of_window = 0;
    let mut offending_ids = Vec::new();
    for record in dataset.records() {
        if record.event_date >= start && record.event_date <= end {
            in_window += 1;
        } else {
            out_of_window += 1;
            offending_ids.push(record.id.clone());
        }
    }

    WindowCheckResult {
        window_start: start,
        window_end: end,
        in_window,
        out_of_window,
        offending_ids,
    }
}

/// Result of the jurisdiction-tag check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JurisdictionCheckResult {
    pub expected: String,
    pub matching: u64,
    pub non_matching: u64,
    pub offending_ids: Vec<String>,
}

/// Count records whose jurisdiction tag matches the expected tag
/// (case-insensitive exact match; empty tags never match).
pub fn check_jurisdiction(dataset: &AuditDataset, expected: &str) -> JurisdictionCheckResult {
    let expected_lower = expected.to_lowercase();
    let mut matching = 0;
    let mut non_matching = 0;
    let mut offending_ids = Vec::new();
    for record in dataset.records() {
        if !record.jurisdiction.is_empty()
            && record.jurisdiction.to_lowercase() == expected_lower
        {
            matching += 1;
        } else {
            non_matching += 1;
            offending_ids.push(record.id.clone());
        }
    }
    JurisdictionCheckResult {
        expected: expected.to_string(),
        matching,
        non_matching,
        offending_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RaceEthnicity, Sex};

    fn binding() -> SchemaBinding {
        SchemaBinding {
            id: "id".to_string(),
            event_date: "date".to_string(),
            sex: "sex".to_string(),
            race_ethnicity: "race".to_string(),
            jurisdiction: Some("city".to_string()),
            score: Some("score".to_string()),
            phase: Some("phase".to_string()),
            default_phase: Phase::Output,
            stages: vec![
                ("screen".to_string(), "screen".to_string()),
                ("interview".to_string(), "interview".to_string()),
            ],
            features: vec!["language".to_string()],
            date_format: "%Y-%m-%d".to_string(),
        }
    }

    fn as_of() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 7, 1).unwrap()
    }

    const HEADER: &str = "id,date,city,sex,race,score,phase,screen,interview,language";

    fn parse(rows: &[&str]) -> Result<AuditDataset, ParseFailures> {
        let csv = format!("{HEADER}\n{}\n", rows.join("\n"));
        parse_dataset(
            csv.as_bytes(),
            DataFormat::Csv,
            &binding(),
            &Vocabulary::default(),
            "test data",
            as_of(),
        )
    }

    #[test]
    fn parses_well_formed_rows() {
        let ds = parse(&[
            "A1,2024-01-10,NYC,female,asian,88.5,output,advanced,not_advanced,english",
            "A2,2024-02-11,NYC,male,white,,output,advanced,advanced,spanish",
            "A3,2024-03-12,nyc,f,Hispanic or Latino,71,output,not_advanced,not_reached,",
        ])
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.stage_names(), ["screen", "interview"]);
        let a1 = &ds.records()[0];
        assert_eq!(a1.category.sex, Sex::Female);
        assert_eq!(a1.category.race_ethnicity, RaceEthnicity::Asian);
        assert_eq!(a1.score, Some(88.5));
        assert_eq!(
            a1.features.get("language"),
            Some(&FeatureValue::Categorical("english".to_string()))
        );
        let a3 = &ds.records()[2];
        assert_eq!(a3.category.race_ethnicity, RaceEthnicity::HispanicLatino);
        assert_eq!(a3.score, Some(71.0));
        assert!(a3.features.is_empty());
    }

    #[test]
    fn duplicate_id_cites_both_rows() {
        let err = parse(&[
            "A12,2024-01-10,NYC,female,asian,,output,advanced,not_reached,",
            "B2,2024-01-11,NYC,male,white,,output,advanced,not_reached,",
            "A12,2024-01-12,NYC,male,white,,output,advanced,not_reached,",
        ])
        .unwrap_err();
        let dup: Vec<_> = err
            .issues
            .iter()
            .filter(|i| i.code == IssueCode::DuplicateId)
            .collect();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup[0].row, Some(4));
        assert!(dup[0].message.contains("rows 2 and 4"), "{}", dup[0].message);
    }

    #[test]
    fn unknown_label_cites_row_and_column() {
        let err = parse(&[
            "A1,2024-01-10,NYC,female,Klingon,,output,advanced,not_reached,",
        ])
        .unwrap_err();
        assert_eq!(err.issues.len(), 1);
        let issue = &err.issues[0];
        assert_eq!(issue.code, IssueCode::UnknownLabel);
        assert_eq!(issue.row, Some(2));
        assert_eq!(issue.column.as_deref(), Some("race"));
    }

    #[test]
    fn reports_all_failures_not_just_first() {
        let err = parse(&[
            "A1,not-a-date,NYC,female,asian,,output,advanced,not_reached,",
            "A2,2024-01-10,NYC,martian,asian,,output,advanced,not_reached,",
            "A3,2024-01-10,NYC,female,asian,abc,output,maybe,not_reached,",
        ])
        .unwrap_err();
        let codes: Vec<IssueCode> = err.issues.iter().map(|i| i.code).collect();
        assert!(codes.contains(&IssueCode::InvalidDate));
        assert!(codes.contains(&IssueCode::UnknownLabel));
        assert!(codes.contains(&IssueCode::InvalidValue));
        assert!(err.issues.len() >= 4);
    }

    #[test]
    fn missing_column_detected() {
        let csv = "id,date,sex\nA1,2024-01-10,female\n";
        let err = parse_dataset(
            csv.as_bytes(),
            DataFormat::Csv,
            &binding(),
            &Vocabulary::default(),
            "test",
            as_of(),
        )
        .unwrap_err();
        assert!(err
            .issues
            .iter()
            .all(|i| i.code == IssueCode::MissingColumn));
        assert!(err.issues.len() >= 5);
    }

    #[test]
    fn monotonicity_violation_is_reported_with_row() {
        let err = parse(&[
            "A1,2024-01-10,NYC,female,asian,,output,not_advanced,advanced,",
        ])
        .unwrap_err();
        assert_eq!(err.issues.len(), 1);
        assert_eq!(err.issues[0].code, IssueCode::RecordInvariant);
        assert!(err.issues[0].message.contains("advanced_after_rejection"));
        assert_eq!(err.issues[0].row, Some(2));
    }

    #[test]
    fn json_records_parse_like_csv() {
        let json = serde_json::json!({
            "records": [
                {"id": "A1", "date": "2024-01-10", "city": "NYC", "sex": "female",
                 "race": "asian", "score": 88.5, "phase": "output",
                 "screen": "advanced", "interview": "not_advanced", "language": "english"}
            ]
        });
        let ds = parse_dataset(
            json.to_string().as_bytes(),
            DataFormat::Json,
            &binding(),
            &Vocabulary::default(),
            "test",
            as_of(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records()[0].score, Some(88.5));
    }

    #[test]
    fn window_boundaries() {
        let ds = parse(&[
            "A1,2023-08-01,NYC,female,asian,,output,advanced,not_reached,",
            "A2,2023-06-15,NYC,male,white,,output,advanced,not_reached,",
            "A3,2023-07-01,NYC,male,white,,output,advanced,not_reached,",
            "A4,2024-07-02,NYC,male,white,,output,advanced,not_reached,",
        ])
        .unwrap();
        let result = check_data_window(&ds);
        assert_eq!(result.window_start, NaiveDate::from_ymd_opt(2023, 7, 1).unwrap());
        assert_eq!(result.window_end, as_of());
        assert_eq!(result.in_window, 2);
        assert_eq!(result.out_of_window, 2);
        assert_eq!(result.offending_ids, vec!["A2", "A4"]);
        assert_eq!(result.in_window + result.out_of_window, ds.len() as u64);
    }

    #[test]
    fn window_clamps_month_end() {
        let csv = format!(
            "{HEADER}\nA1,2024-01-10,NYC,female,asian,,output,advanced,not_reached,\n"
        );
        let ds = parse_dataset(
            csv.as_bytes(),
            DataFormat::Csv,
            &binding(),
            &Vocabulary::default(),
            "test",
            NaiveDate::from_ymd_opt(2024, 2, 29).unwrap(),
        )
        .unwrap();
        let result = check_data_window(&ds);
        assert_eq!(
            result.window_start,
            NaiveDate::from_ymd_opt(2023, 2, 28).unwrap()
        );
    }

    #[test]
    fn jurisdiction_match_is_case_insensitive() {
        let ds = parse(&[
            "A1,2024-01-10,NYC,female,asian,,output,advanced,not_reached,",
            "A2,2024-01-11,nyc,male,white,,output,advanced,not_reached,",
            "A3,2024-01-12,BOS,male,white,,output,advanced,not_reached,",
            "A4,2024-01-13,,male,white,,output,advanced,not_reached,",
        ])
        .unwrap();
        let result = check_jurisdiction(&ds, "NYC");
        assert_eq!(result.matching, 2);
        assert_eq!(result.non_matching, 2);
        assert_eq!(result.offending_ids, vec!["A3", "A4"]);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let ds = parse(&[
            "A1,2024-01-10,NYC,female,asian,88.5,output,advanced,not_advanced,english",
            "A2,2024-02-11,NYC,male,white,,input,advanced,advanced,spanish",
            "A3,2024-03-12,NYC,unknown,unknown,71.25,output,not_advanced,not_reached,3.5",
        ])
        .unwrap();
        let bytes = write_dataset_csv(&ds, &binding());
        let reparsed = parse_dataset(
            &bytes,
            DataFormat::Csv,
            &binding(),
            &Vocabulary::default(),
            "test data",
            as_of(),
        )
        .unwrap();
        assert_eq!(ds, reparsed);
    }
}
