//! Core vocabulary: demographic categories, applicant records, and the
//! record-level invariants every other module relies on.
//!
//! All types here are immutable after construction and all functions are
//! pure, so they are safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sex labels used for grouping. Free-form input is mapped onto these
/// canonical values through a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

impl Sex {
    pub const ALL: [Sex; 3] = [Sex::Female, Sex::Male, Sex::Unknown];

    pub fn label(&self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Race/ethnicity labels: the eight decennial-census reporting categories
/// plus `unknown` for unreported demographics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceEthnicity {
    AmericanIndianAlaskaNative,
    Asian,
    BlackAfricanAmerican,
    HispanicLatino,
    NativeHawaiianPacificIslander,
    SomeOtherRace,
    TwoOrMoreRaces,
    White,
    Unknown,
}

impl RaceEthnicity {
    pub const ALL: [RaceEthnicity; 9] = [
        RaceEthnicity::AmericanIndianAlaskaNative,
        RaceEthnicity::Asian,
        RaceEthnicity::BlackAfricanAmerican,
        RaceEthnicity::HispanicLatino,
        RaceEthnicity::NativeHawaiianPacificIslander,
        RaceEthnicity::SomeOtherRace,
        RaceEthnicity::TwoOrMoreRaces,
        RaceEthnicity::White,
        RaceEthnicity::Unknown,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            RaceEthnicity::AmericanIndianAlaskaNative => "american_indian_alaska_native",
            RaceEthnicity::Asian => "asian",
            RaceEthnicity::BlackAfricanAmerican => "black_african_american",
            RaceEthnicity::HispanicLatino => "hispanic_latino",
            RaceEthnicity::NativeHawaiianPacificIslander => "native_hawaiian_pacific_islander",
            RaceEthnicity::SomeOtherRace => "some_other_race",
            RaceEthnicity::TwoOrMoreRaces => "two_or_more_races",
            RaceEthnicity::White => "white",
            RaceEthnicity::Unknown => "unknown",
        }
    }
}

// Canonical ordering is alphabetical by label, which the derived variant
// order would not give (`unknown` sorts before `white`).
impl Ord for RaceEthnicity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.label().cmp(other.label())
    }
}

impl PartialOrd for RaceEthnicity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RaceEthnicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A (sex, race/ethnicity) cell — the unit of all grouping.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct DemographicCategory {
    pub sex: Sex,
    pub race_ethnicity: RaceEthnicity,
}

impl DemographicCategory {
    pub fn new(sex: Sex, race_ethnicity: RaceEthnicity) -> Self {
        Self { sex, race_ethnicity }
    }

    /// True when either coordinate is unreported.
    pub fn is_unknown(&self) -> bool {
        self.sex == Sex::Unknown || self.race_ethnicity == RaceEthnicity::Unknown
    }
}

impl fmt::Display for DemographicCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} x {}", self.sex, self.race_ethnicity)
    }
}

/// How a table groups records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    BySex,
    ByRaceEthnicity,
    Intersectional,
}

impl GroupingMode {
    pub const ALL: [GroupingMode; 3] = [
        GroupingMode::BySex,
        GroupingMode::ByRaceEthnicity,
        GroupingMode::Intersectional,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            GroupingMode::BySex => "by_sex",
            GroupingMode::ByRaceEthnicity => "by_race_ethnicity",
            GroupingMode::Intersectional => "intersectional",
        }
    }
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Outcome of one hiring stage for one applicant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Advanced,
    NotAdvanced,
    NotReached,
}

impl StageOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            StageOutcome::Advanced => "advanced",
            StageOutcome::NotAdvanced => "not_advanced",
            StageOutcome::NotReached => "not_reached",
        }
    }
}

/// Whether a record belongs to the training/input dataset or to the
/// model-output dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Input,
    Output,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Input => "input",
            Phase::Output => "output",
        }
    }
}

/// Auxiliary attribute value carried for proxy screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Numeric(v) => write!(f, "{v}"),
            FeatureValue::Categorical(s) => f.write_str(s),
        }
    }
}

/// One applicant's dated journey through the hiring funnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicantRecord {
    pub id: String,
    pub event_date: NaiveDate,
    /// Free-form tag, e.g. a city code. Empty when unreported.
    pub jurisdiction: String,
    pub category: DemographicCategory,
    /// One entry per funnel stage, in dataset stage order.
    pub stage_outcomes: Vec<(String, StageOutcome)>,
    /// System output score, if the record carries one. Always finite.
    pub score: Option<f64>,
    pub features: BTreeMap<String, FeatureValue>,
    pub phase: Phase,
}

impl ApplicantRecord {
    /// Outcome at the named stage, if the record has that stage.
    pub fn outcome_at(&self, stage: &str) -> Option<StageOutcome> {
        self.stage_outcomes
            .iter()
            .find(|(name, _)| name == stage)
            .map(|(_, o)| *o)
    }
}

/// Machine-readable record-invariant violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    /// An `advanced` outcome after an earlier `not_advanced`.
    AdvancedAfterRejection,
    /// A `not_advanced` outcome after an earlier `not_advanced`; later
    /// stages must be `not_reached`.
    OutcomeAfterRejection,
    /// A decided outcome after an earlier `not_reached`.
    OutcomeAfterNotReached,
    NonFiniteScore,
    EmptyId,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::AdvancedAfterRejection => "advanced_after_rejection",
            ViolationCode::OutcomeAfterRejection => "outcome_after_rejection",
            ViolationCode::OutcomeAfterNotReached => "outcome_after_not_reached",
            ViolationCode::NonFiniteScore => "non_finite_score",
            ViolationCode::EmptyId => "empty_id",
        }
    }
}

/// A single violated record invariant. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

/// Check every record invariant, returning all violations found.
pub fn validate_record(record: &ApplicantRecord) -> Vec<Violation> {
    let mut violations = Vec::new();

    if record.id.is_empty() {
        violations.push(Violation {
            code: ViolationCode::EmptyId,
            detail: "record id is empty".to_string(),
        });
    }

    let mut rejected = false;
    let mut ended = false;
    for (stage, outcome) in &record.stage_outcomes {
        match outcome {
            StageOutcome::Advanced if rejected => violations.push(Violation {
                code: ViolationCode::AdvancedAfterRejection,
                detail: format!("stage {stage:?} is advanced after an earlier rejection"),
            }),
            StageOutcome::NotAdvanced if rejected => violations.push(Violation {
                code: ViolationCode::OutcomeAfterRejection,
                detail: format!("stage {stage:?} is decided after an earlier rejection"),
            }),
            StageOutcome::Advanced | StageOutcome::NotAdvanced if ended => {
                violations.push(Violation {
                    code: ViolationCode::OutcomeAfterNotReached,
                    detail: format!("stage {stage:?} is decided after an earlier not_reached"),
                })
            }
            _ => {}
        }
        rejected |= *outcome == StageOutcome::NotAdvanced;
        ended |= *outcome == StageOutcome::NotReached;
    }

    if let Some(score) = record.score {
        if !score.is_finite() {
            violations.push(Violation {
                code: ViolationCode::NonFiniteScore,
                detail: format!("score {score} is not finite"),
            });
        }
    }

    violations
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset contains no records")]
    Empty,
    #[error("duplicate record id {id:?}")]
    DuplicateId { id: String },
    #[error("record {id:?} has stage sequence {found:?}, expected {expected:?}")]
    InconsistentStages {
        id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("record {id:?} violates invariants: {details}")]
    InvalidRecord { id: String, details: String },
}

/// A validated set of applicant records sharing one funnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDataset {
    records: Vec<ApplicantRecord>,
    stages: Vec<String>,
    pub source_description: String,
    pub as_of_date: NaiveDate,
}

impl AuditDataset {
    /// Build a dataset, enforcing the dataset invariants: non-empty, unique
    /// ids, every record valid, and one consistent stage-name sequence.
    pub fn new(
        records: Vec<ApplicantRecord>,
        source_description: impl Into<String>,
        as_of_date: NaiveDate,
    ) -> Result<Self, DatasetError> {
        let first = records.first().ok_or(DatasetError::Empty)?;
        let stages: Vec<String> = first
            .stage_outcomes
            .iter()
            .map(|(name, _)| name.clone())
            .collect();

        let mut seen = BTreeSet::new();
        for record in &records {
            if !seen.insert(record.id.clone()) {
                return Err(DatasetError::DuplicateId {
                    id: record.id.clone(),
                });
            }
            let found: Vec<String> = record
                .stage_outcomes
                .iter()
                .map(|(name, _)| name.clone())
                .collect();
            if found != stages {
                return Err(DatasetError::InconsistentStages {
                    id: record.id.clone(),
                    expected: stages.clone(),
                    found,
                });
            }
            let violations = validate_record(record);
            if !violations.is_empty() {
                return Err(DatasetError::InvalidRecord {
                    id: record.id.clone(),
                    details: violations
                        .iter()
                        .map(|v| v.code.as_str())
                        .collect::<Vec<_>>()
                        .join(", "),
                });
            }
        }

        Ok(Self {
            records,
            stages,
            source_description: source_description.into(),
            as_of_date,
        })
    }

    pub fn records(&self) -> &[ApplicantRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Funnel stage names, in order.
    pub fn stage_names(&self) -> &[String] {
        &self.stages
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    /// Records belonging to one phase.
    pub fn phase_records(&self, phase: Phase) -> Vec<&ApplicantRecord> {
        self.records.iter().filter(|r| r.phase == phase).collect()
    }

    /// New dataset keeping only records matching the predicate; `None` when
    /// nothing survives.
    pub fn filtered(&self, keep: impl Fn(&ApplicantRecord) -> bool) -> Option<AuditDataset> {
        let records: Vec<ApplicantRecord> =
            self.records.iter().filter(|r| keep(r)).cloned().collect();
        if records.is_empty() {
            return None;
        }
        Some(AuditDataset {
            records,
            stages: self.stages.clone(),
            source_description: self.source_description.clone(),
            as_of_date: self.as_of_date,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("unknown {field} label {value:?}")]
    UnknownLabel { field: &'static str, value: String },
}

/// Alias map from free-form labels to canonical categories.
///
/// Lookup is case- and whitespace-insensitive; empty values map to
/// `unknown`. The default vocabulary covers the canonical labels themselves
/// plus the full census row phrasings and a few common short forms; config
/// files extend or override it.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    sex_aliases: BTreeMap<String, Sex>,
    race_aliases: BTreeMap<String, RaceEthnicity>,
}

/// Lowercase, trim, and collapse internal whitespace runs.
pub fn normalize_label(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut vocab = Self {
            sex_aliases: BTreeMap::new(),
            race_aliases: BTreeMap::new(),
        };

        for sex in Sex::ALL {
            vocab.add_sex_alias(sex.label(), sex);
        }
        vocab.add_sex_alias("f", Sex::Female);
        vocab.add_sex_alias("woman", Sex::Female);
        vocab.add_sex_alias("m", Sex::Male);
        vocab.add_sex_alias("man", Sex::Male);
        vocab.add_sex_alias("u", Sex::Unknown);
        vocab.add_sex_alias("unk", Sex::Unknown);
        vocab.add_sex_alias("declined", Sex::Unknown);
        vocab.add_sex_alias("prefer not to say", Sex::Unknown);

        for race in RaceEthnicity::ALL {
            vocab.add_race_alias(race.label(), race);
        }
        use RaceEthnicity::*;
        // Full census row phrasings.
        vocab.add_race_alias(
            "american indian and alaska native alone, not hispanic or latino",
            AmericanIndianAlaskaNative,
        );
        vocab.add_race_alias("asian alone, not hispanic or latino", Asian);
        vocab.add_race_alias(
            "black or african american alone, not hispanic or latino",
            BlackAfricanAmerican,
        );
        vocab.add_race_alias("hispanic or latino", HispanicLatino);
        vocab.add_race_alias(
            "native hawaiian and other pacific islander alone, not hispanic or latino",
            NativeHawaiianPacificIslander,
        );
        vocab.add_race_alias("some other race alone, not hispanic or latino", SomeOtherRace);
        vocab.add_race_alias("two or more races, not hispanic or latino", TwoOrMoreRaces);
        vocab.add_race_alias("white alone, not hispanic or latino", White);
        // Common short forms.
        vocab.add_race_alias("american indian or alaska native", AmericanIndianAlaskaNative);
        vocab.add_race_alias("black or african american", BlackAfricanAmerican);
        vocab.add_race_alias("black", BlackAfricanAmerican);
        vocab.add_race_alias("hispanic", HispanicLatino);
        vocab.add_race_alias("latino", HispanicLatino);
        vocab.add_race_alias(
            "native hawaiian or other pacific islander",
            NativeHawaiianPacificIslander,
        );
        vocab.add_race_alias("some other race", SomeOtherRace);
        vocab.add_race_alias("two or more races", TwoOrMoreRaces);
        vocab.add_race_alias("unk", Unknown);
        vocab.add_race_alias("declined", Unknown);
        vocab
    }
}

impl Vocabulary {
    /// Register an alias for a sex label. Later registrations win.
    pub fn add_sex_alias(&mut self, alias: &str, sex: Sex) {
        self.sex_aliases.insert(normalize_label(alias), sex);
    }

    /// Register an alias for a race/ethnicity label. Later registrations win.
    pub fn add_race_alias(&mut self, alias: &str, race: RaceEthnicity) {
        self.race_aliases.insert(normalize_label(alias), race);
    }

    pub fn canonicalize_sex(&self, raw: &str) -> Result<Sex, DomainError> {
        let normalized = normalize_label(raw);
        if normalized.is_empty() {
            return Ok(Sex::Unknown);
        }
        self.sex_aliases
            .get(&normalized)
            .copied()
            .ok_or(DomainError::UnknownLabel {
                field: "sex",
                value: raw.to_string(),
            })
    }

    pub fn canonicalize_race(&self, raw: &str) -> Result<RaceEthnicity, DomainError> {
        let normalized = normalize_label(raw);
        if normalized.is_empty() {
            return Ok(RaceEthnicity::Unknown);
        }
        self.race_aliases
            .get(&normalized)
            .copied()
            .ok_or(DomainError::UnknownLabel {
                field: "race_ethnicity",
                value: raw.to_string(),
            })
    }

    /// Map a raw (sex, race) pair onto a canonical category. Empty or
    /// missing values map to `unknown`; unmapped non-empty values are an
    /// error.
    pub fn canonicalize_category(
        &self,
        raw_sex: &str,
        raw_race: &str,
    ) -> Result<DemographicCategory, DomainError> {
        Ok(DemographicCategory {
            sex: self.canonicalize_sex(raw_sex)?,
            race_ethnicity: self.canonicalize_race(raw_race)?,
        })
    }
}
