//! Audit math: selection and scoring rates, impact ratios, four-fifths
//! flags, small-group policy, stage-funnel tables, and input-vs-output
//! bias deltas.
//!
//! Everything operates on immutable datasets and returns freshly built
//! values; results are deterministic regardless of record order because
//! entries are keyed and emitted in canonical category order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ApplicantRecord, AuditDataset, DemographicCategory, GroupingMode, RaceEthnicity, Sex,
    StageOutcome,
};

/// Grouping key of one table row: a demographic category with one
/// coordinate possibly collapsed under `by_sex` / `by_race_ethnicity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub sex: Option<Sex>,
    pub race_ethnicity: Option<RaceEthnicity>,
}

impl GroupKey {
    pub fn from_category(category: DemographicCategory, grouping: GroupingMode) -> Self {
        match grouping {
            GroupingMode::BySex => Self {
                sex: Some(category.sex),
                race_ethnicity: None,
            },
            GroupingMode::ByRaceEthnicity => Self {
                sex: None,
                race_ethnicity: Some(category.race_ethnicity),
            },
            GroupingMode::Intersectional => Self {
                sex: Some(category.sex),
                race_ethnicity: Some(category.race_ethnicity),
            },
        }
    }

    /// True when any populated coordinate is unreported.
    pub fn is_unknown(&self) -> bool {
        self.sex == Some(Sex::Unknown) || self.race_ethnicity == Some(RaceEthnicity::Unknown)
    }

    pub fn label(&self) -> String {
        match (self.sex, self.race_ethnicity) {
            (Some(sex), Some(race)) => format!("{sex} x {race}"),
            (Some(sex), None) => sex.to_string(),
            (None, Some(race)) => race.to_string(),
            (None, None) => "all".to_string(),
        }
    }

    fn sort_key(&self) -> (&'static str, &'static str) {
        (
            self.race_ethnicity.map(|r| r.label()).unwrap_or(""),
            self.sex.map(|s| s.label()).unwrap_or(""),
        )
    }
}

// Canonical ordering: race label first, then sex label, alphabetical.
impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Flags attached to a table row. Flags are computed on unrounded values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatFlag {
    BelowRepresentationThreshold,
    ExcludedFromRatios,
    FailsFourFifths,
    UnknownDemographics,
    ZeroDenominator,
}

/// One row of an audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: GroupKey,
    /// Applicants in the category at the relevant basis (reached the stage
    /// for selection tables, carried a score for scoring tables).
    pub count: u64,
    /// count / total counted applicants in the table.
    pub share: f64,
    /// Selection or scoring rate; `None` when undefined.
    pub rate: Option<f64>,
    /// rate / highest non-excluded rate; `None` when undefined or excluded.
    pub impact_ratio: Option<f64>,
    pub flags: BTreeSet<StatFlag>,
}

/// Denominator basis of a table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TableBasis {
    /// Selection at one stage; denominators are those who reached it.
    Selection { stage: String },
    /// Pooled-median score split; denominators are scored records.
    Scoring,
    /// Raw population counts (census benchmarks).
    Population,
}

impl fmt::Display for TableBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableBasis::Selection { stage } => write!(f, "selection:{stage}"),
            TableBasis::Scoring => f.write_str("scoring"),
            TableBasis::Population => f.write_str("population"),
        }
    }
}

/// A full audit table plus the warnings raised while building it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub grouping: GroupingMode,
    pub basis: TableBasis,
    pub entries: Vec<CategoryStats>,
    pub warnings: Vec<Warning>,
}

/// Stage-funnel basis marker; denominators are those who reached the stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageBasis {
    ReachedStage,
}

/// One stage of the hiring funnel with per-category stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub stage_name: String,
    pub grouping: GroupingMode,
    pub basis: StageBasis,
    pub entries: Vec<CategoryStats>,
    pub warnings: Vec<Warning>,
}

/// Warning codes surfaced in tables and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    CategoryOmitted,
    FunnelMonotonicity,
    ShareCrossCheck,
    BenchmarkCategoryMissing,
    AbsentFromOutcomes,
    OutOfWindow,
    JurisdictionMismatch,
    DegenerateFeature,
    SectionUnavailable,
    RecordsFiltered,
}

/// A non-fatal audit finding: something the report must disclose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
    pub context: String,
}

impl Warning {
    pub fn new(code: WarningCode, message: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            context: context.into(),
        }
    }
}

/// How categories under the representation threshold are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallGroupMode {
    /// Keep the category in every computation, flag it. Default.
    IncludeAndFlag,
    /// Flag it and drop it from impact-ratio math.
    Exclude,
    /// Keep it with no flag.
    IncludeSilent,
}

/// Small-group representation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallGroupPolicy {
    /// Share below which a category is considered small. In [0, 1).
    pub threshold: f64,
    pub mode: SmallGroupMode,
}

impl Default for SmallGroupPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            mode: SmallGroupMode::IncludeAndFlag,
        }
    }
}

impl SmallGroupPolicy {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(MetricsError::InvalidThreshold {
                name: "small_group_threshold",
                value: self.threshold,
            });
        }
        Ok(())
    }
}

/// Thresholds and modes applied when building a full table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub small_group: SmallGroupPolicy,
    pub four_fifths_threshold: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            small_group: SmallGroupPolicy::default(),
            four_fifths_threshold: 0.8,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        self.small_group.validate()?;
        if !(0.0..=1.0).contains(&self.four_fifths_threshold) {
            return Err(MetricsError::InvalidThreshold {
                name: "four_fifths_threshold",
                value: self.four_fifths_threshold,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("stage {stage:?} is not part of the dataset funnel")]
    UnknownStage { stage: String },
    #[error("no record carries a score")]
    NoScores,
    #[error("grouping mismatch: {left} vs {right}")]
    GroupingMismatch {
        left: GroupingMode,
        right: GroupingMode,
    },
    #[error("{name} = {value} is outside its documented range")]
    InvalidThreshold { name: &'static str, value: f64 },
}

/// (reached, advanced) counts per group at one stage.
fn stage_counts(
    dataset: &AuditDataset,
    stage_index: usize,
    grouping: GroupingMode,
) -> BTreeMap<GroupKey, (u64, u64)> {
    let mut counts: BTreeMap<GroupKey, (u64, u64)> = BTreeMap::new();
    for record in dataset.records() {
        let outcome = record.stage_outcomes[stage_index].1;
        if outcome == StageOutcome::NotReached {
            continue;
        }
        let entry = counts
            .entry(GroupKey::from_category(record.category, grouping))
            .or_insert((0, 0));
        entry.0 += 1;
        if outcome == StageOutcome::Advanced {
            entry.1 += 1;
        }
    }
    counts
}

/// All group keys observed anywhere in the dataset under a grouping.
fn observed_keys(dataset: &AuditDataset, grouping: GroupingMode) -> BTreeSet<GroupKey> {
    dataset
        .records()
        .iter()
        .map(|r| GroupKey::from_category(r.category, grouping))
        .collect()
}

fn omission_warnings(
    observed: &BTreeSet<GroupKey>,
    present: &BTreeMap<GroupKey, (u64, u64)>,
    basis: &TableBasis,
    grouping: GroupingMode,
    reason: &str,
) -> Vec<Warning> {
    observed
        .iter()
        .filter(|key| !present.contains_key(*key))
        .map(|key| {
            Warning::new(
                WarningCode::CategoryOmitted,
                format!("category {} omitted from table: {reason}", key.label()),
                format!("basis={basis}, grouping={grouping}, category={}", key.label()),
            )
        })
        .collect()
}

fn build_entries(counts: &BTreeMap<GroupKey, (u64, u64)>) -> Vec<CategoryStats> {
    let total: u64 = counts.values().map(|(reached, _)| reached).sum();
    counts
        .iter()
        .map(|(key, (reached, advanced))| {
            let mut flags = BTreeSet::new();
            if key.is_unknown() {
                flags.insert(StatFlag::UnknownDemographics);
                flags.insert(StatFlag::ExcludedFromRatios);
            }
            CategoryStats {
                category: *key,
                count: *reached,
                share: *reached as f64 / total as f64,
                rate: Some(*advanced as f64 / *reached as f64),
                impact_ratio: None,
                flags,
            }
        })
        .collect()
}

/// Per-category selection rates at one stage.
///
/// The denominator is the population that reached the stage. Categories
/// with nobody at the stage are omitted with a warning; unknown-demographic
/// categories are counted and flagged but excluded from ratio math.
pub fn selection_rate_table(
    dataset: &AuditDataset,
    stage: &str,
    grouping: GroupingMode,
) -> Result<StatsTable, MetricsError> {
    let stage_index = dataset
        .stage_names()
        .iter()
        .position(|s| s == stage)
        .ok_or_else(|| MetricsError::UnknownStage {
            stage: stage.to_string(),
        })?;

    let basis = TableBasis::Selection {
        stage: stage.to_string(),
    };
    let counts = stage_counts(dataset, stage_index, grouping);
    let warnings = omission_warnings(
        &observed_keys(dataset, grouping),
        &counts,
        &basis,
        grouping,
        "no applicants reached this stage",
    );

    Ok(StatsTable {
        grouping,
        basis,
        entries: build_entries(&counts),
        warnings,
    })
}

/// Median of a non-empty score sample; for an even-sized sample, the
/// arithmetic mean of the two middle values.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-category scoring rates: the fraction of a category's scored records
/// whose score is strictly above the pooled median of all scores.
pub fn scoring_rate_table(
    dataset: &AuditDataset,
    grouping: GroupingMode,
) -> Result<StatsTable, MetricsError> {
    let mut scores: Vec<f64> = dataset.records().iter().filter_map(|r| r.score).collect();
    if scores.is_empty() {
        return Err(MetricsError::NoScores);
    }
    scores.sort_by(f64::total_cmp);
    let pooled_median = median(&scores);

    // (scored, above-median) counts per group.
    let mut counts: BTreeMap<GroupKey, (u64, u64)> = BTreeMap::new();
    for record in dataset.records() {
        let Some(score) = record.score else { continue };
        let entry = counts
            .entry(GroupKey::from_category(record.category, grouping))
            .or_insert((0, 0));
        entry.0 += 1;
        if score > pooled_median {
            entry.1 += 1;
        }
    }

    let warnings = omission_warnings(
        &observed_keys(dataset, grouping),
        &counts,
        &TableBasis::Scoring,
        grouping,
        "no scored records",
    );

    Ok(StatsTable {
        grouping,
        basis: TableBasis::Scoring,
        entries: build_entries(&counts),
        warnings,
    })
}

/// Divide every defined rate by the highest rate among non-excluded
/// categories. When that reference rate is zero (or no category is
/// eligible), all ratios are undefined and every entry is flagged
/// `zero_denominator`.
pub fn impact_ratios(mut entries: Vec<CategoryStats>) -> Vec<CategoryStats> {
    let reference = entries
        .iter()
        .filter(|e| !e.flags.contains(&StatFlag::ExcludedFromRatios))
        .filter_map(|e| e.rate)
        .fold(f64::NEG_INFINITY, f64::max);

    if !reference.is_finite() || reference == 0.0 {
        for entry in &mut entries {
            entry.impact_ratio = None;
            entry.flags.insert(StatFlag::ZeroDenominator);
        }
        return entries;
    }

    for entry in &mut entries {
        entry.impact_ratio = if entry.flags.contains(&StatFlag::ExcludedFromRatios) {
            None
        } else {
            entry.rate.map(|rate| rate / reference)
        };
    }
    entries
}

/// Flag entries whose impact ratio is defined and strictly below the
/// threshold. Undefined ratios are never flagged.
pub fn apply_four_fifths(mut entries: Vec<CategoryStats>, threshold: f64) -> Vec<CategoryStats> {
    for entry in &mut entries {
        let fails = matches!(entry.impact_ratio, Some(ratio) if ratio < threshold);
        if fails {
            entry.flags.insert(StatFlag::FailsFourFifths);
        } else {
            entry.flags.remove(&StatFlag::FailsFourFifths);
        }
    }
    entries
}

/// Flag (and under `exclude`, remove from ratio math) every category whose
/// share is strictly below the policy threshold. Under `exclude` the caller
/// must recompute impact ratios afterwards; [`compute_table`] sequences
/// this correctly.
pub fn apply_small_group_policy(
    mut entries: Vec<CategoryStats>,
    policy: &SmallGroupPolicy,
) -> Vec<CategoryStats> {
    for entry in &mut entries {
        if entry.share >= policy.threshold {
            continue;
        }
        match policy.mode {
            SmallGroupMode::IncludeAndFlag => {
                entry.flags.insert(StatFlag::BelowRepresentationThreshold);
            }
            SmallGroupMode::Exclude => {
                entry.flags.insert(StatFlag::BelowRepresentationThreshold);
                entry.flags.insert(StatFlag::ExcludedFromRatios);
            }
            SmallGroupMode::IncludeSilent => {}
        }
    }
    entries
}

/// Build one fully flagged table: base rates, then small-group policy,
/// then impact ratios, then four-fifths flags.
pub fn compute_table(
    dataset: &AuditDataset,
    basis: &TableBasis,
    grouping: GroupingMode,
    policy: &PolicyConfig,
) -> Result<StatsTable, MetricsError> {
    let mut table = match basis {
        TableBasis::Selection { stage } => selection_rate_table(dataset, stage, grouping)?,
        TableBasis::Scoring => scoring_rate_table(dataset, grouping)?,
        TableBasis::Population => {
            return Err(MetricsError::UnknownStage {
                stage: "population".to_string(),
            })
        }
    };
    table.entries = apply_small_group_policy(table.entries, &policy.small_group);
    table.entries = impact_ratios(table.entries);
    table.entries = apply_four_fifths(table.entries, policy.four_fifths_threshold);
    Ok(table)
}

/// One table per funnel stage, each computed on the population reaching
/// that stage, with the monotone-funnel invariant re-checked across stages.
pub fn stage_funnel(
    dataset: &AuditDataset,
    grouping: GroupingMode,
    policy: &PolicyConfig,
) -> Result<Vec<StageTable>, MetricsError> {
    let mut tables = Vec::new();
    let mut previous: Option<BTreeMap<GroupKey, (u64, u64)>> = None;

    for (index, stage) in dataset.stage_names().to_vec().iter().enumerate() {
        let basis = TableBasis::Selection {
            stage: stage.clone(),
        };
        let table = compute_table(dataset, &basis, grouping, policy)?;
        let counts = stage_counts(dataset, index, grouping);

        let mut warnings = table.warnings;
        if let Some(prior) = &previous {
            for (key, (reached, _)) in &counts {
                let advanced_before = prior.get(key).map(|(_, a)| *a).unwrap_or(0);
                if *reached > advanced_before {
                    warnings.push(Warning::new(
                        WarningCode::FunnelMonotonicity,
                        format!(
                            "category {} has {reached} applicants at stage {stage:?} but only \
                             {advanced_before} advanced from the previous stage",
                            key.label()
                        ),
                        format!("stage={stage}, grouping={grouping}, category={}", key.label()),
                    ));
                }
            }
        }
        previous = Some(counts);

        tables.push(StageTable {
            stage_name: stage.clone(),
            grouping,
            basis: StageBasis::ReachedStage,
            entries: table.entries,
            warnings,
        });
    }
    Ok(tables)
}

/// Direction of an impact-ratio change between input and output data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaDirection {
    Improved,
    Worsened,
    Unchanged,
    Undefined,
}

/// Impact-ratio change for one category between the input-phase and
/// output-phase tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDelta {
    pub category: GroupKey,
    pub input_impact_ratio: Option<f64>,
    pub output_impact_ratio: Option<f64>,
    /// output impact ratio minus input impact ratio, in [-1, 1].
    pub delta: Option<f64>,
    pub direction: DeltaDirection,
}

/// Per-category impact-ratio deltas between two tables of the same
/// grouping. Categories present in only one table are reported with an
/// undefined delta.
pub fn bias_delta(
    input: &StatsTable,
    output: &StatsTable,
) -> Result<Vec<BiasDelta>, MetricsError> {
    if input.grouping != output.grouping {
        return Err(MetricsError::GroupingMismatch {
            left: input.grouping,
            right: output.grouping,
        });
    }

    let input_by_key: BTreeMap<GroupKey, &CategoryStats> =
        input.entries.iter().map(|e| (e.category, e)).collect();
    let output_by_key: BTreeMap<GroupKey, &CategoryStats> =
        output.entries.iter().map(|e| (e.category, e)).collect();

    let keys: BTreeSet<GroupKey> = input_by_key
        .keys()
        .chain(output_by_key.keys())
        .copied()
        .collect();

    Ok(keys
        .into_iter()
        .map(|key| {
            let input_ratio = input_by_key.get(&key).and_then(|e| e.impact_ratio);
            let output_ratio = output_by_key.get(&key).and_then(|e| e.impact_ratio);
            let in_both = input_by_key.contains_key(&key) && output_by_key.contains_key(&key);
            let delta = match (in_both, input_ratio, output_ratio) {
                (true, Some(i), Some(o)) => Some(o - i),
                _ => None,
            };
            let direction = match delta {
                Some(d) if d > 0.0 => DeltaDirection::Improved,
                Some(d) if d < 0.0 => DeltaDirection::Worsened,
                Some(_) => DeltaDirection::Unchanged,
                None => DeltaDirection::Undefined,
            };
            BiasDelta {
                category: key,
                input_impact_ratio: input_ratio,
                output_impact_ratio: output_ratio,
                delta,
                direction,
            }
        })
        .collect())
}

/// Records that reached and advanced at a stage, for callers needing raw
/// counts (e.g. selected-population shares).
pub fn advanced_counts(
    dataset: &AuditDataset,
    stage: &str,
    grouping: GroupingMode,
) -> Result<BTreeMap<GroupKey, u64>, MetricsError> {
    let stage_index = dataset
        .stage_names()
        .iter()
        .position(|s| s == stage)
        .ok_or_else(|| MetricsError::UnknownStage {
            stage: stage.to_string(),
        })?;
    Ok(stage_counts(dataset, stage_index, grouping)
        .into_iter()
        .filter(|(_, (_, advanced))| *advanced > 0)
        .map(|(key, (_, advanced))| (key, advanced))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Phase;
    use chrono::NaiveDate;
    use std::collections::BTreeMap as Map;

    const TOL: f64 = 1e-12;

    fn record(
        id: &str,
        sex: Sex,
        race: RaceEthnicity,
        outcomes: &[StageOutcome],
        score: Option<f64>,
    ) -> ApplicantRecord {
        ApplicantRecord {
            id: id.to_string(),
            event_date: NaiveDate::from_ymd_opt(2024, 1, 15).unwrap(),
            jurisdiction: "NYC".to_string(),
            category: DemographicCategory::new(sex, race),
            stage_outcomes: outcomes
                .iter()
                .enumerate()
                .map(|(i, o)| (format!("stage{i}"), *o))
                .collect(),
            score,
            features: Map::new(),
            phase: Phase::Output,
        }
    }

    fn dataset(records: Vec<ApplicantRecord>) -> AuditDataset {
        AuditDataset::new(
            records,
            "test",
            NaiveDate::from_ymd_opt(2024, 7, 1).unwrap(),
        )
        .unwrap()
    }

    /// One record per applicant from per-stage (reached, advanced) pairs;
    /// the first `advanced` applicants move on at each stage.
    fn funnel_dataset(cells: &[(Sex, RaceEthnicity, &[(u64, u64)])]) -> AuditDataset {
        let mut records = Vec::new();
        let mut next = 0usize;
        for (sex, race, stages) in cells {
            for applicant in 0..stages[0].0 {
                let mut outcomes = Vec::with_capacity(stages.len());
                let mut alive = true;
                for (reached, advanced) in stages.iter() {
                    if !alive || applicant >= *reached {
                        outcomes.push(StageOutcome::NotReached);
                        alive = false;
                    } else if applicant < *advanced {
                        outcomes.push(StageOutcome::Advanced);
                    } else {
                        outcomes.push(StageOutcome::NotAdvanced);
                        alive = false;
                    }
                }
                records.push(record(&format!("r{next}"), *sex, *race, &outcomes, None));
                next += 1;
            }
        }
        dataset(records)
    }

    #[test]
    fn selection_rate_basic() {
        // category A: 20 reached, 10 advanced -> rate 0.50
        // category B: 50 reached, 0 advanced -> rate 0.0
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(20, 10)]),
            (Sex::Male, RaceEthnicity::White, &[(50, 0)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        assert_eq!(table.entries.len(), 2);
        let a = &table.entries[0];
        assert_eq!(a.category.race_ethnicity, Some(RaceEthnicity::Asian));
        assert_eq!(a.count, 20);
        assert_eq!(a.rate, Some(0.5));
        let b = &table.entries[1];
        assert_eq!(b.count, 50);
        assert_eq!(b.rate, Some(0.0));
        let share_sum: f64 = table.entries.iter().map(|e| e.share).sum();
        assert!((share_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn impact_ratio_division_by_max() {
        // rates {0.20, 0.15, 0.10} -> ratios {1.0, 0.75, 0.50}
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(20, 4)]),
            (Sex::Female, RaceEthnicity::White, &[(20, 3)]),
            (Sex::Male, RaceEthnicity::White, &[(20, 2)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        let by_rate: Map<u64, f64> = entries
            .iter()
            .map(|e| ((e.rate.unwrap() * 100.0).round() as u64, e.impact_ratio.unwrap()))
            .collect();
        assert_eq!(by_rate[&20], 1.0);
        assert!((by_rate[&15] - 0.75).abs() < TOL);
        assert!((by_rate[&10] - 0.50).abs() < TOL);
    }

    #[test]
    fn impact_ratio_simple_pair() {
        // rates {A: 0.5, B: 0.4} -> ratios {A: 1.0, B: 0.8}
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(10, 5)]),
            (Sex::Male, RaceEthnicity::White, &[(10, 4)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        assert_eq!(entries[0].impact_ratio, Some(1.0));
        assert_eq!(entries[1].impact_ratio, Some(0.8));
    }

    #[test]
    fn impact_ratio_single_category_is_self_reference() {
        let ds = funnel_dataset(&[(Sex::Female, RaceEthnicity::Asian, &[(10, 3)])]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        assert_eq!(entries[0].impact_ratio, Some(1.0));
    }

    #[test]
    fn impact_ratio_zero_reference_flags_all() {
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(10, 0)]),
            (Sex::Male, RaceEthnicity::White, &[(10, 0)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        for entry in &entries {
            assert_eq!(entry.impact_ratio, None);
            assert!(entry.flags.contains(&StatFlag::ZeroDenominator));
        }
    }

    #[test]
    fn unknown_demographics_counted_but_excluded() {
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(10, 2)]),
            (Sex::Unknown, RaceEthnicity::Unknown, &[(10, 9)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        let unknown = entries
            .iter()
            .find(|e| e.category.is_unknown())
            .unwrap();
        assert!(unknown.flags.contains(&StatFlag::UnknownDemographics));
        assert!(unknown.flags.contains(&StatFlag::ExcludedFromRatios));
        assert_eq!(unknown.count, 10);
        assert_eq!(unknown.impact_ratio, None);
        // The unknown group's 0.9 rate must not become the reference.
        let known = entries.iter().find(|e| !e.category.is_unknown()).unwrap();
        assert_eq!(known.impact_ratio, Some(1.0));
    }

    #[test]
    fn scoring_rates_split_on_pooled_median() {
        // scores [10,20,30,40,50,60], median 35; A holds {40,50,60}, B {10,20,30}
        let mut records = Vec::new();
        for (i, score) in [40.0, 50.0, 60.0].iter().enumerate() {
            records.push(record(
                &format!("a{i}"),
                Sex::Female,
                RaceEthnicity::Asian,
                &[StageOutcome::Advanced],
                Some(*score),
            ));
        }
        for (i, score) in [10.0, 20.0, 30.0].iter().enumerate() {
            records.push(record(
                &format!("b{i}"),
                Sex::Male,
                RaceEthnicity::White,
                &[StageOutcome::Advanced],
                Some(*score),
            ));
        }
        let table = scoring_rate_table(&dataset(records), GroupingMode::Intersectional).unwrap();
        let a = table
            .entries
            .iter()
            .find(|e| e.category.race_ethnicity == Some(RaceEthnicity::Asian))
            .unwrap();
        let b = table
            .entries
            .iter()
            .find(|e| e.category.race_ethnicity == Some(RaceEthnicity::White))
            .unwrap();
        assert_eq!(a.rate, Some(1.0));
        assert_eq!(b.rate, Some(0.0));
    }

    #[test]
    fn scoring_all_equal_scores_rate_zero() {
        let records = (0..4)
            .map(|i| {
                record(
                    &format!("r{i}"),
                    Sex::Female,
                    RaceEthnicity::Asian,
                    &[StageOutcome::Advanced],
                    Some(7.0),
                )
            })
            .collect();
        let table = scoring_rate_table(&dataset(records), GroupingMode::Intersectional).unwrap();
        assert_eq!(table.entries[0].rate, Some(0.0));
    }

    #[test]
    fn scoring_single_category_above_median_third() {
        let records = vec![
            record("r0", Sex::Female, RaceEthnicity::Asian, &[StageOutcome::Advanced], Some(1.0)),
            record("r1", Sex::Female, RaceEthnicity::Asian, &[StageOutcome::Advanced], Some(2.0)),
            record("r2", Sex::Female, RaceEthnicity::Asian, &[StageOutcome::Advanced], Some(3.0)),
        ];
        let table = scoring_rate_table(&dataset(records), GroupingMode::Intersectional).unwrap();
        let entries = impact_ratios(table.entries);
        assert_eq!(entries[0].rate, Some(1.0 / 3.0));
        assert_eq!(entries[0].impact_ratio, Some(1.0));
    }

    #[test]
    fn scoring_without_scores_errors() {
        let ds = funnel_dataset(&[(Sex::Female, RaceEthnicity::Asian, &[(3, 1)])]);
        assert_eq!(
            scoring_rate_table(&ds, GroupingMode::Intersectional).unwrap_err(),
            MetricsError::NoScores
        );
    }

    #[test]
    fn four_fifths_boundary_is_strict() {
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(100, 100)]),
            (Sex::Female, RaceEthnicity::White, &[(100, 79)]),
            (Sex::Male, RaceEthnicity::White, &[(100, 80)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = apply_four_fifths(impact_ratios(table.entries), 0.8);
        for entry in &entries {
            let ratio = entry.impact_ratio.unwrap();
            let flagged = entry.flags.contains(&StatFlag::FailsFourFifths);
            if (ratio - 0.79).abs() < TOL {
                assert!(flagged);
            } else {
                assert!(!flagged, "ratio {ratio} must not be flagged");
            }
        }
    }

    #[test]
    fn small_group_boundary_is_strict() {
        // 2 of 100 = exactly 0.02 -> not flagged; 1 of 100 -> flagged.
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(97, 10)]),
            (Sex::Female, RaceEthnicity::White, &[(2, 1)]),
            (Sex::Male, RaceEthnicity::White, &[(1, 1)]),
        ]);
        let table =
            selection_rate_table(&ds, "stage0", GroupingMode::Intersectional).unwrap();
        let entries = apply_small_group_policy(table.entries, &SmallGroupPolicy::default());
        let at_threshold = entries.iter().find(|e| e.count == 2).unwrap();
        assert!(!at_threshold
            .flags
            .contains(&StatFlag::BelowRepresentationThreshold));
        let below = entries.iter().find(|e| e.count == 1).unwrap();
        assert!(below
            .flags
            .contains(&StatFlag::BelowRepresentationThreshold));
    }

    #[test]
    fn small_group_exclude_mode_changes_reference() {
        // Small group has the top rate; excluding it must lift the others.
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(99, 33)]),
            (Sex::Male, RaceEthnicity::White, &[(1, 1)]),
        ]);
        let policy = PolicyConfig {
            small_group: SmallGroupPolicy {
                threshold: 0.02,
                mode: SmallGroupMode::Exclude,
            },
            four_fifths_threshold: 0.8,
        };
        let table = compute_table(
            &ds,
            &TableBasis::Selection {
                stage: "stage0".to_string(),
            },
            GroupingMode::Intersectional,
            &policy,
        )
        .unwrap();
        let small = table.entries.iter().find(|e| e.count == 1).unwrap();
        assert!(small.flags.contains(&StatFlag::ExcludedFromRatios));
        assert_eq!(small.impact_ratio, None);
        let big = table.entries.iter().find(|e| e.count == 99).unwrap();
        assert_eq!(big.impact_ratio, Some(1.0));
    }

    #[test]
    fn funnel_rates_per_stage() {
        // 100 -> 50 advanced -> 25 advanced: stage rates 0.5, 0.5.
        let ds = funnel_dataset(&[(
            Sex::Female,
            RaceEthnicity::Asian,
            &[(100, 50), (50, 25)],
        )]);
        let tables = stage_funnel(&ds, GroupingMode::Intersectional, &PolicyConfig::default())
            .unwrap();
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].entries[0].count, 100);
        assert_eq!(tables[0].entries[0].rate, Some(0.5));
        assert_eq!(tables[1].entries[0].count, 50);
        assert_eq!(tables[1].entries[0].rate, Some(0.5));
    }

    #[test]
    fn funnel_omits_category_absent_from_later_stage() {
        let ds = funnel_dataset(&[
            (Sex::Female, RaceEthnicity::Asian, &[(10, 5), (5, 2)]),
            (Sex::Male, RaceEthnicity::White, &[(10, 0), (0, 0)]),
        ]);
        let tables = stage_funnel(&ds, GroupingMode::Intersectional, &PolicyConfig::default())
            .unwrap();
        assert_eq!(tables[1].entries.len(), 1);
        assert!(tables[1]
            .warnings
            .iter()
            .any(|w| w.code == WarningCode::CategoryOmitted));
    }

    #[test]
    fn bias_delta_directions() {
        fn table_with(ratios: &[(Sex, Option<f64>)]) -> StatsTable {
            StatsTable {
                grouping: GroupingMode::BySex,
                basis: TableBasis::Scoring,
                entries: ratios
                    .iter()
                    .map(|(sex, ratio)| CategoryStats {
                        category: GroupKey {
                            sex: Some(*sex),
                            race_ethnicity: None,
                        },
                        count: 10,
                        share: 0.5,
                        rate: Some(0.5),
                        impact_ratio: *ratio,
                        flags: BTreeSet::new(),
                    })
                    .collect(),
                warnings: Vec::new(),
            }
        }

        let input = table_with(&[(Sex::Female, Some(0.60)), (Sex::Male, Some(1.0))]);
        let output = table_with(&[
            (Sex::Female, Some(0.75)),
            (Sex::Male, Some(1.0)),
            (Sex::Unknown, Some(0.9)),
        ]);
        let deltas = bias_delta(&input, &output).unwrap();

        let female = deltas
            .iter()
            .find(|d| d.category.sex == Some(Sex::Female))
            .unwrap();
        assert!((female.delta.unwrap() - 0.15).abs() < TOL);
        assert_eq!(female.direction, DeltaDirection::Improved);

        let male = deltas
            .iter()
            .find(|d| d.category.sex == Some(Sex::Male))
            .unwrap();
        assert_eq!(male.delta, Some(0.0));
        assert_eq!(male.direction, DeltaDirection::Unchanged);

        let unknown = deltas
            .iter()
            .find(|d| d.category.sex == Some(Sex::Unknown))
            .unwrap();
        assert_eq!(unknown.delta, None);
        assert_eq!(unknown.direction, DeltaDirection::Undefined);
    }

    #[test]
    fn bias_delta_grouping_mismatch() {
        let left = StatsTable {
            grouping: GroupingMode::BySex,
            basis: TableBasis::Scoring,
            entries: Vec::new(),
            warnings: Vec::new(),
        };
        let right = StatsTable {
            grouping: GroupingMode::Intersectional,
            ..left.clone()
        };
        assert!(matches!(
            bias_delta(&left, &right),
            Err(MetricsError::GroupingMismatch { .. })
        ));
    }

    #[test]
    fn unknown_stage_errors() {
        let ds = funnel_dataset(&[(Sex::Female, RaceEthnicity::Asian, &[(3, 1)])]);
        assert!(matches!(
            selection_rate_table(&ds, "nope", GroupingMode::BySex),
            Err(MetricsError::UnknownStage { .. })
        ));
    }
}
