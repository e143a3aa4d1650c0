//! Proxy-feature screening: flag auxiliary features statistically
//! associated with a protected attribute via Cramér's V over a
//! contingency table.
//!
//! This is an outcome-data screen, not a causal claim; the report labels
//! flagged features as screening findings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AuditDataset, FeatureValue, RaceEthnicity, Sex};

/// Protected attribute screened against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedAxis {
    Sex,
    RaceEthnicity,
}

impl ProtectedAxis {
    pub fn label(&self) -> &'static str {
        match self {
            ProtectedAxis::Sex => "sex",
            ProtectedAxis::RaceEthnicity => "race_ethnicity",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxyError {
    #[error("feature {feature:?} is present on fewer than two records")]
    FeatureMissing { feature: String },
    #[error("feature {feature:?} is degenerate: {reason}")]
    DegenerateFeature { feature: String, reason: String },
    #[error("table is degenerate: {reason}")]
    DegenerateTable { reason: String },
}

/// Counts of feature level x protected level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub feature: String,
    /// Feature levels (rows), sorted.
    pub row_labels: Vec<String>,
    /// Protected levels (columns), sorted.
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
    pub notes: Vec<String>,
}

/// Sample quantile with linear interpolation between closest ranks
/// (the common "type 7" rule) over a sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let position = p * (n - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    if lower == upper {
        sorted[lower]
    } else {
        let weight = position - lower as f64;
        sorted[lower] * (1.0 - weight) + sorted[upper] * weight
    }
}

/// Bin a numeric sample into quartiles; ties go to the lower bin.
fn quartile_bins(values: &[f64]) -> (Vec<String>, Vec<usize>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q2 = quantile(&sorted, 0.50);
    let q3 = quantile(&sorted, 0.75);
    let labels = vec![
        format!("<= {q1}"),
        format!("({q1}, {q2}]"),
        format!("({q2}, {q3}]"),
        format!("> {q3}"),
    ];
    let bins = values
        .iter()
        .map(|v| {
            if *v <= q1 {
                0
            } else if *v <= q2 {
                1
            } else if *v <= q3 {
                2
            } else {
                3
            }
        })
        .collect();
    (labels, bins)
}

/// Cross-tabulate one feature against a protected attribute. Numeric
/// features are binned into sample quartiles; unknown-demographic records
/// (on the chosen axis) are excluded.
pub fn contingency_table(
    dataset: &AuditDataset,
    feature: &str,
    axis: ProtectedAxis,
) -> Result<ContingencyTable, ProxyError> {
    let carrying = dataset
        .records()
        .iter()
        .filter(|r| r.features.contains_key(feature))
        .count();
    if carrying < 2 {
        return Err(ProxyError::FeatureMissing {
            feature: feature.to_string(),
        });
    }

    // (feature value, protected label) for usable records.
    let mut pairs: Vec<(&FeatureValue, &'static str)> = Vec::new();
    for record in dataset.records() {
        let Some(value) = record.features.get(feature) else {
            continue;
        };
        let label = match axis {
            ProtectedAxis::Sex => {
                if record.category.sex == Sex::Unknown {
                    continue;
                }
                record.category.sex.label()
            }
            ProtectedAxis::RaceEthnicity => {
                if record.category.race_ethnicity == RaceEthnicity::Unknown {
                    continue;
                }
                record.category.race_ethnicity.label()
            }
        };
        pairs.push((value, label));
    }
    if pairs.len() < 2 {
        return Err(ProxyError::DegenerateFeature {
            feature: feature.to_string(),
            reason: "fewer than two records with known demographics carry it".to_string(),
        });
    }

    let mut notes = Vec::new();
    let all_numeric = pairs
        .iter()
        .all(|(value, _)| matches!(value, FeatureValue::Numeric(_)));

    // Row level per record, as a string key.
    let levels: Vec<String> = if all_numeric {
        let values: Vec<f64> = pairs
            .iter()
            .map(|(value, _)| match value {
                FeatureValue::Numeric(v) => *v,
                FeatureValue::Categorical(_) => unreachable!(),
            })
            .collect();
        let (labels, bins) = quartile_bins(&values);
        notes.push("numeric feature binned into sample quartiles (ties to lower bin)".to_string());
        bins.into_iter().map(|b| labels[b].clone()).collect()
    } else {
        pairs.iter().map(|(value, _)| value.to_string()).collect()
    };

    let row_labels: Vec<String> = levels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let col_labels: Vec<String> = pairs
        .iter()
        .map(|(_, label)| label.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    if row_labels.len() < 2 {
        return Err(ProxyError::DegenerateFeature {
            feature: feature.to_string(),
            reason: "single level after dropping empty rows".to_string(),
        });
    }

    let row_index: BTreeMap<&str, usize> = row_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let col_index: BTreeMap<&str, usize> = col_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (level, (_, label)) in levels.iter().zip(&pairs) {
        counts[row_index[level.as_str()]][col_index[*label]] += 1;
    }

    Ok(ContingencyTable {
        feature: feature.to_string(),
        row_labels,
        col_labels,
        counts,
        n: pairs.len() as u64,
        notes,
    })
}

/// Drop all-zero rows and columns from a count matrix.
fn trim_zeros(counts: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let cols = counts.first().map(|r| r.len()).unwrap_or(0);
    let keep_rows: Vec<usize> = (0..counts.len())
        .filter(|&i| counts[i].iter().any(|&c| c > 0))
        .collect();
    let keep_cols: Vec<usize> = (0..cols)
        .filter(|&j| counts.iter().any(|row| row[j] > 0))
        .collect();
    keep_rows
        .iter()
        .map(|&i| keep_cols.iter().map(|&j| counts[i][j]).collect())
        .collect()
}

/// Cramér's V: sqrt(chi² / (n · min(r−1, c−1))) with the Pearson chi²
/// statistic over expected counts from the row/column margins, clamped to
/// [0, 1]. All-zero rows and columns are dropped first.
pub fn cramers_v(counts: &[Vec<u64>]) -> Result<f64, ProxyError> {
    let table = trim_zeros(counts);
    let rows = table.len();
    let cols = table.first().map(|r| r.len()).unwrap_or(0);
    if rows < 2 || cols < 2 {
        return Err(ProxyError::DegenerateTable {
            reason: format!("{rows}x{cols} after dropping empty rows/columns"),
        });
    }

    let row_totals: Vec<f64> = table
        .iter()
        .map(|row| row.iter().sum::<u64>() as f64)
        .collect();
    let col_totals: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|row| row[j]).sum::<u64>() as f64)
        .collect();
    let n: f64 = row_totals.iter().sum();

    let mut chi_squared = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_totals[i] * col_totals[j] / n;
            let diff = observed as f64 - expected;
            chi_squared += diff * diff / expected;
        }
    }

    let dof = (rows.min(cols) - 1) as f64;
    Ok((chi_squared / (n * dof)).sqrt().clamp(0.0, 1.0))
}

/// The association statistic used by the screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    CramersV,
}

/// Screening result for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationFinding {
    pub feature: String,
    pub statistic: Statistic,
    /// Association strength in [0, 1]; `None` for degenerate features.
    pub value: Option<f64>,
    pub sample_size: u64,
    pub flagged: bool,
    pub notes: Vec<String>,
}

/// Screen every feature in the dataset against one protected axis. One
/// finding per feature, sorted by descending association; degenerate
/// features are reported with a note and an undefined value.
pub fn proxy_screen(
    dataset: &AuditDataset,
    axis: ProtectedAxis,
    threshold: f64,
) -> Vec<AssociationFinding> {
    let features: BTreeSet<String> = dataset
        .records()
        .iter()
        .flat_map(|r| r.features.keys().cloned())
        .collect();

    let mut findings: Vec<AssociationFinding> = features
        .into_iter()
        .map(|feature| {
            let carrying = dataset
                .records()
                .iter()
                .filter(|r| r.features.contains_key(&feature))
                .count() as u64;
            match contingency_table(dataset, &feature, axis) {
                Ok(table) => match cramers_v(&table.counts) {
                    Ok(value) => AssociationFinding {
                        feature,
                        statistic: Statistic::CramersV,
                        value: Some(value),
                        sample_size: table.n,
                        flagged: value >= threshold,
                        notes: table.notes,
                    },
                    Err(err) => AssociationFinding {
                        feature,
                        statistic: Statistic::CramersV,
                        value: None,
                        sample_size: table.n,
                        flagged: false,
                        notes: [table.notes, vec![err.to_string()]].concat(),
                    },
                },
                Err(err) => AssociationFinding {
                    feature,
                    statistic: Statistic::CramersV,
                    value: None,
                    sample_size: carrying,
                    flagged: false,
                    notes: vec![err.to_string()],
                },
            }
        })
        .collect();

    findings.sort_by(|a, b| match (a.value, b.value) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.feature.cmp(&b.feature)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.feature.cmp(&b.feature),
    });
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        ApplicantRecord, DemographicCategory, Phase, StageOutcome,
    };
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::collections::BTreeMap as Map;

    fn record(id: usize, sex: Sex, race: RaceEthnicity, features: &[(&str, FeatureValue)]) -> ApplicantRecord {
        ApplicantRecord {
            id: format!("r{id}"),
            event_date: NaiveDate::from_ymd_opt(2024, 1, 15).unwrap(),
            jurisdiction: "NYC".to_string(),
            category: DemographicCategory::new(sex, race),
            stage_outcomes: vec![("screen".to_string(), StageOutcome::Advanced)],
            score: None,
            features: features
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            phase: Phase::Output,
        }
    }

    fn dataset(records: Vec<ApplicantRecord>) -> AuditDataset {
        AuditDataset::new(records, "test", NaiveDate::from_ymd_opt(2024, 7, 1).unwrap())
            .unwrap()
    }

    #[test]
    fn perfect_association_is_one() {
        assert_eq!(cramers_v(&[vec![50, 0], vec![0, 50]]).unwrap(), 1.0);
    }

    #[test]
    fn exact_independence_is_zero() {
        assert_eq!(cramers_v(&[vec![25, 25], vec![25, 25]]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_half() {
        // chi² = 4 * (10²/20) = 20 on n = 80, V = sqrt(20/80) = 0.5.
        let v = cramers_v(&[vec![30, 10], vec![10, 30]]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_table_rejected() {
        assert!(matches!(
            cramers_v(&[vec![5, 5]]),
            Err(ProxyError::DegenerateTable { .. })
        ));
        assert!(matches!(
            cramers_v(&[vec![5, 0], vec![7, 0]]),
            Err(ProxyError::DegenerateTable { .. })
        ));
    }

    #[test]
    fn identity_feature_builds_diagonal_table() {
        let mut records = Vec::new();
        for i in 0..10 {
            let (race, language) = if i % 2 == 0 {
                (RaceEthnicity::White, "english")
            } else {
                (RaceEthnicity::HispanicLatino, "spanish")
            };
            records.push(record(
                i,
                Sex::Female,
                race,
                &[("spoken_language", FeatureValue::Categorical(language.to_string()))],
            ));
        }
        let ds = dataset(records);
        let table = contingency_table(&ds, "spoken_language", ProtectedAxis::RaceEthnicity)
            .unwrap();
        assert_eq!(table.counts.len(), 2);
        for row in &table.counts {
            assert_eq!(row.iter().filter(|&&c| c > 0).count(), 1);
        }
        let v = cramers_v(&table.counts).unwrap();
        assert_eq!(v, 1.0);

        let findings = proxy_screen(&ds, ProtectedAxis::RaceEthnicity, 0.3);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].value, Some(1.0));
        assert!(findings[0].flagged);
    }

    #[test]
    fn numeric_feature_bins_into_quartiles() {
        let mut records = Vec::new();
        for i in 0..8 {
            let sex = if i % 2 == 0 { Sex::Female } else { Sex::Male };
            records.push(record(
                i,
                sex,
                RaceEthnicity::Asian,
                &[("years", FeatureValue::Numeric(i as f64 + 1.0))],
            ));
        }
        let ds = dataset(records);
        let table = contingency_table(&ds, "years", ProtectedAxis::Sex).unwrap();
        assert_eq!(table.row_labels.len(), 4);
        let row_sums: Vec<u64> = table.counts.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![2, 2, 2, 2]);
        assert!(table.notes[0].contains("quartiles"));
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let records = (0..6)
            .map(|i| {
                record(
                    i,
                    if i % 2 == 0 { Sex::Female } else { Sex::Male },
                    RaceEthnicity::Asian,
                    &[("source", FeatureValue::Categorical("online".to_string()))],
                )
            })
            .collect();
        let ds = dataset(records);
        assert!(matches!(
            contingency_table(&ds, "source", ProtectedAxis::Sex),
            Err(ProxyError::DegenerateFeature { .. })
        ));
        let findings = proxy_screen(&ds, ProtectedAxis::Sex, 0.3);
        assert_eq!(findings[0].value, None);
        assert!(!findings[0].flagged);
        assert!(!findings[0].notes.is_empty());
    }

    #[test]
    fn balanced_independent_feature_scores_zero() {
        let mut records = Vec::new();
        let mut id = 0;
        for race in [RaceEthnicity::White, RaceEthnicity::BlackAfricanAmerican] {
            for language in ["english", "spanish"] {
                for _ in 0..25 {
                    records.push(record(
                        id,
                        Sex::Female,
                        race,
                        &[("lang", FeatureValue::Categorical(language.to_string()))],
                    ));
                    id += 1;
                }
            }
        }
        let ds = dataset(records);
        let findings = proxy_screen(&ds, ProtectedAxis::RaceEthnicity, 0.3);
        assert_eq!(findings[0].value, Some(0.0));
    }

    #[test]
    fn screen_without_features_is_empty() {
        let ds = dataset(vec![
            record(0, Sex::Female, RaceEthnicity::Asian, &[]),
            record(1, Sex::Male, RaceEthnicity::White, &[]),
        ]);
        assert!(proxy_screen(&ds, ProtectedAxis::Sex, 0.3).is_empty());
    }

    #[test]
    fn unknown_demographics_excluded_from_table() {
        let mut records = vec![
            record(0, Sex::Unknown, RaceEthnicity::Asian, &[("lang", FeatureValue::Categorical("x".into()))]),
        ];
        for i in 1..9 {
            let sex = if i % 2 == 0 { Sex::Female } else { Sex::Male };
            let lang = if i < 5 { "english" } else { "spanish" };
            records.push(record(i, sex, RaceEthnicity::Asian, &[("lang", FeatureValue::Categorical(lang.into()))]));
        }
        let ds = dataset(records);
        let table = contingency_table(&ds, "lang", ProtectedAxis::Sex).unwrap();
        assert_eq!(table.n, 8);
        assert!(!table.row_labels.contains(&"x".to_string()));
    }

    fn count_matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..5, 2usize..5).prop_flat_map(|(rows, cols)| {
            proptest::collection::vec(
                proptest::collection::vec(0u64..40, cols),
                rows,
            )
        })
    }

    proptest! {
        #[test]
        fn v_is_bounded_and_transpose_invariant(matrix in count_matrix()) {
            let transposed: Vec<Vec<u64>> = (0..matrix[0].len())
                .map(|j| matrix.iter().map(|row| row[j]).collect())
                .collect();
            match (cramers_v(&matrix), cramers_v(&transposed)) {
                (Ok(v), Ok(vt)) => {
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert!((v - vt).abs() < 1e-9);
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "asymmetric outcome: {a:?} vs {b:?}"),
            }
        }

        #[test]
        fn v_is_scale_invariant(matrix in count_matrix(), k in 1u64..9) {
            let scaled: Vec<Vec<u64>> = matrix
                .iter()
                .map(|row| row.iter().map(|c| c * k).collect())
                .collect();
            if let (Ok(v), Ok(vs)) = (cramers_v(&matrix), cramers_v(&scaled)) {
                prop_assert!((v - vs).abs() < 1e-9);
            }
        }
    }
}
