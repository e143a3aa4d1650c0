//! Census benchmarks: a bundled NYC 2020 fixture, local benchmark files,
//! an optional live census fetch with an on-disk cache, and the
//! representativity index computed against a benchmark.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DemographicCategory, DomainError, GroupingMode, Vocabulary};
use crate::metrics::{CategoryStats, GroupKey, StatFlag, StatsTable, Warning, WarningCode};

/// Population count for one demographic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub category: DemographicCategory,
    pub count: u64,
    /// Share recomputed from counts; authoritative.
    pub derived_share: f64,
    /// Share as published by the source, as a fraction; cross-check only.
    pub published_share: Option<f64>,
}

/// Region population counts per category with derived shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusBenchmark {
    pub region: String,
    pub vintage: i32,
    pub entries: Vec<BenchmarkEntry>,
    pub total: u64,
}

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("malformed benchmark input: {0}")]
    MalformedInput(String),
    #[error("negative count at row {row}")]
    NegativeCount { row: u64 },
    #[error("duplicate category {category} in benchmark")]
    DuplicateCategory { category: String },
    #[error("benchmark has no entries")]
    EmptyBenchmark,
    #[error("benchmark total population is zero")]
    ZeroTotal,
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed census response: {0}")]
    MalformedResponse(String),
    #[error("response variable {variable:?} is not mapped to a category")]
    UnmappedVariable { variable: String },
    #[error("benchmark cache error: {0}")]
    Cache(String),
    #[error(transparent)]
    Label(#[from] DomainError),
}

impl CensusBenchmark {
    /// Build a benchmark from raw (category, count, published share) rows,
    /// computing the total and derived shares.
    pub fn new(
        region: impl Into<String>,
        vintage: i32,
        rows: Vec<(DemographicCategory, u64, Option<f64>)>,
    ) -> Result<Self, BenchmarkError> {
        if rows.is_empty() {
            return Err(BenchmarkError::EmptyBenchmark);
        }
        let mut seen = BTreeSet::new();
        for (category, _, _) in &rows {
            if !seen.insert(*category) {
                return Err(BenchmarkError::DuplicateCategory {
                    category: category.to_string(),
                });
            }
        }
        let total: u64 = rows.iter().map(|(_, count, _)| count).sum();
        if total == 0 {
            return Err(BenchmarkError::ZeroTotal);
        }

        let mut entries: Vec<BenchmarkEntry> = rows
            .into_iter()
            .map(|(category, count, published_share)| BenchmarkEntry {
                category,
                count,
                derived_share: count as f64 / total as f64,
                published_share,
            })
            .collect();
        entries.sort_by_key(|e| GroupKey::from_category(e.category, GroupingMode::Intersectional));

        Ok(Self {
            region: region.into(),
            vintage,
            entries,
            total,
        })
    }

    /// Compare derived shares against published shares, warning on every
    /// entry where they disagree by more than `tolerance_pp` percentage
    /// points.
    pub fn cross_check(&self, tolerance_pp: f64) -> Vec<Warning> {
        self.entries
            .iter()
            .filter_map(|entry| {
                let published = entry.published_share?;
                let diff_pp = (entry.derived_share - published).abs() * 100.0;
                if diff_pp > tolerance_pp {
                    Some(Warning::new(
                        WarningCode::ShareCrossCheck,
                        format!(
                            "category {}: derived share {:.2}% disagrees with published {:.2}% \
                             by {diff_pp:.2}pp (tolerance {tolerance_pp}pp)",
                            entry.category,
                            entry.derived_share * 100.0,
                            published * 100.0
                        ),
                        format!("benchmark={} {}, category={}", self.region, self.vintage, entry.category),
                    ))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Benchmark counts summed onto the group keys of a grouping mode.
    pub fn collapse(&self, grouping: GroupingMode) -> BTreeMap<GroupKey, u64> {
        let mut collapsed = BTreeMap::new();
        for entry in &self.entries {
            *collapsed
                .entry(GroupKey::from_category(entry.category, grouping))
                .or_insert(0) += entry.count;
        }
        collapsed
    }

    /// View the benchmark as a population-basis stats table so population
    /// policies (e.g. the small-group threshold) can run against it.
    pub fn as_population_stats(&self) -> Vec<CategoryStats> {
        self.entries
            .iter()
            .map(|entry| {
                let key = GroupKey::from_category(entry.category, GroupingMode::Intersectional);
                let mut flags = BTreeSet::new();
                if key.is_unknown() {
                    flags.insert(StatFlag::UnknownDemographics);
                    flags.insert(StatFlag::ExcludedFromRatios);
                }
                CategoryStats {
                    category: key,
                    count: entry.count,
                    share: entry.derived_share,
                    rate: None,
                    impact_ratio: None,
                    flags,
                }
            })
            .collect()
    }
}

/// Parse a benchmark CSV (header: sex, race_ethnicity, count, optional
/// published_share_percent), returning the benchmark plus cross-check
/// warnings at the given tolerance in percentage points.
pub fn load_benchmark(
    bytes: &[u8],
    region: &str,
    vintage: i32,
    vocabulary: &Vocabulary,
    tolerance_pp: f64,
) -> Result<(CensusBenchmark, Vec<Warning>), BenchmarkError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| BenchmarkError::MalformedInput(format!("not valid UTF-8: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| BenchmarkError::MalformedInput(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(sex_col), Some(race_col), Some(count_col)) =
        (col("sex"), col("race_ethnicity"), col("count"))
    else {
        return Err(BenchmarkError::MalformedInput(
            "benchmark CSV needs columns sex, race_ethnicity, count".to_string(),
        ));
    };
    let share_col = col("published_share_percent");

    let mut rows = Vec::new();
    for (index, result) in reader.records().enumerate() {
        let row = index as u64 + 2;
        let record = result.map_err(|e| BenchmarkError::MalformedInput(e.to_string()))?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");

        let category = vocabulary.canonicalize_category(cell(sex_col), cell(race_col))?;
        let count_raw: i64 = cell(count_col)
            .parse()
            .map_err(|_| BenchmarkError::MalformedInput(format!(
                "row {row}: count {:?} is not an integer",
                cell(count_col)
            )))?;
        if count_raw < 0 {
            return Err(BenchmarkError::NegativeCount { row });
        }
        let published = match share_col {
            Some(idx) if !cell(idx).is_empty() => Some(
                cell(idx)
                    .parse::<f64>()
                    .map_err(|_| BenchmarkError::MalformedInput(format!(
                        "row {row}: published share {:?} is not a number",
                        cell(idx)
                    )))?
                    / 100.0,
            ),
            _ => None,
        };
        rows.push((category, count_raw as u64, published));
    }

    let benchmark = CensusBenchmark::new(region, vintage, rows)?;
    let warnings = benchmark.cross_check(tolerance_pp);
    Ok((benchmark, warnings))
}

/// The NYC 2020 census benchmark bundled with the crate.
pub fn nyc_2020() -> (CensusBenchmark, Vec<Warning>) {
    static CSV: &str = include_str!("../fixtures/nyc_census_2020.csv");
    load_benchmark(
        CSV.as_bytes(),
        "New York City",
        2020,
        &Vocabulary::default(),
        0.5,
    )
    .expect("bundled census fixture is valid")
}

fn default_ignore_variables() -> BTreeSet<String> {
    BTreeSet::from(["NAME".to_string()])
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_tolerance_pp() -> f64 {
    0.5
}

/// Configuration for a live census fetch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    /// Base URL of the tabular census endpoint.
    pub endpoint: String,
    /// Extra query parameters (e.g. `for`, `in`).
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    /// Remote variable name to demographic category.
    pub variables: BTreeMap<String, DemographicCategory>,
    /// Response columns to skip. `NAME` and the geography columns named in
    /// `for`/`in` parameters are always skipped.
    #[serde(default = "default_ignore_variables")]
    pub ignore_variables: BTreeSet<String>,
    /// API key, appended as the `key` query parameter. Not part of the
    /// cache hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    /// Directory for cached raw responses, named by request hash.
    pub cache_dir: PathBuf,
    pub region: String,
    pub vintage: i32,
    #[serde(default = "default_tolerance_pp")]
    pub tolerance_pp: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl FetchConfig {
    /// Sorted variable list requested from the endpoint.
    fn get_list(&self) -> String {
        self.variables
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Full request URL, including the API key when present.
    pub fn request_url(&self) -> String {
        let mut url = format!("{}?get={}", self.endpoint, self.get_list());
        for (key, value) in &self.params {
            url.push('&');
            url.push_str(key);
            url.push('=');
            url.push_str(value);
        }
        if let Some(key) = &self.api_key {
            url.push_str("&key=");
            url.push_str(key);
        }
        url
    }

    /// Deterministic request hash over endpoint, parameters, and variable
    /// map — excluding the API key, so caches are shareable.
    pub fn request_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.endpoint.as_bytes());
        hasher.update(b"\n");
        hasher.update(self.get_list().as_bytes());
        for (key, value) in &self.params {
            hasher.update(b"\n");
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.join(format!("{}.json", self.request_hash()))
    }

    /// Columns skipped while parsing the response.
    fn ignored(&self) -> BTreeSet<String> {
        let mut ignored = self.ignore_variables.clone();
        ignored.insert("NAME".to_string());
        for key in ["for", "in"] {
            if let Some(value) = self.params.get(key) {
                if let Some((geography, _)) = value.split_once(':') {
                    ignored.insert(geography.to_string());
                }
            }
        }
        ignored
    }
}

/// Parse the tabular JSON census convention: an array of arrays whose
/// first row is the header, with exactly one data row for a single-region
/// query. Cells may be JSON strings or numbers.
pub fn parse_census_response(
    bytes: &[u8],
    variables: &BTreeMap<String, DemographicCategory>,
    ignored: &BTreeSet<String>,
) -> Result<Vec<(DemographicCategory, u64, Option<f64>)>, BenchmarkError> {
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| BenchmarkError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let rows = value
        .as_array()
        .ok_or_else(|| BenchmarkError::MalformedResponse("expected an array of rows".into()))?;
    if rows.len() != 2 {
        return Err(BenchmarkError::MalformedResponse(format!(
            "expected a header row and one data row, got {} row(s)",
            rows.len()
        )));
    }

    let as_cells = |row: &serde_json::Value| -> Result<Vec<String>, BenchmarkError> {
        row.as_array()
            .ok_or_else(|| BenchmarkError::MalformedResponse("row is not an array".into()))?
            .iter()
            .map(|cell| match cell {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                serde_json::Value::Null => Ok(String::new()),
                other => Err(BenchmarkError::MalformedResponse(format!(
                    "unsupported cell {other}"
                ))),
            })
            .collect()
    };

    let headers = as_cells(&rows[0])?;
    let cells = as_cells(&rows[1])?;
    if headers.len() != cells.len() {
        return Err(BenchmarkError::MalformedResponse(format!(
            "header has {} columns but data row has {}",
            headers.len(),
            cells.len()
        )));
    }

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (header, cell) in headers.iter().zip(&cells) {
        if ignored.contains(header) {
            continue;
        }
        let Some(category) = variables.get(header) else {
            return Err(BenchmarkError::UnmappedVariable {
                variable: header.clone(),
            });
        };
        let count: u64 = cell.parse().map_err(|_| {
            BenchmarkError::MalformedResponse(format!(
                "variable {header:?} value {cell:?} is not a non-negative integer"
            ))
        })?;
        seen.insert(header.clone());
        out.push((*category, count, None));
    }

    for variable in variables.keys() {
        if !seen.contains(variable) {
            return Err(BenchmarkError::MalformedResponse(format!(
                "mapped variable {variable:?} missing from response"
            )));
        }
    }
    Ok(out)
}

/// Fetch a benchmark over HTTP, caching the raw response so later runs are
/// reproducible offline. A cached response is used without touching the
/// network.
pub fn fetch_benchmark(
    config: &FetchConfig,
) -> Result<(CensusBenchmark, Vec<Warning>), BenchmarkError> {
    let cache_path = config.cache_path();
    let bytes = if cache_path.exists() {
        std::fs::read(&cache_path).map_err(|e| BenchmarkError::Cache(e.to_string()))?
    } else {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BenchmarkError::Network(e.to_string()))?;
        let response = client
            .get(config.request_url())
            .send()
            .map_err(|e| BenchmarkError::Network(e.to_string()))?;
        if !response.status().is_success() {
            return Err(BenchmarkError::Network(format!(
                "HTTP {} from {}",
                response.status(),
                config.endpoint
            )));
        }
        let bytes = response
            .bytes()
            .map_err(|e| BenchmarkError::Network(e.to_string()))?
            .to_vec();
        // Only cache after a successful fetch and parse.
        parse_census_response(&bytes, &config.variables, &config.ignored())?;
        std::fs::create_dir_all(&config.cache_dir)
            .map_err(|e| BenchmarkError::Cache(e.to_string()))?;
        std::fs::write(&cache_path, &bytes).map_err(|e| BenchmarkError::Cache(e.to_string()))?;
        bytes
    };

    let rows = parse_census_response(&bytes, &config.variables, &config.ignored())?;
    let benchmark = CensusBenchmark::new(config.region.clone(), config.vintage, rows)?;
    let warnings = benchmark.cross_check(config.tolerance_pp);
    Ok((benchmark, warnings))
}

/// Per-category representativity entry: the category's share among audited
/// outcomes over its share in the benchmark population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativityEntry {
    pub category: GroupKey,
    pub outcome_share: f64,
    pub benchmark_share: Option<f64>,
    /// outcome share / benchmark share; 1 means exactly representative.
    pub index: Option<f64>,
}

/// Representativity indices for every category in a stats table, collapsing
/// the benchmark onto the table's grouping.
pub fn representativity(
    stats: &StatsTable,
    benchmark: &CensusBenchmark,
) -> Result<(Vec<RepresentativityEntry>, Vec<Warning>), BenchmarkError> {
    if benchmark.entries.is_empty() {
        return Err(BenchmarkError::EmptyBenchmark);
    }
    let collapsed = benchmark.collapse(stats.grouping);
    let total = benchmark.total as f64;

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for stat in &stats.entries {
        let benchmark_share = collapsed
            .get(&stat.category)
            .map(|count| *count as f64 / total);
        let index = match benchmark_share {
            Some(share) if share > 0.0 => Some(stat.share / share),
            _ => None,
        };
        if index.is_none() {
            warnings.push(Warning::new(
                WarningCode::BenchmarkCategoryMissing,
                format!(
                    "category {} has no usable benchmark share; representativity undefined",
                    stat.category.label()
                ),
                format!(
                    "benchmark={} {}, category={}",
                    benchmark.region,
                    benchmark.vintage,
                    stat.category.label()
                ),
            ));
        }
        entries.push(RepresentativityEntry {
            category: stat.category,
            outcome_share: stat.share,
            benchmark_share,
            index,
        });
    }
    Ok((entries, warnings))
}
