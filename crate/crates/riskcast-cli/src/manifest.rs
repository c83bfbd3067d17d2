//! Run manifests: one JSON file naming the scenario, estimate sets,
//! benchmarks, evidence specification, and sampler settings for a run.
//! Paths are resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use riskcast::elicitation::{EstimateSet, KriLevel};
use riskcast::engine::SamplerConfig;
use riskcast::kri::{map_overall_score, map_solves_to_evidence, Benchmark, Evidence, SolveReport};
use riskcast::riskmodel::Scenario;

use crate::CliError;

/// How evidence is set for one benchmark: an explicit level, a solve
/// report to map, or an overall score to map.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceSpec {
    pub benchmark: String,
    #[serde(default)]
    pub level: Option<String>,
    #[serde(default)]
    pub solves: Option<Vec<String>>,
    #[serde(default)]
    pub score: Option<ScoreSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSpec {
    pub fraction: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub estimates: PathBuf,
    #[serde(default)]
    pub baseline_estimates: Option<PathBuf>,
    #[serde(default)]
    pub benchmarks: Vec<PathBuf>,
    #[serde(default)]
    pub evidence: Vec<EvidenceSpec>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// A fully loaded and resolved run.
pub struct LoadedRun {
    pub manifest: RunManifest,
    /// Hex SHA-256 of the manifest file bytes, embedded in outputs.
    pub manifest_sha256: String,
    pub scenario: Scenario,
    /// The estimates file exactly as given.
    pub estimates: EstimateSet,
    /// Estimates merged over the shared baseline set, ready for sampling.
    pub merged_estimates: EstimateSet,
    pub benchmarks: BTreeMap<String, Benchmark>,
    pub evidence: Vec<Evidence>,
    /// One human-readable line per resolved evidence entry.
    pub evidence_log: Vec<String>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Parse(format!("parsing {}: {e}", path.display())))
}

fn resolve_evidence(
    spec: &EvidenceSpec,
    benchmarks: &BTreeMap<String, Benchmark>,
) -> Result<(Evidence, String), CliError> {
    let benchmark = benchmarks.get(&spec.benchmark).ok_or_else(|| {
        CliError::Validation(format!(
            "evidence names benchmark '{}' which is not loaded",
            spec.benchmark
        ))
    })?;
    let given: u8 = [spec.level.is_some(), spec.solves.is_some(), spec.score.is_some()]
        .iter()
        .map(|b| *b as u8)
        .sum();
    if given != 1 {
        return Err(CliError::Validation(format!(
            "evidence for '{}' must give exactly one of level, solves, or score",
            spec.benchmark
        )));
    }
    if let Some(level) = &spec.level {
        let level = KriLevel::from(level.as_str());
        if let KriLevel::Task(task) = &level {
            if !benchmark.elicited_subset.iter().any(|t| t == task) {
                return Err(CliError::Validation(format!(
                    "evidence level '{task}' is not in the elicited subset of '{}'",
                    benchmark.id
                )));
            }
        }
        let log = format!("{}: explicit level {level}", benchmark.id);
        return Ok((Evidence { benchmark_id: benchmark.id.clone(), level }, log));
    }
    if let Some(solves) = &spec.solves {
        let report = SolveReport {
            benchmark_id: benchmark.id.clone(),
            solved_task_ids: solves.iter().cloned().collect(),
        };
        let evidence = map_solves_to_evidence(&report, benchmark)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let log = format!(
            "{}: {} solved tasks map to level {}",
            benchmark.id,
            solves.len(),
            evidence.level
        );
        return Ok((evidence, log));
    }
    let score = spec.score.as_ref().expect("exactly one spec kind");
    let evidence = map_overall_score(score.fraction, score.evaluated, benchmark)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let log = format!(
        "{}: score {:.4} of {} evaluated tasks maps to level {}",
        benchmark.id, score.fraction, score.evaluated, evidence.level
    );
    Ok((evidence, log))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(RunManifest, String), CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Parse(format!("parsing {}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        Ok((manifest, hex::encode(digest)))
    }

    /// Loads every referenced file and resolves evidence.
    pub fn resolve(path: &Path) -> Result<LoadedRun, CliError> {
        let (manifest, manifest_sha256) = Self::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let rel = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let scenario: Scenario = read_json(&rel(&manifest.scenario))?;
        let estimates: EstimateSet = read_json(&rel(&manifest.estimates))?;
        let merged_estimates = match &manifest.baseline_estimates {
            Some(p) => {
                let baseline: EstimateSet = read_json(&rel(p))?;
                if baseline.id != scenario.baseline {
                    return Err(CliError::Validation(format!(
                        "scenario expects baseline estimate set '{}', manifest supplies '{}'",
                        scenario.baseline, baseline.id
                    )));
                }
                estimates.merged_with_baseline(&baseline)
            }
            None => estimates.clone(),
        };

        let mut benchmarks = BTreeMap::new();
        for p in &manifest.benchmarks {
            let benchmark: Benchmark = read_json(&rel(p))?;
            benchmark
                .validate()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            if benchmarks.insert(benchmark.id.clone(), benchmark).is_some() {
                return Err(CliError::Validation(format!(
                    "benchmark id loaded twice from {}",
                    p.display()
                )));
            }
        }

        let mut evidence = Vec::new();
        let mut evidence_log = Vec::new();
        for spec in &manifest.evidence {
            let (e, log) = resolve_evidence(spec, &benchmarks)?;
            evidence.push(e);
            evidence_log.push(log);
        }

        Ok(LoadedRun {
            manifest,
            manifest_sha256,
            scenario,
            estimates,
            merged_estimates,
            benchmarks,
            evidence,
            evidence_log,
        })
    }
}
