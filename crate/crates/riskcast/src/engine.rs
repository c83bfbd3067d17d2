//! Forward Monte Carlo sampling of a scenario under an expert mixture.
//!
//! Root nodes are sampled first: each sample draws one expert uniformly at
//! random and then draws every factor from that expert's fitted distribution
//! at the factor's resolved evidence level. Tactic draws combine through
//! their gates and multiply into the attack success probability; impact
//! components sum; the four-factor product gives per-sample total risk.
//!
//! Sampling is chunked, and every chunk derives its own random stream from
//! `(seed, chunk index)`, so results are bit-identical no matter how chunks
//! are scheduled across threads.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distfit::{fit_elicitation, FactorKind, FitError, FittedDistribution};
use crate::elicitation::{EstimateSet, KriLevel};
use crate::kri::Evidence;
use crate::riskmodel::{
    gate_probability, FactorRole, ModelError, ProbabilitySource, Scenario, TacticNode,
    TechniqueGate,
};
use crate::stats;

/// Sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Number of Monte Carlo samples.
    pub n_samples: usize,
    /// Master seed; identical inputs and seed give bit-identical batches.
    pub seed: u64,
    /// Samples per derived random stream.
    pub chunk_size: usize,
    /// Draw an independent expert per factor instead of one per sample.
    /// Off by default; per-sample expert draws preserve the correlation of
    /// one expert's estimates across factors.
    #[serde(default)]
    pub independent_factor_mixture: bool,
    /// Thread cap for chunk execution (`None` uses the rayon default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_samples: 100_000,
            seed: 0,
            chunk_size: 16_384,
            independent_factor_mixture: false,
            threads: None,
        }
    }
}

/// Empirical summary of one node's samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub iqr: f64,
}

/// Index-aligned per-node sample arrays for one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub scenario_id: String,
    pub seed: u64,
    pub expert_ids: Vec<String>,
    /// Column holding the actor-count draws.
    pub actors_node: String,
    /// Column holding the attempt-rate draws.
    pub attempts_node: String,
    pub expert_index: Vec<u32>,
    columns: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("estimate set lists no experts")]
    NoExperts,
    #[error("scenario has no factor with role {0}")]
    MissingRole(&'static str),
    #[error("no estimate record for expert '{expert}', factor '{factor}', level '{level}'")]
    MissingRecord { expert: String, factor: String, level: String },
    #[error("factor '{factor}' has no declared kind in the estimate set")]
    UnknownFactorKind { factor: String },
    #[error("factor '{factor}' feeds a probability node but is declared a quantity")]
    KindMismatch { factor: String },
    #[error("no evidence supplied for benchmark '{benchmark}' bound by factor '{factor}'")]
    MissingEvidence { benchmark: String, factor: String },
    #[error("fitting factor '{factor}' for expert '{expert}': {source}")]
    Fit { factor: String, expert: String, source: FitError },
    #[error("gate evaluation failed: {0}")]
    Gate(#[from] ModelError),
    #[error("batch column '{0}' not found")]
    UnknownNode(String),
    #[error("malformed batch CSV: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Summary statistics of a sample array, using interpolated quantiles.
pub fn summarize_values(values: &[f64]) -> Summary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in batch"));
    let q25 = stats::quantile_sorted(&sorted, 0.25);
    let q75 = stats::quantile_sorted(&sorted, 0.75);
    Summary {
        mean: stats::mean(values),
        median: stats::quantile_sorted(&sorted, 0.5),
        q05: stats::quantile_sorted(&sorted, 0.05),
        q25,
        q75,
        q95: stats::quantile_sorted(&sorted, 0.95),
        iqr: q75 - q25,
    }
}

impl SampleBatch {
    pub fn n_samples(&self) -> usize {
        self.expert_index.len()
    }

    /// Sample array of one node.
    pub fn node(&self, name: &str) -> Result<&[f64], EngineError> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| EngineError::UnknownNode(name.to_string()))
    }

    /// Node names in column order.
    pub fn node_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Summary of one node.
    pub fn summarize(&self, node: &str) -> Result<Summary, EngineError> {
        Ok(summarize_values(self.node(node)?))
    }

    /// Writes the batch as columnar CSV, one row per sample. Comment lines
    /// (`#`-prefixed) carry provenance for audit.
    pub fn write_csv<W: Write>(&self, w: &mut W, extra_comments: &[String]) -> io::Result<()> {
        writeln!(
            w,
            "# riskcast-batch v1 scenario={} seed={} experts={} actors={} attempts={}",
            self.scenario_id,
            self.seed,
            self.expert_ids.join("|"),
            self.actors_node,
            self.attempts_node,
        )?;
        for comment in extra_comments {
            writeln!(w, "# {comment}")?;
        }
        let names: Vec<&str> = self.node_names();
        writeln!(w, "expert_index,{}", names.join(","))?;
        let mut line = String::new();
        for i in 0..self.n_samples() {
            line.clear();
            line.push_str(&self.expert_index[i].to_string());
            for (_, col) in &self.columns {
                line.push(',');
                line.push_str(&format!("{}", col[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a batch back from its CSV form.
    pub fn read_csv<R: BufRead>(r: R) -> Result<SampleBatch, EngineError> {
        let mut scenario_id = String::new();
        let mut seed = 0u64;
        let mut expert_ids = Vec::new();
        let mut actors_node = String::new();
        let mut attempts_node = String::new();
        let mut header: Option<Vec<String>> = None;
        let mut expert_index = Vec::new();
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    if let Some(v) = token.strip_prefix("scenario=") {
                        scenario_id = v.to_string();
                    } else if let Some(v) = token.strip_prefix("seed=") {
                        seed = v.parse().unwrap_or(0);
                    } else if let Some(v) = token.strip_prefix("experts=") {
                        expert_ids = v.split('|').map(str::to_string).collect();
                    } else if let Some(v) = token.strip_prefix("actors=") {
                        actors_node = v.to_string();
                    } else if let Some(v) = token.strip_prefix("attempts=") {
                        attempts_node = v.to_string();
                    }
                }
                continue;
            }
            match &header {
                None => {
                    let names: Vec<String> = line.split(',').map(str::to_string).collect();
                    if names.first().map(String::as_str) != Some("expert_index") {
                        return Err(EngineError::MalformedCsv(
                            "first column must be expert_index".into(),
                        ));
                    }
                    columns = names[1..].iter().map(|n| (n.clone(), Vec::new())).collect();
                    header = Some(names);
                }
                Some(names) => {
                    let mut fields = line.split(',');
                    let idx: u32 = fields
                        .next()
                        .and_then(|f| f.parse().ok())
                        .ok_or_else(|| EngineError::MalformedCsv("bad expert_index".into()))?;
                    expert_index.push(idx);
                    for (slot, field) in columns.iter_mut().zip(fields.by_ref()) {
                        let v: f64 = field.parse().map_err(|_| {
                            EngineError::MalformedCsv(format!("bad value in column {}", slot.0))
                        })?;
                        slot.1.push(v);
                    }
                    if fields.next().is_some() {
                        return Err(EngineError::MalformedCsv(format!(
                            "row has more fields than the {} headers",
                            names.len()
                        )));
                    }
                }
            }
        }
        if header.is_none() {
            return Err(EngineError::MalformedCsv("no header row".into()));
        }
        if columns.iter().any(|(_, v)| v.len() != expert_index.len()) {
            return Err(EngineError::MalformedCsv("ragged columns".into()));
        }
        Ok(SampleBatch {
            scenario_id,
            seed,
            expert_ids,
            actors_node,
            attempts_node,
            expert_index,
            columns,
        })
    }
}

// One drawable factor: its distributions, indexed by expert.
struct Slot {
    factor_id: String,
    dists: Vec<FittedDistribution>,
}

enum TacticEval {
    One,
    Fixed(f64),
    Slot(usize),
    Gate { gate: TechniqueGate, terms: Vec<TechEval> },
}

enum TechEval {
    Fixed(f64),
    Slot(usize),
}

struct Plan {
    slots: Vec<Slot>,
    actors_slot: usize,
    attempts_slot: usize,
    impact_slots: Vec<usize>,
    quantity_columns: Vec<(String, usize)>,
    tactics: Vec<(String, TacticEval)>,
}

fn resolve_level(
    scenario: &Scenario,
    factor_id: &str,
    held_at_baseline: bool,
    evidence: &BTreeMap<String, KriLevel>,
) -> Result<KriLevel, EngineError> {
    if held_at_baseline {
        return Ok(KriLevel::Baseline);
    }
    match scenario.kri_bindings.get(factor_id) {
        None => Ok(KriLevel::Baseline),
        Some(benchmark) => evidence
            .get(benchmark)
            .cloned()
            .ok_or_else(|| EngineError::MissingEvidence {
                benchmark: benchmark.clone(),
                factor: factor_id.to_string(),
            }),
    }
}

fn build_slot(
    scenario: &Scenario,
    estimates: &EstimateSet,
    evidence: &BTreeMap<String, KriLevel>,
    factor_id: &str,
    held_at_baseline: bool,
    expect_probability: bool,
) -> Result<Slot, EngineError> {
    let kind = estimates
        .factor_kind(factor_id)
        .ok_or_else(|| EngineError::UnknownFactorKind { factor: factor_id.to_string() })?;
    if expect_probability && kind != FactorKind::Probability {
        return Err(EngineError::KindMismatch { factor: factor_id.to_string() });
    }
    let level = resolve_level(scenario, factor_id, held_at_baseline, evidence)?;
    let mut dists = Vec::with_capacity(estimates.experts.len());
    for expert in &estimates.experts {
        let record = estimates
            .record_with_fallback(expert, factor_id, &level)
            .ok_or_else(|| EngineError::MissingRecord {
                expert: expert.clone(),
                factor: factor_id.to_string(),
                level: level.to_string(),
            })?;
        let dist = fit_elicitation(&record.elicitation, kind).map_err(|source| EngineError::Fit {
            factor: factor_id.to_string(),
            expert: expert.clone(),
            source,
        })?;
        dists.push(dist);
    }
    Ok(Slot { factor_id: factor_id.to_string(), dists })
}

fn build_plan(
    scenario: &Scenario,
    estimates: &EstimateSet,
    evidence: &BTreeMap<String, KriLevel>,
) -> Result<Plan, EngineError> {
    let mut slots = Vec::new();
    let mut actors_slot = None;
    let mut attempts_slot = None;
    let mut impact_slots = Vec::new();
    let mut quantity_columns = Vec::new();

    for factor in &scenario.quantity_factors {
        let slot_idx = slots.len();
        slots.push(build_slot(scenario, estimates, evidence, &factor.id, false, false)?);
        quantity_columns.push((factor.id.clone(), slot_idx));
        match factor.role {
            FactorRole::Actors => actors_slot = Some(slot_idx),
            FactorRole::AttemptsPerActorPerYear => attempts_slot = Some(slot_idx),
            FactorRole::ImpactComponent => impact_slots.push(slot_idx),
        }
    }
    let actors_slot = actors_slot.ok_or(EngineError::MissingRole("actors"))?;
    let attempts_slot =
        attempts_slot.ok_or(EngineError::MissingRole("attempts_per_actor_per_year"))?;
    if impact_slots.is_empty() {
        return Err(EngineError::MissingRole("impact_component"));
    }

    let mut tactics = Vec::new();
    for node in scenario.included_tactics() {
        let eval = plan_tactic(scenario, estimates, evidence, node, &mut slots)?;
        tactics.push((format!("tactic_{}", node.tactic.snake_name()), eval));
    }

    Ok(Plan { slots, actors_slot, attempts_slot, impact_slots, quantity_columns, tactics })
}

fn plan_tactic(
    scenario: &Scenario,
    estimates: &EstimateSet,
    evidence: &BTreeMap<String, KriLevel>,
    node: &TacticNode,
    slots: &mut Vec<Slot>,
) -> Result<TacticEval, EngineError> {
    if node.held_at_one {
        return Ok(TacticEval::One);
    }
    if let Some(gate) = &node.gate {
        let mut terms = Vec::with_capacity(gate.techniques.len());
        for tech in &gate.techniques {
            let term = match &tech.source {
                ProbabilitySource::Fixed { value } => TechEval::Fixed(*value),
                ProbabilitySource::Elicited { factor_id } => {
                    let idx = slots.len();
                    slots.push(build_slot(
                        scenario,
                        estimates,
                        evidence,
                        factor_id,
                        node.held_at_baseline,
                        true,
                    )?);
                    TechEval::Slot(idx)
                }
            };
            terms.push(term);
        }
        return Ok(TacticEval::Gate { gate: gate.clone(), terms });
    }
    match &node.source {
        Some(ProbabilitySource::Fixed { value }) => Ok(TacticEval::Fixed(*value)),
        Some(ProbabilitySource::Elicited { factor_id }) => {
            let idx = slots.len();
            slots.push(build_slot(
                scenario,
                estimates,
                evidence,
                factor_id,
                node.held_at_baseline,
                true,
            )?);
            Ok(TacticEval::Slot(idx))
        }
        None => Err(EngineError::Gate(ModelError::EmptyChain)),
    }
}

struct ChunkOut {
    expert_index: Vec<u32>,
    node_values: Vec<Vec<f64>>,
}

fn run_chunk(
    plan: &Plan,
    config: &SamplerConfig,
    chunk_index: u64,
    count: usize,
    n_columns: usize,
) -> Result<ChunkOut, EngineError> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(chunk_index);
    let n_experts = plan.slots.first().map(|s| s.dists.len()).unwrap_or(1);
    let mut expert_index = Vec::with_capacity(count);
    let mut node_values: Vec<Vec<f64>> = (0..n_columns).map(|_| Vec::with_capacity(count)).collect();
    let mut draws = vec![0.0; plan.slots.len()];
    let mut gate_probs: Vec<f64> = Vec::new();

    for _ in 0..count {
        let expert = rng.random_range(0..n_experts);
        expert_index.push(expert as u32);
        for (slot_idx, slot) in plan.slots.iter().enumerate() {
            let e = if config.independent_factor_mixture {
                rng.random_range(0..n_experts)
            } else {
                expert
            };
            draws[slot_idx] = slot.dists[e].sample(&mut rng);
        }

        let mut col = 0;
        for (_, slot_idx) in &plan.quantity_columns {
            node_values[col].push(draws[*slot_idx]);
            col += 1;
        }
        let mut p_success = 1.0;
        for (_, eval) in &plan.tactics {
            let p = match eval {
                TacticEval::One => 1.0,
                TacticEval::Fixed(v) => *v,
                TacticEval::Slot(idx) => draws[*idx],
                TacticEval::Gate { gate, terms } => {
                    gate_probs.clear();
                    for term in terms {
                        gate_probs.push(match term {
                            TechEval::Fixed(v) => *v,
                            TechEval::Slot(idx) => draws[*idx],
                        });
                    }
                    gate_probability(gate, &gate_probs)?
                }
            };
            p_success *= p;
            node_values[col].push(p);
            col += 1;
        }
        node_values[col].push(p_success);
        col += 1;
        let impact: f64 = plan.impact_slots.iter().map(|idx| draws[*idx]).sum();
        node_values[col].push(impact);
        col += 1;
        let total = draws[plan.actors_slot] * draws[plan.attempts_slot] * p_success * impact;
        node_values[col].push(total);
    }
    Ok(ChunkOut { expert_index, node_values })
}

/// Samples a scenario under the expert mixture in `estimates`, at the
/// capability levels in `evidence`.
///
/// Baseline distributions are used for factors bound to no benchmark, for
/// tactics held at baseline, and wherever the evidence level is the
/// baseline. Identical inputs, seed, and chunking yield bit-identical
/// batches, including under parallel execution.
pub fn sample_scenario(
    scenario: &Scenario,
    estimates: &EstimateSet,
    evidence: &[Evidence],
    config: &SamplerConfig,
) -> Result<SampleBatch, EngineError> {
    if config.n_samples == 0 {
        return Err(EngineError::InvalidConfig("n_samples must be at least 1".into()));
    }
    if config.chunk_size == 0 {
        return Err(EngineError::InvalidConfig("chunk_size must be at least 1".into()));
    }
    if estimates.experts.is_empty() {
        return Err(EngineError::NoExperts);
    }
    let evidence_map: BTreeMap<String, KriLevel> = evidence
        .iter()
        .map(|e| (e.benchmark_id.clone(), e.level.clone()))
        .collect();
    let plan = build_plan(scenario, estimates, &evidence_map)?;

    let mut column_names: Vec<String> =
        plan.quantity_columns.iter().map(|(name, _)| name.clone()).collect();
    column_names.extend(plan.tactics.iter().map(|(name, _)| name.clone()));
    column_names.push("p_success".into());
    column_names.push("impact".into());
    column_names.push("total_risk".into());
    let n_columns = column_names.len();

    let n_chunks = config.n_samples.div_ceil(config.chunk_size);
    let chunk_counts: Vec<usize> = (0..n_chunks)
        .map(|c| {
            let start = c * config.chunk_size;
            config.chunk_size.min(config.n_samples - start)
        })
        .collect();

    let run_all = || -> Result<Vec<ChunkOut>, EngineError> {
        use rayon::prelude::*;
        chunk_counts
            .par_iter()
            .enumerate()
            .map(|(c, count)| run_chunk(&plan, config, c as u64, *count, n_columns))
            .collect()
    };
    let chunks = match config.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?
            .install(run_all),
        None => run_all(),
    }?;

    let mut expert_index = Vec::with_capacity(config.n_samples);
    let mut columns: Vec<(String, Vec<f64>)> = column_names
        .into_iter()
        .map(|name| (name, Vec::with_capacity(config.n_samples)))
        .collect();
    for chunk in chunks {
        expert_index.extend(chunk.expert_index);
        for (slot, values) in columns.iter_mut().zip(chunk.node_values) {
            slot.1.extend(values);
        }
    }

    let batch = SampleBatch {
        scenario_id: scenario.id.clone(),
        seed: config.seed,
        expert_ids: estimates.experts.clone(),
        actors_node: plan.slots[plan.actors_slot].factor_id.clone(),
        attempts_node: plan.slots[plan.attempts_slot].factor_id.clone(),
        expert_index,
        columns,
    };

    // Row-wise identity check: total risk must equal the four-factor
    // product exactly as stored.
    {
        let actors = batch.node(&batch.actors_node)?;
        let attempts = batch.node(&batch.attempts_node)?;
        let p = batch.node("p_success")?;
        let impact = batch.node("impact")?;
        let total = batch.node("total_risk")?;
        for i in 0..batch.n_samples() {
            assert_eq!(
                total[i],
                actors[i] * attempts[i] * p[i] * impact[i],
                "total risk identity violated at row {i}"
            );
            assert!((0.0..=1.0).contains(&p[i]), "p_success out of range at row {i}");
        }
    }
    Ok(batch)
}
