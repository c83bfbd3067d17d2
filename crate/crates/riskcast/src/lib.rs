//! Quantitative modeling of AI-uplifted cyber risk.
//!
//! The library turns a risk scenario - a MITRE-tactic attack chain with
//! quantity factors and benchmark bindings - plus expert quantile
//! elicitations into Monte Carlo estimates of annual loss, and derives the
//! comparative analytics on top: uplift ratios, log-space Shapley
//! attribution, Borgonovo delta sensitivity, and density summaries.
//!
//! Modules follow the pipeline:
//!
//! - [`riskmodel`]: scenario schema, validation, and the deterministic
//!   arithmetic (technique gates, chain success probability, total risk).
//! - [`distfit`]: beta/PERT fitting of expert quantile elicitations.
//! - [`elicitation`]: estimate storage and expert-diagnostic statistics.
//! - [`kri`]: benchmark difficulty rankings, Borda consensus, and mapping
//!   solve reports or scores onto evidence levels.
//! - [`engine`]: seeded, chunk-parallel forward sampling.
//! - [`analysis`]: uplift, attribution, sensitivity, and normalization.

pub mod analysis;
pub mod distfit;
pub mod elicitation;
pub mod engine;
pub mod kri;
pub mod riskmodel;
pub mod stats;

pub use analysis::{
    borgonovo_delta, efficacy_uplift, iqr_normalize, kde_density, multiplicative_uplift,
    shapley_log_attribution, tactic_shapley, target_uplift_table, volume_uplift, DeltaIndex,
    ShapleyAttribution, UpliftResult,
};
pub use distfit::{
    fit_beta, fit_pert, pert_mean, quantile_levels, BetaParams, FactorKind, FittedDistribution,
    FittedKind, PertParams, QuantileElicitation,
};
pub use elicitation::{
    coherence_to_consensus, group_mean, spearman, EstimateRecord, EstimateSet, KriLevel,
};
pub use engine::{sample_scenario, summarize_values, SampleBatch, SamplerConfig, Summary};
pub use kri::{
    borda_consensus, map_overall_score, map_solves_to_evidence, triangular_cutoff, Benchmark,
    Evidence, SolveReport,
};
pub use riskmodel::{
    chain_success_probability, gate_probability, total_risk, validate_scenario, ActorClass,
    FactorRole, FactorSpec, GateKind, RiskBreakdown, Scenario, Tactic, TacticNode, TechniqueGate,
    Violation,
};
