//! Scenario schema and the deterministic risk arithmetic.
//!
//! A scenario is a directed model of one attack archetype: quantity factors
//! (actor counts, attempt rates, impact components), an ordered chain of
//! MITRE ATT&CK tactics whose success probabilities multiply into the overall
//! attack success probability, optional technique gates below a tactic, and
//! bindings from factors to the benchmark that conditions them.
//!
//! Total risk is the four-factor product
//! `actors/year x attempts/actor/year x P(success) x impact/success`,
//! expressed in USD per year.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight tolerance for CHOICE gates: weights must sum to 1 within this.
pub const CHOICE_WEIGHT_TOL: f64 = 1e-9;

/// Threat-actor operational capacity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorClass {
    OC1,
    OC2,
    OC3,
    OC4,
    OC5,
}

/// The 14 MITRE ATT&CK tactics, in matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tactic {
    Reconnaissance,
    ResourceDevelopment,
    InitialAccess,
    Execution,
    Persistence,
    PrivilegeEscalation,
    DefenseEvasion,
    CredentialAccess,
    Discovery,
    LateralMovement,
    Collection,
    CommandAndControl,
    Exfiltration,
    Impact,
}

impl Tactic {
    /// All tactics in matrix order.
    pub const ALL: [Tactic; 14] = [
        Tactic::Reconnaissance,
        Tactic::ResourceDevelopment,
        Tactic::InitialAccess,
        Tactic::Execution,
        Tactic::Persistence,
        Tactic::PrivilegeEscalation,
        Tactic::DefenseEvasion,
        Tactic::CredentialAccess,
        Tactic::Discovery,
        Tactic::LateralMovement,
        Tactic::Collection,
        Tactic::CommandAndControl,
        Tactic::Exfiltration,
        Tactic::Impact,
    ];

    /// Human-readable name, as used in report tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            Tactic::Reconnaissance => "Reconnaissance",
            Tactic::ResourceDevelopment => "Resource Development",
            Tactic::InitialAccess => "Initial Access",
            Tactic::Execution => "Execution",
            Tactic::Persistence => "Persistence",
            Tactic::PrivilegeEscalation => "Privilege Escalation",
            Tactic::DefenseEvasion => "Defense Evasion",
            Tactic::CredentialAccess => "Credential Access",
            Tactic::Discovery => "Discovery",
            Tactic::LateralMovement => "Lateral Movement",
            Tactic::Collection => "Collection",
            Tactic::CommandAndControl => "Command and Control",
            Tactic::Exfiltration => "Exfiltration",
            Tactic::Impact => "Impact",
        }
    }

    /// Snake-case identifier, matching the JSON encoding.
    pub fn snake_name(&self) -> &'static str {
        match self {
            Tactic::Reconnaissance => "reconnaissance",
            Tactic::ResourceDevelopment => "resource_development",
            Tactic::InitialAccess => "initial_access",
            Tactic::Execution => "execution",
            Tactic::Persistence => "persistence",
            Tactic::PrivilegeEscalation => "privilege_escalation",
            Tactic::DefenseEvasion => "defense_evasion",
            Tactic::CredentialAccess => "credential_access",
            Tactic::Discovery => "discovery",
            Tactic::LateralMovement => "lateral_movement",
            Tactic::Collection => "collection",
            Tactic::CommandAndControl => "command_and_control",
            Tactic::Exfiltration => "exfiltration",
            Tactic::Impact => "impact",
        }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Role of a quantity factor in the risk product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRole {
    /// Number of actors conducting the attack type, per year.
    Actors,
    /// Attack attempts per actor per year.
    AttemptsPerActorPerYear,
    /// One additive component of the damage per successful attack (USD).
    ImpactComponent,
}

/// A named quantity factor of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub id: String,
    pub role: FactorRole,
}

/// Where a tactic or technique probability comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilitySource {
    /// Drawn from the fitted distribution of the named elicited factor.
    Elicited { factor_id: String },
    /// A constant probability.
    Fixed { value: f64 },
}

/// How technique probabilities combine into their parent tactic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// All techniques must succeed: product.
    And,
    /// Any technique suffices and all are attempted: inclusion-exclusion.
    Or,
    /// Any technique suffices but only one is attempted: weighted average.
    Choice,
}

/// One technique under a gated tactic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueRef {
    pub technique_id: String,
    pub source: ProbabilitySource,
}

/// Technique decomposition of a tactic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueGate {
    pub kind: GateKind,
    pub techniques: Vec<TechniqueRef>,
    /// CHOICE only: selection weights, nonnegative and summing to 1.
    /// Uniform selection when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_weights: Option<Vec<f64>>,
}

/// One step of the attack chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticNode {
    pub tactic: Tactic,
    /// Excluded tactics contribute no term to the success product.
    pub included: bool,
    /// Modeled as 100% successful: contributes a constant 1.0, never sampled.
    #[serde(default)]
    pub held_at_one: bool,
    /// Baseline probability is high enough that no uplift was elicited;
    /// the baseline distribution is reused at every capability level.
    #[serde(default)]
    pub held_at_baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<TechniqueGate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ProbabilitySource>,
}

/// A full risk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub actor_class: ActorClass,
    pub target_label: String,
    pub vector_label: String,
    pub quantity_factors: Vec<FactorSpec>,
    pub tactic_chain: Vec<TacticNode>,
    /// factor id -> benchmark id conditioning that factor.
    #[serde(default)]
    pub kri_bindings: BTreeMap<String, String>,
    /// Id of the estimate set holding the baseline elicitations.
    pub baseline: String,
}

/// A single validation finding. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// The offending element (factor id, tactic name, binding key, ...).
    pub element: String,
    pub message: String,
}

impl Violation {
    fn new(element: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            element: element.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

/// Errors from the deterministic arithmetic operations.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("tactic chain is empty")]
    EmptyChain,
    #[error("gate expects {expected} technique probabilities, got {got}")]
    GateLengthMismatch { expected: usize, got: usize },
    #[error("choice weights sum to {sum}, expected 1")]
    ChoiceWeightSum { sum: f64 },
    #[error("probability {value} outside [0, 1]")]
    ProbabilityRange { value: f64 },
}

impl Scenario {
    /// Included tactic nodes in chain order.
    pub fn included_tactics(&self) -> impl Iterator<Item = &TacticNode> {
        self.tactic_chain.iter().filter(|n| n.included)
    }

    /// Factor ids drawn per sample: quantity factors plus elicited tactic
    /// and technique factors, in a fixed deterministic order.
    pub fn elicited_factor_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .quantity_factors
            .iter()
            .map(|f| f.id.clone())
            .collect();
        for node in self.included_tactics() {
            if node.held_at_one {
                continue;
            }
            if let Some(gate) = &node.gate {
                for t in &gate.techniques {
                    if let ProbabilitySource::Elicited { factor_id } = &t.source {
                        ids.push(factor_id.clone());
                    }
                }
            } else if let Some(ProbabilitySource::Elicited { factor_id }) = &node.source {
                ids.push(factor_id.clone());
            }
        }
        ids
    }

    /// Factor ids of the impact components, in declaration order.
    pub fn impact_component_ids(&self) -> Vec<&str> {
        self.quantity_factors
            .iter()
            .filter(|f| f.role == FactorRole::ImpactComponent)
            .map(|f| f.id.as_str())
            .collect()
    }
}

/// Column names the sampler reserves for derived quantities. Factor ids
/// must avoid these and the `tactic_` prefix used for tactic draw columns.
pub const RESERVED_NODE_IDS: [&str; 4] = ["p_success", "impact", "total_risk", "expert_index"];

/// Checks every scenario invariant and returns the violations found.
///
/// `declared_benchmarks` are the benchmark ids available to bind against;
/// pass an empty set to skip the benchmark-existence check (bindings are
/// then only checked against factors).
pub fn validate_scenario(
    scenario: &Scenario,
    declared_benchmarks: &BTreeSet<String>,
) -> Vec<Violation> {
    let mut violations = Vec::new();

    // Factor ids unique and not reserved.
    let mut seen = BTreeSet::new();
    let mut all_factor_ids = BTreeSet::new();
    for f in &scenario.quantity_factors {
        if !seen.insert(f.id.clone()) {
            violations.push(Violation::new(&f.id, "duplicate factor id"));
        }
        all_factor_ids.insert(f.id.clone());
        if RESERVED_NODE_IDS.contains(&f.id.as_str()) || f.id.starts_with("tactic_") {
            violations.push(Violation::new(&f.id, "factor id is a reserved node name"));
        }
    }

    // Tactic chain.
    if scenario.tactic_chain.is_empty() {
        violations.push(Violation::new(&scenario.id, "tactic chain is empty"));
    }
    let mut seen_tactics = BTreeSet::new();
    for node in &scenario.tactic_chain {
        let name = node.tactic.snake_name();
        if !seen_tactics.insert(node.tactic) {
            violations.push(Violation::new(name, "tactic appears more than once"));
        }
        if !node.included {
            continue;
        }
        if node.held_at_one {
            if node.gate.is_some() {
                violations.push(Violation::new(name, "held_at_one tactic must not have a gate"));
            }
            match &node.source {
                None | Some(ProbabilitySource::Fixed { value: _ }) => {
                    if let Some(ProbabilitySource::Fixed { value }) = &node.source {
                        if *value != 1.0 {
                            violations.push(Violation::new(
                                name,
                                "held_at_one tactic must have fixed probability 1.0",
                            ));
                        }
                    }
                }
                Some(ProbabilitySource::Elicited { .. }) => {
                    violations.push(Violation::new(
                        name,
                        "held_at_one tactic must have fixed probability 1.0",
                    ));
                }
            }
            continue;
        }
        if let Some(gate) = &node.gate {
            if gate.techniques.len() < 2 {
                violations.push(Violation::new(name, "gate requires at least 2 techniques"));
            }
            if let Some(weights) = &gate.choice_weights {
                if gate.kind != GateKind::Choice {
                    violations.push(Violation::new(
                        name,
                        "choice_weights only apply to CHOICE gates",
                    ));
                }
                if weights.len() != gate.techniques.len() {
                    violations.push(Violation::new(
                        name,
                        "choice_weights length differs from technique count",
                    ));
                }
                if weights.iter().any(|w| *w < 0.0) {
                    violations.push(Violation::new(name, "choice_weights must be nonnegative"));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > CHOICE_WEIGHT_TOL {
                    violations.push(Violation::new(
                        name,
                        format!("choice_weights sum to {sum}, expected 1"),
                    ));
                }
            }
            for t in &gate.techniques {
                collect_source_factors(&t.source, &mut all_factor_ids, &mut violations, name);
            }
        } else {
            match &node.source {
                Some(source) => {
                    collect_source_factors(source, &mut all_factor_ids, &mut violations, name)
                }
                None => violations.push(Violation::new(
                    name,
                    "included tactic needs a probability source or a gate",
                )),
            }
        }
    }

    // At least one impact component, exactly one actors and one attempts
    // factor (the risk product needs one of each).
    if !scenario
        .quantity_factors
        .iter()
        .any(|f| f.role == FactorRole::ImpactComponent)
    {
        violations.push(Violation::new(&scenario.id, "no impact component declared"));
    }
    for (role, label) in [
        (FactorRole::Actors, "actors"),
        (FactorRole::AttemptsPerActorPerYear, "attempts_per_actor_per_year"),
    ] {
        let count = scenario
            .quantity_factors
            .iter()
            .filter(|f| f.role == role)
            .count();
        if count != 1 {
            violations.push(Violation::new(
                &scenario.id,
                format!("expected exactly one factor with role {label}, found {count}"),
            ));
        }
    }

    // KRI bindings reference existing factors and declared benchmarks.
    for (factor, benchmark) in &scenario.kri_bindings {
        if !all_factor_ids.contains(factor) {
            violations.push(Violation::new(
                factor,
                "kri binding references an unknown factor",
            ));
        }
        if !declared_benchmarks.is_empty() && !declared_benchmarks.contains(benchmark) {
            violations.push(Violation::new(
                factor,
                format!("kri binding references undeclared benchmark '{benchmark}'"),
            ));
        }
    }

    violations
}

fn collect_source_factors(
    source: &ProbabilitySource,
    factor_ids: &mut BTreeSet<String>,
    violations: &mut Vec<Violation>,
    element: &str,
) {
    match source {
        ProbabilitySource::Elicited { factor_id } => {
            if !factor_ids.insert(factor_id.clone()) {
                violations.push(Violation::new(
                    factor_id.as_str(),
                    "duplicate factor id",
                ));
            }
            if RESERVED_NODE_IDS.contains(&factor_id.as_str()) || factor_id.starts_with("tactic_")
            {
                violations.push(Violation::new(
                    factor_id.as_str(),
                    "factor id is a reserved node name",
                ));
            }
        }
        ProbabilitySource::Fixed { value } => {
            if !(0.0..=1.0).contains(value) {
                violations.push(Violation::new(
                    element,
                    format!("fixed probability {value} outside [0, 1]"),
                ));
            }
        }
    }
}

fn check_probs(probs: &[f64]) -> Result<(), ModelError> {
    for &p in probs {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(ModelError::ProbabilityRange { value: p });
        }
    }
    Ok(())
}

/// Combines technique success probabilities through a gate.
///
/// AND is the product, OR the iterated sum-and-difference
/// `P(A) + P(B) - P(A)P(B)` under independence, and CHOICE the weighted
/// average under the selection weights (uniform when absent).
pub fn gate_probability(gate: &TechniqueGate, technique_probs: &[f64]) -> Result<f64, ModelError> {
    if technique_probs.len() != gate.techniques.len() {
        return Err(ModelError::GateLengthMismatch {
            expected: gate.techniques.len(),
            got: technique_probs.len(),
        });
    }
    check_probs(technique_probs)?;
    match gate.kind {
        GateKind::And => Ok(technique_probs.iter().product()),
        GateKind::Or => Ok(technique_probs
            .iter()
            .fold(0.0, |acc, &p| acc + p - acc * p)),
        GateKind::Choice => {
            let n = technique_probs.len() as f64;
            match &gate.choice_weights {
                None => Ok(technique_probs.iter().sum::<f64>() / n),
                Some(weights) => {
                    if weights.len() != technique_probs.len() {
                        return Err(ModelError::GateLengthMismatch {
                            expected: technique_probs.len(),
                            got: weights.len(),
                        });
                    }
                    let sum: f64 = weights.iter().sum();
                    if (sum - 1.0).abs() > CHOICE_WEIGHT_TOL || weights.iter().any(|w| *w < 0.0) {
                        return Err(ModelError::ChoiceWeightSum { sum });
                    }
                    Ok(weights
                        .iter()
                        .zip(technique_probs)
                        .map(|(w, p)| w * p)
                        .sum())
                }
            }
        }
    }
}

/// Probability that every step of the chain succeeds.
///
/// Each entry is already the conditional success probability of one included
/// tactic given the previous one, so the chain probability is their product.
pub fn chain_success_probability(tactic_probs: &[f64]) -> Result<f64, ModelError> {
    if tactic_probs.is_empty() {
        return Err(ModelError::EmptyChain);
    }
    check_probs(tactic_probs)?;
    Ok(tactic_probs.iter().product())
}

/// Expected annual loss in USD: the four-factor risk product.
pub fn total_risk(n_actors: f64, n_attempts: f64, p_success: f64, impact: f64) -> f64 {
    n_actors * n_attempts * p_success * impact
}

/// A point evaluation of the risk product, as reported per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub n_actors: f64,
    pub n_attempts: f64,
    pub p_success: f64,
    pub impact: f64,
    pub total_risk: f64,
}

impl RiskBreakdown {
    pub fn new(n_actors: f64, n_attempts: f64, p_success: f64, impact: f64) -> Self {
        RiskBreakdown {
            n_actors,
            n_attempts,
            p_success,
            impact,
            total_risk: total_risk(n_actors, n_attempts, p_success, impact),
        }
    }
}
