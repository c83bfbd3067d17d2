//! Storage for per-expert, per-factor, per-level elicitations and
//! expert-diagnostic statistics.
//!
//! Records are keyed by (expert, factor, capability level), where a level is
//! either a benchmark task or the no-uplift baseline. Shared baseline
//! estimates that apply to every expert use the reserved expert id
//! [`BASELINE_EXPERT`]; lookups at the baseline level fall back to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distfit::{FactorKind, QuantileElicitation};

/// Reserved expert id for shared (expert-independent) baseline records.
pub const BASELINE_EXPERT: &str = "baseline";

/// Capability level a record is conditioned on: a benchmark task, or the
/// no-uplift baseline.
///
/// Serialized as the task id string; `"baseline"` is reserved.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KriLevel {
    Baseline,
    Task(String),
}

impl KriLevel {
    pub fn as_str(&self) -> &str {
        match self {
            KriLevel::Baseline => "baseline",
            KriLevel::Task(id) => id,
        }
    }
}

impl From<&str> for KriLevel {
    fn from(s: &str) -> Self {
        if s == "baseline" {
            KriLevel::Baseline
        } else {
            KriLevel::Task(s.to_string())
        }
    }
}

impl fmt::Display for KriLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for KriLevel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for KriLevel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(KriLevel::from(s.as_str()))
    }
}

/// One expert's elicitation for one factor at one capability level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub expert_id: String,
    pub factor_id: String,
    pub level: KriLevel,
    pub elicitation: QuantileElicitation,
    #[serde(default)]
    pub rationale: String,
}

/// A set of estimate records for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub id: String,
    pub scenario_id: String,
    /// Experts participating in the mixture (the shared baseline pseudo-id
    /// is not listed here).
    pub experts: Vec<String>,
    /// Statistical family per factor, deciding beta vs PERT fitting.
    pub factor_kinds: BTreeMap<String, FactorKind>,
    pub records: Vec<EstimateRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ElicitError {
    #[error("no records for factor '{factor}' at level '{level}'")]
    EmptyCell { factor: String, level: String },
    #[error("expert '{0}' not found in the estimate set")]
    UnknownExpert(String),
    #[error("expert '{expert}' has {found} usable records, need at least {needed}")]
    TooFewRecords { expert: String, found: usize, needed: usize },
    #[error("correlation undefined: all values tied in the {0} series")]
    AllTied(&'static str),
    #[error("rankings must be the same length (got {0} and {1})")]
    LengthMismatch(usize, usize),
}

impl EstimateSet {
    /// Exact record lookup.
    pub fn record(&self, expert: &str, factor: &str, level: &KriLevel) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| {
            r.expert_id == expert && r.factor_id == factor && &r.level == level
        })
    }

    /// Lookup with baseline fallback: a missing (expert, factor, Baseline)
    /// record resolves to the shared baseline record for the factor.
    pub fn record_with_fallback(
        &self,
        expert: &str,
        factor: &str,
        level: &KriLevel,
    ) -> Option<&EstimateRecord> {
        self.record(expert, factor, level).or_else(|| {
            if *level == KriLevel::Baseline && expert != BASELINE_EXPERT {
                self.record(BASELINE_EXPERT, factor, &KriLevel::Baseline)
            } else {
                None
            }
        })
    }

    /// All factor ids appearing in the records.
    pub fn factor_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.factor_id.clone()).collect()
    }

    /// Declared family of a factor.
    pub fn factor_kind(&self, factor: &str) -> Option<FactorKind> {
        self.factor_kinds.get(factor).copied()
    }

    /// Internal consistency violations: duplicate keys, missing baseline
    /// rows, undeclared factor kinds, experts without records.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut keys = BTreeSet::new();
        for r in &self.records {
            let key = (r.expert_id.clone(), r.factor_id.clone(), r.level.clone());
            if !keys.insert(key) {
                problems.push(format!(
                    "duplicate record for expert '{}', factor '{}', level '{}'",
                    r.expert_id, r.factor_id, r.level
                ));
            }
            if !self.factor_kinds.contains_key(&r.factor_id) {
                problems.push(format!("factor '{}' has no declared kind", r.factor_id));
            }
            let check = match self.factor_kinds.get(&r.factor_id) {
                Some(FactorKind::Probability) => r.elicitation.check_probability(),
                _ => r.elicitation.check_quantity(),
            };
            if let Err(e) = check {
                problems.push(format!(
                    "record (expert '{}', factor '{}', level '{}'): {e}",
                    r.expert_id, r.factor_id, r.level
                ));
            }
        }
        for factor in self.factor_ids() {
            let has_baseline = self
                .records
                .iter()
                .any(|r| r.factor_id == factor && r.level == KriLevel::Baseline);
            if !has_baseline {
                problems.push(format!("factor '{factor}' has no baseline-level record"));
            }
        }
        for expert in &self.experts {
            if !self.records.iter().any(|r| &r.expert_id == expert) {
                problems.push(format!("expert '{expert}' has no records"));
            }
        }
        problems
    }

    /// Merges shared baseline records from `baseline` into `self`, keeping
    /// `self`'s experts as the mixture. Overlapping (expert, factor, level)
    /// keys keep the record from `self`.
    pub fn merged_with_baseline(&self, baseline: &EstimateSet) -> EstimateSet {
        let mut merged = self.clone();
        for r in &baseline.records {
            let mut r = r.clone();
            r.expert_id = BASELINE_EXPERT.to_string();
            if merged.record(&r.expert_id, &r.factor_id, &r.level).is_none() {
                merged.records.push(r);
            }
        }
        for (factor, kind) in &baseline.factor_kinds {
            merged.factor_kinds.entry(factor.clone()).or_insert(*kind);
        }
        merged
    }
}

/// Mean of the best guesses in one (factor, level) cell.
pub fn group_mean(set: &EstimateSet, factor: &str, level: &KriLevel) -> Result<f64, ElicitError> {
    let guesses: Vec<f64> = set
        .records
        .iter()
        .filter(|r| r.factor_id == factor && &r.level == level)
        .map(|r| r.elicitation.best_guess)
        .collect();
    if guesses.is_empty() {
        return Err(ElicitError::EmptyCell {
            factor: factor.to_string(),
            level: level.to_string(),
        });
    }
    Ok(guesses.iter().sum::<f64>() / guesses.len() as f64)
}

/// Average ranks (1-based), with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Spearman rank correlation with average ranks for ties.
///
/// A series with all values tied has no defined ranking; that is reported as
/// an error rather than coerced to zero.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ElicitError> {
    if xs.len() != ys.len() {
        return Err(ElicitError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.iter().all(|v| *v == xs[0]) {
        return Err(ElicitError::AllTied("first"));
    }
    if ys.iter().all(|v| *v == ys[0]) {
        return Err(ElicitError::AllTied("second"));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Minimum usable records for a coherence score.
pub const MIN_COHERENCE_RECORDS: usize = 3;

/// Spearman correlation between an expert's interval widths and the absolute
/// distance of their best guesses from the per-cell group mean.
///
/// Only records in cells shared with at least one other expert are usable.
/// The group mean includes the expert's own estimate.
pub fn coherence_to_consensus(expert_id: &str, set: &EstimateSet) -> Result<f64, ElicitError> {
    if !set.experts.iter().any(|e| e == expert_id) {
        return Err(ElicitError::UnknownExpert(expert_id.to_string()));
    }
    let mut widths = Vec::new();
    let mut distances = Vec::new();
    for r in set.records.iter().filter(|r| r.expert_id == expert_id) {
        let peers = set
            .records
            .iter()
            .filter(|o| o.factor_id == r.factor_id && o.level == r.level)
            .count();
        if peers < 2 {
            continue;
        }
        let mean = group_mean(set, &r.factor_id, &r.level)?;
        widths.push(r.elicitation.high - r.elicitation.low);
        distances.push((r.elicitation.best_guess - mean).abs());
    }
    if widths.len() < MIN_COHERENCE_RECORDS {
        return Err(ElicitError::TooFewRecords {
            expert: expert_id.to_string(),
            found: widths.len(),
            needed: MIN_COHERENCE_RECORDS,
        });
    }
    spearman(&widths, &distances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(expert: &str, factor: &str, level: KriLevel, best: f64, low: f64, high: f64) -> EstimateRecord {
        EstimateRecord {
            expert_id: expert.into(),
            factor_id: factor.into(),
            level,
            elicitation: QuantileElicitation::new(best, low, high, 0.9),
            rationale: String::new(),
        }
    }

    fn two_expert_set() -> EstimateSet {
        let mut records = Vec::new();
        // Three cells shared by both experts; expert a's widths grow with
        // their distance from the cell mean.
        let cells = [
            ("f1", 0.2, 0.4, 0.05), // (factor, a_best, b_best, a_halfwidth)
            ("f2", 0.3, 0.7, 0.10),
            ("f3", 0.1, 0.9, 0.20),
        ];
        for (factor, a_best, b_best, a_hw) in cells {
            records.push(record("a", factor, KriLevel::Baseline, a_best, a_best - a_hw, a_best + a_hw));
            records.push(record("b", factor, KriLevel::Baseline, b_best, b_best - 0.05, b_best + 0.05));
        }
        EstimateSet {
            id: "set".into(),
            scenario_id: "scn".into(),
            experts: vec!["a".into(), "b".into()],
            factor_kinds: [
                ("f1".to_string(), FactorKind::Probability),
                ("f2".to_string(), FactorKind::Probability),
                ("f3".to_string(), FactorKind::Probability),
            ]
            .into(),
            records,
        }
    }

    #[test]
    fn group_mean_is_arithmetic() {
        let set = two_expert_set();
        let m = group_mean(&set, "f1", &KriLevel::Baseline).unwrap();
        assert!((m - 0.3).abs() < 1e-12);
    }

    #[test]
    fn group_mean_single_record_is_identity() {
        let mut set = two_expert_set();
        set.records.retain(|r| !(r.factor_id == "f1" && r.expert_id == "b"));
        let m = group_mean(&set, "f1", &KriLevel::Baseline).unwrap();
        assert_eq!(m, 0.2);
    }

    #[test]
    fn group_mean_empty_cell_errors() {
        let set = two_expert_set();
        assert!(matches!(
            group_mean(&set, "missing", &KriLevel::Baseline),
            Err(ElicitError::EmptyCell { .. })
        ));
    }

    #[test]
    fn perfectly_monotone_coherence_is_one() {
        // Widths (0.1, 0.2, 0.4) track distances exactly in rank.
        let set = two_expert_set();
        let c = coherence_to_consensus("a", &set).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_monotone_coherence_is_minus_one() {
        let mut set = two_expert_set();
        // Reverse expert a's widths so the widest interval sits at the
        // smallest distance.
        let widths = [0.20, 0.10, 0.05];
        for (factor, hw) in ["f1", "f2", "f3"].iter().zip(widths) {
            for r in set.records.iter_mut() {
                if r.expert_id == "a" && &r.factor_id == factor {
                    let best = r.elicitation.best_guess;
                    r.elicitation.low = best - hw;
                    r.elicitation.high = best + hw;
                }
            }
        }
        let c = coherence_to_consensus("a", &set).unwrap();
        assert!((c + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_direct_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.3, 0.2, 0.1]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_all_tied_is_undefined() {
        assert_eq!(
            spearman(&[1.0, 1.0, 1.0], &[0.1, 0.2, 0.3]),
            Err(ElicitError::AllTied("first"))
        );
    }

    #[test]
    fn coherence_needs_three_usable_records() {
        let mut set = two_expert_set();
        set.records.retain(|r| r.factor_id != "f3");
        assert!(matches!(
            coherence_to_consensus("a", &set),
            Err(ElicitError::TooFewRecords { found: 2, .. })
        ));
    }

    #[test]
    fn validate_flags_missing_baseline() {
        let mut set = two_expert_set();
        set.records.push(record("a", "f4", KriLevel::Task("t1".into()), 0.5, 0.4, 0.6));
        set.factor_kinds.insert("f4".into(), FactorKind::Probability);
        let problems = set.validate();
        assert!(problems.iter().any(|p| p.contains("f4") && p.contains("baseline")));
    }

    #[test]
    fn validate_flags_duplicate_key() {
        let mut set = two_expert_set();
        let dup = set.records[0].clone();
        set.records.push(dup);
        assert!(set.validate().iter().any(|p| p.contains("duplicate")));
    }

    #[test]
    fn baseline_fallback_resolves_shared_record() {
        let mut set = two_expert_set();
        set.records.push(record(BASELINE_EXPERT, "shared", KriLevel::Baseline, 0.8, 0.7, 0.9));
        set.factor_kinds.insert("shared".into(), FactorKind::Probability);
        let r = set.record_with_fallback("a", "shared", &KriLevel::Baseline).unwrap();
        assert_eq!(r.expert_id, BASELINE_EXPERT);
        assert!(set
            .record_with_fallback("a", "shared", &KriLevel::Task("t".into()))
            .is_none());
    }

    #[test]
    fn kri_level_round_trips_through_json() {
        let level = KriLevel::Task("paddle".into());
        let json = serde_json::to_string(&level).unwrap();
        assert_eq!(json, "\"paddle\"");
        assert_eq!(serde_json::from_str::<KriLevel>(&json).unwrap(), level);
        assert_eq!(
            serde_json::from_str::<KriLevel>("\"baseline\"").unwrap(),
            KriLevel::Baseline
        );
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_transform(
            mut xs in proptest::collection::vec(0.0f64..100.0, 4..12),
            ys in proptest::collection::vec(0.0f64..100.0, 4..12),
        ) {
            let n = xs.len().min(ys.len());
            xs.truncate(n);
            let ys = &ys[..n];
            prop_assume!(!xs.iter().all(|v| *v == xs[0]));
            prop_assume!(!ys.iter().all(|v| *v == ys[0]));
            let base = spearman(&xs, ys).unwrap();
            // exp is strictly monotone, so ranks are unchanged.
            let transformed: Vec<f64> = xs.iter().map(|v| (v / 25.0).exp()).collect();
            let after = spearman(&transformed, ys).unwrap();
            prop_assert!((base - after).abs() < 1e-9);
        }

        #[test]
        fn group_mean_within_bounds(
            guesses in proptest::collection::vec(0.0f64..1.0, 1..6),
        ) {
            let records: Vec<EstimateRecord> = guesses
                .iter()
                .enumerate()
                .map(|(i, g)| record(&format!("e{i}"), "f", KriLevel::Baseline, *g, 0.0, 1.0))
                .collect();
            let set = EstimateSet {
                id: "s".into(),
                scenario_id: "scn".into(),
                experts: (0..guesses.len()).map(|i| format!("e{i}")).collect(),
                factor_kinds: [("f".to_string(), FactorKind::Probability)].into(),
                records,
            };
            let m = group_mean(&set, "f", &KriLevel::Baseline).unwrap();
            let lo = guesses.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = guesses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}
