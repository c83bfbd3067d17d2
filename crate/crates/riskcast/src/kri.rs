//! Benchmark task-difficulty handling.
//!
//! A benchmark is a full list of tasks ranked by difficulty plus the subset
//! whose levels experts actually estimated against. Model solve reports (or
//! plain overall scores) are mapped onto the hardest task the model can be
//! credited with, which then becomes the evidence level for every factor
//! bound to that benchmark.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::{spearman, ElicitError, KriLevel};

/// One ranked benchmark task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    /// Difficulty rank, 1 = easiest, contiguous up to the task count.
    pub difficulty_rank: u32,
    /// First-solve time in minutes, where the benchmark reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fst_minutes: Option<f64>,
}

/// A difficulty-ranked benchmark with its elicited task subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub id: String,
    pub tasks: Vec<TaskEntry>,
    /// Ordered (easiest first) sublist of task ids used as KRI levels.
    pub elicited_subset: Vec<String>,
}

/// Which tasks a model solved on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub benchmark_id: String,
    pub solved_task_ids: BTreeSet<String>,
}

/// The hardest-solvable-task level set on a benchmark's indicator node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub benchmark_id: String,
    pub level: KriLevel,
}

#[derive(Debug, Error, PartialEq)]
pub enum KriError {
    #[error("benchmark '{benchmark}': {message}")]
    InvalidBenchmark { benchmark: String, message: String },
    #[error("task '{task}' not found in benchmark '{benchmark}'")]
    UnknownTask { benchmark: String, task: String },
    #[error("solve report targets benchmark '{report}', not '{benchmark}'")]
    BenchmarkMismatch { report: String, benchmark: String },
    #[error("need at least 2 rankings, got {0}")]
    TooFewRankings(usize),
    #[error("rankings are not permutations of the same task set")]
    MismatchedTaskSets,
    #[error("score fraction {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("evaluated count {evaluated} exceeds benchmark task count {total}")]
    EvaluatedCount { evaluated: usize, total: usize },
    #[error(transparent)]
    Correlation(#[from] ElicitError),
}

impl Benchmark {
    /// Rank of a task id.
    pub fn rank_of(&self, task_id: &str) -> Option<u32> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .map(|t| t.difficulty_rank)
    }

    /// Structural invariants: contiguous ranks `1..=N`, subset task ids
    /// exist and have strictly increasing ranks.
    pub fn validate(&self) -> Result<(), KriError> {
        let invalid = |message: String| KriError::InvalidBenchmark {
            benchmark: self.id.clone(),
            message,
        };
        let mut ranks: Vec<u32> = self.tasks.iter().map(|t| t.difficulty_rank).collect();
        ranks.sort_unstable();
        for (i, rank) in ranks.iter().enumerate() {
            if *rank != (i + 1) as u32 {
                return Err(invalid(format!(
                    "ranks must be contiguous 1..{}, found {rank} at sorted position {}",
                    self.tasks.len(),
                    i + 1
                )));
            }
        }
        let mut last = 0u32;
        for task in &self.elicited_subset {
            let rank = self.rank_of(task).ok_or_else(|| KriError::UnknownTask {
                benchmark: self.id.clone(),
                task: task.clone(),
            })?;
            if rank <= last {
                return Err(invalid(format!(
                    "elicited subset ranks must be strictly increasing (task '{task}')"
                )));
            }
            last = rank;
        }
        Ok(())
    }

    /// The hardest elicited task with rank at most `cutoff_rank`, or the
    /// baseline when none qualifies.
    fn evidence_at_cutoff(&self, cutoff_rank: u32) -> Evidence {
        let mut level = KriLevel::Baseline;
        for task in &self.elicited_subset {
            match self.rank_of(task) {
                Some(rank) if rank <= cutoff_rank => level = KriLevel::Task(task.clone()),
                _ => {}
            }
        }
        Evidence {
            benchmark_id: self.id.clone(),
            level,
        }
    }
}

/// Borda-count consensus over two or more rankings of the same task set.
///
/// A task at position `p` (1-based) of a `k`-task list earns `k - p` points
/// per list; tasks are ordered by descending total points, ties broken
/// lexicographically by task id.
pub fn borda_consensus(rankings: &[Vec<String>]) -> Result<Vec<String>, KriError> {
    if rankings.len() < 2 {
        return Err(KriError::TooFewRankings(rankings.len()));
    }
    let reference: BTreeSet<&String> = rankings[0].iter().collect();
    if reference.len() != rankings[0].len() {
        return Err(KriError::MismatchedTaskSets);
    }
    for ranking in &rankings[1..] {
        let set: BTreeSet<&String> = ranking.iter().collect();
        if set != reference || ranking.len() != rankings[0].len() {
            return Err(KriError::MismatchedTaskSets);
        }
    }
    let k = rankings[0].len();
    let mut points: Vec<(String, u64)> = rankings[0]
        .iter()
        .map(|task| (task.clone(), 0u64))
        .collect();
    points.sort_by(|a, b| a.0.cmp(&b.0));
    for ranking in rankings {
        for (pos, task) in ranking.iter().enumerate() {
            let idx = points
                .binary_search_by(|(t, _)| t.cmp(task))
                .expect("task verified present");
            points[idx].1 += (k - pos - 1) as u64;
        }
    }
    // Descending points, ascending id on ties (ids are already the
    // secondary order after a stable sort on points).
    points.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(points.into_iter().map(|(t, _)| t).collect())
}

/// Largest `k` whose cumulative rank sum `1 + 2 + ... + k` does not exceed
/// `rank_sum`.
pub fn triangular_cutoff(rank_sum: u64) -> u64 {
    // Closed form with integer fix-up for float rounding.
    let mut k = (((8.0 * rank_sum as f64 + 1.0).sqrt() - 1.0) / 2.0).floor() as u64;
    while k * (k + 1) / 2 > rank_sum {
        k -= 1;
    }
    while (k + 1) * (k + 2) / 2 <= rank_sum {
        k += 1;
    }
    k
}

/// Maps a set of solved tasks onto evidence: sum the solved ranks, take the
/// triangular cutoff, then the hardest elicited task at or below it.
///
/// An empty solve set maps to the baseline.
pub fn map_solves_to_evidence(
    report: &SolveReport,
    benchmark: &Benchmark,
) -> Result<Evidence, KriError> {
    if report.benchmark_id != benchmark.id {
        return Err(KriError::BenchmarkMismatch {
            report: report.benchmark_id.clone(),
            benchmark: benchmark.id.clone(),
        });
    }
    let mut rank_sum = 0u64;
    for task in &report.solved_task_ids {
        let rank = benchmark.rank_of(task).ok_or_else(|| KriError::UnknownTask {
            benchmark: benchmark.id.clone(),
            task: task.clone(),
        })?;
        rank_sum += rank as u64;
    }
    let cutoff = triangular_cutoff(rank_sum);
    Ok(benchmark.evidence_at_cutoff(cutoff as u32))
}

/// Maps an overall benchmark score onto evidence.
///
/// `floor(score_fraction x evaluated_count)` tasks count as solved;
/// unevaluated tasks count as unsolved, so the adjusted fraction is
/// `solved / N_total` and the cutoff rank is exactly the solved count.
pub fn map_overall_score(
    score_fraction: f64,
    evaluated_count: usize,
    benchmark: &Benchmark,
) -> Result<Evidence, KriError> {
    if !(0.0..=1.0).contains(&score_fraction) {
        return Err(KriError::ScoreRange(score_fraction));
    }
    let total = benchmark.tasks.len();
    if evaluated_count > total {
        return Err(KriError::EvaluatedCount {
            evaluated: evaluated_count,
            total,
        });
    }
    // Guard against representation error in fractions like 20/37 before
    // flooring.
    let solved_count = (score_fraction * evaluated_count as f64 + 1e-9).floor() as u32;
    Ok(benchmark.evidence_at_cutoff(solved_count))
}

/// Per-category overall-score mapping, reconciled by taking the maximum
/// evidence level across categories.
///
/// Convenience wrapper over [`map_overall_score`] for score breakdowns
/// reported by task group rather than as a single number.
pub fn map_category_scores(
    category_scores: &[(f64, usize)],
    benchmark: &Benchmark,
) -> Result<Evidence, KriError> {
    let mut best = Evidence {
        benchmark_id: benchmark.id.clone(),
        level: KriLevel::Baseline,
    };
    let mut best_rank = 0u32;
    for (fraction, evaluated) in category_scores {
        let evidence = map_overall_score(*fraction, *evaluated, benchmark)?;
        if let KriLevel::Task(task) = &evidence.level {
            let rank = benchmark.rank_of(task).expect("evidence task exists");
            if rank > best_rank {
                best_rank = rank;
                best = evidence;
            }
        }
    }
    Ok(best)
}

/// Spearman agreement between two orderings of the same task set, used to
/// compare a consensus ranking against an expert-provided one.
pub fn rank_agreement(a: &[String], b: &[String]) -> Result<f64, KriError> {
    let set_a: BTreeSet<&String> = a.iter().collect();
    let set_b: BTreeSet<&String> = b.iter().collect();
    if set_a != set_b || a.len() != b.len() || set_a.len() != a.len() {
        return Err(KriError::MismatchedTaskSets);
    }
    let positions_a: Vec<f64> = (0..a.len()).map(|i| i as f64).collect();
    let positions_b: Vec<f64> = a
        .iter()
        .map(|task| b.iter().position(|t| t == task).unwrap() as f64)
        .collect();
    Ok(spearman(&positions_a, &positions_b)?)
}
