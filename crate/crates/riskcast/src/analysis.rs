//! Derived risk analytics over sample batches.
//!
//! Uplift ratios compare mean uplifted against mean baseline values, with an
//! interquartile band of the uplifted samples expressed relative to the
//! baseline mean. Attribution uses the log-space closed form of the Shapley
//! value, exact here because the risk model is a product of factors.
//! Moment-independent sensitivity uses Borgonovo's delta estimated from
//! kernel densities with Scott-rule bandwidths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::riskmodel::Tactic;
use crate::stats;

/// Evaluation grid size for density-based computations.
pub const KDE_GRID_POINTS: usize = 512;
/// Grid margin in bandwidths beyond the sample range.
pub const KDE_GRID_MARGIN_BANDWIDTHS: f64 = 5.0;
/// Default number of equal-probability conditioning bins.
pub const DEFAULT_DELTA_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("baseline mean is not positive")]
    NonPositiveBaselineMean,
    #[error("factor '{0}' has a nonpositive mean; log attribution undefined")]
    NonPositiveMean(String),
    #[error("need at least 2 distinct samples for a density estimate")]
    ZeroVariance,
    #[error("interquartile range is zero")]
    ZeroIqr,
    #[error("aligned arrays have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("capability level sets differ between the paired scenarios")]
    LevelSetMismatch,
}

/// Multiplicative uplift of a node between two runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpliftResult {
    /// mean(uplifted) / mean(baseline).
    pub ratio: f64,
    /// (q25, q75) of the uplifted samples, divided by the baseline mean.
    pub iqr_band: (f64, f64),
}

/// Ratio of mean uplifted to mean baseline samples, with the uplifted
/// interquartile range rescaled by the baseline mean.
pub fn multiplicative_uplift(
    uplifted: &[f64],
    baseline: &[f64],
) -> Result<UpliftResult, AnalysisError> {
    if uplifted.is_empty() || baseline.is_empty() {
        return Err(AnalysisError::EmptySamples);
    }
    let baseline_mean = stats::mean(baseline);
    if baseline_mean <= 0.0 {
        return Err(AnalysisError::NonPositiveBaselineMean);
    }
    let mut sorted = uplifted.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in samples"));
    Ok(UpliftResult {
        ratio: stats::mean(uplifted) / baseline_mean,
        iqr_band: (
            stats::quantile_sorted(&sorted, 0.25) / baseline_mean,
            stats::quantile_sorted(&sorted, 0.75) / baseline_mean,
        ),
    })
}

/// Uplift in the probability of overall attack success.
pub fn efficacy_uplift(
    uplifted_p_success: &[f64],
    baseline_p_success: &[f64],
) -> Result<UpliftResult, AnalysisError> {
    multiplicative_uplift(uplifted_p_success, baseline_p_success)
}

/// Uplift in the annual attack volume, from per-sample products of the
/// actor count and attempt rate.
pub fn volume_uplift(
    uplifted_volume: &[f64],
    baseline_volume: &[f64],
) -> Result<UpliftResult, AnalysisError> {
    multiplicative_uplift(uplifted_volume, baseline_volume)
}

/// Elementwise product of two aligned arrays.
pub fn elementwise_product(a: &[f64], b: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// One factor's attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEntry {
    pub id: String,
    /// Raw value: log of the factor's multiplicative gain.
    pub phi: f64,
    /// Normalized share in percent; absolute values sum to 100.
    pub phi_normalized: f64,
}

/// Attribution of an overall change to its factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub entries: Vec<ShapleyEntry>,
    /// True when every factor's gain is 1: all raw values are zero and the
    /// normalized shares are reported as zero instead of dividing by zero.
    pub degenerate: bool,
}

impl ShapleyAttribution {
    /// Sum of raw values; equals the log of the total gain.
    pub fn total_phi(&self) -> f64 {
        self.entries.iter().map(|e| e.phi).sum()
    }
}

/// A factor's mean value under the baseline and uplifted runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGain {
    pub id: String,
    pub baseline_mean: f64,
    pub uplifted_mean: f64,
}

/// Log-space Shapley attribution over multiplicative factors.
///
/// Because the model output is the product of the factors, each factor's
/// marginal contribution is the same in every coalition order and the
/// Shapley value reduces to `phi_i = log(uplifted_i / baseline_i)`.
/// Normalized values are `phi_i / sum_j |phi_j| x 100`; factors that
/// decreased keep their negative sign.
pub fn shapley_log_attribution(
    gains: &[FactorGain],
) -> Result<ShapleyAttribution, AnalysisError> {
    let mut phis = Vec::with_capacity(gains.len());
    for g in gains {
        if g.baseline_mean <= 0.0 || g.uplifted_mean <= 0.0 {
            return Err(AnalysisError::NonPositiveMean(g.id.clone()));
        }
        phis.push((g.uplifted_mean / g.baseline_mean).ln());
    }
    Ok(normalize_attribution(
        gains.iter().map(|g| g.id.clone()).collect(),
        phis,
    ))
}

fn normalize_attribution(ids: Vec<String>, phis: Vec<f64>) -> ShapleyAttribution {
    let abs_sum: f64 = phis.iter().map(|p| p.abs()).sum();
    let degenerate = abs_sum == 0.0;
    let entries = ids
        .into_iter()
        .zip(phis)
        .map(|(id, phi)| ShapleyEntry {
            id,
            phi,
            phi_normalized: if degenerate { 0.0 } else { phi / abs_sum * 100.0 },
        })
        .collect();
    ShapleyAttribution { entries, degenerate }
}

/// A tactic's mean success probability under both runs; `None` marks a
/// tactic absent from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticGain {
    pub tactic: Tactic,
    pub baseline_mean: Option<f64>,
    pub uplifted_mean: Option<f64>,
}

/// Shapley attribution of the attack success probability over tactics.
///
/// Absent tactics receive exactly zero rather than entering the
/// normalization.
pub fn tactic_shapley(gains: &[TacticGain]) -> Result<ShapleyAttribution, AnalysisError> {
    let mut ids = Vec::with_capacity(gains.len());
    let mut phis = Vec::with_capacity(gains.len());
    for g in gains {
        ids.push(g.tactic.display_name().to_string());
        match (g.baseline_mean, g.uplifted_mean) {
            (Some(b), Some(u)) => {
                if b <= 0.0 || u <= 0.0 {
                    return Err(AnalysisError::NonPositiveMean(
                        g.tactic.display_name().to_string(),
                    ));
                }
                phis.push((u / b).ln());
            }
            _ => phis.push(0.0),
        }
    }
    Ok(normalize_attribution(ids, phis))
}

/// Scott's bandwidth for one-dimensional data: `sigma_hat * n^(-1/5)`.
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64, AnalysisError> {
    let sd = stats::sample_std(samples);
    if samples.len() < 2 || sd == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok(sd * (samples.len() as f64).powf(-0.2))
}

/// Evaluation grid spanning the sample range plus a margin of bandwidths.
pub fn kde_grid(samples: &[f64], bandwidth: f64, points: usize) -> Vec<f64> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min)
        - KDE_GRID_MARGIN_BANDWIDTHS * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        + KDE_GRID_MARGIN_BANDWIDTHS * bandwidth;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + i as f64 * step).collect()
}

/// Gaussian kernel density with Scott's bandwidth, evaluated on `grid`.
pub fn kde_density(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    let h = scott_bandwidth(samples)?;
    Ok(kde_density_with_bandwidth(samples, grid, h))
}

fn kde_density_with_bandwidth(samples: &[f64], grid: &[f64], bandwidth: f64) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            let mut acc = 0.0;
            for &s in samples {
                let z = (x - s) / bandwidth;
                acc += (-0.5 * z * z).exp();
            }
            acc * norm
        })
        .collect()
}

/// Trapezoidal integral of `values` over `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// A factor's moment-independent sensitivity index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaIndex {
    pub factor_id: String,
    /// Half the bin-weighted L1 distance between the marginal output
    /// density and the per-bin conditional densities.
    pub delta: f64,
    /// Requested bins that collapsed into a neighbor (tied factor values or
    /// an over-fine binning).
    pub merged_bins: usize,
}

// Equal-probability bins over x, built from atoms of tied values so that
// discrete factors condition correctly. Returns per-bin index lists.
fn equal_probability_bins(x: &[f64], n_bins: usize) -> (Vec<Vec<usize>>, usize) {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("NaN in factor samples"));

    // Atoms: runs of identical values that must stay together.
    let mut atoms: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || x[order[i]] != x[order[start]] {
            atoms.push(&order[start..i]);
            start = i;
        }
    }

    let target = n as f64 / n_bins as f64;
    let mut bins: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut filled = 0usize;
    for atom in atoms {
        current.extend_from_slice(atom);
        // Close at the next multiple of the target size past what is
        // already binned, leaving room for a final bin.
        let milestone = ((filled as f64 / target).floor() + 1.0) * target;
        if (filled + current.len()) as f64 >= milestone && bins.len() + 1 < n_bins {
            filled += current.len();
            bins.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        bins.push(current);
    }
    let merged = n_bins.saturating_sub(bins.len());
    (bins, merged)
}

/// Borgonovo delta of output `y` with respect to factor `x`.
///
/// The factor is cut into `n_bins` equal-probability bins (tied values stay
/// atomic, so discrete factors get one bin per value); marginal and
/// conditional densities are kernel estimates on a shared grid; a
/// zero-variance bin borrows the pooled bandwidth.
pub fn borgonovo_delta(
    factor_id: &str,
    x: &[f64],
    y: &[f64],
    n_bins: usize,
) -> Result<DeltaIndex, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(AnalysisError::EmptySamples);
    }
    if n_bins < 2 {
        return Err(AnalysisError::TooFewBins(n_bins));
    }
    let pooled_bandwidth = scott_bandwidth(y)?;
    let grid = kde_grid(y, pooled_bandwidth, KDE_GRID_POINTS);
    let marginal = kde_density_with_bandwidth(y, &grid, pooled_bandwidth);

    let (bins, merged_bins) = equal_probability_bins(x, n_bins);
    let n = x.len() as f64;
    let mut delta = 0.0;
    for bin in &bins {
        let weight = bin.len() as f64 / n;
        let y_bin: Vec<f64> = bin.iter().map(|&i| y[i]).collect();
        let bandwidth = scott_bandwidth(&y_bin).unwrap_or(pooled_bandwidth);
        let conditional = kde_density_with_bandwidth(&y_bin, &grid, bandwidth);
        let l1: Vec<f64> = marginal
            .iter()
            .zip(&conditional)
            .map(|(m, c)| (m - c).abs())
            .collect();
        delta += weight * trapezoid(&grid, &l1);
    }
    Ok(DeltaIndex {
        factor_id: factor_id.to_string(),
        delta: 0.5 * delta,
        merged_bins,
    })
}

/// Centers by the median and scales by the interquartile range.
pub fn iqr_normalize(samples: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in samples"));
    let median = stats::quantile_sorted(&sorted, 0.5);
    let iqr = stats::iqr_sorted(&sorted);
    if iqr == 0.0 {
        return Err(AnalysisError::ZeroIqr);
    }
    Ok(samples.iter().map(|v| (v - median) / iqr).collect())
}

/// Mean with interquartile bounds, one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

fn cell(values: &[f64]) -> CellStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in samples"));
    CellStats {
        mean: stats::mean(values),
        q25: stats::quantile_sorted(&sorted, 0.25),
        q75: stats::quantile_sorted(&sorted, 0.75),
    }
}

/// Per-level inputs for the target-uplift comparison: actor-count samples
/// and per-sample successful attacks per year
/// (`actors x attempts x p_success`).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLevelSamples {
    pub level: String,
    pub n_actors: Vec<f64>,
    pub successful_attacks: Vec<f64>,
}

/// One row of the target-uplift table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetUpliftRow {
    pub level: String,
    pub small_actors: CellStats,
    pub large_actors: CellStats,
    pub small_successful_attacks: CellStats,
    pub large_successful_attacks: CellStats,
}

/// Compares a small-target and a large-target scenario across capability
/// levels. The two scenarios must be sampled at the same levels, in order.
pub fn target_uplift_table(
    small: &[TargetLevelSamples],
    large: &[TargetLevelSamples],
) -> Result<Vec<TargetUpliftRow>, AnalysisError> {
    if small.len() != large.len()
        || small
            .iter()
            .zip(large)
            .any(|(s, l)| s.level != l.level)
    {
        return Err(AnalysisError::LevelSetMismatch);
    }
    small
        .iter()
        .zip(large)
        .map(|(s, l)| {
            if s.n_actors.is_empty() || l.n_actors.is_empty() {
                return Err(AnalysisError::EmptySamples);
            }
            Ok(TargetUpliftRow {
                level: s.level.clone(),
                small_actors: cell(&s.n_actors),
                large_actors: cell(&l.n_actors),
                small_successful_attacks: cell(&s.successful_attacks),
                large_successful_attacks: cell(&l.successful_attacks),
            })
        })
        .collect()
}
