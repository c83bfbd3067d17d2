//! Distribution fitting for expert quantile elicitations.
//!
//! An expert reports a best guess (the mode of their belief), the lowest and
//! highest plausible values, and the confidence that the truth lies between
//! those bounds. Probability factors are fitted to beta distributions,
//! quantity factors to PERT distributions (a beta rescaled to `[min, max]`
//! with mean `(min + 4 mode + max) / 6`).
//!
//! The mode is enforced exactly through reparameterization; the two interval
//! bounds are matched in least squares at the symmetric quantile levels
//! implied by the confidence. Optimization is a derivative-free simplex
//! search, so no gradient code for incomplete-beta quantiles is needed.

use rand::Rng;
use rand_distr::Distribution as RandDistribution;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erf_inv;
use thiserror::Error;

/// Iteration budget for the simplex search.
pub const MAX_FIT_ITERATIONS: usize = 2000;
/// Convergence threshold on residual improvement.
pub const FIT_TOLERANCE: f64 = 1e-12;
/// Smallest admissible lower support bound for quantities.
const TINY_POSITIVE: f64 = 1e-300;

/// An expert's four-number elicitation for one factor at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileElicitation {
    /// Mode of the expert's belief distribution.
    pub best_guess: f64,
    /// Lowest plausible value.
    pub low: f64,
    /// Highest plausible value.
    pub high: f64,
    /// Probability that the truth lies in `[low, high]`.
    pub confidence: f64,
}

/// Shape parameters of a beta distribution on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Parameters of a PERT distribution on `[min, max]` with the given mode.
///
/// The underlying beta shapes are `alpha = 1 + 4 (mode - min) / (max - min)`
/// and `beta = 1 + 4 (max - mode) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PertParams {
    pub min: f64,
    pub mode: f64,
    pub max: f64,
}

impl PertParams {
    /// Beta shape parameters of the rescaled distribution.
    pub fn shape(&self) -> BetaParams {
        let range = self.max - self.min;
        BetaParams {
            alpha: 1.0 + 4.0 * (self.mode - self.min) / range,
            beta: 1.0 + 4.0 * (self.max - self.mode) / range,
        }
    }
}

/// Mean of a PERT distribution: `(min + 4 mode + max) / 6`.
pub fn pert_mean(params: &PertParams) -> f64 {
    (params.min + 4.0 * params.mode + params.max) / 6.0
}

/// A fitted distribution kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedKind {
    Beta(BetaParams),
    Pert(PertParams),
    /// Degenerate elicitation: low = best guess = high.
    PointMass(f64),
}

/// A fitted distribution together with its quantile-fit residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    pub kind: FittedKind,
    /// Sum of squared errors between fitted and elicited quantiles.
    pub fit_residual: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("confidence {0} outside the open interval (0, 1)")]
    ConfidenceRange(f64),
    #[error("invalid elicitation: {0}")]
    InvalidElicitation(String),
    #[error("fit did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

impl QuantileElicitation {
    pub fn new(best_guess: f64, low: f64, high: f64, confidence: f64) -> Self {
        QuantileElicitation { best_guess, low, high, confidence }
    }

    fn check_common(&self) -> Result<(), FitError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(FitError::ConfidenceRange(self.confidence));
        }
        if !self.low.is_finite() || !self.high.is_finite() || !self.best_guess.is_finite() {
            return Err(FitError::InvalidElicitation("non-finite value".into()));
        }
        if self.low > self.high {
            return Err(FitError::InvalidElicitation(format!(
                "low {} exceeds high {}",
                self.low, self.high
            )));
        }
        if self.best_guess < self.low || self.best_guess > self.high {
            return Err(FitError::InvalidElicitation(format!(
                "best guess {} outside [{}, {}]",
                self.best_guess, self.low, self.high
            )));
        }
        Ok(())
    }

    /// Validity for a probability factor: all values inside `[0, 1]`.
    pub fn check_probability(&self) -> Result<(), FitError> {
        self.check_common()?;
        for v in [self.low, self.best_guess, self.high] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FitError::InvalidElicitation(format!(
                    "probability value {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Validity for a quantity factor: all values nonnegative.
    pub fn check_quantity(&self) -> Result<(), FitError> {
        self.check_common()?;
        if self.low < 0.0 {
            return Err(FitError::InvalidElicitation(format!(
                "quantity value {} is negative",
                self.low
            )));
        }
        Ok(())
    }

    fn is_degenerate(&self) -> bool {
        self.low == self.high && self.low == self.best_guess
    }
}

/// Symmetric quantile levels implied by an interval confidence:
/// `((1 - c) / 2, 1 - (1 - c) / 2)`.
pub fn quantile_levels(confidence: f64) -> Result<(f64, f64), FitError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(FitError::ConfidenceRange(confidence));
    }
    let tail = (1.0 - confidence) / 2.0;
    Ok((tail, 1.0 - tail))
}

/// Regularized incomplete beta, i.e. the beta CDF.
fn beta_cdf(alpha: f64, beta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(alpha, beta, x)
    }
}

/// Beta quantile by bisecting the regularized incomplete beta.
pub(crate) fn beta_quantile(alpha: f64, beta: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf(alpha, beta, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal quantile, used only to seed the optimizer.
fn normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)
}

// Nelder-Mead with standard coefficients. Converged when the function-value
// spread of the simplex drops below `tol`.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    initial: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64, bool, usize) {
    let n = initial[0].len();
    debug_assert_eq!(initial.len(), n + 1);
    let mut simplex: Vec<(Vec<f64>, f64)> =
        initial.into_iter().map(|x| { let fx = f(&x); (x, fx) }).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[n].1 - simplex[0].1 < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n).map(|d| 2.0 * centroid[d] - worst.0[d]).collect();
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..n).map(|d| 3.0 * centroid[d] - 2.0 * worst.0[d]).collect();
            let f_expand = f(&expand);
            simplex[n] = if f_expand < f_reflect { (expand, f_expand) } else { (reflect, f_reflect) };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = (0..n).map(|d| 0.5 * (centroid[d] + worst.0[d])).collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[n] = (contract, f_contract);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> =
                        (0..n).map(|d| 0.5 * (best[d] + entry.0[d])).collect();
                    let f_shrunk = f(&shrunk);
                    *entry = (shrunk, f_shrunk);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let best = simplex.remove(0);
    (best.0, best.1, converged, iterations)
}

/// Fits a beta distribution to a probability-factor elicitation.
///
/// The mode is held exactly at the best guess by parameterizing the shapes
/// as `alpha = 1 + k m`, `beta = 1 + k (1 - m)` with concentration `k > 0`
/// (boundary modes 0 and 1 pin the corresponding shape at 1); `k` is then
/// optimized in log space against the two elicited quantiles.
pub fn fit_beta(elicitation: &QuantileElicitation) -> Result<FittedDistribution, FitError> {
    elicitation.check_probability()?;
    if elicitation.is_degenerate() {
        return Ok(FittedDistribution {
            kind: FittedKind::PointMass(elicitation.best_guess),
            fit_residual: 0.0,
        });
    }
    let (lo_level, hi_level) = quantile_levels(elicitation.confidence)?;
    let m = elicitation.best_guess;
    let low = elicitation.low;
    let high = elicitation.high;

    let shapes = |concentration: f64| -> (f64, f64) {
        (1.0 + concentration * m, 1.0 + concentration * (1.0 - m))
    };
    let objective = |u: &[f64]| -> f64 {
        let concentration = u[0].exp();
        if !concentration.is_finite() {
            return f64::MAX;
        }
        let (alpha, beta) = shapes(concentration);
        let q_lo = beta_quantile(alpha, beta, lo_level);
        let q_hi = beta_quantile(alpha, beta, hi_level);
        (q_lo - low).powi(2) + (q_hi - high).powi(2)
    };

    // Initial concentration from a normal approximation of the interval.
    let z = normal_quantile(hi_level).max(0.1);
    let width = (high - low).max(1e-6);
    let sd_target = width / (2.0 * z);
    let spread = (m * (1.0 - m)).max(0.01);
    let k0 = (spread / (sd_target * sd_target) - 3.0).clamp(0.1, 5000.0);
    let u0 = k0.ln();

    let (best, residual, converged, iterations) =
        nelder_mead(objective, vec![vec![u0], vec![u0 + 1.0]], MAX_FIT_ITERATIONS, FIT_TOLERANCE);
    if !converged {
        return Err(FitError::NonConvergence { iterations, residual });
    }
    let (alpha, beta) = shapes(best[0].exp());
    Ok(FittedDistribution {
        kind: FittedKind::Beta(BetaParams { alpha, beta }),
        fit_residual: residual,
    })
}

/// Fits a PERT distribution to a quantity-factor elicitation.
///
/// The mode is pinned at the best guess; the support bounds `(min, max)` are
/// free parameters constrained to `0 < min <= mode <= max` and optimized
/// against the two elicited quantiles. The lower bound is floored at a tiny
/// positive value so supports stay nonnegative.
pub fn fit_pert(elicitation: &QuantileElicitation) -> Result<FittedDistribution, FitError> {
    elicitation.check_quantity()?;
    if elicitation.is_degenerate() {
        return Ok(FittedDistribution {
            kind: FittedKind::PointMass(elicitation.best_guess),
            fit_residual: 0.0,
        });
    }
    let (lo_level, hi_level) = quantile_levels(elicitation.confidence)?;
    let m = elicitation.best_guess.max(TINY_POSITIVE);
    let low = elicitation.low;
    let high = elicitation.high;
    let scale = (high - low).max(high.abs()).max(1e-9);

    let objective = |x: &[f64]| -> f64 {
        let (a, b) = (x[0], x[1]);
        // Barrier keeping 0 < a <= m <= b with a usable gradient direction.
        let mut violation = 0.0;
        if a <= 0.0 {
            violation += 1.0 + (-a) / scale;
        }
        if a > m {
            violation += 1.0 + (a - m) / scale;
        }
        if b < m {
            violation += 1.0 + (m - b) / scale;
        }
        if violation > 0.0 {
            return 1e12 * violation;
        }
        let params = PertParams { min: a, mode: m, max: b };
        let q_lo = pert_quantile_impl(&params, lo_level);
        let q_hi = pert_quantile_impl(&params, hi_level);
        ((q_lo - low) / scale).powi(2) + ((q_hi - high) / scale).powi(2)
    };

    let a0 = if low < m { low.max(TINY_POSITIVE) } else { (0.95 * m).max(TINY_POSITIVE) };
    let b0 = if high > m { high } else { m * 1.05 + 1e-9 };
    let step = 0.1 * (b0 - a0).max(1e-6);
    let simplex = vec![
        vec![a0, b0],
        vec![(a0 - step).max(TINY_POSITIVE), b0 + step],
        vec![a0.min(m), b0 + 2.0 * step],
    ];
    let (best, scaled_residual, converged, iterations) =
        nelder_mead(objective, simplex, MAX_FIT_ITERATIONS, FIT_TOLERANCE);
    let residual = scaled_residual * scale * scale;
    if !converged {
        return Err(FitError::NonConvergence { iterations, residual });
    }
    let params = PertParams { min: best[0].max(TINY_POSITIVE), mode: m, max: best[1].max(m) };
    Ok(FittedDistribution {
        kind: FittedKind::Pert(params),
        fit_residual: residual,
    })
}

fn pert_quantile_impl(params: &PertParams, p: f64) -> f64 {
    if params.max <= params.min {
        return params.mode;
    }
    let shape = params.shape();
    params.min + (params.max - params.min) * beta_quantile(shape.alpha, shape.beta, p)
}

impl FittedDistribution {
    /// Quantile function of the fitted distribution.
    pub fn quantile(&self, p: f64) -> f64 {
        match &self.kind {
            FittedKind::Beta(b) => beta_quantile(b.alpha, b.beta, p),
            FittedKind::Pert(params) => pert_quantile_impl(params, p),
            FittedKind::PointMass(v) => *v,
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.kind {
            FittedKind::Beta(b) => beta_cdf(b.alpha, b.beta, x),
            FittedKind::Pert(params) => {
                if params.max <= params.min {
                    return if x < params.mode { 0.0 } else { 1.0 };
                }
                let shape = params.shape();
                beta_cdf(shape.alpha, shape.beta, (x - params.min) / (params.max - params.min))
            }
            FittedKind::PointMass(v) => {
                if x < *v {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Distribution mean.
    pub fn mean(&self) -> f64 {
        match &self.kind {
            FittedKind::Beta(b) => b.alpha / (b.alpha + b.beta),
            FittedKind::Pert(p) => pert_mean(p),
            FittedKind::PointMass(v) => *v,
        }
    }

    /// Support bounds.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            FittedKind::Beta(_) => (0.0, 1.0),
            FittedKind::Pert(p) => (p.min, p.max),
            FittedKind::PointMass(v) => (*v, *v),
        }
    }

    /// Draws one value. Deterministic for a given rng state; a point mass
    /// returns its value without consuming randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            FittedKind::PointMass(v) => *v,
            FittedKind::Beta(b) => rand_distr::Beta::new(b.alpha, b.beta)
                .expect("fitted beta shapes are positive")
                .sample(rng),
            FittedKind::Pert(p) => {
                let shape = p.shape();
                let unit = rand_distr::Beta::new(shape.alpha, shape.beta)
                    .expect("fitted PERT shapes are positive")
                    .sample(rng);
                p.min + (p.max - p.min) * unit
            }
        }
    }
}

/// Dispatches to the right family for a factor kind.
pub fn fit_elicitation(
    elicitation: &QuantileElicitation,
    kind: FactorKind,
) -> Result<FittedDistribution, FitError> {
    match kind {
        FactorKind::Probability => fit_beta(elicitation),
        FactorKind::Quantity => fit_pert(elicitation),
    }
}

/// Statistical family of a factor: probabilities get betas, quantities PERTs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Probability,
    Quantity,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn quantile_levels_are_symmetric() {
        let (lo, hi) = quantile_levels(0.9).unwrap();
        assert!((lo - 0.05).abs() < 1e-12 && (hi - 0.95).abs() < 1e-12);
        assert_eq!(quantile_levels(0.5).unwrap(), (0.25, 0.75));
        let (lo, hi) = quantile_levels(0.99).unwrap();
        assert!((lo - 0.005).abs() < 1e-12 && (hi - 0.995).abs() < 1e-12);
    }

    #[test]
    fn quantile_levels_reject_out_of_range() {
        assert!(quantile_levels(0.0).is_err());
        assert!(quantile_levels(1.0).is_err());
        assert!(quantile_levels(-0.2).is_err());
    }

    #[test]
    fn pert_mean_formula() {
        let p = PertParams { min: 0.001, mode: 3.0, max: 6.0 };
        assert!((pert_mean(&p) - 18.001 / 6.0).abs() < 1e-12);
        let p = PertParams { min: 5.0, mode: 10.0, max: 20.0 };
        assert!((pert_mean(&p) - 65.0 / 6.0).abs() < 1e-12);
        let p = PertParams { min: 7.5, mode: 7.5, max: 7.5 };
        assert_eq!(pert_mean(&p), 7.5);
    }

    #[test]
    fn symmetric_elicitation_gives_equal_shapes() {
        let e = QuantileElicitation::new(0.5, 0.2, 0.8, 0.9);
        let fit = fit_beta(&e).unwrap();
        match fit.kind {
            FittedKind::Beta(b) => assert!((b.alpha - b.beta).abs() < 1e-6),
            other => panic!("expected beta fit, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_probability_becomes_point_mass() {
        let e = QuantileElicitation::new(0.3, 0.3, 0.3, 0.9);
        let fit = fit_beta(&e).unwrap();
        assert_eq!(fit.kind, FittedKind::PointMass(0.3));
        assert_eq!(fit.fit_residual, 0.0);
    }

    #[test]
    fn degenerate_quantity_becomes_point_mass() {
        let e = QuantileElicitation::new(100.0, 100.0, 100.0, 0.9);
        let fit = fit_pert(&e).unwrap();
        assert_eq!(fit.kind, FittedKind::PointMass(100.0));
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let e = QuantileElicitation::new(0.5, 0.8, 0.2, 0.9);
        assert!(matches!(fit_beta(&e), Err(FitError::InvalidElicitation(_))));
    }

    #[test]
    fn best_guess_outside_bounds_is_rejected() {
        let e = QuantileElicitation::new(0.9, 0.2, 0.8, 0.9);
        assert!(fit_beta(&e).is_err());
    }

    #[test]
    fn negative_quantity_is_rejected() {
        let e = QuantileElicitation::new(5.0, -1.0, 10.0, 0.9);
        assert!(fit_pert(&e).is_err());
    }

    #[test]
    fn boundary_mode_zero_fits() {
        let e = QuantileElicitation::new(0.0, 0.0, 0.4, 0.9);
        let fit = fit_beta(&e).unwrap();
        match fit.kind {
            FittedKind::Beta(b) => {
                assert!((b.alpha - 1.0).abs() < 1e-12);
                assert!(b.beta > 1.0);
            }
            other => panic!("expected beta fit, got {other:?}"),
        }
    }

    #[test]
    fn fitted_quantiles_reproduce_interval_within_residual() {
        let e = QuantileElicitation::new(0.6, 0.25, 0.9, 0.9);
        let fit = fit_beta(&e).unwrap();
        let (lo, hi) = quantile_levels(0.9).unwrap();
        let err = (fit.quantile(lo) - 0.25).powi(2) + (fit.quantile(hi) - 0.9).powi(2);
        assert!(err <= fit.fit_residual + 1e-12);
    }

    #[test]
    fn pert_fit_mean_stays_inside_support() {
        let e = QuantileElicitation::new(200.0, 75.0, 500.0, 0.9);
        let fit = fit_pert(&e).unwrap();
        match fit.kind {
            FittedKind::Pert(p) => {
                let mu = pert_mean(&p);
                assert!(p.min <= mu && mu <= p.max);
                assert!(p.min > 0.0);
                assert!((p.min <= p.mode) && (p.mode <= p.max));
            }
            other => panic!("expected PERT fit, got {other:?}"),
        }
    }

    #[test]
    fn point_mass_samples_exactly() {
        let fit = FittedDistribution { kind: FittedKind::PointMass(7.0), fit_residual: 0.0 };
        for seed in [0u64, 1, 42] {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            assert_eq!(fit.sample(&mut rng), 7.0);
        }
    }

    #[test]
    fn pert_draws_stay_in_support() {
        let fit = FittedDistribution {
            kind: FittedKind::Pert(PertParams { min: 5.0, mode: 10.0, max: 20.0 }),
            fit_residual: 0.0,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let v = fit.sample(&mut rng);
            assert!((5.0..=20.0).contains(&v));
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let fit = FittedDistribution {
            kind: FittedKind::Beta(BetaParams { alpha: 2.0, beta: 5.0 }),
            fit_residual: 0.0,
        };
        let draw = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..100).map(|_| fit.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(99), draw(99));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quantile_inverts_cdf(
            alpha in 0.5f64..20.0,
            beta in 0.5f64..20.0,
            p in 0.001f64..0.999,
        ) {
            let fit = FittedDistribution {
                kind: FittedKind::Beta(BetaParams { alpha, beta }),
                fit_residual: 0.0,
            };
            let q = fit.quantile(p);
            prop_assert!((fit.cdf(q) - p).abs() < 1e-9);
        }

        #[test]
        fn cdf_is_nondecreasing(
            alpha in 0.5f64..20.0,
            beta in 0.5f64..20.0,
            x in 0.0f64..1.0,
            dx in 0.0f64..0.5,
        ) {
            let fit = FittedDistribution {
                kind: FittedKind::Beta(BetaParams { alpha, beta }),
                fit_residual: 0.0,
            };
            prop_assert!(fit.cdf((x + dx).min(1.0)) >= fit.cdf(x));
        }
    }
}
