//! Shared oracles and fixture loaders for the integration tests.
//!
//! Everything here is implemented independently of the library code paths
//! it checks: the incomplete beta uses its own Lanczos log-gamma and Lentz
//! continued fraction, quantiles come from plain bisection, the Shapley
//! oracle enumerates permutations, and the delta oracle works on discrete
//! empirical distributions.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use riskcast::elicitation::EstimateSet;
use riskcast::kri::{Benchmark, Evidence};
use riskcast::riskmodel::Scenario;

// ---------------------------------------------------------------------
// Independent incomplete-beta oracle
// ---------------------------------------------------------------------

/// Lanczos approximation (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 3e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn oracle_beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Beta quantile by bisection on the oracle CDF.
pub fn oracle_beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_beta_cdf(a, b, mid) < p {
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

/// Mode of a beta distribution with interior mode (a, b > 1).
pub fn beta_mode(a: f64, b: f64) -> f64 {
    (a - 1.0) / (a + b - 2.0)
}

/// PERT quantile via the equivalent rescaled beta.
pub fn oracle_pert_quantile(min: f64, mode: f64, max: f64, p: f64) -> f64 {
    let range = max - min;
    let a = 1.0 + 4.0 * (mode - min) / range;
    let b = 1.0 + 4.0 * (max - mode) / range;
    min + range * oracle_beta_quantile(a, b, p)
}

// ---------------------------------------------------------------------
// Permutation-sum Shapley oracle
// ---------------------------------------------------------------------

/// Shapley values of the log total gain by explicit enumeration of all
/// n! coalition orders.
pub fn permutation_shapley(baseline: &[f64], uplifted: &[f64]) -> Vec<f64> {
    let n = baseline.len();
    assert_eq!(n, uplifted.len());
    let coalition_value = |members: &[bool]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            acc += if members[i] { uplifted[i].ln() } else { baseline[i].ln() };
        }
        acc
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = vec![0.0f64; n];
    let mut count = 0u64;
    // Heap's algorithm over all permutations.
    let mut stack = vec![0usize; n];
    let visit = |order: &[usize], totals: &mut Vec<f64>| {
        let mut members = vec![false; n];
        let mut prev = coalition_value(&members);
        for &i in order {
            members[i] = true;
            let next = coalition_value(&members);
            totals[i] += next - prev;
            prev = next;
        }
    };
    visit(&order, &mut totals);
    count += 1;
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(stack[i], i);
            }
            visit(&order, &mut totals);
            count += 1;
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    totals.iter().map(|t| t / count as f64).collect()
}

// ---------------------------------------------------------------------
// Discrete delta oracle
// ---------------------------------------------------------------------

fn discrete_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() <= n_bins {
        // One bin per distinct value.
        return values
            .iter()
            .map(|v| distinct.iter().position(|d| d == v).unwrap())
            .collect();
    }
    // Equal-count bins by sorted position.
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut bins = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        bins[idx] = (pos * n_bins / n).min(n_bins - 1);
    }
    bins
}

/// Borgonovo delta computed exactly on discretized empirical distributions:
/// half the expected L1 distance between the marginal pmf of the binned
/// output and its conditional pmfs given each factor bin.
pub fn discrete_delta(x: &[f64], y: &[f64], n_bins: usize) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let xb = discrete_bins(x, n_bins);
    let yb = discrete_bins(y, n_bins);
    let x_levels = xb.iter().max().unwrap() + 1;
    let y_levels = yb.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0.0f64; y_levels]; x_levels];
    let mut x_marg = vec![0.0f64; x_levels];
    let mut y_marg = vec![0.0f64; y_levels];
    for i in 0..n {
        joint[xb[i]][yb[i]] += 1.0;
        x_marg[xb[i]] += 1.0;
        y_marg[yb[i]] += 1.0;
    }
    let n = n as f64;
    let mut delta = 0.0;
    for bx in 0..x_levels {
        if x_marg[bx] == 0.0 {
            continue;
        }
        let w = x_marg[bx] / n;
        let mut l1 = 0.0;
        for by in 0..y_levels {
            let conditional = joint[bx][by] / x_marg[bx];
            let marginal = y_marg[by] / n;
            l1 += (marginal - conditional).abs();
        }
        delta += w * l1;
    }
    0.5 * delta
}

// ---------------------------------------------------------------------
// Bernoulli chain enumeration oracle
// ---------------------------------------------------------------------

/// P(all steps succeed) by exhaustive enumeration of all 2^n outcome
/// tuples of independent Bernoulli steps.
pub fn enumerate_chain_success(probs: &[f64]) -> f64 {
    let n = probs.len();
    assert!(n <= 20, "enumeration oracle limited to 2^20 outcomes");
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let mut p_outcome = 1.0;
        let mut all_success = true;
        for (i, prob) in probs.iter().enumerate() {
            if mask & (1 << i) != 0 {
                p_outcome *= prob;
            } else {
                p_outcome *= 1.0 - prob;
                all_success = false;
            }
        }
        if all_success {
            total += p_outcome;
        }
    }
    total
}

// ---------------------------------------------------------------------
// Fixture loading
// ---------------------------------------------------------------------

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    let file = File::open(fixture_path(name)).expect("scenario fixture");
    serde_json::from_reader(BufReader::new(file)).expect("scenario parses")
}

pub fn load_estimates(name: &str) -> EstimateSet {
    let file = File::open(fixture_path(name)).expect("estimate fixture");
    serde_json::from_reader(BufReader::new(file)).expect("estimates parse")
}

pub fn load_benchmark(name: &str) -> Benchmark {
    let file = File::open(fixture_path(name)).expect("benchmark fixture");
    serde_json::from_reader(BufReader::new(file)).expect("benchmark parses")
}

/// The OC3 SME scenario with its uplift estimates merged over the shared
/// baseline records.
pub fn sme_scenario_and_estimates() -> (Scenario, EstimateSet) {
    let scenario = load_scenario("oc3_sme_ransomware.scenario.json");
    let baseline = load_estimates("oc3_sme_baseline.estimates.json");
    let uplift = load_estimates("oc3_sme_uplift_llm.estimates.json");
    (scenario, uplift.merged_with_baseline(&baseline))
}

/// Evidence pair for the current-capability setting of the bundled
/// fixtures: `paddle` on BountyBench, `Labyrinth Linguist` on Cybench.
pub fn sota_evidence() -> Vec<Evidence> {
    vec![
        Evidence { benchmark_id: "bountybench".into(), level: "paddle".into() },
        Evidence { benchmark_id: "cybench".into(), level: "Labyrinth Linguist".into() },
    ]
}

/// Evidence pair for the benchmark-saturating setting.
pub fn saturated_evidence() -> Vec<Evidence> {
    vec![
        Evidence { benchmark_id: "bountybench".into(), level: "pytorch".into() },
        Evidence { benchmark_id: "cybench".into(), level: "Randsubware".into() },
    ]
}
