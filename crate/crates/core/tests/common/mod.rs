#![allow(dead_code)]

use qobs::design::{self, GainPair};
use qobs::numerics::{Matrix, Vector};
use qobs::plant::{check_assumptions, discretize, ContinuousPlant, DiscretePlant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.gen_range(-scale..=scale))
}

/// A sampled plant with `n <= 4` that is stabilizable and detectable, and
/// observable when `observable` is set.
pub fn random_plant(rng: &mut ChaCha8Rng, observable: bool) -> (ContinuousPlant, DiscretePlant) {
    loop {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=2.min(n));
        let p = rng.gen_range(1..=2.min(n));
        let a = random_matrix(rng, n, n, 1.5);
        let b = random_matrix(rng, n, m, 1.0);
        let c = random_matrix(rng, p, n, 1.0);
        let cp = ContinuousPlant::new(a, b, c).unwrap();
        let h = rng.gen_range(0.05..0.3);
        let Ok(dp) = discretize(&cp, h) else { continue };
        let Ok(report) = check_assumptions(&dp) else { continue };
        if report.stabilizable && report.detectable && (!observable || report.observable) {
            return (cp, dp);
        }
    }
}

/// Discrete LQR with identity weights and a Kalman observer with identity
/// covariances.
pub fn standard_gains(dp: &DiscretePlant) -> GainPair {
    let (n, m, p) = (dp.n(), dp.m(), dp.p());
    let k = design::lqr_gain(dp, &Matrix::identity(n, n), &Matrix::identity(m, m)).unwrap();
    let l = design::kalman_gain(dp, &Matrix::identity(n, n), &Matrix::identity(p, p)).unwrap();
    GainPair::new(dp, k, l).unwrap()
}

/// `max(|a - b| / max(|a|, |b|, tiny))`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() / scale
}

/// `E_{k+1} = M0 E_st rho^{k+1} + M sum_{l<=k} rho^l mu_{k-l}`.
pub fn general_sum(m0: f64, m: f64, rho: f64, e_st: f64, n: f64, e: &[f64], k: usize) -> f64 {
    let mu = |j: usize| e[j] / n;
    m0 * e_st * rho.powi(k as i32 + 1) + m * (0..=k).map(|l| rho.powi(l as i32) * mu(k - l)).sum::<f64>()
}

/// `E_{k+1} = |C R^{k+1}| E_st + sum_{l<=k} |C R^l L| mu_{k-l}`, with both
/// norm sequences zero from `eta` on.
pub fn deadbeat_sum(output_norms: &[f64], gain_norms: &[f64], e_st: f64, n: f64, e: &[f64], k: usize) -> f64 {
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    at(output_norms, k + 1) * e_st + (0..=k).map(|l| at(gain_norms, l) * e[k - l] / n).sum::<f64>()
}

pub struct FullParams {
    pub m: [f64; 5],
    pub rho: f64,
    pub rho_bar: f64,
    pub n: f64,
    pub n1: f64,
    pub n2: f64,
    pub e_st: f64,
}

/// Output bound: `M0 E_st rho^{k+1} + sum_l c rho^l mu_{k-l}
/// + M sum_l sum_i rho^{l+i} mu_{k-l-i-1}` with `c = M4 + (N-1) M1 / N1`.
pub fn full_output_sum(p: &FullParams, e: &[f64], k: usize) -> f64 {
    let [m0, m1, m2, m3, m4] = p.m;
    let big_m = (p.n - 1.0) * (m1 * m4 / p.n1 + m2 * m3 / p.n2);
    let c = m4 + (p.n - 1.0) * m1 / p.n1;
    let mu = |j: usize| e[j] / p.n;
    let mut s = m0 * p.e_st * p.rho.powi(k as i32 + 1);
    for l in 0..=k {
        s += c * p.rho.powi(l as i32) * mu(k - l);
    }
    for l in 0..k {
        for i in 0..(k - l) {
            s += big_m * p.rho.powi((l + i) as i32) * mu(k - l - i - 1);
        }
    }
    s
}

/// Input bound: `E_{i,k} = ((N-1) M_i / N) sum_{l<k} rho_bar^l E_{k-l-1}`.
pub fn full_input_sum(p: &FullParams, mi: f64, e: &[f64], k: usize) -> f64 {
    (p.n - 1.0) * mi / p.n * (0..k).map(|l| p.rho_bar.powi(l as i32) * e[k - l - 1]).sum::<f64>()
}

/// An observable discrete-time plant with `n <= 4` and `A_d` drawn
/// directly, entries in `[-1, 1]`.
pub fn random_discrete_plant(rng: &mut ChaCha8Rng) -> DiscretePlant {
    loop {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=2.min(n));
        let p = rng.gen_range(1..=2.min(n));
        let Ok(dp) = DiscretePlant::new(
            random_matrix(rng, n, n, 1.0),
            random_matrix(rng, n, m, 1.0),
            random_matrix(rng, p, n, 1.0),
            rng.gen_range(0.05..0.3),
        ) else {
            continue;
        };
        let Ok(report) = check_assumptions(&dp) else { continue };
        if report.observable && report.stabilizable {
            return dp;
        }
    }
}

/// Two-output pendulum at `h = 0.03`: continuous LQR with
/// `Q = diag(100, 0, 300, 0)`, `R = 1`, and a Kalman observer with process
/// noise `1e-3` entering through the input and `V = 1e-5 I`.
pub fn pendulum_setup() -> (ContinuousPlant, DiscretePlant, GainPair) {
    let cp = qobs::plant::inverted_pendulum_two_output();
    let dp = discretize(&cp, 0.03).unwrap();
    let q = Matrix::from_diagonal(&Vector::from_vec(vec![100.0, 0.0, 300.0, 0.0]));
    let k = design::lqr_gain_continuous(&cp, &q, &Matrix::identity(1, 1)).unwrap();
    let w = design::input_process_noise(&dp, 1e-3);
    let l = design::kalman_gain(&dp, &w, &(Matrix::identity(2, 2) * 1e-5)).unwrap();
    let gains = GainPair::new(&dp, k, l).unwrap();
    (cp, dp, gains)
}

/// Checks the runtime bounds of every recorded step: `|y - yhat| <= E`
/// for the output-only protocols, and `|y - Q1(yhat)| <= E`,
/// `|yhat| <= E1`, `|u| <= E2` for the full protocol. On steps where the
/// output quantizer sat at its resolution floor, the floor replaces `E`.
pub fn bound_violation(outcome: &qobs::simulator::SimOutcome) -> Option<String> {
    use qobs::numerics::vec_max_norm;
    use qobs::schedule::Variant;
    let within = |v: f64, bound: f64| v <= bound * (1.0 + 1e-9) + 1e-300;
    for r in &outcome.trace {
        let b = r.bounds;
        let ok = match outcome.variant {
            Variant::Full => {
                within(vec_max_norm(&(&r.y - &r.q1_yhat)), b.e.max(r.resolution))
                    && within(vec_max_norm(&r.yhat), b.e1)
                    && within(vec_max_norm(&r.u), b.e2)
            }
            _ => within(vec_max_norm(&(&r.y - &r.yhat)), b.e.max(r.resolution)),
        };
        if !ok {
            return Some(format!("bound violated at k = {}", r.k));
        }
    }
    None
}
