//! Decay certificates, bound-sequence recursions and data-rate searches.
//!
//! Three bound laws are supported:
//!
//! * `General`: any Schur observer, one decay pair `(M0, M)` at rate `rho`,
//!   first-order recursion `E_{k+1} = (rho + M/N) E_k`.
//! * `Deadbeat`: nilpotent observer error, finite-window recursion driven by
//!   `|C R^l L| / N` for `l < eta`.
//! * `Full`: output, estimate and input all quantized; second-order
//!   recursion for `E_k` plus first-order filters for `E1_k`, `E2_k`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::design::{self, GainPair, NILPOTENCY_TOL};
use crate::error::{Error, Result};
use crate::numerics::{self, induced_max_norm, matrix_power, Matrix};
use crate::plant::DiscretePlant;

/// Search cap for the contraction horizon `L*`.
pub const MAX_CONTRACTION_HORIZON: usize = 10_000;
/// Search cap for the tail-certification horizon.
pub const MAX_TAIL_HORIZON: usize = 100_000;
/// Upper bound on each level in the full-protocol grid search.
pub const MAX_LEVEL: u64 = 1 << 16;

/// Distances, as fractions of `1 - r`, at which the sweep places `rho`.
pub const SWEEP_FRACTIONS: [f64; 10] = [0.5, 0.3, 0.2, 0.1, 0.05, 0.03, 0.02, 0.01, 0.005, 0.002];

/// `|P R^l S| <= m * rho^l` for every `l >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayCertificate {
    pub m: f64,
    pub rho: f64,
    /// Smallest `L*` with `|R^{L*}| <= rho^{L*}`.
    pub l_star: usize,
    /// Number of leading terms scanned before the tail bound closed.
    pub horizon: usize,
}

/// Certifies `|P R^l S| <= M rho^l` for all `l`.
///
/// With `L*` such that `|R^{L*}| <= rho^{L*}` and
/// `c_S = max_{r < L*} |R^r S| / rho^r`, every `l = H + q L* + r` obeys
/// `|P R^l S| / rho^l <= (|P R^H| / rho^H) * c_S`. Terms are scanned until
/// that tail bound drops below the running maximum, so the returned `M` is
/// the exact supremum.
pub fn decay_certificate(p: &Matrix, r: &Matrix, s: &Matrix, rho: f64) -> Result<DecayCertificate> {
    let n = numerics::ensure_square(r, "R")?;
    if p.ncols() != n || s.nrows() != n {
        return Err(Error::Dimension(format!(
            "P R^l S needs P with {n} columns and S with {n} rows"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Argument(format!("rho must lie in (0, 1), got {rho}")));
    }
    let radius = numerics::spectral_radius(r)?;
    if rho <= radius {
        return Err(Error::InfeasibleRate { rho, radius });
    }

    // powers of R / rho
    let r_scaled = r / rho;
    let mut power = r_scaled.clone();
    let mut l_star = 1;
    while induced_max_norm(&power) > 1.0 {
        if l_star >= MAX_CONTRACTION_HORIZON {
            return Err(Error::Conditioning(format!(
                "|R^l| stays above rho^l for l <= {MAX_CONTRACTION_HORIZON} (rho = {rho}, radius = {radius})"
            )));
        }
        power = &power * &r_scaled;
        l_star += 1;
    }

    let mut c_s = 0.0f64;
    let mut rs = s.clone();
    for _ in 0..l_star {
        c_s = c_s.max(induced_max_norm(&rs));
        rs = &r_scaled * rs;
    }

    let mut m = 0.0f64;
    let mut pr = p.clone();
    for horizon in 0..MAX_TAIL_HORIZON {
        let tail = induced_max_norm(&pr) * c_s;
        if horizon > 0 && tail <= m {
            return Ok(DecayCertificate {
                m,
                rho,
                l_star,
                horizon,
            });
        }
        m = m.max(induced_max_norm(&(&pr * s)));
        pr *= &r_scaled;
    }
    Err(Error::Conditioning(format!(
        "tail bound did not close within {MAX_TAIL_HORIZON} terms"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    General,
    Deadbeat,
    Full,
}

/// Quantization levels. `n1`, `n2` only matter for the full protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Levels {
    pub n: u64,
    pub n1: u64,
    pub n2: u64,
}

impl Levels {
    pub fn output_only(n: u64) -> Self {
        Self { n, n1: 2, n2: 2 }
    }

    pub fn full(n: u64, n1: u64, n2: u64) -> Self {
        Self { n, n1, n2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralConstants {
    pub m0: f64,
    pub m: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadbeatConstants {
    /// `|C R^k|` for `k = 0..eta`.
    pub output_norms: Vec<f64>,
    /// `|C R^l L|` for `l = 0..eta`.
    pub gain_norms: Vec<f64>,
}

impl DeadbeatConstants {
    pub fn eta(&self) -> usize {
        self.gain_norms.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullConstants {
    /// `|C R^l| <= m0 rho^l`
    pub m0: f64,
    /// `|C Rbar^l L| <= m1 rho_bar^l`
    pub m1: f64,
    /// `|K Rbar^l L| <= m2 rho_bar^l`
    pub m2: f64,
    /// `|C R^l B_d| <= m3 rho^l`
    pub m3: f64,
    /// `|C R^l L| <= m4 rho^l`
    pub m4: f64,
    pub rho: f64,
    pub rho_bar: f64,
}

/// Derived coefficients of the full-protocol recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullCoefficients {
    pub m: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// `M4 + (N - 1) M1 / N1`, the weight of `mu_k` in the output bound.
    pub direct: f64,
}

impl FullConstants {
    pub fn coefficients(&self, levels: Levels) -> FullCoefficients {
        let (n, n1, n2) = (levels.n as f64, levels.n1 as f64, levels.n2 as f64);
        let m = (n - 1.0) * (self.m1 * self.m4 / n1 + self.m2 * self.m3 / n2);
        let beta0 = self.rho + (n1 * self.m4 + (n - 1.0) * self.m1) / (n * n1);
        let beta1 = m / n;
        FullCoefficients {
            m,
            beta0,
            beta1,
            alpha0: self.rho + beta0,
            alpha1: beta1 - self.rho * beta0,
            direct: self.m4 + (n - 1.0) * self.m1 / n1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BoundLaw {
    General(GeneralConstants),
    Deadbeat(DeadbeatConstants),
    Full(FullConstants),
}

impl BoundLaw {
    pub fn variant(&self) -> Variant {
        match self {
            BoundLaw::General(_) => Variant::General,
            BoundLaw::Deadbeat(_) => Variant::Deadbeat,
            BoundLaw::Full(_) => Variant::Full,
        }
    }

    /// Companion matrix whose spectral radius governs the decay of `mu_k`.
    pub fn companion(&self, levels: Levels) -> Matrix {
        let n = levels.n as f64;
        match self {
            BoundLaw::General(c) => Matrix::from_element(1, 1, c.rho + c.m / n),
            BoundLaw::Deadbeat(c) => {
                let eta = c.eta();
                let mut f = Matrix::zeros(eta, eta);
                for (l, g) in c.gain_norms.iter().enumerate() {
                    f[(0, l)] = g / n;
                }
                for i in 1..eta {
                    f[(i, i - 1)] = 1.0;
                }
                f
            }
            BoundLaw::Full(c) => {
                let k = c.coefficients(levels);
                Matrix::from_row_slice(2, 2, &[k.alpha0, k.alpha1, 1.0, 0.0])
            }
        }
    }

    pub fn companion_radius(&self, levels: Levels) -> Result<f64> {
        match self {
            BoundLaw::Full(c) => {
                let k = c.coefficients(levels);
                Ok(quadratic_companion_radius(k.alpha0, k.alpha1))
            }
            _ => numerics::spectral_radius(&self.companion(levels)),
        }
    }
}

/// Largest root modulus of `z^2 - a0 z - a1`.
pub fn quadratic_companion_radius(a0: f64, a1: f64) -> f64 {
    let disc = a0 * a0 + 4.0 * a1;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((a0 + s) / 2.0).abs().max(((a0 - s) / 2.0).abs())
    } else {
        (-a1).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub e: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Online form of a bound law. Encoder and decoder each run one of these
/// from the same constants; no bound value is ever transmitted.
#[derive(Debug, Clone)]
pub struct BoundRecursion {
    law: BoundLaw,
    levels: Levels,
    e_st: f64,
    history: Vec<f64>,
    e1: f64,
    e2: f64,
}

impl BoundRecursion {
    pub fn new(law: BoundLaw, levels: Levels, c_norm: f64, e_st: f64) -> Self {
        Self {
            law,
            levels,
            e_st,
            history: vec![c_norm * e_st],
            e1: 0.0,
            e2: 0.0,
        }
    }

    /// Index of the current step.
    pub fn step(&self) -> usize {
        self.history.len() - 1
    }

    pub fn current(&self) -> Bounds {
        Bounds {
            e: *self.history.last().expect("history starts non-empty"),
            e1: self.e1,
            e2: self.e2,
        }
    }

    pub fn advance(&mut self) {
        let k = self.step();
        let e = &self.history;
        let n = self.levels.n as f64;
        let next = match &self.law {
            BoundLaw::General(c) => {
                if k == 0 {
                    c.m0 * self.e_st * c.rho + c.m / n * e[0]
                } else {
                    (c.rho + c.m / n) * e[k]
                }
            }
            BoundLaw::Deadbeat(c) => {
                let eta = c.eta();
                let free = if k + 1 < eta {
                    c.output_norms[k + 1] * self.e_st
                } else {
                    0.0
                };
                let window = (k + 1).min(eta);
                free + (0..window).map(|l| c.gain_norms[l] / n * e[k - l]).sum::<f64>()
            }
            BoundLaw::Full(c) => {
                let co = c.coefficients(self.levels);
                match k {
                    0 => c.m0 * self.e_st * c.rho + co.direct * e[0] / n,
                    1 => co.beta0 * e[1] + co.beta1 * e[0],
                    _ => co.alpha0 * e[k] + co.alpha1 * e[k - 1],
                }
            }
        };
        if let BoundLaw::Full(c) = &self.law {
            let w = (n - 1.0) / n * e[k];
            self.e1 = c.rho_bar * self.e1 + c.m1 * w;
            self.e2 = c.rho_bar * self.e2 + c.m2 * w;
        }
        self.history.push(next);
    }
}

/// A bound law unrolled over `0..=k_max`, with its data-rate verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSchedule {
    pub law: BoundLaw,
    pub levels: Levels,
    pub c_norm: f64,
    pub e_st: f64,
    pub e: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub companion: Matrix,
    pub radius: f64,
    pub contractive: bool,
}

impl BoundSchedule {
    pub fn build(law: BoundLaw, levels: Levels, c_norm: f64, e_st: f64, k_max: usize) -> Result<Self> {
        check_levels(levels, law.variant())?;
        if !(e_st > 0.0 && e_st.is_finite()) {
            return Err(Error::Argument(format!("E_st must be positive, got {e_st}")));
        }
        let companion = law.companion(levels);
        let radius = law.companion_radius(levels)?;
        let contractive = match &law {
            BoundLaw::General(c) => c.m / (1.0 - c.rho) < levels.n as f64,
            _ => radius < 1.0,
        };
        let mut rec = BoundRecursion::new(law.clone(), levels, c_norm, e_st);
        let (mut e, mut e1, mut e2) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..=k_max {
            let b = rec.current();
            e.push(b.e);
            e1.push(b.e1);
            e2.push(b.e2);
            if k < k_max {
                rec.advance();
            }
        }
        Ok(Self {
            law,
            levels,
            c_norm,
            e_st,
            e,
            e1,
            e2,
            companion,
            radius,
            contractive,
        })
    }

    pub fn variant(&self) -> Variant {
        self.law.variant()
    }

    pub fn k_max(&self) -> usize {
        self.e.len() - 1
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.e[k] / self.levels.n as f64
    }

    pub fn recursion(&self) -> BoundRecursion {
        BoundRecursion::new(self.law.clone(), self.levels, self.c_norm, self.e_st)
    }

    /// Geometric decay rate fitted by least squares to `ln E_k` over
    /// `k in [from, k_max]` (non-positive entries skipped).
    pub fn fitted_ratio(&self, from: usize) -> Option<f64> {
        fitted_decay_ratio(&self.e[from.min(self.e.len())..])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,E_k,E1_k,E2_k,mu_k\n");
        for k in 0..self.e.len() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{}",
                self.e[k],
                self.e1[k],
                self.e2[k],
                self.mu(k)
            );
        }
        out
    }
}

/// Least-squares slope of `ln v_k`, exponentiated.
pub fn fitted_decay_ratio(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(k, &v)| (k as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

fn check_levels(levels: Levels, variant: Variant) -> Result<()> {
    if levels.n < 2 {
        return Err(Error::Argument(format!("N must be >= 2, got {}", levels.n)));
    }
    if variant == Variant::Full && (levels.n1 < 2 || levels.n2 < 2) {
        return Err(Error::Argument(format!(
            "N1 and N2 must be >= 2, got {} and {}",
            levels.n1, levels.n2
        )));
    }
    Ok(())
}

/// Output-only schedule for a general Schur observer.
pub fn bound_sequence_general(
    cert0: &DecayCertificate,
    cert: &DecayCertificate,
    c_norm: f64,
    e_st: f64,
    n: u64,
    k_max: usize,
) -> Result<BoundSchedule> {
    if cert0.rho != cert.rho {
        return Err(Error::Precondition(format!(
            "certificates use different rates {} and {}",
            cert0.rho, cert.rho
        )));
    }
    let law = BoundLaw::General(GeneralConstants {
        m0: cert0.m,
        m: cert.m,
        rho: cert.rho,
    });
    BoundSchedule::build(law, Levels::output_only(n), c_norm, e_st, k_max)
}

/// Norms `|C R^k|` and `|C R^l L|` for a deadbeat gain, after checking
/// `R^eta = 0`.
pub fn deadbeat_constants(dp: &DiscretePlant, l: &Matrix) -> Result<DeadbeatConstants> {
    let eta = design::observability_index(dp)?;
    let r = &dp.ad - l * &dp.c;
    let residual = induced_max_norm(&matrix_power(&r, eta));
    if residual > NILPOTENCY_TOL * induced_max_norm(&dp.ad).powi(eta as i32) {
        return Err(Error::Precondition(format!(
            "(A_d - LC)^{eta} is not zero (norm {residual:e})"
        )));
    }
    let mut output_norms = Vec::with_capacity(eta);
    let mut gain_norms = Vec::with_capacity(eta);
    let mut cr = dp.c.clone();
    for _ in 0..eta {
        output_norms.push(induced_max_norm(&cr));
        gain_norms.push(induced_max_norm(&(&cr * l)));
        cr *= &r;
    }
    Ok(DeadbeatConstants {
        output_norms,
        gain_norms,
    })
}

pub fn bound_sequence_deadbeat(
    dp: &DiscretePlant,
    l: &Matrix,
    n: u64,
    e_st: f64,
    k_max: usize,
) -> Result<BoundSchedule> {
    let consts = deadbeat_constants(dp, l)?;
    let c_norm = induced_max_norm(&dp.c);
    BoundSchedule::build(BoundLaw::Deadbeat(consts), Levels::output_only(n), c_norm, e_st, k_max)
}

pub fn bound_sequence_full(
    consts: &FullConstants,
    c_norm: f64,
    e_st: f64,
    levels: Levels,
    k_max: usize,
) -> Result<BoundSchedule> {
    if consts.rho_bar > consts.rho {
        return Err(Error::Precondition(format!(
            "rho_bar = {} exceeds rho = {}",
            consts.rho_bar, consts.rho
        )));
    }
    BoundSchedule::build(BoundLaw::Full(*consts), levels, c_norm, e_st, k_max)
}

/// Certificates `(C, R, I)` and `(C, R, L)` at a common rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralCertificates {
    pub output: DecayCertificate,
    pub gain: DecayCertificate,
}

impl GeneralCertificates {
    pub fn compute(dp: &DiscretePlant, gains: &GainPair, rho: f64) -> Result<Self> {
        let eye = Matrix::identity(dp.n(), dp.n());
        Ok(Self {
            output: decay_certificate(&dp.c, &gains.r, &eye, rho)?,
            gain: decay_certificate(&dp.c, &gains.r, &gains.l, rho)?,
        })
    }

    pub fn constants(&self) -> GeneralConstants {
        GeneralConstants {
            m0: self.output.m,
            m: self.gain.m,
            rho: self.gain.rho,
        }
    }
}

/// The five certificates of the full protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullCertificates {
    pub c_r: DecayCertificate,
    pub c_rbar_l: DecayCertificate,
    pub k_rbar_l: DecayCertificate,
    pub c_r_bd: DecayCertificate,
    pub c_r_l: DecayCertificate,
}

impl FullCertificates {
    pub fn compute(dp: &DiscretePlant, gains: &GainPair, rho: f64, rho_bar: f64) -> Result<Self> {
        if rho_bar > rho {
            return Err(Error::Precondition(format!(
                "rho_bar = {rho_bar} exceeds rho = {rho}"
            )));
        }
        let eye = Matrix::identity(dp.n(), dp.n());
        Ok(Self {
            c_r: decay_certificate(&dp.c, &gains.r, &eye, rho)?,
            c_rbar_l: decay_certificate(&dp.c, &gains.rbar, &gains.l, rho_bar)?,
            k_rbar_l: decay_certificate(&gains.k, &gains.rbar, &gains.l, rho_bar)?,
            c_r_bd: decay_certificate(&dp.c, &gains.r, &dp.bd, rho)?,
            c_r_l: decay_certificate(&dp.c, &gains.r, &gains.l, rho)?,
        })
    }

    pub fn constants(&self) -> FullConstants {
        FullConstants {
            m0: self.c_r.m,
            m1: self.c_rbar_l.m,
            m2: self.k_rbar_l.m,
            m3: self.c_r_bd.m,
            m4: self.c_r_l.m,
            rho: self.c_r.rho,
            rho_bar: self.c_rbar_l.rho,
        }
    }

    pub fn all(&self) -> [DecayCertificate; 5] {
        [self.c_r, self.c_rbar_l, self.k_rbar_l, self.c_r_bd, self.c_r_l]
    }
}

/// How the decay rates are picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoChoice {
    /// `rho = (1 + r(R)) / 2`, `rho_bar = (1 + r(Rbar)) / 2`, then
    /// `rho = max(rho, rho_bar)`.
    Midpoint,
    /// Try every point of [`SWEEP_FRACTIONS`] and keep the best outcome.
    Sweep,
    /// Caller-supplied rates; `rho_bar` defaults to `rho`.
    Fixed { rho: f64, rho_bar: Option<f64> },
}

/// Candidate `(rho, rho_bar)` pairs for the given spectral radii of `R`
/// and `Rbar`.
pub fn rho_candidates(choice: RhoChoice, r_radius: f64, rbar_radius: f64) -> Vec<(f64, f64)> {
    let pair = |f: f64| {
        let rho_bar = rbar_radius + f * (1.0 - rbar_radius);
        let rho = (r_radius + f * (1.0 - r_radius)).max(rho_bar);
        (rho, rho_bar)
    };
    match choice {
        RhoChoice::Midpoint => vec![pair(0.5)],
        RhoChoice::Sweep => SWEEP_FRACTIONS.iter().map(|&f| pair(f)).collect(),
        RhoChoice::Fixed { rho, rho_bar } => vec![(rho, rho_bar.unwrap_or(rho))],
    }
}

/// Smallest integer `N >= 2` with `M / (1 - rho) < N`.
pub fn min_levels_general(consts: &GeneralConstants) -> u64 {
    let bound = consts.m / (1.0 - consts.rho);
    strictly_above(bound)
}

/// Smallest integer `>= 2` strictly above `x`.
pub fn strictly_above(x: f64) -> u64 {
    if x < 2.0 {
        2
    } else {
        x.floor() as u64 + 1
    }
}

/// Smallest `N >= 2` making the deadbeat companion matrix Schur. The
/// radius falls monotonically in `N`, so a doubling search followed by
/// bisection finds it.
pub fn min_levels_deadbeat(consts: &DeadbeatConstants) -> Result<u64> {
    let law = BoundLaw::Deadbeat(consts.clone());
    let schur = |n: u64| -> Result<bool> { Ok(law.companion_radius(Levels::output_only(n))? < 1.0) };
    if schur(2)? {
        return Ok(2);
    }
    let mut hi = 4u64;
    while !schur(hi)? {
        if hi >= 1 << 40 {
            return Err(Error::Infeasible("deadbeat companion never becomes Schur".into()));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if schur(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Result of the full-protocol level search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullLevelChoice {
    pub levels: Levels,
    pub radius: f64,
    /// `N^p N1^p N2^m`, saturating.
    pub total_boxes: u128,
}

fn total_boxes(levels: Levels, p: u32, m: u32) -> u128 {
    let pow = |b: u64, e: u32| (b as u128).checked_pow(e).unwrap_or(u128::MAX);
    pow(levels.n, p)
        .saturating_mul(pow(levels.n1, p))
        .saturating_mul(pow(levels.n2, m))
}

/// Minimizes `N^p N1^p N2^m` subject to `r(F) < 1` over levels in
/// `[2, cap]`, breaking ties towards smaller `(N, N1, N2)` in
/// lexicographic order.
///
/// For fixed `N`, feasibility `(1 - rho)(1 - beta0) > beta1` reads
/// `A / N1 + B / N2 < D`, which gives the smallest admissible `N2` for
/// each `N1` in closed form. Dropping integrality yields a lower bound on
/// the cost that is quasiconvex in `N1`, so each `N1` scan starts at its
/// minimizer and walks outwards until the bound exceeds the incumbent.
pub fn min_levels_full(consts: &FullConstants, p: u32, m: u32, cap: u64) -> Result<FullLevelChoice> {
    let law = BoundLaw::Full(*consts);
    let radius = |lv: Levels| law.companion_radius(lv).unwrap_or(f64::INFINITY);
    let (pf, mf) = (p as f64, m as f64);
    let ln2 = 2f64.ln();
    let tol = 1e-9;
    let a_rho = 1.0 - consts.rho;
    let mut best: Option<FullLevelChoice> = None;
    let mut best_log = f64::INFINITY;

    for n in 2..=cap {
        let nf = n as f64;
        let ln_n = pf * nf.ln();
        if ln_n + (pf + mf) * ln2 > best_log + tol {
            break;
        }
        let w = (nf - 1.0) / nf;
        let d = a_rho * (a_rho - consts.m4 / nf);
        let a = a_rho * w * consts.m1 + w * consts.m1 * consts.m4;
        let b = w * consts.m2 * consts.m3;
        if d <= 0.0 {
            continue;
        }
        // N1 must satisfy A / N1 < D - B / cap, or N2 would exceed the cap
        let room = d - b / cap as f64;
        if room <= 0.0 {
            continue;
        }
        let lo = if a == 0.0 { 2 } else { strictly_above(a / room).saturating_sub(1).max(2) };
        if lo > cap {
            continue;
        }
        let n2_term = |n1: f64| {
            let slack = d - a / n1;
            if b == 0.0 {
                ln2
            } else {
                (b / slack).max(2.0).ln()
            }
        };
        let bound = |n1: u64| ln_n + pf * (n1 as f64).ln() + mf * n2_term(n1 as f64);
        let start = if a == 0.0 || b == 0.0 {
            lo
        } else {
            let stationary = a * (pf + mf) / (pf * d);
            let kink = if d > b / 2.0 { a / (d - b / 2.0) } else { f64::INFINITY };
            (stationary.min(kink).floor().max(lo as f64).min(cap as f64)) as u64
        };

        let visit = |n1: u64, best: &mut Option<FullLevelChoice>, best_log: &mut f64| -> bool {
            if bound(n1) > *best_log + tol {
                return false;
            }
            let slack = d - a / n1 as f64;
            if slack <= 0.0 {
                return true;
            }
            let mut n2 = if b == 0.0 { 2 } else { strictly_above(b / slack) };
            // the computed radius has the final say at the boundary
            if n2 <= cap && radius(Levels::full(n, n1, n2)) >= 1.0 {
                if radius(Levels::full(n, n1, cap)) >= 1.0 {
                    return true;
                }
                let (mut bad, mut good) = (n2, cap);
                while good - bad > 1 {
                    let mid = bad + (good - bad) / 2;
                    if radius(Levels::full(n, n1, mid)) < 1.0 {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                }
                n2 = good;
            }
            if n2 > cap {
                return true;
            }
            while n2 > 2 && radius(Levels::full(n, n1, n2 - 1)) < 1.0 {
                n2 -= 1;
            }
            let levels = Levels::full(n, n1, n2);
            let boxes = total_boxes(levels, p, m);
            let better = match best {
                None => true,
                Some(bst) => {
                    boxes < bst.total_boxes
                        || (boxes == bst.total_boxes
                            && (n, n1, n2) < (bst.levels.n, bst.levels.n1, bst.levels.n2))
                }
            };
            if better {
                *best_log = ln_n + pf * (n1 as f64).ln() + mf * (n2 as f64).ln();
                *best = Some(FullLevelChoice {
                    levels,
                    radius: radius(levels),
                    total_boxes: boxes,
                });
            }
            true
        };

        let mut n1 = start;
        while n1 >= lo && visit(n1, &mut best, &mut best_log) {
            n1 -= 1;
        }
        let mut n1 = start + 1;
        while n1 <= cap && visit(n1, &mut best, &mut best_log) {
            n1 += 1;
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no (N, N1, N2) in [2, {cap}]^3 gives a Schur companion matrix"
        ))
    })
}

/// Minimal level and total data size of a baseline encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineLevels {
    pub norm: f64,
    pub n: u64,
    /// Exponent of the data size (`p` or `n`).
    pub exponent: u32,
    pub data_size: u128,
}

impl BaselineLevels {
    fn new(norm: f64, exponent: u32) -> Self {
        let n = strictly_above(norm);
        Self {
            norm,
            n,
            exponent,
            data_size: (n as u128).checked_pow(exponent).unwrap_or(u128::MAX),
        }
    }
}

/// Pseudo-inverse observer encoder: smallest `N` above `|C A_d Cbf^+|`,
/// data size `N^p`.
pub fn baseline_pseudo_inverse_min_n(dp: &DiscretePlant) -> Result<BaselineLevels> {
    let norm = design::pseudo_inverse_observer_norm(dp)?;
    Ok(BaselineLevels::new(norm, dp.p() as u32))
}

/// State encoding: smallest `N` above `|A_d|`, data size `N^n`.
pub fn baseline_state_encoding_min_n(dp: &DiscretePlant) -> BaselineLevels {
    BaselineLevels::new(induced_max_norm(&dp.ad), dp.n() as u32)
}

/// Certificates for the general law under a rate choice; with a sweep the
/// candidate with the smallest minimal `N` wins (first one on ties).
pub fn certify_general(
    dp: &DiscretePlant,
    gains: &GainPair,
    choice: RhoChoice,
) -> Result<(GeneralCertificates, u64)> {
    let r_radius = gains.observer_radius()?;
    let mut best: Option<(GeneralCertificates, u64)> = None;
    let mut last_err = None;
    for (rho, _) in rho_candidates(choice, r_radius, 0.0) {
        match GeneralCertificates::compute(dp, gains, rho) {
            Ok(certs) => {
                let n = min_levels_general(&certs.constants());
                if best.as_ref().is_none_or(|b| n < b.1) {
                    best = Some((certs, n));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one candidate was tried"))
}

/// Outcome of certifying the full protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullCertification {
    pub certificates: FullCertificates,
    pub levels: Levels,
    pub radius: f64,
}

/// Certificates for the full law. With fixed `levels` the sweep minimizes
/// `r(F)`; without, it minimizes the total box count of the level search.
pub fn certify_full(
    dp: &DiscretePlant,
    gains: &GainPair,
    choice: RhoChoice,
    levels: Option<Levels>,
) -> Result<FullCertification> {
    let r_radius = gains.observer_radius()?;
    let rbar_radius = gains.closed_loop_radius()?;
    let (p, m) = (dp.p() as u32, dp.m() as u32);
    let mut best: Option<(FullCertification, u128)> = None;
    let mut last_err = None;
    for (rho, rho_bar) in rho_candidates(choice, r_radius, rbar_radius) {
        let certs = match FullCertificates::compute(dp, gains, rho, rho_bar) {
            Ok(c) => c,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let consts = certs.constants();
        let (lv, radius, cost) = match levels {
            Some(lv) => {
                let radius = BoundLaw::Full(consts).companion_radius(lv)?;
                (lv, radius, total_boxes(lv, p, m))
            }
            None => match min_levels_full(&consts, p, m, MAX_LEVEL) {
                Ok(c) => (c.levels, c.radius, c.total_boxes),
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            },
        };
        let better = match &best {
            None => true,
            Some((b, bcost)) => cost < *bcost || (cost == *bcost && radius < b.radius),
        };
        if better {
            best = Some((
                FullCertification {
                    certificates: certs,
                    levels: lv,
                    radius,
                },
                cost,
            ));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| last_err.expect("at least one candidate was tried"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, e: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, e)
    }

    #[test]
    fn certificate_nilpotent_in_one_step() {
        let c = m(1, 2, &[1.0, 2.0]);
        let l = m(2, 1, &[0.5, -1.0]);
        let cert = decay_certificate(&c, &Matrix::zeros(2, 2), &l, 0.3).unwrap();
        assert_eq!(cert.l_star, 1);
        assert_relative_eq!(cert.m, 1.5);
    }

    #[test]
    fn certificate_scalar_contraction() {
        let one = m(1, 1, &[1.0]);
        let cert = decay_certificate(&one, &m(1, 1, &[0.5]), &one, 0.75).unwrap();
        assert_eq!(cert.l_star, 1);
        assert_eq!(cert.m, 1.0);
    }

    #[test]
    fn certificate_jordan_block_matches_sweep() {
        let r = m(2, 2, &[0.9, 10.0, 0.0, 0.9]);
        let eye = Matrix::identity(2, 2);
        let rho = 0.95;
        let cert = decay_certificate(&eye, &r, &eye, rho).unwrap();
        // brute force over l <= 10^4
        let mut best = 0.0f64;
        let mut pw = eye.clone();
        let mut scale = 1.0;
        for _ in 0..=10_000 {
            best = best.max(induced_max_norm(&pw) / scale);
            pw = &pw * &r;
            scale *= rho;
        }
        assert_relative_eq!(cert.m, best, max_relative = 1e-12);
    }

    #[test]
    fn certificate_with_tiny_rate_and_long_transient() {
        // rho^l underflows long before |(R / rho)^l| drops below one
        let r = m(2, 2, &[0.001, 1.0, 0.0, 0.001]);
        let eye = Matrix::identity(2, 2);
        let rho = 0.0011;
        let cert = decay_certificate(&eye, &r, &eye, rho).unwrap();
        assert!(rho.powi(cert.l_star as i32) == 0.0);
        let r_scaled = &r / rho;
        let mut best = 0.0f64;
        let mut pw = eye.clone();
        for _ in 0..=5_000 {
            best = best.max(induced_max_norm(&pw));
            pw = &pw * &r_scaled;
        }
        assert_relative_eq!(cert.m, best, max_relative = 1e-12);
    }

    #[test]
    fn certificate_rejects_slow_rate() {
        let one = m(1, 1, &[1.0]);
        let err = decay_certificate(&one, &m(1, 1, &[0.8]), &one, 0.7).unwrap_err();
        assert!(matches!(err, Error::InfeasibleRate { .. }));
        let err = decay_certificate(&one, &m(1, 1, &[0.8]), &one, 1.2).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn general_sequence_example() {
        let cert = DecayCertificate { m: 1.0, rho: 0.5, l_star: 1, horizon: 1 };
        let s = bound_sequence_general(&cert, &cert, 1.0, 1.0, 4, 5).unwrap();
        assert_eq!(&s.e[..4], &[1.0, 0.75, 0.5625, 0.421875]);
        assert!(s.contractive);
    }

    #[test]
    fn general_sequence_without_feedback_is_geometric() {
        let c0 = DecayCertificate { m: 2.0, rho: 0.6, l_star: 1, horizon: 1 };
        let c = DecayCertificate { m: 0.0, rho: 0.6, l_star: 1, horizon: 1 };
        let s = bound_sequence_general(&c0, &c, 1.0, 1.0, 3, 10).unwrap();
        for k in 1..10 {
            assert_relative_eq!(s.e[k + 1], 0.6 * s.e[k], max_relative = 1e-15);
        }
    }

    #[test]
    fn general_rate_condition() {
        let c = GeneralConstants { m0: 1.0, m: 1.0, rho: 0.5 };
        assert_eq!(min_levels_general(&c), 3);
        for (n, ok) in [(2, false), (3, true), (4, true)] {
            let s = BoundSchedule::build(BoundLaw::General(c), Levels::output_only(n), 1.0, 1.0, 2).unwrap();
            assert_eq!(s.contractive, ok, "N = {n}");
        }
        assert_eq!(min_levels_general(&GeneralConstants { m0: 1.0, m: 0.1, rho: 0.1 }), 2);
        assert_eq!(min_levels_general(&GeneralConstants { m0: 1.0, m: 6.0, rho: 0.25 }), 9);
    }

    #[test]
    fn general_rejects_small_levels() {
        let cert = DecayCertificate { m: 1.0, rho: 0.5, l_star: 1, horizon: 1 };
        assert!(matches!(
            bound_sequence_general(&cert, &cert, 1.0, 1.0, 1, 5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn deadbeat_scalar_companion() {
        let c = DeadbeatConstants { output_norms: vec![1.0], gain_norms: vec![2.5] };
        let law = BoundLaw::Deadbeat(c.clone());
        assert_relative_eq!(law.companion_radius(Levels::output_only(4)).unwrap(), 2.5 / 4.0);
        assert_eq!(min_levels_deadbeat(&c).unwrap(), 3);
    }

    #[test]
    fn deadbeat_two_step_companion() {
        let c = DeadbeatConstants { output_norms: vec![1.0, 1.0], gain_norms: vec![1.0, 1.0] };
        let law = BoundLaw::Deadbeat(c.clone());
        // z^2 - 0.5 z - 0.5 has root 1 at N = 2
        assert_relative_eq!(
            law.companion_radius(Levels::output_only(2)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let c = DeadbeatConstants { output_norms: vec![1.0, 1.0], gain_norms: vec![1.2, 1.2] };
        // z^2 - 0.6 z - 0.6 is unstable, z^2 - 0.4 z - 0.4 is not
        assert_eq!(min_levels_deadbeat(&c).unwrap(), 3);

        let c = DeadbeatConstants { output_norms: vec![1.0, 1.0], gain_norms: vec![0.2 * 5.0, 0.2 * 5.0] };
        let r = BoundLaw::Deadbeat(c).companion_radius(Levels::output_only(5)).unwrap();
        assert_relative_eq!(r, (0.2 + 0.84f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn deadbeat_full_state_recovers_state_encoding() {
        let ad = m(2, 2, &[1.3, 0.4, -0.2, 0.9]);
        let dp = DiscretePlant::new(ad.clone(), m(2, 1, &[0.0, 1.0]), Matrix::identity(2, 2), 1.0).unwrap();
        let s = bound_sequence_deadbeat(&dp, &ad, 3, 1.0, 5).unwrap();
        assert_eq!(s.companion.shape(), (1, 1));
        assert_relative_eq!(s.radius, induced_max_norm(&ad) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn deadbeat_rejects_non_nilpotent_gain() {
        let dp = DiscretePlant::new(m(1, 1, &[2.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), 1.0).unwrap();
        assert!(matches!(
            bound_sequence_deadbeat(&dp, &m(1, 1, &[1.5]), 3, 1.0, 5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn full_limit_gives_double_root_at_rho() {
        let c = FullConstants { m0: 1.0, m1: 2.0, m2: 3.0, m3: 0.5, m4: 1.5, rho: 0.5, rho_bar: 0.4 };
        let huge = 1u64 << 40;
        let k = c.coefficients(Levels::full(huge, huge, huge));
        assert_relative_eq!(k.alpha0, 1.0, epsilon = 1e-9);
        assert_relative_eq!(k.alpha1, -0.25, epsilon = 1e-9);
        let r = quadratic_companion_radius(k.alpha0, k.alpha1);
        assert_relative_eq!(r, 0.5, epsilon = 1e-5);
    }

    #[test]
    fn full_without_estimate_feedback() {
        let c = FullConstants { m0: 1.0, m1: 0.0, m2: 0.0, m3: 0.7, m4: 1.2, rho: 0.5, rho_bar: 0.5 };
        let s = bound_sequence_full(&c, 1.0, 1.0, Levels::full(5, 3, 3), 30).unwrap();
        assert!(s.e1.iter().all(|&v| v == 0.0));
        assert!(s.e2.iter().all(|&v| v == 0.0));
        // first-order law with M4 in place of M
        for k in 1..30 {
            assert_relative_eq!(s.e[k + 1], (0.5 + 1.2 / 5.0) * s.e[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn full_rejects_rho_bar_above_rho() {
        let c = FullConstants { m0: 1.0, m1: 1.0, m2: 1.0, m3: 1.0, m4: 1.0, rho: 0.5, rho_bar: 0.6 };
        assert!(matches!(
            bound_sequence_full(&c, 1.0, 1.0, Levels::full(5, 5, 5), 3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn full_level_search_decoupled() {
        let c = FullConstants { m0: 1.0, m1: 0.0, m2: 0.0, m3: 0.0, m4: 1.0, rho: 0.5, rho_bar: 0.5 };
        let choice = min_levels_full(&c, 1, 1, MAX_LEVEL).unwrap();
        // beta0 = 0.5 + 1/N; r(F) = max(0.5, beta0) < 1 iff N > 2
        assert_eq!(choice.levels, Levels::full(3, 2, 2));
    }

    #[test]
    fn full_level_search_infeasible_under_tiny_cap() {
        let c = FullConstants { m0: 1.0, m1: 50.0, m2: 50.0, m3: 50.0, m4: 50.0, rho: 0.9, rho_bar: 0.9 };
        assert!(matches!(min_levels_full(&c, 1, 1, 2), Err(Error::Infeasible(_))));
    }

    #[test]
    fn full_level_search_is_optimal_on_small_grid() {
        let c = FullConstants { m0: 1.0, m1: 0.8, m2: 2.0, m3: 0.3, m4: 0.6, rho: 0.4, rho_bar: 0.3 };
        let cap = 40;
        let found = min_levels_full(&c, 1, 1, cap).unwrap();
        let law = BoundLaw::Full(c);
        let mut best: Option<(u128, Levels)> = None;
        for n in 2..=cap {
            for n1 in 2..=cap {
                for n2 in 2..=cap {
                    let lv = Levels::full(n, n1, n2);
                    if law.companion_radius(lv).unwrap() < 1.0 {
                        let cost = total_boxes(lv, 1, 1);
                        if best.is_none_or(|b| cost < b.0) {
                            best = Some((cost, lv));
                        }
                    }
                }
            }
        }
        assert_eq!(Some((found.total_boxes, found.levels)), best);
    }

    #[test]
    fn baselines() {
        let dp = DiscretePlant::new(m(1, 1, &[2.5]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), 1.0).unwrap();
        let b = baseline_state_encoding_min_n(&dp);
        assert_eq!((b.n, b.data_size), (3, 3));
        let b = baseline_pseudo_inverse_min_n(&dp).unwrap();
        assert_eq!(b.n, 3);
    }

    #[test]
    fn rho_candidates_midpoint() {
        let c = rho_candidates(RhoChoice::Midpoint, 0.6, 0.8);
        assert_eq!(c, vec![(0.9, 0.9)]);
        let c = rho_candidates(RhoChoice::Midpoint, 0.8, 0.4);
        assert_eq!(c, vec![(0.9, 0.7)]);
        assert_eq!(rho_candidates(RhoChoice::Sweep, 0.5, 0.5).len(), 10);
    }

    #[test]
    fn schedule_csv_header() {
        let cert = DecayCertificate { m: 1.0, rho: 0.5, l_star: 1, horizon: 1 };
        let s = bound_sequence_general(&cert, &cert, 1.0, 1.0, 4, 2).unwrap();
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,E_k,E1_k,E2_k,mu_k"));
        assert_eq!(lines.next(), Some("0,1,0,0,0.25"));
        assert_eq!(csv.lines().count(), 4);
    }
}
