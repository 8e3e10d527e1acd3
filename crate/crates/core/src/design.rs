//! Gain synthesis for the observer-based controller.

use crate::error::{Error, Result};
use crate::numerics::{
    self, condition_number, induced_max_norm, matrix_power, Matrix, DEFAULT_RANK_TOL,
};
use crate::plant::{ContinuousPlant, DiscretePlant};

/// Observability matrices worse than this are treated as unobservable for
/// deadbeat purposes.
pub const MAX_OBSERVABILITY_CONDITION: f64 = 1e12;

/// Relative nilpotency tolerance on `(A_d - LC)^eta`, scaled by `|A_d|^eta`.
pub const NILPOTENCY_TOL: f64 = 1e-8;

/// Feedback gain `K`, observer gain `L` and the two closed-loop matrices
/// `R = A_d - LC` (estimation error) and `Rbar = A_d - B_d K` (state).
#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub k: Matrix,
    pub l: Matrix,
    pub r: Matrix,
    pub rbar: Matrix,
}

impl GainPair {
    pub fn new(dp: &DiscretePlant, k: Matrix, l: Matrix) -> Result<Self> {
        let (n, m, p) = (dp.n(), dp.m(), dp.p());
        if k.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "K must be {m}x{n}, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if l.shape() != (n, p) {
            return Err(Error::Dimension(format!(
                "L must be {n}x{p}, got {}x{}",
                l.nrows(),
                l.ncols()
            )));
        }
        numerics::ensure_finite(&k, "K")?;
        numerics::ensure_finite(&l, "L")?;
        let r = &dp.ad - &l * &dp.c;
        let rbar = &dp.ad - &dp.bd * &k;
        Ok(Self { k, l, r, rbar })
    }

    pub fn observer_radius(&self) -> Result<f64> {
        numerics::spectral_radius(&self.r)
    }

    pub fn closed_loop_radius(&self) -> Result<f64> {
        numerics::spectral_radius(&self.rbar)
    }

    /// Checks that `R` and `Rbar` still match the plant and gains.
    pub fn is_consistent_with(&self, dp: &DiscretePlant) -> bool {
        self.r == &dp.ad - &self.l * &dp.c && self.rbar == &dp.ad - &dp.bd * &self.k
    }

    /// Errors unless `Rbar` is Schur, and also `R` when `observer_too`.
    pub fn require_stable(&self, observer_too: bool) -> Result<()> {
        let rb = self.closed_loop_radius()?;
        if rb >= 1.0 {
            return Err(Error::Precondition(format!(
                "A_d - B_d K is not Schur (spectral radius {rb})"
            )));
        }
        if observer_too {
            let r = self.observer_radius()?;
            if r >= 1.0 {
                return Err(Error::Precondition(format!(
                    "A_d - L C is not Schur (spectral radius {r})"
                )));
            }
        }
        Ok(())
    }
}

/// Discrete LQR gain `K = (Ru + B_d'PB_d)^{-1} B_d'PA_d`.
pub fn lqr_gain(dp: &DiscretePlant, qx: &Matrix, ru: &Matrix) -> Result<Matrix> {
    let p = numerics::solve_dare(&dp.ad, &dp.bd, qx, ru)?;
    let bt = dp.bd.transpose();
    let gram = ru + &bt * &p * &dp.bd;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Rank("Ru + B'PB is singular".into()))?;
    Ok(inv * bt * p * &dp.ad)
}

/// Continuous-time LQR gain `K = Ru^{-1} B'P` for the unsampled plant, to be
/// applied through the zero-order hold.
pub fn lqr_gain_continuous(plant: &ContinuousPlant, qx: &Matrix, ru: &Matrix) -> Result<Matrix> {
    let p = numerics::solve_care(&plant.a, &plant.b, qx, ru)?;
    let inv = ru
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Rank("Ru is singular".into()))?;
    Ok(inv * plant.b.transpose() * p)
}

/// Steady-state (predictor form) Kalman gain `L = A_d P C'(V + C P C')^{-1}`
/// with `P` from the dual Riccati equation.
pub fn kalman_gain(dp: &DiscretePlant, w: &Matrix, v: &Matrix) -> Result<Matrix> {
    let ct = dp.c.transpose();
    let p = numerics::solve_dare(&dp.ad.transpose(), &ct, w, v)?;
    let gram = v + &dp.c * &p * &ct;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Rank("V + CPC' is singular".into()))?;
    Ok(&dp.ad * p * ct * inv)
}

/// Process noise entering through the input channel: `scale * B_d B_d'`.
pub fn input_process_noise(dp: &DiscretePlant, scale: f64) -> Matrix {
    &dp.bd * dp.bd.transpose() * scale
}

/// Observability indices of `(C, A_d)`, one per output, from a crate-order
/// search over `c_i A_d^j`. Outputs that add nothing get index 0.
pub fn observability_indices(dp: &DiscretePlant) -> Result<Vec<usize>> {
    let chains = select_chains(&dp.ad.transpose(), &dp.c.transpose())?;
    Ok(chains.lengths)
}

/// Smallest `eta` such that `[C; C A_d; ...; C A_d^{eta-1}]` has rank n.
pub fn observability_index(dp: &DiscretePlant) -> Result<usize> {
    let n = dp.n();
    for eta in 1..=n {
        if numerics::rank(&dp.observability_matrix(eta), DEFAULT_RANK_TOL) == n {
            return Ok(eta);
        }
    }
    Err(Error::Unobservable)
}

struct Chains {
    /// Chain length per input column of `g`.
    lengths: Vec<usize>,
}

/// Crate-order selection of linearly independent vectors `f^j g_i`.
fn select_chains(f: &Matrix, g: &Matrix) -> Result<Chains> {
    let n = f.nrows();
    let p = g.ncols();
    let mut lengths = vec![0usize; p];
    let mut active = vec![true; p];
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut powers: Vec<nalgebra::DVector<f64>> = (0..p).map(|i| g.column(i).into_owned()).collect();

    for _ in 0..n {
        for i in 0..p {
            if !active[i] || basis.len() == n {
                continue;
            }
            let cand = &powers[i];
            let scale = numerics::vec_max_norm(cand);
            let independent = scale > 0.0 && {
                let mut cols: Vec<_> = basis.clone();
                cols.push(cand / scale);
                let mat = Matrix::from_columns(&cols);
                numerics::rank(&mat, DEFAULT_RANK_TOL) == cols.len()
            };
            if independent {
                basis.push(cand / scale);
                lengths[i] += 1;
            } else {
                active[i] = false;
            }
        }
        for v in powers.iter_mut() {
            *v = f * &*v;
        }
    }
    if basis.len() < n {
        return Err(Error::Unobservable);
    }
    Ok(Chains { lengths })
}

/// Observer gain that makes `A_d - LC` nilpotent with index `eta`.
///
/// Single-output plants use Ackermann's formula on the dual pair. With
/// several outputs the dual pair is brought to Luenberger controllable
/// canonical form, where the feedback cancels the coupling rows and leaves a
/// block shift matrix whose longest chain is the observability index.
pub fn deadbeat_observer_gain(dp: &DiscretePlant) -> Result<Matrix> {
    let eta = observability_index(dp)?;
    let l = if dp.p() == 1 {
        ackermann_deadbeat(&dp.ad, &dp.c)?
    } else {
        canonical_deadbeat(&dp.ad, &dp.c)?
    };
    let residual = induced_max_norm(&matrix_power(&(&dp.ad - &l * &dp.c), eta));
    let scale = induced_max_norm(&dp.ad).powi(eta as i32).max(f64::MIN_POSITIVE);
    if residual > NILPOTENCY_TOL * scale {
        return Err(Error::Conditioning(format!(
            "deadbeat construction left |R^{eta}| = {residual:e} |L| = {:e}", induced_max_norm(&l)
        )));
    }
    Ok(l)
}

fn observability_stack(a: &Matrix, c: &Matrix, blocks: usize) -> Matrix {
    let (p, n) = c.shape();
    let mut out = Matrix::zeros(p * blocks, n);
    let mut row = c.clone();
    for j in 0..blocks {
        out.rows_mut(j * p, p).copy_from(&row);
        row = &row * a;
    }
    out
}

fn ackermann_deadbeat(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let obs = observability_stack(a, c, n);
    let cond = condition_number(&obs);
    if !cond.is_finite() {
        return Err(Error::Unobservable);
    }
    if cond > MAX_OBSERVABILITY_CONDITION {
        return Err(Error::Conditioning(format!(
            "observability matrix condition number {cond:e}"
        )));
    }
    let mut e_n = Matrix::zeros(n, 1);
    e_n[(n - 1, 0)] = 1.0;
    let last = obs.lu().solve(&e_n).ok_or(Error::Unobservable)?;
    Ok(matrix_power(a, n) * last)
}

fn canonical_deadbeat(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let f = a.transpose();
    let g = c.transpose();
    let lengths = select_chains(&f, &g)?.lengths;

    let mut cols = Vec::with_capacity(n);
    for (i, &len) in lengths.iter().enumerate() {
        let mut v = g.column(i).into_owned();
        for _ in 0..len {
            cols.push(v.clone());
            v = &f * v;
        }
    }
    let t = Matrix::from_columns(&cols);
    let cond = condition_number(&t);
    if cond > MAX_OBSERVABILITY_CONDITION {
        return Err(Error::Conditioning(format!(
            "observability basis condition number {cond:e}"
        )));
    }
    let tinv = t.try_inverse().ok_or(Error::Unobservable)?;

    // rows t_i f^j, with t_i the last row of block i in T^{-1}
    let mut s = Matrix::zeros(n, n);
    let mut shift = Matrix::zeros(n, n);
    let mut row = 0;
    let mut block_end = 0;
    for &len in lengths.iter().filter(|&&len| len > 0) {
        block_end += len;
        let mut t_row = tinv.row(block_end - 1).into_owned();
        for j in 0..len {
            s.set_row(row, &t_row);
            if j + 1 < len {
                shift[(row, row + 1)] = 1.0;
            }
            t_row = &t_row * &f;
            row += 1;
        }
    }
    let sinv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("canonical transform is singular".into()))?;
    let f_bar = &s * &f * &sinv;
    let g_bar = &s * &g;
    let k_bar = g_bar
        .svd(true, true)
        .solve(&(f_bar - shift), 1e-12)
        .map_err(|e| Error::Solver(e.to_string()))?;
    let k = k_bar * s;
    Ok(k.transpose())
}

/// `|C A_d Cbf^+|` for the stacked, back-shifted observability matrix
/// `Cbf = [C; C A_d; ...; C A_d^{eta-1}] A_d^{-eta+1}`.
pub fn pseudo_inverse_observer_norm(dp: &DiscretePlant) -> Result<f64> {
    let eta = observability_index(dp)?;
    let ad_inv = dp
        .ad
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Rank("A_d is singular".into()))?;
    let stacked = dp.observability_matrix(eta) * matrix_power(&ad_inv, eta - 1);
    let pinv = numerics::pseudo_inverse(&stacked)?;
    Ok(induced_max_norm(&(&dp.c * &dp.ad * pinv)))
}
