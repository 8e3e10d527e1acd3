//! Dense small-matrix kernel.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. The matrices in scope
//! are tiny (n <= 10), so clarity wins over blocking or workspace reuse.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold used by [`rank`] when callers have no better value.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const EXPM_TAYLOR_ORDER: usize = 18;
const EXPM_SCALED_NORM: f64 = 0.5;

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 1_000_000;

const SIGN_TOL: f64 = 1e-13;
const SIGN_MAX_ITER: usize = 200;

/// Builds a matrix from row-major entries, rejecting bad lengths and
/// non-finite values.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} has non-finite entries")))
    }
}

pub fn ensure_square(m: &Matrix, what: &str) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// `|v|_inf`.
pub fn vec_max_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Operator norm induced by the vector max norm: the largest absolute row sum.
pub fn induced_max_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn matrix_power(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// `e^{A t}` by scaling and squaring around a fixed-order Taylor series.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    let n = ensure_square(a, "mat_exp argument")?;
    if !t.is_finite() {
        return Err(Error::Argument("mat_exp time must be finite".into()));
    }
    let scaled = a * t;
    let norm = induced_max_norm(&scaled);
    let squarings = if norm > EXPM_SCALED_NORM {
        (norm / EXPM_SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let x = scaled / 2f64.powi(squarings);

    let mut result = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=EXPM_TAYLOR_ORDER {
        term = &term * &x / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    ensure_finite(&result, "mat_exp result")?;
    Ok(result)
}

/// Eigenvalues from a real Schur decomposition.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    ensure_square(m, "eigenvalue argument")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Solver("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Stabilizing solution of
/// `P = A'PA - A'PB (Rw + B'PB)^{-1} B'PA + Q`, by iterating the Riccati
/// recursion from `P0 = Q`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, rw: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a, "A")?;
    let m = ensure_square(rw, "Rw")?;
    if b.nrows() != n || b.ncols() != m || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "DARE expects A {n}x{n}, B {n}x{m}, Q {n}x{n}, Rw {m}x{m}; got B {}x{}, Q {}x{}",
            b.nrows(),
            b.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_step(a, &at, b, &bt, q, rw, &p)?;
        let delta = induced_max_norm(&(&next - &p));
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver("Riccati iterates diverged".into()));
        }
        if delta <= DARE_TOL * induced_max_norm(&p).max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::Solver(format!(
        "Riccati recursion did not settle within {DARE_MAX_ITER} iterations"
    )))
}

fn riccati_step(
    a: &Matrix,
    at: &Matrix,
    b: &Matrix,
    bt: &Matrix,
    q: &Matrix,
    rw: &Matrix,
    p: &Matrix,
) -> Result<Matrix> {
    let pa = p * a;
    let gram = rw + bt * p * b;
    let inv = spd_inverse(&gram)?;
    let bpa = bt * &pa;
    let next = at * &pa - bpa.transpose() * inv * bpa + q;
    Ok((&next + next.transpose()) * 0.5)
}

fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.inverse());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Rank("singular matrix in Riccati step".into()))
}

/// Residual `max|A'PA - A'PB (Rw + B'PB)^{-1} B'PA + Q - P|` of a DARE candidate.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, rw: &Matrix, p: &Matrix) -> Result<f64> {
    let next = riccati_step(a, &a.transpose(), b, &b.transpose(), q, rw, p)?;
    Ok(induced_max_norm(&(next - p)))
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `A'P + PA - PB Rw^{-1} B'P + Q = 0`, via the matrix sign function of the
/// Hamiltonian.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, rw: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a, "A")?;
    let m = ensure_square(rw, "Rw")?;
    if b.nrows() != n || b.ncols() != m || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("CARE operand shapes disagree".into()));
    }
    let rinv = spd_inverse(rw)?;
    let g = b * rinv * b.transpose();

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..SIGN_MAX_ITER {
        let det = z.determinant().abs();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Solver(
                "Hamiltonian has eigenvalues on the imaginary axis".into(),
            ));
        }
        let c = det.powf(-1.0 / (2 * n) as f64);
        let zinv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Solver("singular sign iterate".into()))?;
        let next = (&z * c + zinv / c) * 0.5;
        let delta = induced_max_norm(&(&next - &z));
        z = next;
        if delta <= SIGN_TOL * induced_max_norm(&z) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Solver("matrix sign iteration did not converge".into()));
    }

    // (sign(H) + I) [I; P] = 0
    let w = z + Matrix::identity(2 * n, 2 * n);
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&w.view((n, n), (n, n)));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-w.view((0, 0), (n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Solver(e.to_string()))?;
    let p = (&p + p.transpose()) * 0.5;
    ensure_finite(&p, "CARE solution")?;
    Ok(p)
}

/// Singular values, largest first.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank: singular values above `tol` times the largest one.
pub fn rank(m: &Matrix, tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&largest) = s.first() else {
        return 0;
    };
    if largest == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * largest).count()
}

/// 2-norm condition number; infinite for rank-deficient input.
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 && s.len() == m.nrows().min(m.ncols()) => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Left inverse `(M'M)^{-1} M'` of a full-column-rank matrix.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    let cols = m.ncols();
    let r = rank(m, DEFAULT_RANK_TOL);
    if r < cols {
        return Err(Error::Rank(format!(
            "pseudo-inverse needs full column rank {cols}, found rank {r}"
        )));
    }
    let mt = m.transpose();
    let gram = &mt * m;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Rank("Gram matrix is singular".into()))?;
    Ok(inv * mt)
}
