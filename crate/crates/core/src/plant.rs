//! Continuous LTI plants, their zero-order-hold discretization, structural
//! checks and the built-in benchmark catalog.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, ensure_finite, ensure_square, Matrix, DEFAULT_RANK_TOL};

/// Eigenvalues within this distance of the unit circle count as marginal
/// (and therefore must pass the PBH test).
const UNIT_CIRCLE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl ContinuousPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = ensure_square(&a, "A")?;
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A is {n}x{n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A is {n}x{n}", c.ncols())));
        }
        for (m, what) in [(&a, "A"), (&b, "B"), (&c, "C")] {
            ensure_finite(m, what)?;
        }
        let state_names = default_labels("x", n);
        let input_names = default_labels("u", b.ncols());
        let output_names = default_labels("y", c.nrows());
        Ok(Self {
            a,
            b,
            c,
            state_names,
            input_names,
            output_names,
        })
    }

    pub fn with_labels(
        mut self,
        states: Vec<String>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<Self> {
        for (labels, want, what) in [
            (&states, self.n(), "state"),
            (&inputs, self.m(), "input"),
            (&outputs, self.p(), "output"),
        ] {
            if !labels.is_empty() && labels.len() != want {
                return Err(Error::Dimension(format!(
                    "{} {what} labels for dimension {want}",
                    labels.len()
                )));
            }
        }
        if !states.is_empty() {
            self.state_names = states;
        }
        if !inputs.is_empty() {
            self.input_names = inputs;
        }
        if !outputs.is_empty() {
            self.output_names = outputs;
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

fn default_labels(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Sampled plant `x_{k+1} = A_d x_k + B_d u_k`, `y_k = C x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub ad: Matrix,
    pub bd: Matrix,
    pub c: Matrix,
    /// Sampling period in seconds.
    pub h: f64,
}

impl DiscretePlant {
    /// Wraps already-discretized matrices. `A_d` must be invertible.
    pub fn new(ad: Matrix, bd: Matrix, c: Matrix, h: f64) -> Result<Self> {
        let n = ensure_square(&ad, "A_d")?;
        if bd.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension("A_d, B_d and C disagree on n".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Argument(format!("sampling period must be positive, got {h}")));
        }
        for (m, what) in [(&ad, "A_d"), (&bd, "B_d"), (&c, "C")] {
            ensure_finite(m, what)?;
        }
        let det = ad.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Rank("A_d is singular".into()));
        }
        Ok(Self { ad, bd, c, h })
    }

    pub fn n(&self) -> usize {
        self.ad.nrows()
    }

    pub fn m(&self) -> usize {
        self.bd.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `[C; C A_d; ...; C A_d^{blocks-1}]`.
    pub fn observability_matrix(&self, blocks: usize) -> Matrix {
        let (n, p) = (self.n(), self.p());
        let mut out = Matrix::zeros(p * blocks, n);
        let mut row = self.c.clone();
        for k in 0..blocks {
            out.view_mut((k * p, 0), (p, n)).copy_from(&row);
            row = &row * &self.ad;
        }
        out
    }
}

/// Exact ZOH discretization. `B_d` is read off the exponential of the
/// augmented matrix `[[A, B], [0, 0]] h`.
pub fn discretize(plant: &ContinuousPlant, h: f64) -> Result<DiscretePlant> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Argument(format!("sampling period must be positive, got {h}")));
    }
    let (n, m) = (plant.n(), plant.m());
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    aug.view_mut((0, n), (n, m)).copy_from(&plant.b);
    let e = numerics::mat_exp(&aug, h)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    DiscretePlant::new(ad, bd, plant.c.clone(), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AssumptionReport {
    pub stabilizable: bool,
    pub detectable: bool,
    pub observable: bool,
}

/// PBH stabilizability/detectability and Kalman-rank observability of the
/// sampled plant.
pub fn check_assumptions(dp: &DiscretePlant) -> Result<AssumptionReport> {
    let n = dp.n();
    let eigs = numerics::eigenvalues(&dp.ad)?;
    let unstable: Vec<Complex<f64>> = eigs
        .into_iter()
        .filter(|z| z.norm() >= 1.0 - UNIT_CIRCLE_SLACK)
        .collect();
    let at = dp.ad.transpose();
    let ct = dp.c.transpose();
    let stabilizable = unstable.iter().all(|&z| pbh_rank(&dp.ad, &dp.bd, z) == n);
    let detectable = unstable.iter().all(|&z| pbh_rank(&at, &ct, z) == n);
    let observable = numerics::rank(&dp.observability_matrix(n), DEFAULT_RANK_TOL) == n;
    Ok(AssumptionReport {
        stabilizable,
        detectable,
        observable,
    })
}

/// Rank of the complex matrix `[zI - A, B]`, through its real embedding
/// `[[Re, -Im], [Im, Re]]` whose rank is twice the complex rank.
fn pbh_rank(a: &Matrix, b: &Matrix, z: Complex<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut re = Matrix::zeros(n, n + m);
    re.view_mut((0, 0), (n, n))
        .copy_from(&(Matrix::identity(n, n) * z.re - a));
    re.view_mut((0, n), (n, m)).copy_from(b);
    let mut im = Matrix::zeros(n, n + m);
    im.view_mut((0, 0), (n, n))
        .copy_from(&(Matrix::identity(n, n) * z.im));

    let mut emb = Matrix::zeros(2 * n, 2 * (n + m));
    emb.view_mut((0, 0), (n, n + m)).copy_from(&re);
    emb.view_mut((0, n + m), (n, n + m)).copy_from(&(-&im));
    emb.view_mut((n, 0), (n, n + m)).copy_from(&im);
    emb.view_mut((n, n + m), (n, n + m)).copy_from(&re);
    numerics::rank(&emb, DEFAULT_RANK_TOL) / 2
}

pub const INVERTED_PENDULUM: &str = "inverted_pendulum";
pub const INVERTED_PENDULUM_TWO_OUTPUT: &str = "inverted_pendulum_two_output";

fn pendulum_ab() -> (Matrix, Matrix) {
    let a = Matrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, -20.06, 53.26, -1.096, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, -20.01, 98.41, -2.025,
        ],
    );
    let b = Matrix::from_row_slice(4, 1, &[0.0, 35.28, 0.0, 35.18]);
    (a, b)
}

fn pendulum_labels() -> Vec<String> {
    [
        "arm angle",
        "arm angular velocity",
        "pendulum angle",
        "pendulum angular velocity",
    ]
    .map(String::from)
    .to_vec()
}

/// Rotary inverted pendulum, motor voltage input, single output
/// `x1 + x3`.
pub fn inverted_pendulum() -> ContinuousPlant {
    let (a, b) = pendulum_ab();
    let c = Matrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 0.0]);
    ContinuousPlant::new(a, b, c)
        .and_then(|p| {
            p.with_labels(
                pendulum_labels(),
                vec!["motor voltage".into()],
                vec!["arm + pendulum angle".into()],
            )
        })
        .expect("catalog plant is well formed")
}

/// Same pendulum with both angles measured separately (`p = 2`).
pub fn inverted_pendulum_two_output() -> ContinuousPlant {
    let (a, b) = pendulum_ab();
    let c = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    ContinuousPlant::new(a, b, c)
        .and_then(|p| {
            p.with_labels(
                pendulum_labels(),
                vec!["motor voltage".into()],
                vec!["arm angle".into(), "pendulum angle".into()],
            )
        })
        .expect("catalog plant is well formed")
}

/// Named plants: the built-ins plus anything registered at runtime.
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: BTreeMap<String, ContinuousPlant>,
}

impl Default for Catalog {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(INVERTED_PENDULUM.to_string(), inverted_pendulum());
        entries.insert(
            INVERTED_PENDULUM_TWO_OUTPUT.to_string(),
            inverted_pendulum_two_output(),
        );
        Self { entries }
    }
}

impl Catalog {
    pub fn register(&mut self, name: impl Into<String>, plant: ContinuousPlant) {
        self.entries.insert(name.into(), plant);
    }

    pub fn get(&self, name: &str) -> Result<ContinuousPlant> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Looks a plant up in the built-in catalog.
pub fn benchmark(name: &str) -> Result<ContinuousPlant> {
    Catalog::default().get(name)
}

/// On-disk plant definition: dimensions, row-major matrices and optional
/// labels, as TOML key/value pairs.
///
/// ```toml
/// n = 2
/// m = 1
/// p = 1
/// A = [0.0, 1.0, -2.0, -3.0]
/// B = [0.0, 1.0]
/// C = [1.0, 0.0]
/// state_names = ["position", "velocity"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output_names: Vec<String>,
}

impl PlantFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_plant(&self) -> Result<ContinuousPlant> {
        let a = numerics::from_row_major(self.n, self.n, &self.a)?;
        let b = numerics::from_row_major(self.n, self.m, &self.b)?;
        let c = numerics::from_row_major(self.p, self.n, &self.c)?;
        ContinuousPlant::new(a, b, c)?.with_labels(
            self.state_names.clone(),
            self.input_names.clone(),
            self.output_names.clone(),
        )
    }

    pub fn from_plant(plant: &ContinuousPlant) -> Self {
        let row_major = |m: &Matrix| m.transpose().iter().copied().collect::<Vec<_>>();
        Self {
            n: plant.n(),
            m: plant.m(),
            p: plant.p(),
            a: row_major(&plant.a),
            b: row_major(&plant.b),
            c: row_major(&plant.c),
            state_names: plant.state_names.clone(),
            input_names: plant.input_names.clone(),
            output_names: plant.output_names.clone(),
        }
    }
}
