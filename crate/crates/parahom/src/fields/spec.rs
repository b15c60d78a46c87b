use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// 2x2 storage for a d x d matrix, d <= 2. For d = 1 only `[0][0]` is used.
pub type Mat = [[f64; 2]; 2];

pub fn zero_mat() -> Mat {
    [[0.0; 2]; 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Sin,
    Cos,
}

impl TrigKind {
    #[inline]
    pub fn eval(self, angle: f64) -> f64 {
        match self {
            TrigKind::Sin => angle.sin(),
            TrigKind::Cos => angle.cos(),
        }
    }
}

fn default_amplitude() -> f64 {
    1.0
}

/// One multiplicative factor of a coefficient term:
///
/// `offset + linear_space.x + linear_time*t
///  + amplitude * kind(2*pi*(space.x + time*t + micro_space.y + micro_time*tau) + phase)`.
///
/// Integer micro frequencies keep every factor exactly 1-periodic in `(y, tau)`.
/// Affine macroscopic modulation (e.g. `1 + 0.5 x`) uses the linear fields with
/// zero amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffFactor {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub linear_space: Vec<f64>,
    #[serde(default)]
    pub linear_time: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_kind")]
    pub kind: TrigKind,
    #[serde(default)]
    pub space: Vec<f64>,
    #[serde(default)]
    pub time: f64,
    #[serde(default)]
    pub micro_space: Vec<i64>,
    #[serde(default)]
    pub micro_time: i64,
    #[serde(default)]
    pub phase: f64,
}

fn default_kind() -> TrigKind {
    TrigKind::Sin
}

impl CoeffFactor {
    /// Pure trig factor `offset + amplitude * kind(2 pi angle + phase)`.
    pub fn trig(
        offset: f64,
        amplitude: f64,
        kind: TrigKind,
        space: Vec<f64>,
        time: f64,
        micro_space: Vec<i64>,
        micro_time: i64,
    ) -> Self {
        CoeffFactor {
            offset,
            linear_space: vec![],
            linear_time: 0.0,
            amplitude,
            kind,
            space,
            time,
            micro_space,
            micro_time,
            phase: 0.0,
        }
    }

    /// Affine macroscopic factor `offset + linear_space.x + linear_time*t`.
    pub fn affine(offset: f64, linear_space: Vec<f64>, linear_time: f64) -> Self {
        CoeffFactor {
            offset,
            linear_space,
            linear_time,
            amplitude: 0.0,
            kind: TrigKind::Cos,
            space: vec![],
            time: 0.0,
            micro_space: vec![],
            micro_time: 0,
            phase: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], t: f64, y: &[f64], tau: f64) -> f64 {
        let mut v = self.offset + self.linear_time * t;
        for (k, &c) in self.linear_space.iter().enumerate() {
            v += c * x[k];
        }
        if self.amplitude != 0.0 {
            let mut angle = self.time * t + self.micro_time as f64 * tau;
            for (k, &fx) in self.space.iter().enumerate() {
                angle += fx * x[k];
            }
            for (k, &fy) in self.micro_space.iter().enumerate() {
                angle += fy as f64 * y[k];
            }
            v += self.amplitude * self.kind.eval(TWO_PI * angle + self.phase);
        }
        v
    }

    pub fn depends_on_micro(&self) -> bool {
        self.amplitude != 0.0 && (self.micro_time != 0 || self.micro_space.iter().any(|&f| f != 0))
    }

    pub fn depends_on_macro(&self) -> bool {
        self.linear_time != 0.0
            || self.linear_space.iter().any(|&c| c != 0.0)
            || (self.amplitude != 0.0
                && (self.time != 0.0 || self.space.iter().any(|&f| f != 0.0)))
    }

    pub fn depends_on_time(&self) -> bool {
        self.linear_time != 0.0 || (self.amplitude != 0.0 && (self.time != 0.0 || self.micro_time != 0))
    }
}

/// One term of a coefficient entry: `amplitude * prod(factors)`, assigned to entry `(row, col)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffTerm {
    #[serde(default)]
    pub row: usize,
    #[serde(default)]
    pub col: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub factors: Vec<CoeffFactor>,
}

impl CoeffTerm {
    #[inline]
    pub fn eval(&self, x: &[f64], t: f64, y: &[f64], tau: f64) -> f64 {
        let mut v = self.amplitude;
        for f in &self.factors {
            v *= f.eval(x, t, y, tau);
        }
        v
    }
}

/// Declarative four-variable coefficient field `A(x, t; y, tau)`.
///
/// Entries are a constant base matrix plus a sum of product terms built from
/// trigonometric and affine-in-trig factors. Micro frequencies are integers,
/// so the field is exactly 1-periodic in the fast variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub dim: usize,
    pub mu: f64,
    pub base: Vec<Vec<f64>>,
    #[serde(default)]
    pub terms: Vec<CoeffTerm>,
}

impl CoefficientSpec {
    pub fn identity(dim: usize) -> Self {
        let mut base = vec![vec![0.0; dim]; dim];
        for (i, row) in base.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CoefficientSpec {
            dim,
            mu: 0.5,
            base,
            terms: Vec::new(),
        }
    }

    /// Scalar 1D spec `a(...) = base + sum(terms)`.
    pub fn scalar(base: f64, mu: f64, terms: Vec<CoeffTerm>) -> Self {
        CoefficientSpec {
            dim: 1,
            mu,
            base: vec![vec![base]],
            terms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 2 {
            return Err(Error::Config(format!(
                "dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!(
                "ellipticity constant mu must be positive, got {}",
                self.mu
            )));
        }
        if self.base.len() != self.dim || self.base.iter().any(|r| r.len() != self.dim) {
            return Err(Error::Config(format!(
                "base matrix must be {d} x {d}",
                d = self.dim
            )));
        }
        for term in &self.terms {
            if term.row >= self.dim || term.col >= self.dim {
                return Err(Error::Config(format!(
                    "term entry ({}, {}) out of range for dimension {}",
                    term.row, term.col, self.dim
                )));
            }
            for f in &term.factors {
                if f.space.len() > self.dim || f.micro_space.len() > self.dim {
                    return Err(Error::Config(
                        "factor frequency vectors longer than the dimension".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluate `A(x, t; y, tau)` as a d x d matrix. Total function: the trig
    /// factors make this defined for all arguments, and integer micro
    /// frequencies give exact 1-periodicity in `(y, tau)`.
    pub fn eval(&self, x: &[f64], t: f64, y: &[f64], tau: f64) -> Mat {
        let mut a = zero_mat();
        for i in 0..self.dim {
            for j in 0..self.dim {
                a[i][j] = self.base[i][j];
            }
        }
        for term in &self.terms {
            a[term.row][term.col] += term.eval(x, t, y, tau);
        }
        a
    }

    /// Single entry evaluation, used by scalar fast paths.
    pub fn eval_entry(&self, row: usize, col: usize, x: &[f64], t: f64, y: &[f64], tau: f64) -> f64 {
        let mut v = self.base[row][col];
        for term in &self.terms {
            if term.row == row && term.col == col {
                v += term.eval(x, t, y, tau);
            }
        }
        v
    }

    pub fn is_time_independent(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.factors.iter().all(|f| !f.depends_on_time()))
    }

    pub fn has_micro_dependence(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.factors.iter().any(|f| f.depends_on_micro()))
    }

    /// Smallest eigenvalue of the symmetric part of `a` (d <= 2).
    pub fn symmetric_min_eig(&self, a: &Mat) -> f64 {
        symmetric_min_eig(a, self.dim)
    }

    /// Checks boundedness and ellipticity of one sampled matrix.
    pub fn check_pointwise(&self, a: &Mat, context: impl Fn() -> String) -> Result<()> {
        let min_eig = self.symmetric_min_eig(a);
        if min_eig < self.mu - 1e-12 {
            return Err(Error::EllipticityViolation {
                context: context(),
                eigenvalue: min_eig,
                mu: self.mu,
            });
        }
        let bound = 1.0 / self.mu;
        for i in 0..self.dim {
            for j in 0..self.dim {
                if a[i][j].abs() > bound + 1e-12 {
                    return Err(Error::Config(format!(
                        "entry A[{i}][{j}] = {v} exceeds 1/mu = {bound} at {ctx}",
                        v = a[i][j],
                        ctx = context()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn symmetric_min_eig(a: &Mat, dim: usize) -> f64 {
    if dim == 1 {
        a[0][0]
    } else {
        let half_trace = 0.5 * (a[0][0] + a[1][1]);
        let off = 0.5 * (a[0][1] + a[1][0]);
        let radius = (0.25 * (a[0][0] - a[1][1]).powi(2) + off * off).sqrt();
        half_trace - radius
    }
}
