use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis spatial factor `sin/cos(freq_pi * pi * x + phase)` (or 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFactor {
    #[serde(default = "default_space_kind")]
    pub kind: SpaceKind,
    #[serde(default = "one")]
    pub freq_pi: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    One,
    Sin,
    Cos,
}

fn default_space_kind() -> SpaceKind {
    SpaceKind::Sin
}

fn one() -> f64 {
    1.0
}

impl SpaceFactor {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let angle = self.freq_pi * std::f64::consts::PI * x + self.phase;
        match self.kind {
            SpaceKind::One => 1.0,
            SpaceKind::Sin => angle.sin(),
            SpaceKind::Cos => angle.cos(),
        }
    }
}

/// Temporal factor `poly(t) * exp(rate t) * trig(2 pi freq t + phase)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeFactor {
    /// polynomial coefficients, constant first; empty means 1
    #[serde(default)]
    pub poly: Vec<f64>,
    #[serde(default)]
    pub exp_rate: f64,
    #[serde(default)]
    pub trig_freq: f64,
    #[serde(default)]
    pub trig_phase: f64,
    #[serde(default)]
    pub trig_is_cos: bool,
    #[serde(default)]
    pub trig_amplitude: f64,
    #[serde(default = "one")]
    pub trig_offset: f64,
}

impl Default for TimeFactor {
    fn default() -> Self {
        TimeFactor {
            poly: vec![],
            exp_rate: 0.0,
            trig_freq: 0.0,
            trig_phase: 0.0,
            trig_is_cos: false,
            trig_amplitude: 0.0,
            trig_offset: 1.0,
        }
    }
}

impl TimeFactor {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let mut p = if self.poly.is_empty() { 1.0 } else { 0.0 };
        let mut tn = 1.0;
        for c in &self.poly {
            p += c * tn;
            tn *= t;
        }
        let mut v = p;
        if self.exp_rate != 0.0 {
            v *= (self.exp_rate * t).exp();
        }
        let trig = if self.trig_amplitude != 0.0 {
            let angle = crate::fields::TWO_PI * self.trig_freq * t + self.trig_phase;
            self.trig_offset
                + self.trig_amplitude * if self.trig_is_cos { angle.cos() } else { angle.sin() }
        } else {
            self.trig_offset
        };
        v * trig
    }
}

/// One separable term `amplitude * prod_k space[k](x_k) * time(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldTerm {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub space: Vec<SpaceFactor>,
    #[serde(default)]
    pub time: TimeFactor,
}

/// Analytic scalar field descriptor: a sum of separable terms. Used for
/// sources, initial data, and manufactured solutions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticField {
    #[serde(default)]
    pub terms: Vec<FieldTerm>,
}

impl AnalyticField {
    pub fn zero() -> Self {
        AnalyticField { terms: vec![] }
    }

    /// `amplitude * prod sin(pi x_k) * time factor`, the workhorse shape.
    pub fn sin_pi(dim: usize, amplitude: f64, time: TimeFactor) -> Self {
        AnalyticField {
            terms: vec![FieldTerm {
                amplitude,
                space: (0..dim)
                    .map(|_| SpaceFactor {
                        kind: SpaceKind::Sin,
                        freq_pi: 1.0,
                        phase: 0.0,
                    })
                    .collect(),
                time,
            }],
        }
    }

    #[inline]
    pub fn eval(&self, dim: usize, x: [f64; 2], t: f64) -> f64 {
        let mut v = 0.0;
        for term in &self.terms {
            let mut w = term.amplitude;
            for (k, sf) in term.space.iter().take(dim).enumerate() {
                w *= sf.eval(x[k]);
            }
            w *= term.time.eval(t);
            v += w;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Initial-boundary data for the cylinder problems: source `f`, initial datum
/// `h`, homogeneous Dirichlet boundary (fixed), horizon `t_end`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemData {
    #[serde(default)]
    pub source: AnalyticField,
    #[serde(default)]
    pub initial: AnalyticField,
    pub t_end: f64,
}

impl ProblemData {
    /// The initial datum must vanish on the boundary (compatibility with the
    /// homogeneous Dirichlet condition); checked by sampling.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        let n = 17;
        for k in 0..=n {
            let s = k as f64 / n as f64;
            let probes: Vec<[f64; 2]> = if dim == 1 {
                vec![[0.0, 0.0], [1.0, 0.0]]
            } else {
                vec![[0.0, s], [1.0, s], [s, 0.0], [s, 1.0]]
            };
            for p in probes {
                let v = self.initial.eval(dim, p, 0.0);
                if v.abs() > 1e-10 {
                    return Err(Error::Config(format!(
                        "initial datum does not vanish on the boundary: h({p:?}) = {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}
