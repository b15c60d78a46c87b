use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientSpec;
use crate::solvers::ProblemData;

fn default_h_per_eps() -> usize {
    16
}

fn default_dt_per_eps_sq() -> usize {
    16
}

fn default_sample_per_eps() -> usize {
    2
}

fn default_taps() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_linear() -> String {
    "auto".to_string()
}

fn default_res_tol() -> f64 {
    1e-10
}

fn default_max_iters() -> usize {
    2000
}

fn default_direct_threshold() -> usize {
    20_000
}

fn default_csv() -> String {
    "study.csv".into()
}

fn default_json() -> String {
    "study.json".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyParams {
    pub epsilons: Vec<f64>,
    /// h = eps / h_per_eps (>= 16)
    #[serde(default = "default_h_per_eps")]
    pub h_per_eps: usize,
    /// dt = eps^2 / dt_per_eps_sq (>= 16)
    #[serde(default = "default_dt_per_eps_sq")]
    pub dt_per_eps_sq: usize,
    /// macroscopic cell-sample spacing = eps / sample_per_eps (>= 2)
    #[serde(default = "default_sample_per_eps")]
    pub sample_per_eps: usize,
    /// additional (q, p) mixed-norm pairs of u_eps - u_0, reported in the JSON
    #[serde(default)]
    pub norms: Vec<(f64, f64)>,
    /// build the corrected expansion w_eps (where the cutoff admits it)
    #[serde(default = "default_true")]
    pub compute_w: bool,
    /// quadrature taps per kernel radius in the smoothing convolutions
    #[serde(default = "default_taps")]
    pub taps_per_radius: usize,
    /// re-run the largest eps on a halved grid and compare
    #[serde(default = "default_true")]
    pub floor_guard: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusParams {
    pub n_y: usize,
    #[serde(default = "crate::study::config::one")]
    pub n_tau: usize,
}

pub(crate) fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    #[serde(default = "default_linear")]
    pub linear: String,
    #[serde(default = "default_res_tol")]
    pub res_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_direct_threshold")]
    pub direct_threshold: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            linear: default_linear(),
            res_tol: default_res_tol(),
            max_iters: default_max_iters(),
            direct_threshold: default_direct_threshold(),
        }
    }
}

impl SolverParams {
    pub fn options(&self) -> crate::linsolve::SolverOptions {
        crate::linsolve::SolverOptions {
            res_tol: self.res_tol,
            max_iters: self.max_iters,
            direct_threshold: self.direct_threshold,
        }
    }

    pub fn make(&self) -> Result<Box<dyn crate::linsolve::LinearSolver>> {
        crate::linsolve::make_solver(&self.linear, &self.options())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputParams {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_json")]
    pub json: String,
}

impl Default for OutputParams {
    fn default() -> Self {
        OutputParams {
            csv: default_csv(),
            json: default_json(),
        }
    }
}

/// Full study configuration (TOML; unknown keys are errors).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub dimension: usize,
    pub coefficient: CoefficientSpec,
    pub problem: ProblemData,
    pub study: StudyParams,
    pub torus: TorusParams,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub output: OutputParams,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != self.coefficient.dim {
            return Err(Error::Config(format!(
                "dimension = {} but coefficient.dim = {}",
                self.dimension, self.coefficient.dim
            )));
        }
        self.coefficient.validate()?;
        self.problem.validate(self.dimension)?;
        let t_end = self.problem.t_end;
        let limit = t_end.sqrt() / 5.0;
        for &eps in &self.study.epsilons {
            if !(eps > 0.0) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
            if eps > limit + 1e-12 {
                return Err(Error::EpsilonTooLarge {
                    eps,
                    limit,
                    reason: "study requires eps <= sqrt(T)/5".into(),
                });
            }
        }
        if self.study.epsilons.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if self.study.h_per_eps < 16 || self.study.dt_per_eps_sq < 16 {
            return Err(Error::Config(
                "grid policy requires h_per_eps >= 16 and dt_per_eps_sq >= 16".into(),
            ));
        }
        if self.study.sample_per_eps < 2 {
            return Err(Error::Config("sample_per_eps must be >= 2".into()));
        }
        for &(q, p) in &self.study.norms {
            if q < 1.0 || p < 1.0 {
                return Err(Error::InvalidExponent {
                    value: if q < 1.0 { q } else { p },
                });
            }
        }
        if self.torus.n_y < 2 {
            return Err(Error::Config("torus n_y must be >= 2".into()));
        }
        Ok(())
    }

    /// `p0 = 2d/(d-1)`; only finite (and reported) for d = 2.
    pub fn p0(&self) -> Option<f64> {
        if self.dimension == 2 {
            Some(4.0)
        } else {
            None
        }
    }
}
