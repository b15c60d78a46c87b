use serde::Serialize;

use crate::error::Result;
use crate::study::config::StudyConfig;
use crate::study::rates::RateFit;

/// One per-eps row of the study (CSV schema:
/// `eps,err_L2L2,err_L2Lp0,w_L2H1,layer_norm,h,dt,Ny,Ntau,wall_seconds`).
#[derive(Debug, Clone, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    pub err_l2l2: f64,
    pub err_l2lp0: Option<f64>,
    pub w_l2h1: Option<f64>,
    pub layer_norm: f64,
    pub h: f64,
    pub dt: f64,
    pub n_y: usize,
    pub n_tau: usize,
    pub wall_seconds: f64,
    /// extra configured (q, p) norms of u_eps - u_0
    pub extra_norms: Vec<ExtraNorm>,
    pub cell_worst_residual: f64,
    pub step_worst_residual: f64,
    pub effective_min_eig: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtraNorm {
    pub q: f64,
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureNote {
    pub eps: f64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorGuardReport {
    pub eps: f64,
    pub floor: f64,
    pub smallest_error: f64,
    pub passed: bool,
}

/// Full study report: CSV rows plus a JSON sidecar with fits and metadata.
#[derive(Debug, Serialize)]
pub struct ConvergenceReport {
    pub toolkit_version: String,
    pub dimension: usize,
    pub rows: Vec<EpsRow>,
    pub failures: Vec<FailureNote>,
    pub fit_u_l2l2: Option<RateFit>,
    pub fit_u_l2lp0: Option<RateFit>,
    pub fit_w_l2h1: Option<RateFit>,
    pub fit_layer: Option<RateFit>,
    pub monotone_l2l2: bool,
    pub floor_guard: Option<FloorGuardReport>,
    pub slopes_aborted: Option<String>,
    pub config: StudyConfig,
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

impl ConvergenceReport {
    /// Deterministic CSV: identical configs produce byte-identical rows
    /// except the wall_seconds column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,err_L2L2,err_L2Lp0,w_L2H1,layer_norm,h,dt,Ny,Ntau,wall_seconds\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:.3}\n",
                fmt(row.eps),
                fmt(row.err_l2l2),
                fmt_opt(row.err_l2lp0),
                fmt_opt(row.w_l2h1),
                fmt(row.layer_norm),
                fmt(row.h),
                fmt(row.dt),
                row.n_y,
                row.n_tau,
                row.wall_seconds,
            ));
        }
        // failed rows are marked with the stage in place of the metrics
        for f in &self.failures {
            out.push_str(&format!("{},FAILED:{},,,,,,,,\n", fmt(f.eps), f.stage));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| crate::error::Error::Config(format!("report serialization: {e}")))
    }

    pub fn write(&self, out_dir: &std::path::Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        std::fs::create_dir_all(out_dir)?;
        let csv_path = out_dir.join(&self.config.output.csv);
        let json_path = out_dir.join(&self.config.output.json);
        std::fs::write(&csv_path, self.to_csv())?;
        std::fs::write(&json_path, self.to_json()?)?;
        Ok((csv_path, json_path))
    }
}
