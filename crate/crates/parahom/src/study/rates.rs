use crate::error::{Error, Result};

/// Least-squares line through `(log eps, log err)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fit a log-log convergence rate. Requires at least 3 strictly positive
/// (eps, error) pairs.
pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() {
        return Err(Error::DegenerateFit(format!(
            "length mismatch: {} eps vs {} errors",
            eps.len(),
            errors.len()
        )));
    }
    if eps.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 points, got {}",
            eps.len()
        )));
    }
    if eps.iter().any(|&e| e <= 0.0) || errors.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateFit(
            "eps and errors must be strictly positive".into(),
        ));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all eps values equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}
