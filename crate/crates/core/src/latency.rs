//! Analytical latency model of the two kernels.
//!
//! With `l = ceil(K / w)` vector steps per output and a per-step cost `c2`
//! shared by both kernels, the conventional kernel pays an extra horizontal
//! reduction of `c1 * log2(w)` per output:
//!
//! ```text
//! conventional = M * (l * c2 + c1 * log2(w))
//! ngemm        = M * l * c2
//! speedup      = 1 + c3 * log2(w) / l,    c3 = c1 / c2
//! ```
//!
//! `M` counts outputs sharing one reduction, so a full `M x N` GEMM uses
//! `M * N` here. Units are whatever `c1` and `c2` carry (nanoseconds when
//! fitted from benchmark timings).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    c1: f64,
    c2: f64,
}

impl CostParams {
    /// `c1` is the cost per tree-reduction step, `c2` per vector step.
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !c1.is_finite() || !c2.is_finite() || c2 < 0.0 {
            return Err(Error::config(format!("invalid cost parameters c1={c1}, c2={c2}")));
        }
        Ok(CostParams { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn c3(&self) -> f64 {
        self.c1 / self.c2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemPoint {
    pub m: u64,
    pub k: u64,
    pub w: u32,
    pub l: u64,
}

impl ProblemPoint {
    pub fn new(m: u64, k: u64, w: u32) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::config("m and k must be >= 1"));
        }
        if w < 2 || !w.is_power_of_two() {
            return Err(Error::config(format!("vector width {w} is not a power of two >= 2")));
        }
        Ok(ProblemPoint {
            m,
            k,
            w,
            l: k.div_ceil(w as u64),
        })
    }

    /// Point with exactly `l` full vector steps (`K = l * w`).
    pub fn with_steps(m: u64, w: u32, l: u64) -> Result<Self> {
        Self::new(m, l * w as u64, w)
    }

    pub fn log2_w(&self) -> f64 {
        self.w.trailing_zeros() as f64
    }
}

pub fn latency_conventional(p: &ProblemPoint, c: &CostParams) -> f64 {
    p.m as f64 * (p.l as f64 * c.c2 + c.c1 * p.log2_w())
}

pub fn latency_ngemm(p: &ProblemPoint, c: &CostParams) -> f64 {
    p.m as f64 * p.l as f64 * c.c2
}

pub fn speedup_ratio(p: &ProblemPoint, c: &CostParams) -> f64 {
    1.0 + c.c3() * p.log2_w() / p.l as f64
}

/// One measured problem: both kernels' times at the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSample {
    pub point: ProblemPoint,
    pub conventional: f64,
    pub ngemm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub params: CostParams,
    /// Goodness of `ngemm = c2 * M * l`.
    pub r2_ngemm: f64,
    /// Goodness of `conventional = c2 * M * l + c1 * M * log2(w)`.
    pub r2_conventional: f64,
    /// `c2` refitted from the conventional timings alone, when the samples
    /// separate the two terms. The model assumes it equals `params.c2`.
    pub c2_conventional: Option<f64>,
    pub samples: usize,
}

impl FitReport {
    /// Relative gap between the per-kernel `c2` estimates.
    pub fn c2_discrepancy(&self) -> Option<f64> {
        self.c2_conventional
            .map(|c| (c - self.params.c2).abs() / self.params.c2)
    }
}

fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Least-squares slope through the origin.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// Fits `c2` from the broadcast timings (slope against `M * l`), then `c1`
/// from what the conventional timings have left over (slope against
/// `M * log2(w)`).
pub fn fit_constants(samples: &[FitSample]) -> Result<FitReport> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 samples, got {}", samples.len())));
    }
    let first_l = samples[0].point.l;
    if samples.iter().all(|s| s.point.l == first_l) {
        return Err(Error::Fit(format!("all samples share l = {first_l}; the fit is rank deficient")));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.point.m as f64 * s.point.l as f64).collect();
    let z: Vec<f64> = samples.iter().map(|s| s.point.m as f64 * s.point.log2_w()).collect();
    let t_ng: Vec<f64> = samples.iter().map(|s| s.ngemm).collect();
    let t_cv: Vec<f64> = samples.iter().map(|s| s.conventional).collect();

    let c2 = slope(&x, &t_ng);
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::Fit(format!("fitted c2 = {c2} is not positive")));
    }
    let residual: Vec<f64> = t_cv.iter().zip(&x).map(|(t, xi)| t - c2 * xi).collect();
    let c1 = slope(&z, &residual);
    let params = CostParams::new(c1, c2).map_err(|e| Error::Fit(e.to_string()))?;

    let pred_ng: Vec<f64> = x.iter().map(|xi| c2 * xi).collect();
    let pred_cv: Vec<f64> = x.iter().zip(&z).map(|(xi, zi)| c2 * xi + c1 * zi).collect();

    // two-term fit of the conventional timings on their own
    let (sxx, szz, sxz) = (
        x.iter().map(|a| a * a).sum::<f64>(),
        z.iter().map(|a| a * a).sum::<f64>(),
        x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>(),
    );
    let (sxy, szy) = (
        x.iter().zip(&t_cv).map(|(a, b)| a * b).sum::<f64>(),
        z.iter().zip(&t_cv).map(|(a, b)| a * b).sum::<f64>(),
    );
    let det = sxx * szz - sxz * sxz;
    let c2_conventional = (det.abs() > 1e-12 * sxx * szz).then(|| (sxy * szz - szy * sxz) / det);

    Ok(FitReport {
        params,
        r2_ngemm: r_squared(&t_ng, &pred_ng),
        r2_conventional: r_squared(&t_cv, &pred_cv),
        c2_conventional,
        samples: samples.len(),
    })
}
