use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

/// Global experiment parameters. `d_budget` is the partition degree `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub alpha: f64,
    pub n: usize,
    pub p: f64,
    pub r: f64,
    pub eps: f64,
    pub delta: f64,
    pub k: usize,
    pub d_budget: usize,
    pub seed: u64,
    /// Surface-catalog mode: for `n > 3` the exponent range needs `alpha > 1`.
    pub catalog_mode: bool,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            alpha: 2.0,
            n: 3,
            p: 4.0,
            r: 64.0,
            eps: 0.2,
            delta: 0.05,
            k: 4,
            d_budget: 4,
            seed: 0,
            catalog_mode: false,
        }
    }
}

impl ExperimentParams {
    /// `delta = eps^2`, the coupled default.
    pub fn with_coupled_delta(mut self) -> Self {
        self.delta = self.eps * self.eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Parameter(m.to_string()));
        if !(self.alpha > 0.0) || self.alpha == 1.0 {
            return bad("alpha must be positive and different from 1");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.p >= 2.0) {
            return bad("p must be at least 2");
        }
        if !(self.r >= 4.0) {
            return bad("R must be at least 4");
        }
        if !(self.eps > 0.0 && self.eps < 0.25) {
            return bad("eps must lie in (0, 1/4)");
        }
        if !(self.delta > 0.0 && self.delta <= 0.25) {
            return bad("delta must lie in (0, 1/4]");
        }
        if self.k < 2 {
            return bad("K must be at least 2");
        }
        if self.d_budget < 2 {
            return bad("D must be at least 2");
        }
        if self.catalog_mode && self.n > 3 && self.alpha <= 1.0 {
            return bad("n > 3 in catalog mode needs alpha > 1");
        }
        Ok(())
    }
}

/// `beta_c = alpha ((n-1)(1/2 - 1/p) - 1/p)`.
pub fn critical_exponent_raw(alpha: f64, n: usize, p: f64) -> f64 {
    let m = (n - 1) as f64;
    alpha * (m * (0.5 - 1.0 / p) - 1.0 / p)
}

pub fn critical_exponent(params: &ExperimentParams) -> Result<f64> {
    if !(params.p >= 2.0) {
        return Err(LabError::Parameter("p must be at least 2".into()));
    }
    Ok(critical_exponent_raw(params.alpha, params.n, params.p))
}

/// Local smoothing growth exponent `(n-1)(1/2 - 1/p)` used by the sweep.
pub fn smoothing_exponent(n: usize, p: f64) -> f64 {
    (n - 1) as f64 * (0.5 - 1.0 / p)
}
