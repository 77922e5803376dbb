//! Synthetic efficiency surfaces standing in for circuit simulation and the
//! hardware rig, plus an exhaustive grid argmax used as ground truth.
//!
//! The "hardware" surface is a positive-definite quadratic bowl in
//! `(d1, d2)` whose optimum ridge moves linearly with load. The
//! "simulation" surface adds a smooth discrepancy: a constant optimistic
//! bias plus linear tilts that are odd about the domain center, which shift
//! the simulated optimum away from the real one.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sample::{OperatingPoint, POWER_RANGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    // Descriptive converter ratings, carried into reports only.
    pub v1: f64,
    pub v2: f64,
    pub p_rated: f64,
    pub f_s: f64,
    pub turns_ratio: f64,
    pub l_k: f64,

    /// Efficiency at the optimum, in percent.
    pub peak_eta: f64,
    /// Load fraction `P / p_rated` where the peak occurs.
    pub peak_load_fraction: f64,
    pub curvature_a: f64,
    pub curvature_b: f64,
    pub cross_c: f64,
    pub load_curvature: f64,
    pub gap_mean: f64,
    pub gap_tilt_d1: f64,
    pub gap_tilt_d2: f64,
    pub gap_tilt_p: f64,
    /// Standard deviation of measurement noise in percentage points.
    pub noise_sigma: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            v1: 300.0,
            v2: 140.0,
            p_rated: 2000.0,
            f_s: 20e3,
            turns_ratio: 2.0,
            l_k: 236e-6,
            peak_eta: 98.45,
            peak_load_fraction: 0.3,
            curvature_a: 6.0,
            curvature_b: 4.0,
            cross_c: 1.5,
            load_curvature: 2.0,
            gap_mean: 1.1,
            gap_tilt_d1: 1.2,
            gap_tilt_d2: -1.6,
            gap_tilt_p: 0.4,
            noise_sigma: 0.05,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = (self.curvature_a, self.curvature_b, self.cross_c);
        if !(a > 0.0 && 4.0 * a * b > c * c) {
            return Err(Error::Config(format!(
                "curvature_a = {a}, curvature_b = {b}, cross_c = {c} do not form a positive-definite bowl"
            )));
        }
        if !(self.peak_eta > 0.0 && self.peak_eta <= 100.0) {
            return Err(Error::Config(format!(
                "peak_eta must lie in (0, 100], got {}",
                self.peak_eta
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.p_rated > 0.0) {
            return Err(Error::Config(format!("p_rated must be > 0, got {}", self.p_rated)));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("oracle params serialize");
        hex::encode(Sha256::digest(&json))
    }

    fn load_fraction(&self, p: f64) -> f64 {
        p / self.p_rated
    }

    /// Load fraction at the center of the power range; the load tilt of the
    /// gap is odd about it.
    fn load_center(&self) -> f64 {
        self.load_fraction(0.5 * (POWER_RANGE.0 + POWER_RANGE.1))
    }

    /// Analytic `(d1, d2)` maximizing the hardware surface at load `p`.
    pub fn hw_optimum(&self, p: f64) -> (f64, f64) {
        let x = self.load_fraction(p);
        (0.35 + 0.2 * x, 0.25 + 0.15 * x)
    }

    /// Analytic `(d1, d2)` maximizing the simulation surface at load `p`:
    /// the stationary point of the bowl plus the linear gap tilt.
    pub fn sim_optimum(&self, p: f64) -> (f64, f64) {
        let (d1, d2) = self.hw_optimum(p);
        let (a, b, c) = (self.curvature_a, self.curvature_b, self.cross_c);
        // ∇ = 0:  2a·u + c·w = t1,  c·u + 2b·w = t2
        let det = 4.0 * a * b - c * c;
        let u = (2.0 * b * self.gap_tilt_d1 - c * self.gap_tilt_d2) / det;
        let w = (2.0 * a * self.gap_tilt_d2 - c * self.gap_tilt_d1) / det;
        (d1 + u, d2 + w)
    }

    /// Simulation-minus-hardware discrepancy in percentage points.
    pub fn gap(&self, point: &OperatingPoint) -> f64 {
        self.gap_mean
            + self.gap_tilt_p * (self.load_fraction(point.p) - self.load_center())
            + self.gap_tilt_d1 * (point.d1 - 0.5)
            + self.gap_tilt_d2 * (point.d2 - 0.5)
    }

    fn hw_unchecked(&self, point: &OperatingPoint) -> f64 {
        let x = self.load_fraction(point.p);
        let (d1_opt, d2_opt) = self.hw_optimum(point.p);
        let u = point.d1 - d1_opt;
        let w = point.d2 - d2_opt;
        let dl = x - self.peak_load_fraction;
        self.peak_eta
            - self.load_curvature * dl * dl
            - self.curvature_a * u * u
            - self.curvature_b * w * w
            - self.cross_c * u * w
    }
}

/// Noise-free "physical world" efficiency in percent.
pub fn eta_hw(point: &OperatingPoint, params: &OracleParams) -> Result<f64> {
    point.validate()?;
    Ok(params.hw_unchecked(point))
}

/// Simulated efficiency: the hardware surface plus the discrepancy field.
pub fn eta_sim(point: &OperatingPoint, params: &OracleParams) -> Result<f64> {
    point.validate()?;
    Ok(params.hw_unchecked(point) + params.gap(point))
}

/// One noisy efficiency measurement drawn from `rng`.
pub fn measure<R: Rng + ?Sized>(point: &OperatingPoint, params: &OracleParams, rng: &mut R) -> Result<f64> {
    let truth = eta_hw(point, params)?;
    if params.noise_sigma == 0.0 {
        return Ok(truth);
    }
    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?
        .sample(rng);
    Ok(truth + noise)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArgmax {
    pub d1: f64,
    pub d2: f64,
    pub value: f64,
}

/// Exhaustive scan of `f` over a `resolution × resolution` grid on `[0, 1]²`,
/// endpoints included. Ties go to the lowest `d1`, then the lowest `d2`.
///
/// Panics if `resolution < 2`.
pub fn grid_argmax<F>(f: F, resolution: usize) -> GridArgmax
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    assert!(resolution >= 2, "grid resolution must be at least 2");
    let step = |i: usize| i as f64 / (resolution - 1) as f64;
    let values: Vec<f64> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| f(step(k / resolution), step(k % resolution)))
        .collect();
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    GridArgmax {
        d1: step(best / resolution),
        d2: step(best % resolution),
        value: values[best],
    }
}
