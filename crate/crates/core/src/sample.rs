//! Operating points and labeled efficiency samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DUTY_RANGE: (f64, f64) = (0.0, 1.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, 1.0);
/// Output power range in watts.
pub const POWER_RANGE: (f64, f64) = (200.0, 2000.0);

/// A modulation/load triple at which converter efficiency is defined.
///
/// `d1` is the primary duty ratio, `d2` the inner phase shift and `p` the
/// output power in watts. The outer phase shift is resolved internally by
/// the power loop and is not a free input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub d1: f64,
    pub d2: f64,
    pub p: f64,
}

impl OperatingPoint {
    /// Builds a point, rejecting any coordinate outside its range.
    pub fn new(d1: f64, d2: f64, p: f64) -> Result<Self> {
        let point = OperatingPoint { d1, d2, p };
        point.validate()?;
        Ok(point)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("d1", self.d1, DUTY_RANGE)?;
        check_range("d2", self.d2, PHASE_RANGE)?;
        check_range("p_watts", self.p, POWER_RANGE)
    }

    pub fn features(&self) -> [f64; 3] {
        [self.d1, self.d2, self.p]
    }
}

pub(crate) fn check_range(field: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    // NaN fails both comparisons and is rejected here too.
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::Range {
            field,
            value,
            lo,
            hi,
            line: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Simulation,
    Experimental,
}

impl Fidelity {
    /// Tag used in CSV files.
    pub fn tag(self) -> &'static str {
        match self {
            Fidelity::Simulation => "sim",
            Fidelity::Experimental => "exp",
        }
    }
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Fidelity::Simulation),
            "exp" => Ok(Fidelity::Experimental),
            other => Err(Error::Malformed {
                line: None,
                message: format!("unknown fidelity tag {other:?} (expected sim or exp)"),
            }),
        }
    }
}

/// An operating point labeled with an efficiency in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub point: OperatingPoint,
    pub eta: f64,
    pub fidelity: Fidelity,
}

impl Sample {
    pub fn new(point: OperatingPoint, eta: f64, fidelity: Fidelity) -> Result<Self> {
        let sample = Sample {
            point,
            eta,
            fidelity,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        self.point.validate()?;
        if self.eta > 0.0 && self.eta <= 100.0 {
            Ok(())
        } else {
            Err(Error::Range {
                field: "eta_percent",
                value: self.eta,
                lo: 0.0,
                hi: 100.0,
                line: None,
            })
        }
    }
}

/// Splits samples into a row-major feature matrix and a target vector.
pub fn to_matrix(samples: &[Sample]) -> (Vec<Vec<f64>>, Vec<f64>) {
    samples
        .iter()
        .map(|s| (s.point.features().to_vec(), s.eta))
        .unzip()
}
