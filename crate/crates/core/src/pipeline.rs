//! End-to-end glue: generate data, train the stacked surrogate, and search
//! it for the best modulation at each load.

use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::datasets::{self, Dataset, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::gbrt::GbrtHyperparams;
use crate::oracle::{self, GridArgmax, OracleParams};
use crate::pso::{self, PsoConfig};
use crate::residual_stack::{compare_baselines, d2ea_fit, Comparison, D2eaModel};
use crate::sample::{check_range, OperatingPoint, POWER_RANGE};

/// Grid resolution of the brute-force cross-check.
pub const GRID_RESOLUTION: usize = 201;

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub sim: Dataset,
    pub exp: Dataset,
}

pub fn generate(cfg: &DataConfig, params: &OracleParams) -> Result<GeneratedData> {
    Ok(GeneratedData {
        sim: datasets::generate_sim_grid(cfg.sim_grid, params)?,
        exp: datasets::generate_exp_pool(cfg.exp_count, params, cfg.seed)?,
    })
}

#[derive(Debug, Clone)]
pub struct Partitions {
    pub sim: Split,
    pub exp: Split,
}

pub fn partition(sim: &Dataset, exp: &Dataset, cfg: &DataConfig) -> Result<Partitions> {
    let (a, b, c) = cfg.sim_split;
    let (d, e, f) = cfg.exp_split;
    Ok(Partitions {
        sim: datasets::split(sim, &SplitSpec::new(a, b, c, cfg.seed)?)?,
        exp: datasets::split(exp, &SplitSpec::new(d, e, f, cfg.seed.wrapping_add(1))?)?,
    })
}

/// Fits the stack on the training partitions; with `baselines` also fits
/// both single-source baselines and scores everything on the experimental
/// validation partition.
pub fn train(
    parts: &Partitions,
    hp1: &GbrtHyperparams,
    hp2: &GbrtHyperparams,
    baselines: bool,
) -> Result<(D2eaModel, Option<Comparison>)> {
    let sim_train = parts.sim.train.samples();
    let exp_train = parts.exp.train.samples();
    if baselines {
        let cmp = compare_baselines(sim_train, exp_train, hp1, hp2, parts.exp.validation.samples())?;
        Ok((cmp.d2ea.clone(), Some(cmp)))
    } else {
        Ok((d2ea_fit(sim_train, exp_train, hp1, hp2)?, None))
    }
}

/// Objective over `(d1, d2)` at fixed load.
pub fn surrogate_at(model: &D2eaModel, power: f64) -> impl Fn(f64, f64) -> f64 + Sync + '_ {
    move |d1, d2| {
        model
            .predict(&OperatingPoint { d1, d2, p: power })
            .unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimumReport {
    pub power: f64,
    pub d1: f64,
    pub d2: f64,
    pub eta: f64,
    pub grid: GridArgmax,
    pub trace: Vec<f64>,
}

impl OptimumReport {
    /// Largest per-coordinate distance between swarm and grid optima.
    pub fn grid_discrepancy(&self) -> f64 {
        (self.d1 - self.grid.d1).abs().max((self.d2 - self.grid.d2).abs())
    }
}

/// Runs the swarm on `f` over `[0, 1]²` and cross-checks with a grid scan.
pub fn optimize_objective<F>(f: F, power: f64, pso_cfg: &PsoConfig) -> Result<OptimumReport>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    check_range("p_watts", power, POWER_RANGE)?;
    let cfg = PsoConfig {
        bounds: vec![(0.0, 1.0), (0.0, 1.0)],
        ..pso_cfg.clone()
    };
    let out = pso::optimize(|x| f(x[0], x[1]), &cfg)?;
    let grid = oracle::grid_argmax(&f, GRID_RESOLUTION);
    Ok(OptimumReport {
        power,
        d1: out.best_position[0],
        d2: out.best_position[1],
        eta: out.best_value,
        grid,
        trace: out.trace,
    })
}

pub fn optimize(model: &D2eaModel, power: f64, pso_cfg: &PsoConfig) -> Result<OptimumReport> {
    optimize_objective(surrogate_at(model, power), power, pso_cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p_watts: f64,
    pub d1_opt: f64,
    pub d2_opt: f64,
    pub eta_pred: f64,
    pub eta_hw_check: Option<f64>,
}

pub fn sweep(
    model: &D2eaModel,
    powers: &[f64],
    pso_cfg: &PsoConfig,
    params: Option<&OracleParams>,
) -> Result<Vec<SweepPoint>> {
    for &p in powers {
        check_range("p_watts", p, POWER_RANGE)?;
    }
    powers
        .iter()
        .map(|&p| {
            let cfg = PsoConfig {
                bounds: vec![(0.0, 1.0), (0.0, 1.0)],
                ..pso_cfg.clone()
            };
            let objective = surrogate_at(model, p);
            let out = pso::optimize(|x| objective(x[0], x[1]), &cfg)?;
            let (d1, d2) = (out.best_position[0], out.best_position[1]);
            let check = params
                .map(|o| oracle::eta_hw(&OperatingPoint { d1, d2, p }, o))
                .transpose()?;
            Ok(SweepPoint {
                p_watts: p,
                d1_opt: d1,
                d2_opt: d2,
                eta_pred: out.best_value,
                eta_hw_check: check,
            })
        })
        .collect()
}

/// Parses `200:2000:200` (inclusive start:stop:step) or `600,1000,1600`.
pub fn parse_powers(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("power spec {spec:?}: expected start:stop:step or a comma list"));
    let spec = spec.trim();
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| start + step * i as f64).collect())
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}
