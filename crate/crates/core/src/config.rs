//! Line-oriented `key = value` configuration.
//!
//! ```text
//! # comment
//! [pso]
//! population = 10
//! iterations = 50
//!
//! [oracle]
//! noise_sigma = 0.05
//! ```
//!
//! Keys before the first `[section]` header belong to the section named by
//! the caller as the default. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::datasets::SplitSpec;
use crate::error::{Error, Result};
use crate::gbrt::GbrtHyperparams;
use crate::oracle::OracleParams;
use crate::pso::PsoConfig;

pub const SECTIONS: &[&str] = &["pso", "oracle", "stage1", "stage2", "data"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

impl ConfigFile {
    pub fn load(path: &Path, default_section: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigFile::parse(&text, default_section)
    }

    pub fn parse(text: &str, default_section: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = default_section.to_string();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!(
                        "line {line_no}: unknown section [{name}] (expected one of {})",
                        SECTIONS.join(", ")
                    )));
                }
                current = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line_no}: expected `key = value`, found {line:?}"
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: missing key")));
            }
            let previous = sections.entry(current.clone()).or_default().insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    line: line_no,
                },
            );
            if let Some(prev) = previous {
                return Err(Error::Config(format!(
                    "line {line_no}: key {current}.{key} already set on line {}",
                    prev.line
                )));
            }
        }
        Ok(ConfigFile { sections })
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            entries: self.sections.get(name),
        }
    }

    pub fn pso(&self, base: PsoConfig) -> Result<PsoConfig> {
        let s = self.section("pso");
        s.reject_unknown(&[
            "population",
            "iterations",
            "v_min",
            "v_max",
            "c1",
            "c2",
            "omega_start",
            "omega_end",
            "seed",
        ])?;
        let cfg = PsoConfig {
            population: s.get("population", base.population)?,
            iterations: s.get("iterations", base.iterations)?,
            v_min: s.get("v_min", base.v_min)?,
            v_max: s.get("v_max", base.v_max)?,
            c1: s.get("c1", base.c1)?,
            c2: s.get("c2", base.c2)?,
            omega_start: s.get("omega_start", base.omega_start)?,
            omega_end: s.get("omega_end", base.omega_end)?,
            seed: s.get("seed", base.seed)?,
            bounds: base.bounds,
        };
        cfg.validate().map_err(|e| s.wrap(e))?;
        Ok(cfg)
    }

    pub fn oracle(&self) -> Result<OracleParams> {
        let s = self.section("oracle");
        let d = OracleParams::default();
        s.reject_unknown(&[
            "v1",
            "v2",
            "p_rated",
            "f_s",
            "turns_ratio",
            "l_k",
            "peak_eta",
            "peak_load_fraction",
            "curvature_a",
            "curvature_b",
            "cross_c",
            "load_curvature",
            "gap_mean",
            "gap_tilt_d1",
            "gap_tilt_d2",
            "gap_tilt_p",
            "noise_sigma",
        ])?;
        let params = OracleParams {
            v1: s.get("v1", d.v1)?,
            v2: s.get("v2", d.v2)?,
            p_rated: s.get("p_rated", d.p_rated)?,
            f_s: s.get("f_s", d.f_s)?,
            turns_ratio: s.get("turns_ratio", d.turns_ratio)?,
            l_k: s.get("l_k", d.l_k)?,
            peak_eta: s.get("peak_eta", d.peak_eta)?,
            peak_load_fraction: s.get("peak_load_fraction", d.peak_load_fraction)?,
            curvature_a: s.get("curvature_a", d.curvature_a)?,
            curvature_b: s.get("curvature_b", d.curvature_b)?,
            cross_c: s.get("cross_c", d.cross_c)?,
            load_curvature: s.get("load_curvature", d.load_curvature)?,
            gap_mean: s.get("gap_mean", d.gap_mean)?,
            gap_tilt_d1: s.get("gap_tilt_d1", d.gap_tilt_d1)?,
            gap_tilt_d2: s.get("gap_tilt_d2", d.gap_tilt_d2)?,
            gap_tilt_p: s.get("gap_tilt_p", d.gap_tilt_p)?,
            noise_sigma: s.get("noise_sigma", d.noise_sigma)?,
        };
        params.validate().map_err(|e| s.wrap(e))?;
        Ok(params)
    }

    /// Hyperparameters from section `stage1` or `stage2`.
    pub fn gbrt(&self, section: &str, base: GbrtHyperparams) -> Result<GbrtHyperparams> {
        let s = self.section(section);
        s.reject_unknown(&["num_trees", "max_height", "l2_lambda", "learning_rate", "min_samples_split"])?;
        let hp = GbrtHyperparams {
            num_trees: s.get("num_trees", base.num_trees)?,
            max_height: s.get("max_height", base.max_height)?,
            l2_lambda: s.get("l2_lambda", base.l2_lambda)?,
            learning_rate: s.get("learning_rate", base.learning_rate)?,
            min_samples_split: s.get("min_samples_split", base.min_samples_split)?,
        };
        hp.validate().map_err(|e| s.wrap(e))?;
        Ok(hp)
    }

    /// Data-generation settings from section `data`.
    pub fn data(&self, base: DataConfig) -> Result<DataConfig> {
        let s = self.section("data");
        s.reject_unknown(&[
            "sim_grid",
            "exp_count",
            "seed",
            "sim_split",
            "exp_split",
        ])?;
        let sim_grid = match s.raw("sim_grid") {
            Some(v) => parse_grid(v).map_err(|m| s.error("sim_grid", m))?,
            None => base.sim_grid,
        };
        let fractions = |key: &str, default: (f64, f64, f64)| -> Result<(f64, f64, f64)> {
            match s.raw(key) {
                None => Ok(default),
                Some(v) => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    let nums = parts
                        .iter()
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| s.error(key, format!("expected three comma-separated fractions, got {v:?}")))?;
                    match nums.as_slice() {
                        [a, b, c] => Ok((*a, *b, *c)),
                        _ => Err(s.error(key, format!("expected three comma-separated fractions, got {v:?}"))),
                    }
                }
            }
        };
        let cfg = DataConfig {
            sim_grid,
            exp_count: s.get("exp_count", base.exp_count)?,
            seed: s.get("seed", base.seed)?,
            sim_split: fractions("sim_split", base.sim_split)?,
            exp_split: fractions("exp_split", base.exp_split)?,
        };
        for (key, (a, b, c)) in [("sim_split", cfg.sim_split), ("exp_split", cfg.exp_split)] {
            SplitSpec::new(a, b, c, 0).map_err(|e| s.error(key, e.to_string()))?;
        }
        Ok(cfg)
    }
}

/// Parses `25x25x20`.
pub fn parse_grid(text: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = text.trim().split(['x', 'X']).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("expected N1xN2xNP, got {text:?}"))?;
    match nums.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(format!("expected N1xN2xNP, got {text:?}")),
    }
}

/// Dataset geometry and split fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub sim_grid: (usize, usize, usize),
    pub exp_count: usize,
    pub seed: u64,
    pub sim_split: (f64, f64, f64),
    pub exp_split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sim_grid: (25, 25, 20),
            exp_count: 1000,
            seed: 42,
            sim_split: (0.1, 0.2, 0.7),
            exp_split: (0.4, 0.2, 0.4),
        }
    }
}

struct Section<'a> {
    name: String,
    entries: Option<&'a BTreeMap<String, Entry>>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.and_then(|e| e.get(key)).map(|e| e.value.as_str())
    }

    fn error(&self, key: &str, message: impl std::fmt::Display) -> Error {
        let line = self
            .entries
            .and_then(|e| e.get(key))
            .map_or(String::new(), |e| format!("line {}: ", e.line));
        Error::Config(format!("{line}{}.{key}: {message}", self.name))
    }

    fn wrap(&self, err: Error) -> Error {
        match err {
            Error::Config(m) => Error::Config(format!("[{}] {m}", self.name)),
            other => other,
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| self.error(key, format!("cannot parse {v:?}"))),
        }
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        if let Some(entries) = self.entries {
            if let Some(key) = entries.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(self.error(key, "unknown key"));
            }
        }
        Ok(())
    }
}
