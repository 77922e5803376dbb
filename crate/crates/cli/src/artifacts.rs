//! Output files: CSV tables, the sweep chart and the run manifest.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use d2ea::oracle::OracleParams;
use d2ea::pipeline::{OptimumReport, SweepPoint};
use d2ea::residual_stack::{AccuracyReport, BaselineReports, SweepRow, TuningResult};
use d2ea::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::io_error;

pub const MANIFEST_FILE: &str = "manifests.jsonl";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Default, Serialize)]
struct ConfigDigests {
    config_file: Option<FileRecord>,
    oracle_params: Option<String>,
}

#[derive(Debug, Default, Serialize)]
struct Seeds {
    data: Option<u64>,
    pso: Option<u64>,
}

/// One line of `manifests.jsonl`, describing a single invocation.
#[derive(Debug, Serialize)]
pub struct Manifest {
    command: &'static str,
    config_digests: ConfigDigests,
    seeds: Seeds,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    duration_seconds: f64,
    status: String,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Manifest {
            command,
            config_digests: ConfigDigests::default(),
            seeds: Seeds::default(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            duration_seconds: 0.0,
            status: String::new(),
        }
    }

    pub fn record_settings(&mut self, config: Option<&Path>, oracle: &OracleParams, data_seed: u64, pso_seed: u64) -> Result<()> {
        self.config_digests.config_file = config.map(record).transpose()?;
        self.config_digests.oracle_params = Some(oracle.digest());
        self.seeds = Seeds {
            data: Some(data_seed),
            pso: Some(pso_seed),
        };
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(record(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(record(path)?);
        Ok(())
    }

    pub fn finish(&mut self, elapsed: Duration, error: Option<&Error>) {
        self.duration_seconds = elapsed.as_secs_f64();
        self.status = match error {
            None => "ok".into(),
            Some(e) => format!("error: {e}"),
        };
    }

    pub fn append(&self, path: &Path) -> Result<()> {
        let mut line = serde_json::to_string(self)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_error(path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| io_error(path, e))
    }
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: file_digest(path)?,
    })
}

const ACCURACY_HEADER: &str = "model,mean_abs_error_pp,accuracy_percent,worst_abs_error_pp,n";

pub fn accuracy_csv(rows: &[(&str, &AccuracyReport)]) -> String {
    let mut out = format!("{ACCURACY_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{}",
            r.mean_abs_error_pp, r.accuracy_percent, r.worst_abs_error_pp, r.n
        );
    }
    out
}

/// The three-route accuracy table, worst route first.
pub fn comparison_csv(reports: &BaselineReports) -> String {
    accuracy_csv(&[
        ("sim-only", &reports.sim_only),
        ("exp-only", &reports.exp_only),
        ("d2ea", &reports.d2ea),
    ])
}

pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,incumbent\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

pub fn optimum_csv(r: &OptimumReport) -> String {
    format!(
        "p_watts,d1,d2,eta,grid_d1,grid_d2,grid_eta,grid_discrepancy\n{},{},{},{},{},{},{},{}\n",
        r.power,
        r.d1,
        r.d2,
        r.eta,
        r.grid.d1,
        r.grid.d2,
        r.grid.value,
        r.grid_discrepancy()
    )
}

pub fn sweep_csv(rows: &[SweepPoint]) -> String {
    let mut out = String::from("P,d1_opt,d2_opt,eta_pred,eta_hw_check\n");
    for r in rows {
        let check = r.eta_hw_check.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{check}", r.p_watts, r.d1_opt, r.d2_opt, r.eta_pred);
    }
    out
}

pub fn data_size_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,samples,mean_accuracy,min_accuracy,max_accuracy,mean_abs_error_pp\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fraction, r.samples, r.mean_accuracy, r.min_accuracy, r.max_accuracy, r.mean_abs_error_pp
        );
    }
    out
}

pub fn tuning_csv(result: &TuningResult) -> String {
    let mut out = String::from("max_height,learning_rate,l2_lambda,num_trees,test_error_pp,selected\n");
    for (hp, err) in &result.candidates {
        let _ = writeln!(
            out,
            "{},{},{},{},{err},{}",
            hp.max_height,
            hp.learning_rate,
            hp.l2_lambda,
            hp.num_trees,
            *hp == result.best
        );
    }
    out
}

const WIDTH: f64 = 640.0;
const PANEL: f64 = 220.0;
const MARGIN: f64 = 50.0;

/// Two stacked line charts against load: efficiency on top, the optimal
/// modulation parameters below.
pub fn sweep_svg(rows: &[SweepPoint]) -> String {
    let height = 2.0 * PANEL + 3.0 * MARGIN;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    if rows.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let p_lo = rows.iter().map(|r| r.p_watts).fold(f64::INFINITY, f64::min);
    let p_hi = rows.iter().map(|r| r.p_watts).fold(f64::NEG_INFINITY, f64::max);

    let mut etas: Vec<f64> = rows.iter().map(|r| r.eta_pred).collect();
    etas.extend(rows.iter().filter_map(|r| r.eta_hw_check));
    let e_lo = etas.iter().copied().fold(f64::INFINITY, f64::min);
    let e_hi = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let top = MARGIN;
    let bottom = 2.0 * MARGIN + PANEL;
    panel(&mut svg, top, "efficiency (%)", (e_lo, e_hi), p_lo, p_hi);
    panel(&mut svg, bottom, "optimal d1, d2", (0.0, 1.0), p_lo, p_hi);

    let eta_pred: Vec<(f64, f64)> = rows.iter().map(|r| (r.p_watts, r.eta_pred)).collect();
    polyline(&mut svg, &eta_pred, top, (p_lo, p_hi), (e_lo, e_hi), "#1f77b4");
    let checked: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.eta_hw_check.map(|e| (r.p_watts, e))).collect();
    if !checked.is_empty() {
        polyline(&mut svg, &checked, top, (p_lo, p_hi), (e_lo, e_hi), "#d62728");
    }
    let d1: Vec<(f64, f64)> = rows.iter().map(|r| (r.p_watts, r.d1_opt)).collect();
    let d2: Vec<(f64, f64)> = rows.iter().map(|r| (r.p_watts, r.d2_opt)).collect();
    polyline(&mut svg, &d1, bottom, (p_lo, p_hi), (0.0, 1.0), "#2ca02c");
    polyline(&mut svg, &d2, bottom, (p_lo, p_hi), (0.0, 1.0), "#9467bd");

    let legend = [
        ("eta_pred", "#1f77b4"),
        ("eta_hw_check", "#d62728"),
        ("d1_opt", "#2ca02c"),
        ("d2_opt", "#9467bd"),
    ];
    for (i, (name, color)) in legend.iter().enumerate() {
        let x = MARGIN + 130.0 * i as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            height - 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn scale(v: f64, (lo, hi): (f64, f64), out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        0.5 * (out_lo + out_hi)
    }
}

fn panel(svg: &mut String, top: f64, label: &str, (lo, hi): (f64, f64), p_lo: f64, p_hi: f64) {
    let right = WIDTH - MARGIN;
    let base = top + PANEL;
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#888\"/>",
        right - MARGIN
    );
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"{}\">{label}</text>", top - 8.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>", MARGIN - 4.0, top + 12.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{base}\" text-anchor=\"end\">{lo:.3}</text>", MARGIN - 4.0);
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"{}\">{p_lo} W</text>", base + 16.0);
    let _ = writeln!(svg, "<text x=\"{right}\" y=\"{}\" text-anchor=\"end\">{p_hi} W</text>", base + 16.0);
}

fn polyline(svg: &mut String, points: &[(f64, f64)], top: f64, px: (f64, f64), py: (f64, f64), color: &str) {
    let coords: Vec<String> = points
        .iter()
        .map(|&(p, v)| {
            let x = scale(p, px, MARGIN, WIDTH - MARGIN);
            let y = scale(v, py, top + PANEL, top);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
        coords.join(" ")
    );
}
