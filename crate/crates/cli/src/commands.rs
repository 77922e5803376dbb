use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use d2ea::config::{parse_grid, ConfigFile, DataConfig};
use d2ea::datasets::{self, Dataset};
use d2ea::gbrt::{gbrt_fit, BaseMode, GbrtHyperparams};
use d2ea::oracle::OracleParams;
use d2ea::pipeline::{self, Partitions};
use d2ea::pso::PsoConfig;
use d2ea::residual_stack::{
    compare_baselines, data_size_sweep, evaluate_model, tune_stage_one, ModelFile, ModelMetadata, TuningGrid,
};
use d2ea::sample::to_matrix;
use d2ea::{Error, Result};

use crate::artifacts::{self, Manifest};
use crate::{Cli, Command, DataArgs, Toggle};

/// Everything a command reads from `--config` and `--seed`.
struct Settings {
    config_path: Option<PathBuf>,
    data: DataConfig,
    oracle: OracleParams,
    oracle_configured: bool,
    stage_one: GbrtHyperparams,
    stage_two: GbrtHyperparams,
    pso: PsoConfig,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(path) => ConfigFile::load(path, "data")?,
            None => ConfigFile::default(),
        };
        let mut data = file.data(DataConfig::default())?;
        let mut pso = file.pso(PsoConfig::default())?;
        if let Some(seed) = cli.seed {
            data.seed = seed;
            pso.seed = seed;
        }
        Ok(Settings {
            config_path: cli.config.clone(),
            data,
            oracle: file.oracle()?,
            oracle_configured: file.has_section("oracle"),
            stage_one: file.gbrt("stage1", GbrtHyperparams::stage_one())?,
            stage_two: file.gbrt("stage2", GbrtHyperparams::stage_two())?,
            pso,
        })
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::new(command_name(&cli.command));
    let outcome = Settings::load(cli).and_then(|settings| {
        manifest.record_settings(
            settings.config_path.as_deref(),
            &settings.oracle,
            settings.data.seed,
            settings.pso.seed,
        )?;
        fs::create_dir_all(&cli.out_dir).map_err(|e| io_error(&cli.out_dir, e))?;
        dispatch(cli, &settings, &mut manifest)
    });
    manifest.finish(started.elapsed(), outcome.as_ref().err());
    if cli.out_dir.is_dir() {
        manifest.append(&cli.out_dir.join(artifacts::MANIFEST_FILE))?;
    }
    outcome
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Generate { .. } => "generate",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Optimize { .. } => "optimize",
        Command::Sweep { .. } => "sweep",
        Command::Compare { .. } => "compare",
        Command::DataSizeSweep { .. } => "data-size-sweep",
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn dispatch(cli: &Cli, s: &Settings, manifest: &mut Manifest) -> Result<()> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Generate { sim_grid, exp_count } => {
            let mut cfg = s.data;
            if let Some(text) = sim_grid {
                cfg.sim_grid = parse_grid(text).map_err(|e| Error::Config(format!("--sim-grid: {e}")))?;
            }
            if let Some(n) = exp_count {
                cfg.exp_count = *n;
            }
            generate(&cfg, &s.oracle, out, manifest)
        }
        Command::Train {
            data,
            model,
            baselines,
            tune,
        } => {
            let model_path = model.clone().unwrap_or_else(|| out.join("model.json"));
            train(s, data, out, &model_path, *baselines == Toggle::On, *tune, manifest)
        }
        Command::Evaluate { model, data } => {
            let m = load_model(model, manifest)?;
            let dataset = read_dataset(data, manifest)?;
            let report = evaluate_model(&m, dataset.samples())?;
            let path = out.join("evaluation.csv");
            artifacts::write_text(&path, &artifacts::accuracy_csv(&[("d2ea", &report)]))?;
            manifest.output(&path)?;
            println!(
                "mean_abs_error_pp = {}\naccuracy_percent = {}\nn = {}",
                report.mean_abs_error_pp, report.accuracy_percent, report.n
            );
            Ok(())
        }
        Command::Optimize { model, power } => {
            let m = load_model(model, manifest)?;
            let report = pipeline::optimize(&m, *power, &s.pso)?;
            let trace = out.join("trace.csv");
            artifacts::write_text(&trace, &artifacts::trace_csv(&report.trace))?;
            manifest.output(&trace)?;
            let optimum = out.join("optimum.csv");
            artifacts::write_text(&optimum, &artifacts::optimum_csv(&report))?;
            manifest.output(&optimum)?;
            println!(
                "p_watts = {}\nd1 = {}\nd2 = {}\neta = {}\ngrid_d1 = {}\ngrid_d2 = {}\ngrid_eta = {}\ngrid_discrepancy = {}",
                report.power,
                report.d1,
                report.d2,
                report.eta,
                report.grid.d1,
                report.grid.d2,
                report.grid.value,
                report.grid_discrepancy()
            );
            Ok(())
        }
        Command::Sweep {
            model,
            powers,
            oracle_check,
        } => {
            let powers = pipeline::parse_powers(powers)?;
            let m = load_model(model, manifest)?;
            let check = (*oracle_check || s.oracle_configured).then_some(&s.oracle);
            let rows = pipeline::sweep(&m, &powers, &s.pso, check)?;
            let csv = out.join("sweep.csv");
            artifacts::write_text(&csv, &artifacts::sweep_csv(&rows))?;
            manifest.output(&csv)?;
            let svg = out.join("sweep.svg");
            artifacts::write_text(&svg, &artifacts::sweep_svg(&rows))?;
            manifest.output(&svg)?;
            println!("{} loads written to {}", rows.len(), csv.display());
            Ok(())
        }
        Command::Compare { data } => {
            let parts = load_partitions(s, data, out, manifest)?;
            let cmp = compare_baselines(
                parts.sim.train.samples(),
                parts.exp.train.samples(),
                &s.stage_one,
                &s.stage_two,
                parts.exp.validation.samples(),
            )?;
            let path = out.join("comparison.csv");
            artifacts::write_text(&path, &artifacts::comparison_csv(&cmp.reports))?;
            manifest.output(&path)?;
            print!("{}", artifacts::comparison_csv(&cmp.reports));
            Ok(())
        }
        Command::DataSizeSweep {
            data,
            fractions,
            repeats,
        } => {
            let fractions = parse_fractions(fractions)?;
            let parts = load_partitions(s, data, out, manifest)?;
            let (features, targets) = to_matrix(parts.sim.train.samples());
            let sim_model = gbrt_fit(&features, &targets, &s.stage_one, BaseMode::Mean)?;
            let rows = data_size_sweep(
                &sim_model,
                parts.exp.train.samples(),
                parts.exp.validation.samples(),
                &s.stage_two,
                &fractions,
                *repeats,
                s.data.seed,
            )?;
            let path = out.join("data_size_sweep.csv");
            artifacts::write_text(&path, &artifacts::data_size_csv(&rows))?;
            manifest.output(&path)?;
            print!("{}", artifacts::data_size_csv(&rows));
            Ok(())
        }
    }
}

fn generate(cfg: &DataConfig, oracle: &OracleParams, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let data = pipeline::generate(cfg, oracle)?;
    for (name, set) in [("sim.csv", &data.sim), ("exp.csv", &data.exp)] {
        let path = out.join(name);
        datasets::write_csv(set, &path)?;
        datasets::write_sidecar(&path, &set.provenance)?;
        manifest.output(&path)?;
        manifest.output(&datasets::sidecar_path(&path))?;
        println!("{} rows written to {}", set.len(), path.display());
    }
    Ok(())
}

fn train(
    s: &Settings,
    data: &DataArgs,
    out: &Path,
    model_path: &Path,
    baselines: bool,
    tune: bool,
    manifest: &mut Manifest,
) -> Result<()> {
    let parts = load_partitions(s, data, out, manifest)?;
    let stage_one = if tune {
        let result = tune_stage_one(
            parts.sim.train.samples(),
            parts.sim.test.samples(),
            &TuningGrid::default(),
        )?;
        let path = out.join("tuning.csv");
        artifacts::write_text(&path, &artifacts::tuning_csv(&result))?;
        manifest.output(&path)?;
        result.best
    } else {
        s.stage_one
    };
    let (model, comparison) = pipeline::train(&parts, &stage_one, &s.stage_two, baselines)?;
    let metadata = ModelMetadata::new(
        parts.sim.train.samples(),
        parts.exp.train.samples(),
        &stage_one,
        &s.stage_two,
    );
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    ModelFile::new(&model, metadata).save(model_path)?;
    manifest.output(model_path)?;
    println!("model written to {}", model_path.display());
    if let Some(cmp) = comparison {
        let path = out.join("report.csv");
        let table = artifacts::comparison_csv(&cmp.reports);
        artifacts::write_text(&path, &table)?;
        manifest.output(&path)?;
        print!("{table}");
    }
    Ok(())
}

fn load_model(path: &Path, manifest: &mut Manifest) -> Result<d2ea::residual_stack::D2eaModel> {
    manifest.input(path)?;
    ModelFile::load(path)?.model()
}

fn read_dataset(path: &Path, manifest: &mut Manifest) -> Result<Dataset> {
    manifest.input(path)?;
    datasets::read_csv(path)
}

fn load_partitions(s: &Settings, data: &DataArgs, out: &Path, manifest: &mut Manifest) -> Result<Partitions> {
    let sim_path = data.sim.clone().unwrap_or_else(|| out.join("sim.csv"));
    let exp_path = data.exp.clone().unwrap_or_else(|| out.join("exp.csv"));
    let sim = read_dataset(&sim_path, manifest)?;
    let exp = read_dataset(&exp_path, manifest)?;
    if sim.fidelity() != d2ea::Fidelity::Simulation {
        return Err(Error::Fidelity(format!("{} holds {} data", sim_path.display(), sim.fidelity())));
    }
    if exp.fidelity() != d2ea::Fidelity::Experimental {
        return Err(Error::Fidelity(format!("{} holds {} data", exp_path.display(), exp.fidelity())));
    }
    pipeline::partition(&sim, &exp, &s.data)
}

fn parse_fractions(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--fractions: {f:?} is not a number")))
        })
        .collect()
}
