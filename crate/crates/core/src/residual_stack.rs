//! Two-stage efficiency surrogate: a landscape model fitted to plentiful
//! simulation data, stacked with a gap model fitted to what the landscape
//! model gets wrong on scarce experimental data.
//!
//! ```text
//! eta(x) = sim_model(x) + gap_model(x)
//! gap_model is trained on  eta_exp(x) − sim_model(x)
//! ```

use std::collections::HashSet;
use std::fs;
use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::digest_samples;
use crate::error::{Error, Result};
use crate::gbrt::{gbrt_fit, gbrt_fit_observed, BaseMode, GbrtHyperparams, GbrtModel};
use crate::sample::{to_matrix, Fidelity, OperatingPoint, Sample, DUTY_RANGE, PHASE_RANGE, POWER_RANGE};

pub const FEATURE_ARITY: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D2eaModel {
    sim_model: GbrtModel,
    gap_model: GbrtModel,
}

impl D2eaModel {
    pub fn new(sim_model: GbrtModel, gap_model: GbrtModel) -> Result<Self> {
        for (name, m) in [("sim_model", &sim_model), ("gap_model", &gap_model)] {
            if m.feature_arity() != FEATURE_ARITY {
                return Err(Error::Model(format!(
                    "{name} has feature arity {}, expected {FEATURE_ARITY}",
                    m.feature_arity()
                )));
            }
        }
        Ok(D2eaModel { sim_model, gap_model })
    }

    pub fn sim_model(&self) -> &GbrtModel {
        &self.sim_model
    }

    pub fn gap_model(&self) -> &GbrtModel {
        &self.gap_model
    }

    /// Stacked efficiency prediction in percent.
    pub fn predict(&self, point: &OperatingPoint) -> Result<f64> {
        point.validate()?;
        let x = point.features();
        Ok(self.sim_model.predict_row(&x) + self.gap_model.predict_row(&x))
    }

    /// Stage-I prediction alone.
    pub fn predict_sim(&self, point: &OperatingPoint) -> Result<f64> {
        point.validate()?;
        Ok(self.sim_model.predict_row(&point.features()))
    }

    pub fn predict_gap(&self, point: &OperatingPoint) -> Result<f64> {
        point.validate()?;
        Ok(self.gap_model.predict_row(&point.features()))
    }
}

fn require(samples: &[Sample], fidelity: Fidelity, what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} is empty")));
    }
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.fidelity != fidelity) {
        return Err(Error::Fidelity(format!(
            "{what} sample {i} is tagged {}, expected {fidelity}",
            s.fidelity
        )));
    }
    Ok(())
}

/// Fits the landscape model, then the gap model on its experimental residual.
pub fn d2ea_fit(
    sim_train: &[Sample],
    exp_train: &[Sample],
    hp1: &GbrtHyperparams,
    hp2: &GbrtHyperparams,
) -> Result<D2eaModel> {
    require(sim_train, Fidelity::Simulation, "simulation training set")?;
    require(exp_train, Fidelity::Experimental, "experimental training set")?;
    let (features, targets) = to_matrix(sim_train);
    let sim_model = gbrt_fit(&features, &targets, hp1, BaseMode::Mean)?;
    let gap_model = fit_gap(&sim_model, exp_train, hp2)?;
    D2eaModel::new(sim_model, gap_model)
}

/// Fits a gap model to `eta_exp − sim_model` with a zero base.
pub fn fit_gap(sim_model: &GbrtModel, exp_train: &[Sample], hp: &GbrtHyperparams) -> Result<GbrtModel> {
    require(exp_train, Fidelity::Experimental, "experimental training set")?;
    let (features, targets) = to_matrix(exp_train);
    let gaps: Vec<f64> = features
        .iter()
        .zip(&targets)
        .map(|(x, eta)| eta - sim_model.predict_row(x))
        .collect();
    gbrt_fit(&features, &gaps, hp, BaseMode::Zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Mean |pred − true| in percentage points.
    pub mean_abs_error_pp: f64,
    /// 100 minus the mean relative error in percent.
    pub accuracy_percent: f64,
    pub worst_abs_error_pp: f64,
    pub n: usize,
}

/// Scores `predict` against labeled samples.
pub fn evaluate<F>(predict: F, data: &[Sample]) -> Result<AccuracyReport>
where
    F: Fn(&OperatingPoint) -> f64,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty".into()));
    }
    let mut abs_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut worst: f64 = 0.0;
    for s in data {
        let err = (predict(&s.point) - s.eta).abs();
        abs_sum += err;
        rel_sum += err / s.eta * 100.0;
        worst = worst.max(err);
    }
    let n = data.len() as f64;
    Ok(AccuracyReport {
        mean_abs_error_pp: abs_sum / n,
        accuracy_percent: 100.0 - rel_sum / n,
        worst_abs_error_pp: worst,
        n: data.len(),
    })
}

pub fn evaluate_model(model: &D2eaModel, data: &[Sample]) -> Result<AccuracyReport> {
    for s in data {
        s.point.validate()?;
    }
    evaluate(|p| model.sim_model.predict_row(&p.features()) + model.gap_model.predict_row(&p.features()), data)
}

/// Accuracy of the three modeling routes on one experimental hold-out set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineReports {
    pub sim_only: AccuracyReport,
    pub exp_only: AccuracyReport,
    pub d2ea: AccuracyReport,
}

impl BaselineReports {
    /// Stacked model beats experiment-only, which beats simulation-only.
    pub fn ordering_holds(&self) -> bool {
        self.d2ea.mean_abs_error_pp < self.exp_only.mean_abs_error_pp
            && self.exp_only.mean_abs_error_pp < self.sim_only.mean_abs_error_pp
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: BaselineReports,
    pub d2ea: D2eaModel,
    pub exp_only: GbrtModel,
}

fn point_keys(samples: &[Sample]) -> HashSet<[u64; 3]> {
    samples
        .iter()
        .map(|s| [s.point.d1.to_bits(), s.point.d2.to_bits(), s.point.p.to_bits()])
        .collect()
}

/// Trains the stacked model plus a simulation-only and an experiment-only
/// baseline (the latter with `hp1`'s structure), and scores all three on
/// `eval_set`.
pub fn compare_baselines(
    sim_pool: &[Sample],
    exp_pool: &[Sample],
    hp1: &GbrtHyperparams,
    hp2: &GbrtHyperparams,
    eval_set: &[Sample],
) -> Result<Comparison> {
    require(eval_set, Fidelity::Experimental, "evaluation set")?;
    require(exp_pool, Fidelity::Experimental, "experimental training set")?;
    require(sim_pool, Fidelity::Simulation, "simulation training set")?;
    let held_out = point_keys(eval_set);
    for (name, pool) in [("simulation", sim_pool), ("experimental", exp_pool)] {
        if pool.iter().any(|s| held_out.contains(&[s.point.d1.to_bits(), s.point.d2.to_bits(), s.point.p.to_bits()])) {
            return Err(Error::Malformed {
                line: None,
                message: format!("evaluation set overlaps the {name} training pool"),
            });
        }
    }

    let d2ea = d2ea_fit(sim_pool, exp_pool, hp1, hp2)?;
    let (features, targets) = to_matrix(exp_pool);
    let exp_only = gbrt_fit(&features, &targets, hp1, BaseMode::Mean)?;

    let reports = BaselineReports {
        sim_only: evaluate(|p| d2ea.sim_model.predict_row(&p.features()), eval_set)?,
        exp_only: evaluate(|p| exp_only.predict_row(&p.features()), eval_set)?,
        d2ea: evaluate_model(&d2ea, eval_set)?,
    };
    Ok(Comparison {
        reports,
        d2ea,
        exp_only,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub samples: usize,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub mean_abs_error_pp: f64,
}

/// Seed for repeat `repeat` of fraction index `index`.
fn sub_seed(seed: u64, index: usize, repeat: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + index as u64))
        .wrapping_add((repeat as u64) << 32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Retrains only the gap model on random subsets of `exp_train` and scores
/// each stack on `validation`.
pub fn data_size_sweep(
    sim_model: &GbrtModel,
    exp_train: &[Sample],
    validation: &[Sample],
    hp2: &GbrtHyperparams,
    fractions: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    require(exp_train, Fidelity::Experimental, "experimental training set")?;
    require(validation, Fidelity::Experimental, "validation set")?;
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    if fractions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("fractions must be sorted ascending".into()));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for (index, &fraction) in fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} is outside (0, 1]")));
        }
        let take = (exp_train.len() as f64 * fraction).round() as usize;
        if take == 0 {
            return Err(Error::EmptyDataset(format!(
                "fraction {fraction} of {} samples selects nothing",
                exp_train.len()
            )));
        }
        let reports = (0..repeats)
            .into_par_iter()
            .map(|repeat| {
                let mut subset = exp_train.to_vec();
                subset.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, index, repeat)));
                subset.truncate(take);
                let gap_model = fit_gap(sim_model, &subset, hp2)?;
                let model = D2eaModel::new(sim_model.clone(), gap_model)?;
                evaluate_model(&model, validation)
            })
            .collect::<Result<Vec<_>>>()?;
        let acc: Vec<f64> = reports.iter().map(|r| r.accuracy_percent).collect();
        rows.push(SweepRow {
            fraction,
            samples: take,
            mean_accuracy: acc.iter().sum::<f64>() / acc.len() as f64,
            min_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_abs_error_pp: reports.iter().map(|r| r.mean_abs_error_pp).sum::<f64>() / reports.len() as f64,
        });
    }
    Ok(rows)
}

/// Candidate lists for stage-I hyperparameter selection. The tree count is
/// chosen per candidate by early stopping on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub heights: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub max_trees: usize,
    pub patience: usize,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            heights: (5..=12).collect(),
            learning_rates: vec![0.05, 0.1],
            lambdas: vec![0.01, 0.1, 1.0],
            max_trees: 1000,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best: GbrtHyperparams,
    pub best_test_error_pp: f64,
    /// Every candidate with its chosen tree count and test error.
    pub candidates: Vec<(GbrtHyperparams, f64)>,
}

/// Fits `hp` with early stopping on `test`; returns the hyperparameters with
/// the best tree count and that count's mean absolute test error.
pub fn fit_early_stopped(
    train: &[Sample],
    test: &[Sample],
    hp: &GbrtHyperparams,
    patience: usize,
) -> Result<(GbrtHyperparams, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set is empty".into()));
    }
    let (features, targets) = to_matrix(train);
    let (test_x, test_y) = to_matrix(test);
    let base = crate::gbrt::gbrt_fit(&features, &targets, &GbrtHyperparams { num_trees: 0, ..*hp }, BaseMode::Mean)?
        .base_prediction();
    let mut running = vec![base; test_x.len()];
    let mae = |running: &[f64]| running.iter().zip(&test_y).map(|(p, y)| (p - y).abs()).sum::<f64>() / test_y.len() as f64;
    let mut best = (0usize, mae(&running));
    gbrt_fit_observed(&features, &targets, hp, BaseMode::Mean, |index, tree| {
        for (r, x) in running.iter_mut().zip(&test_x) {
            *r += hp.learning_rate * tree.predict(x);
        }
        let err = mae(&running);
        if err < best.1 {
            best = (index + 1, err);
        }
        if index + 1 - best.0 >= patience {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok((GbrtHyperparams { num_trees: best.0, ..*hp }, best.1))
}

/// Grid search over stage-I structure, scored on the test set.
pub fn tune_stage_one(train: &[Sample], test: &[Sample], grid: &TuningGrid) -> Result<TuningResult> {
    require(train, Fidelity::Simulation, "simulation training set")?;
    require(test, Fidelity::Simulation, "simulation test set")?;
    let mut candidates = Vec::new();
    for &max_height in &grid.heights {
        for &learning_rate in &grid.learning_rates {
            for &l2_lambda in &grid.lambdas {
                candidates.push(GbrtHyperparams::new(grid.max_trees, max_height, l2_lambda, learning_rate, 2)?);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Config("tuning grid has no candidates".into()));
    }
    let scored = candidates
        .par_iter()
        .map(|hp| fit_early_stopped(train, test, hp, grid.patience))
        .collect::<Result<Vec<_>>>()?;
    // First strictly better candidate wins, so ties keep grid order.
    let mut best = 0;
    for (i, (_, err)) in scored.iter().enumerate() {
        if *err < scored[best].1 {
            best = i;
        }
    }
    Ok(TuningResult {
        best: scored[best].0,
        best_test_error_pp: scored[best].1,
        candidates: scored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub d1: (f64, f64),
    pub d2: (f64, f64),
    pub p_watts: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub ranges: Range,
    pub metrics: MetricDefinitions,
    pub training: TrainingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinitions {
    pub mean_abs_error_pp: String,
    pub accuracy_percent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub sim_train_digest: String,
    pub sim_train_samples: usize,
    pub exp_train_digest: String,
    pub exp_train_samples: usize,
    pub stage_one: GbrtHyperparams,
    pub stage_two: GbrtHyperparams,
}

impl ModelMetadata {
    pub fn new(sim_train: &[Sample], exp_train: &[Sample], hp1: &GbrtHyperparams, hp2: &GbrtHyperparams) -> Self {
        ModelMetadata {
            ranges: Range {
                d1: DUTY_RANGE,
                d2: PHASE_RANGE,
                p_watts: POWER_RANGE,
            },
            metrics: MetricDefinitions {
                mean_abs_error_pp: "mean(|predicted - measured|), efficiency percentage points".into(),
                accuracy_percent: "100 - mean(|predicted - measured| / measured * 100)".into(),
            },
            training: TrainingRecord {
                sim_train_digest: digest_samples(sim_train),
                sim_train_samples: sim_train.len(),
                exp_train_digest: digest_samples(exp_train),
                exp_train_samples: exp_train.len(),
                stage_one: *hp1,
                stage_two: *hp2,
            },
        }
    }
}

/// On-disk form of a trained stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub metadata: ModelMetadata,
    pub sim_model: GbrtModel,
    pub gap_model: GbrtModel,
}

pub const MODEL_FORMAT: &str = "d2ea-model/1";

impl ModelFile {
    pub fn new(model: &D2eaModel, metadata: ModelMetadata) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            metadata,
            sim_model: model.sim_model.clone(),
            gap_model: model.gap_model.clone(),
        }
    }

    pub fn model(&self) -> Result<D2eaModel> {
        D2eaModel::new(self.sim_model.clone(), self.gap_model.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut json = serde_json::to_string(self)?;
        json.push('\n');
        Ok(json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                file.format
            )));
        }
        file.model()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_exp_pool, generate_sim_grid, split, SplitSpec};
    use crate::oracle::OracleParams;
    use rand::Rng;

    fn constant(eta: f64, fidelity: Fidelity, seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = OperatingPoint::new(rng.random(), rng.random(), rng.random_range(200.0..2000.0)).unwrap();
                Sample::new(p, eta, fidelity).unwrap()
            })
            .collect()
    }

    fn small_hp() -> (GbrtHyperparams, GbrtHyperparams) {
        (
            GbrtHyperparams::new(60, 6, 1.0, 0.1, 2).unwrap(),
            GbrtHyperparams::new(40, 4, 0.01, 0.1, 2).unwrap(),
        )
    }

    struct Pools {
        sim: Vec<Sample>,
        exp_train: Vec<Sample>,
        exp_val: Vec<Sample>,
    }

    fn pools() -> Pools {
        let params = OracleParams::default();
        let grid = generate_sim_grid((9, 9, 6), &params).unwrap();
        let sim = split(&grid, &SplitSpec::new(0.5, 0.2, 0.3, 1).unwrap()).unwrap().train;
        let exp = generate_exp_pool(300, &params, 2).unwrap();
        let parts = split(&exp, &SplitSpec::experimental(3)).unwrap();
        Pools {
            sim: sim.samples().to_vec(),
            exp_train: parts.train.samples().to_vec(),
            exp_val: parts.validation.samples().to_vec(),
        }
    }

    #[test]
    fn constant_surfaces_stack() {
        let sim = constant(97.0, Fidelity::Simulation, 1, 30);
        let exp = constant(96.0, Fidelity::Experimental, 2, 20);
        let (hp1, _) = small_hp();
        let hp2 = GbrtHyperparams::stage_two();
        let model = d2ea_fit(&sim, &exp, &hp1, &hp2).unwrap();
        // A constant residual is never split, so every tree is one leaf and
        // the zero-based gap model closes (1 − lr·n/(n+λ))^L short of −1.
        let n = exp.len() as f64;
        let shrink = 1.0 - hp2.learning_rate * n / (n + hp2.l2_lambda);
        let expected_gap = -(1.0 - shrink.powi(hp2.num_trees as i32));
        for p in exp.iter().map(|s| s.point).chain([OperatingPoint::new(0.3, 0.8, 1500.0).unwrap()]) {
            assert_eq!(model.predict_sim(&p).unwrap(), 97.0);
            assert!((model.predict_gap(&p).unwrap() - expected_gap).abs() < 1e-12);
            assert!((model.predict(&p).unwrap() - 96.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_gap_gives_zero_model() {
        let sim = constant(97.0, Fidelity::Simulation, 1, 30);
        let exp = constant(97.0, Fidelity::Experimental, 2, 20);
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp, &hp1, &hp2).unwrap();
        assert_eq!(model.gap_model().trees().len(), 1);
        assert!(model.gap_model().trees()[0].is_zero());
        let p = OperatingPoint::new(0.1, 0.1, 300.0).unwrap();
        assert_eq!(model.predict(&p).unwrap(), model.predict_sim(&p).unwrap());
    }

    #[test]
    fn fit_checks_fidelity_and_emptiness() {
        let sim = constant(97.0, Fidelity::Simulation, 1, 10);
        let exp = constant(96.0, Fidelity::Experimental, 2, 10);
        let (hp1, hp2) = small_hp();
        assert!(matches!(d2ea_fit(&exp, &exp, &hp1, &hp2), Err(Error::Fidelity(_))));
        assert!(matches!(d2ea_fit(&sim, &sim, &hp1, &hp2), Err(Error::Fidelity(_))));
        assert!(matches!(d2ea_fit(&sim, &[], &hp1, &hp2), Err(Error::EmptyDataset(_))));
        assert!(matches!(d2ea_fit(&[], &exp, &hp1, &hp2), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn out_of_range_prediction_names_field() {
        let sim = constant(97.0, Fidelity::Simulation, 1, 10);
        let exp = constant(96.0, Fidelity::Experimental, 2, 10);
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp, &hp1, &hp2).unwrap();
        let err = model
            .predict(&OperatingPoint {
                d1: 0.5,
                d2: 0.5,
                p: 2500.0,
            })
            .unwrap_err();
        assert!(matches!(err, Error::Range { field: "p_watts", .. }), "{err}");
    }

    #[test]
    fn evaluate_examples() {
        let data = constant(97.0, Fidelity::Experimental, 4, 25);
        let perfect = evaluate(|_| 97.0, &data).unwrap();
        assert_eq!(perfect.accuracy_percent, 100.0);
        assert_eq!(perfect.mean_abs_error_pp, 0.0);
        assert_eq!(perfect.worst_abs_error_pp, 0.0);

        let off = evaluate(|_| 98.0, &data).unwrap();
        assert!((off.mean_abs_error_pp - 1.0).abs() < 1e-12);
        assert!((off.accuracy_percent - (100.0 - 100.0 / 97.0)).abs() < 1e-12);
        assert!((off.accuracy_percent - 98.97).abs() < 0.005);
        assert_eq!(off.n, 25);

        assert!(matches!(evaluate(|_| 1.0, &[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn evaluate_pp_error_is_shift_invariant() {
        let Pools { exp_val, .. } = pools();
        let truth = |p: &OperatingPoint| crate::oracle::eta_hw(p, &OracleParams::default()).unwrap();
        let base = evaluate(|p| truth(p) + 0.3 * p.d1, &exp_val).unwrap();
        let c = -1.75;
        let shifted: Vec<Sample> = exp_val.iter().map(|s| Sample { eta: s.eta + c, ..*s }).collect();
        let moved = evaluate(|p| truth(p) + 0.3 * p.d1 + c, &shifted).unwrap();
        assert!((moved.mean_abs_error_pp - base.mean_abs_error_pp).abs() < 1e-12);
    }

    #[test]
    fn gap_stage_never_hurts_training_fit() {
        let Pools { sim, exp_train, .. } = pools();
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp_train, &hp1, &hp2).unwrap();
        let stacked = evaluate_model(&model, &exp_train).unwrap();
        let alone = evaluate(|p| model.predict_sim(p).unwrap(), &exp_train).unwrap();
        assert!(stacked.mean_abs_error_pp <= alone.mean_abs_error_pp);
    }

    #[test]
    fn decomposition_is_exact() {
        let Pools { sim, exp_train, .. } = pools();
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp_train, &hp1, &hp2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1_000_000 {
            let p = OperatingPoint {
                d1: rng.random(),
                d2: rng.random(),
                p: rng.random_range(200.0..=2000.0),
            };
            let sum = model.predict_sim(&p).unwrap() + model.predict_gap(&p).unwrap();
            assert_eq!(model.predict(&p).unwrap().to_bits(), sum.to_bits());
        }
    }

    #[test]
    fn retraining_is_byte_identical() {
        let Pools { sim, exp_train, .. } = pools();
        let (hp1, hp2) = small_hp();
        let a = d2ea_fit(&sim, &exp_train, &hp1, &hp2).unwrap();
        let b = d2ea_fit(&sim, &exp_train, &hp1, &hp2).unwrap();
        let meta = ModelMetadata::new(&sim, &exp_train, &hp1, &hp2);
        let ja = ModelFile::new(&a, meta.clone()).to_json().unwrap();
        let jb = ModelFile::new(&b, meta).to_json().unwrap();
        assert_eq!(ja, jb);
        let back = ModelFile::from_json(&ja).unwrap();
        assert_eq!(back.model().unwrap(), a);
    }

    #[test]
    fn model_file_rejects_wrong_format() {
        let sim = constant(97.0, Fidelity::Simulation, 1, 10);
        let exp = constant(96.0, Fidelity::Experimental, 2, 10);
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp, &hp1, &hp2).unwrap();
        let mut file = ModelFile::new(&model, ModelMetadata::new(&sim, &exp, &hp1, &hp2));
        file.format = "something-else".into();
        assert!(matches!(ModelFile::from_json(&file.to_json().unwrap()), Err(Error::Model(_))));
    }

    #[test]
    fn compare_rejects_overlap_and_empty_pool() {
        let Pools { sim, exp_train, exp_val } = pools();
        let (hp1, hp2) = small_hp();
        assert!(compare_baselines(&sim, &exp_train, &hp1, &hp2, &exp_train[..5]).is_err());
        assert!(matches!(
            compare_baselines(&sim, &[], &hp1, &hp2, &exp_val),
            Err(Error::EmptyDataset(_))
        ));
        let cmp = compare_baselines(&sim, &exp_train, &hp1, &hp2, &exp_val).unwrap();
        assert_eq!(cmp.reports.d2ea.n, exp_val.len());
    }

    #[test]
    fn full_fraction_reproduces_stack() {
        let Pools { sim, exp_train, exp_val } = pools();
        let (hp1, hp2) = small_hp();
        let cmp = compare_baselines(&sim, &exp_train, &hp1, &hp2, &exp_val).unwrap();
        let rows = data_size_sweep(cmp.d2ea.sim_model(), &exp_train, &exp_val, &hp2, &[1.0], 1, 42).unwrap();
        assert_eq!(rows[0].samples, exp_train.len());
        assert_eq!(rows[0].mean_accuracy, cmp.reports.d2ea.accuracy_percent);
        assert_eq!(rows[0].mean_abs_error_pp, cmp.reports.d2ea.mean_abs_error_pp);
    }

    #[test]
    fn sweep_rejects_bad_inputs() {
        let Pools { sim, exp_train, exp_val } = pools();
        let (hp1, hp2) = small_hp();
        let model = d2ea_fit(&sim, &exp_train, &hp1, &hp2).unwrap();
        let m = model.sim_model();
        assert!(data_size_sweep(m, &exp_train, &exp_val, &hp2, &[0.5, 0.1], 1, 0).is_err());
        assert!(data_size_sweep(m, &exp_train, &exp_val, &hp2, &[0.001], 1, 0).is_err());
        assert!(data_size_sweep(m, &exp_train, &exp_val, &hp2, &[0.5], 0, 0).is_err());
        assert!(data_size_sweep(m, &exp_train, &exp_val, &hp2, &[1.5], 1, 0).is_err());
    }

    #[test]
    fn early_stopping_picks_best_prefix() {
        let Pools { sim, .. } = pools();
        let (train, test) = sim.split_at(sim.len() / 2);
        let hp = GbrtHyperparams::new(400, 4, 1.0, 0.3, 2).unwrap();
        let (chosen, err) = fit_early_stopped(train, test, &hp, 10).unwrap();
        assert!(chosen.num_trees > 0 && chosen.num_trees < 400);
        // Brute-force check: no prefix of the full model does better.
        let (x, y) = to_matrix(train);
        let full = gbrt_fit(&x, &y, &GbrtHyperparams { num_trees: chosen.num_trees + 10, ..hp }, BaseMode::Mean).unwrap();
        let mae = |m: &GbrtModel| evaluate(|p| m.predict_row(&p.features()), test).unwrap().mean_abs_error_pp;
        assert!((mae(&full.truncated(chosen.num_trees)) - err).abs() < 1e-9);
        for k in 0..=chosen.num_trees + 10 {
            assert!(mae(&full.truncated(k)) >= err - 1e-12);
        }
    }

    #[test]
    fn tuning_selects_lowest_test_error() {
        let Pools { sim, .. } = pools();
        let (train, test) = sim.split_at(sim.len() / 2);
        let grid = TuningGrid {
            heights: vec![2, 5],
            learning_rates: vec![0.1],
            lambdas: vec![0.1, 1.0],
            max_trees: 200,
            patience: 10,
        };
        let result = tune_stage_one(train, test, &grid).unwrap();
        assert_eq!(result.candidates.len(), 4);
        let min = result.candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        assert_eq!(result.best_test_error_pp, min);
    }
}
