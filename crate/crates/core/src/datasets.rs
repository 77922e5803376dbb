//! Dataset generation, splitting and CSV persistence.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::oracle::{self, OracleParams};
use crate::sample::{Fidelity, OperatingPoint, Sample, DUTY_RANGE, PHASE_RANGE, POWER_RANGE};

pub const CSV_HEADER: &str = "d1,d2,p_watts,eta_percent,fidelity";

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub oracle_digest: Option<String>,
    pub seed: Option<u64>,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    fidelity: Fidelity,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks fidelity tags, value ranges and point uniqueness.
    pub fn new(samples: Vec<Sample>, fidelity: Fidelity, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            if s.fidelity != fidelity {
                return Err(Error::Fidelity(format!(
                    "sample {i} is tagged {} in a {} dataset",
                    s.fidelity, fidelity
                )));
            }
            if !seen.insert(point_key(&s.point)) {
                return Err(Error::Malformed {
                    line: None,
                    message: format!("duplicate operating point at sample {i}"),
                });
            }
        }
        Ok(Dataset {
            samples,
            fidelity,
            provenance,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// SHA-256 of the CSV serialization.
    pub fn digest(&self) -> String {
        digest_samples(&self.samples)
    }

    fn subset(&self, samples: Vec<Sample>, part: &str) -> Dataset {
        Dataset {
            samples,
            fidelity: self.fidelity,
            provenance: Provenance {
                mode: format!("{}/{part}", self.provenance.mode),
                ..self.provenance.clone()
            },
        }
    }
}

pub fn digest_samples(samples: &[Sample]) -> String {
    hex::encode(Sha256::digest(render_csv(samples).as_bytes()))
}

fn point_key(p: &OperatingPoint) -> [u64; 3] {
    [p.d1.to_bits(), p.d2.to_bits(), p.p.to_bits()]
}

/// `n` evenly spaced values covering `[lo, hi]` with both endpoints exact.
pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Full factorial simulation grid labeled with the simulated efficiency.
pub fn generate_sim_grid(counts: (usize, usize, usize), params: &OracleParams) -> Result<Dataset> {
    let (n1, n2, np) = counts;
    for (name, n) in [("d1", n1), ("d2", n2), ("p_watts", np)] {
        if n < 2 {
            return Err(Error::Config(format!(
                "grid count for {name} must be >= 2, got {n}"
            )));
        }
    }
    params.validate()?;
    let d1s = linspace(DUTY_RANGE, n1);
    let d2s = linspace(PHASE_RANGE, n2);
    let ps = linspace(POWER_RANGE, np);
    let mut samples = Vec::with_capacity(n1 * n2 * np);
    for &p in &ps {
        for &d1 in &d1s {
            for &d2 in &d2s {
                let point = OperatingPoint::new(d1, d2, p)?;
                let eta = oracle::eta_sim(&point, params)?;
                samples.push(Sample::new(point, eta, Fidelity::Simulation)?);
            }
        }
    }
    Dataset::new(
        samples,
        Fidelity::Simulation,
        Provenance {
            oracle_digest: Some(params.digest()),
            seed: None,
            mode: format!("sim-grid {n1}x{n2}x{np}"),
        },
    )
}

/// `count` uniform-random points over the parameter box, each labeled with
/// one noisy measurement. Exact duplicate points are redrawn.
pub fn generate_exp_pool(count: usize, params: &OracleParams, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("experimental pool count must be >= 1".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut samples = Vec::with_capacity(count);
    while samples.len() < count {
        let point = OperatingPoint::new(
            rng.random_range(DUTY_RANGE.0..=DUTY_RANGE.1),
            rng.random_range(PHASE_RANGE.0..=PHASE_RANGE.1),
            rng.random_range(POWER_RANGE.0..=POWER_RANGE.1),
        )?;
        if !seen.insert(point_key(&point)) {
            continue;
        }
        let eta = oracle::measure(&point, params, &mut rng)?;
        samples.push(Sample::new(point, eta, Fidelity::Experimental)?);
    }
    Dataset::new(
        samples,
        Fidelity::Experimental,
        Provenance {
            oracle_digest: Some(params.digest()),
            seed: Some(seed),
            mode: format!("exp-pool {count}"),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, test_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            test_frac,
            val_frac,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 10% / 20% / 70% partition of the simulation grid.
    pub fn simulation(seed: u64) -> Self {
        SplitSpec {
            train_frac: 0.1,
            test_frac: 0.2,
            val_frac: 0.7,
            seed,
        }
    }

    /// 40% / 20% / 40% partition of the experimental pool.
    pub fn experimental(seed: u64) -> Self {
        SplitSpec {
            train_frac: 0.4,
            test_frac: 0.2,
            val_frac: 0.4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_frac", self.train_frac),
            ("test_frac", self.test_frac),
            ("val_frac", self.val_frac),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        let sum = self.train_frac + self.test_frac + self.val_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
}

/// Seeded shuffle followed by contiguous slicing; validation takes whatever
/// rounding leaves over.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let n_train = (n as f64 * spec.train_frac).round() as usize;
    let n_test = (n as f64 * spec.test_frac).round() as usize;
    if n_train == 0 || n_test == 0 || n_train + n_test >= n {
        return Err(Error::EmptyDataset(format!(
            "split of {n} samples at ({}, {}, {}) leaves a partition empty",
            spec.train_frac, spec.test_frac, spec.val_frac
        )));
    }
    let pick = |range: std::ops::Range<usize>| -> Vec<Sample> {
        order[range].iter().map(|&i| data.samples[i]).collect()
    };
    Ok(Split {
        train: data.subset(pick(0..n_train), "train"),
        test: data.subset(pick(n_train..n_train + n_test), "test"),
        validation: data.subset(pick(n_train + n_test..n), "validation"),
    })
}

pub fn render_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        // `{}` on f64 prints the shortest string that round-trips exactly.
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.point.d1, s.point.d2, s.point.p, s.eta, s.fidelity
        );
    }
    out
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, render_csv(&data.samples)).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_csv(&text)?;
    let mut data = data;
    data.provenance.mode = format!("csv {}", path.display());
    Ok(data)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::malformed(
                1,
                format!("expected header {CSV_HEADER:?}, found {:?}", header.trim()),
            ))
        }
        None => return Err(Error::malformed(1, "missing header")),
    }

    let mut samples = Vec::new();
    let mut fidelity = None;
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::malformed(
                line_no,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| Error::malformed(line_no, format!("{name}: not a number: {:?}", fields[k])))
        };
        let (d1, d2, p, eta) = (num(0, "d1")?, num(1, "d2")?, num(2, "p_watts")?, num(3, "eta_percent")?);
        let tag: Fidelity = fields[4].parse().map_err(|e: Error| e.at_line(line_no))?;
        match fidelity {
            None => fidelity = Some(tag),
            Some(f) if f != tag => {
                return Err(Error::Fidelity(format!(
                    "line {line_no} is tagged {tag} but earlier rows are {f}"
                )))
            }
            _ => {}
        }
        let sample = Sample::new(OperatingPoint { d1, d2, p }, eta, tag).map_err(|e| e.at_line(line_no))?;
        if !seen.insert(point_key(&sample.point)) {
            return Err(Error::malformed(line_no, "duplicate operating point"));
        }
        samples.push(sample);
    }

    let Some(fidelity) = fidelity else {
        return Err(Error::EmptyDataset("CSV has a header but no rows".into()));
    };
    Ok(Dataset {
        samples,
        fidelity,
        provenance: Provenance {
            oracle_digest: None,
            seed: None,
            mode: "csv".into(),
        },
    })
}

/// Path of the provenance sidecar written next to `artifact`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.provenance.json` holding `record` as pretty JSON.
pub fn write_sidecar<T: Serialize>(artifact: &Path, record: &T) -> Result<()> {
    let path = sidecar_path(artifact);
    let mut json = serde_json::to_string_pretty(record)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_pool(count: usize, seed: u64) -> Dataset {
        generate_exp_pool(count, &OracleParams::default(), seed).unwrap()
    }

    #[test]
    fn default_grid_size() {
        let grid = generate_sim_grid((25, 25, 20), &OracleParams::default()).unwrap();
        assert_eq!(grid.len(), 12_500);
        assert_eq!(grid.fidelity(), Fidelity::Simulation);
    }

    #[test]
    fn corner_grid_and_replay() {
        let params = OracleParams::default();
        let grid = generate_sim_grid((2, 2, 2), &params).unwrap();
        assert_eq!(grid.len(), 8);
        let d1s: HashSet<u64> = grid.samples().iter().map(|s| s.point.d1.to_bits()).collect();
        assert_eq!(d1s, [0.0f64.to_bits(), 1.0f64.to_bits()].into_iter().collect());
        let grid = generate_sim_grid((5, 4, 3), &params).unwrap();
        for s in grid.samples() {
            assert_eq!(s.eta, oracle::eta_sim(&s.point, &params).unwrap());
        }
    }

    #[test]
    fn grid_count_too_small() {
        assert!(generate_sim_grid((1, 25, 20), &OracleParams::default()).is_err());
    }

    #[test]
    fn linspace_spacing() {
        for (range, n) in [(POWER_RANGE, 20), (DUTY_RANGE, 25)] {
            let v = linspace(range, n);
            assert_eq!(v[0], range.0);
            assert_eq!(v[n - 1], range.1);
            let h = (range.1 - range.0) / (n - 1) as f64;
            for w in v.windows(2) {
                assert!((w[1] - w[0] - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_pool_determinism() {
        let a = small_pool(1000, 42);
        assert_eq!(a.len(), 1000);
        assert_eq!(a, small_pool(1000, 42));
        let b = small_pool(1000, 43);
        assert_ne!(a.samples()[0].point, b.samples()[0].point);
        assert_eq!(a.provenance.seed, Some(42));
    }

    #[test]
    fn noiseless_pool_matches_hw() {
        let params = OracleParams {
            noise_sigma: 0.0,
            ..OracleParams::default()
        };
        let pool = generate_exp_pool(200, &params, 1).unwrap();
        for s in pool.samples() {
            assert_eq!(s.eta, oracle::eta_hw(&s.point, &params).unwrap());
        }
    }

    #[test]
    fn table_split_sizes() {
        let grid = generate_sim_grid((25, 25, 20), &OracleParams::default()).unwrap();
        let s = split(&grid, &SplitSpec::simulation(42)).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (1250, 2500, 8750));
        let pool = small_pool(1000, 42);
        let s = split(&pool, &SplitSpec::experimental(42)).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (400, 200, 400));
    }

    #[test]
    fn split_rejects_empty_partitions() {
        let pool = small_pool(3, 0);
        assert!(split(&pool, &SplitSpec::new(0.1, 0.2, 0.7, 0).unwrap()).is_err());
        assert!(SplitSpec::new(0.5, 0.5, 0.5, 0).is_err());
        assert!(SplitSpec::new(-0.1, 0.6, 0.5, 0).is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = parse_csv(&format!("{CSV_HEADER}\n")).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));

        let err = parse_csv(&format!("{CSV_HEADER}\n0.5,0.5,600,97,sim\n1.5,0.5,600,97,sim\n")).unwrap_err();
        assert!(
            matches!(err, Error::Range { field: "d1", line: Some(3), .. }),
            "{err}"
        );
        assert!(err.to_string().contains("line 3"));

        let err = parse_csv(&format!("{CSV_HEADER}\n0.5,0.5,abc,97,sim\n")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: Some(2), .. }), "{err}");

        let err = parse_csv(&format!("{CSV_HEADER}\n0.5,0.5,600,97\n")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: Some(2), .. }), "{err}");

        let err = parse_csv(&format!("{CSV_HEADER}\n0.5,0.5,600,97,hw\n")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: Some(2), .. }), "{err}");

        let err = parse_csv(&format!("{CSV_HEADER}\n0.5,0.5,600,97,sim\n0.4,0.5,600,97,exp\n")).unwrap_err();
        assert!(matches!(err, Error::Fidelity(_)), "{err}");

        let err = parse_csv("d1,d2,p,eta,fidelity\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: Some(1), .. }), "{err}");
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.csv");
        let pool = small_pool(300, 9);
        write_csv(&pool, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.samples(), pool.samples());
        assert_eq!(back.fidelity(), Fidelity::Experimental);

        write_sidecar(&path, &pool.provenance).unwrap();
        let side: Provenance =
            serde_json::from_str(&fs::read_to_string(dir.path().join("exp.csv.provenance.json")).unwrap()).unwrap();
        assert_eq!(side, pool.provenance);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn split_is_a_deterministic_partition(seed in any::<u64>(), n in 10usize..300) {
            let pool = small_pool(n, seed);
            let spec = SplitSpec::new(0.4, 0.2, 0.4, seed.wrapping_add(1)).unwrap();
            let a = split(&pool, &spec).unwrap();
            prop_assert_eq!(&a, &split(&pool, &spec).unwrap());

            let mut keys: Vec<[u64; 3]> = [&a.train, &a.test, &a.validation]
                .iter()
                .flat_map(|d| d.samples().iter().map(|s| point_key(&s.point)))
                .collect();
            let mut original: Vec<[u64; 3]> = pool.samples().iter().map(|s| point_key(&s.point)).collect();
            keys.sort();
            original.sort();
            prop_assert_eq!(keys, original);
        }

        #[test]
        fn csv_round_trip_is_bitwise(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, p in 200.0f64..=2000.0, eta in 1e-9f64..=100.0) {
            let s = Sample::new(OperatingPoint { d1, d2, p }, eta, Fidelity::Experimental).unwrap();
            let back = parse_csv(&render_csv(&[s])).unwrap();
            let b = back.samples()[0];
            prop_assert_eq!(
                [b.point.d1.to_bits(), b.point.d2.to_bits(), b.point.p.to_bits(), b.eta.to_bits()],
                [d1.to_bits(), d2.to_bits(), p.to_bits(), eta.to_bits()]
            );
        }
    }
}
