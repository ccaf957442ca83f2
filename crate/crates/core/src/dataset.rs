//! Quasi-random state sampling, parallel pointwise-solve dataset generation,
//! train/validation splitting, and CSV + JSON persistence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelSpec, SemilinearSystem};
use crate::sdre::{self, SdreError};
use crate::util::{first_primes, fmt_f64, is_prime, Prng};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("base {0} is not a prime >= 2")]
    InvalidBase(u64),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Radical inverse of `index` in a prime `base`, computed exactly as a
/// rational and rounded once, so equal inputs give bit-equal outputs.
pub fn halton(index: u64, base: u64) -> Result<f64, DatasetError> {
    if base < 2 || !is_prime(base) {
        return Err(DatasetError::InvalidBase(base));
    }
    if index == 0 {
        return Err(DatasetError::InvalidBounds(
            "halton index must be >= 1".into(),
        ));
    }
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    let mut i = index as u128;
    let b = base as u128;
    while i > 0 {
        num = num * b + i % b;
        den *= b;
        i /= b;
    }
    Ok(num as f64 / den as f64)
}

/// Low-discrepancy point source: dimension `dim` uses the first `dim`
/// primes as bases; `start_index` defaults to 1 because index 0 maps to the
/// origin in every base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaltonSampler {
    pub dim: usize,
    pub start_index: u64,
}

impl HaltonSampler {
    pub fn new(dim: usize) -> Self {
        HaltonSampler {
            dim,
            start_index: 1,
        }
    }

    pub fn with_start(dim: usize, start_index: u64) -> Self {
        HaltonSampler { dim, start_index }
    }

    pub fn bases(&self) -> Vec<u64> {
        first_primes(self.dim)
    }

    /// `count` points mapped affinely from the open unit cube into the box
    /// `[lower, upper]`; deterministic in the sampler state.
    pub fn sample_states(
        &self,
        count: usize,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>, DatasetError> {
        if lower.len() != self.dim || upper.len() != self.dim {
            return Err(DatasetError::InvalidBounds(format!(
                "bounds must have dimension {}",
                self.dim
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(lo, hi)| lo >= hi) {
            return Err(DatasetError::InvalidBounds(
                "lower must be strictly below upper".into(),
            ));
        }
        let bases = self.bases();
        let mut states = Vec::with_capacity(count);
        for k in 0..count as u64 {
            let index = self.start_index + k;
            let mut x = DVector::<f64>::zeros(self.dim);
            for (d, &base) in bases.iter().enumerate() {
                let u = halton(index, base)?;
                x[d] = lower[d] + (upper[d] - lower[d]) * u;
            }
            states.push(x);
        }
        Ok(states)
    }
}

/// One supervised sample: state, feedback control, value, value gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub v: f64,
    pub grad_v: DVector<f64>,
}

/// Provenance carried alongside the records and mirrored in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub system_name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub bounds_lower: Vec<f64>,
    pub bounds_upper: Vec<f64>,
    pub requested: usize,
    pub discarded: usize,
    pub start_index: u64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<ModelSpec>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Solve the frozen Riccati problem at every state (in parallel, order
/// preserving) and keep the stabilizable ones; failures are counted, not
/// fatal.
pub fn generate(
    sys: &SemilinearSystem,
    states: &[DVector<f64>],
    tol: f64,
    start_index: u64,
    model: Option<ModelSpec>,
) -> Dataset {
    let results: Vec<Result<crate::sdre::SdreSample, SdreError>> = states
        .par_iter()
        .map(|x| sdre::sdre_solve(sys, x, tol))
        .collect();
    let mut records = Vec::with_capacity(states.len());
    let mut discarded = 0usize;
    for res in results {
        match res {
            Ok(sample) => records.push(DatasetRecord {
                x: sample.x,
                u: sample.u,
                v: sample.v,
                grad_v: sample.grad_v,
            }),
            Err(_) => discarded += 1,
        }
    }
    Dataset {
        records,
        meta: DatasetMeta {
            system_name: sys.name().to_string(),
            state_dim: sys.state_dim(),
            control_dim: sys.control_dim(),
            bounds_lower: sys.domain_lower().iter().copied().collect(),
            bounds_upper: sys.domain_upper().iter().copied().collect(),
            requested: states.len(),
            discarded,
            start_index,
            tolerance: tol,
            model,
        },
    }
}

/// Deterministic seeded shuffle, then split into `ceil(fraction * N)`
/// training records and the rest for validation.
pub fn split(
    ds: &Dataset,
    train_fraction: f64,
    shuffle_seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if ds.records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidBounds(
            "train_fraction must lie in (0, 1)".into(),
        ));
    }
    let n = ds.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Prng::seeded(shuffle_seed);
    rng.shuffle(&mut order);
    let n_train = (train_fraction * n as f64).ceil() as usize;
    let take = |idx: &[usize]| Dataset {
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
        meta: ds.meta.clone(),
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}

/// Verify the stored feedback/gradient relation `u = -1/2 R^-1 B(x)^T dV`
/// against a rebuilt system; returns the worst absolute deviation.
pub fn consistency_gap(ds: &Dataset, sys: &SemilinearSystem) -> f64 {
    let rinv = sys
        .r()
        .clone()
        .cholesky()
        .expect("R must be positive definite");
    ds.records
        .iter()
        .map(|rec| {
            let b = sys.eval_b(&rec.x);
            let expected = -0.5 * rinv.solve(&(b.transpose() * &rec.grad_v));
            (&rec.u - expected).norm()
        })
        .fold(0.0, f64::max)
}

fn csv_header(n: usize, m: usize) -> String {
    let mut cols = Vec::with_capacity(n + m + 1 + n);
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.push("V".to_string());
    cols.extend((1..=n).map(|i| format!("dV_{i}")));
    cols.join(",")
}

/// Write `<path>` as CSV (17 significant digits per value, lossless for
/// 64-bit floats) and `<path stem>.manifest.json` with the metadata.
pub fn save(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    save_with_manifest(ds, path, &manifest_path(path))
}

/// [`save`] with an explicit manifest location.
pub fn save_with_manifest(
    ds: &Dataset,
    path: &Path,
    manifest: &Path,
) -> Result<(), DatasetError> {
    let n = ds.meta.state_dim;
    let m = ds.meta.control_dim;
    for rec in &ds.records {
        if rec.x.len() != n || rec.u.len() != m || rec.grad_v.len() != n {
            return Err(DatasetError::Format(
                "record dimensions disagree with metadata".into(),
            ));
        }
        let finite = rec.x.iter().all(|v| v.is_finite())
            && rec.u.iter().all(|v| v.is_finite())
            && rec.v.is_finite()
            && rec.grad_v.iter().all(|v| v.is_finite());
        if !finite {
            return Err(DatasetError::Format("non-finite entry in record".into()));
        }
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", csv_header(n, m))?;
    for rec in &ds.records {
        let mut fields = Vec::with_capacity(n + m + 1 + n);
        fields.extend(rec.x.iter().map(|&v| fmt_f64(v)));
        fields.extend(rec.u.iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(rec.v));
        fields.extend(rec.grad_v.iter().map(|&v| fmt_f64(v)));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;

    let text = serde_json::to_string_pretty(&ds.meta)
        .map_err(|e| DatasetError::Format(e.to_string()))?;
    std::fs::write(manifest, text)?;
    Ok(())
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("manifest.json")
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    load_with_manifest(path, &manifest_path(path))
}

/// [`load`] with an explicit manifest location.
pub fn load_with_manifest(path: &Path, manifest: &Path) -> Result<Dataset, DatasetError> {
    let manifest = std::fs::read_to_string(manifest)?;
    let meta: DatasetMeta =
        serde_json::from_str(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    let n = meta.state_dim;
    let m = meta.control_dim;

    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| DatasetError::Format("missing header".into()))??;
    if header != csv_header(n, m) {
        return Err(DatasetError::Format(format!(
            "header does not match a {n}-state, {m}-control dataset"
        )));
    }
    let expected_cols = n + m + 1 + n;
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| DatasetError::Format(format!("bad float at line {}", lineno + 2)))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != expected_cols {
            return Err(DatasetError::Format(format!(
                "line {} has {} columns, expected {expected_cols}",
                lineno + 2,
                values.len()
            )));
        }
        records.push(DatasetRecord {
            x: DVector::from_row_slice(&values[..n]),
            u: DVector::from_row_slice(&values[n..n + m]),
            v: values[n + m],
            grad_v: DVector::from_row_slice(&values[n + m + 1..]),
        });
    }
    Ok(Dataset { records, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{allen_cahn_system, AllenCahnConfig};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn tiny_system() -> SemilinearSystem {
        SemilinearSystem::new(
            "scalar",
            1,
            1,
            Box::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, x[0])),
            Box::new(|_: &DVector<f64>| DMatrix::from_element(1, 1, 1.0)),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn halton_base_two_by_hand() {
        let expected = [0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875];
        for (i, &e) in expected.iter().enumerate() {
            assert_eq!(halton(i as u64 + 1, 2).unwrap(), e);
        }
    }

    #[test]
    fn halton_base_three_by_hand() {
        assert_eq!(halton(1, 3).unwrap(), 1.0 / 3.0);
        assert_eq!(halton(2, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(halton(3, 3).unwrap(), 1.0 / 9.0);
        assert_eq!(halton(10, 3).unwrap(), 10.0 / 27.0);
    }

    #[test]
    fn halton_rejects_bad_inputs() {
        assert!(matches!(halton(1, 4), Err(DatasetError::InvalidBase(4))));
        assert!(matches!(halton(1, 1), Err(DatasetError::InvalidBase(1))));
        assert!(halton(0, 2).is_err());
    }

    proptest! {
        #[test]
        fn halton_stays_inside_open_unit_interval(index in 1u64..100_000, base_pick in 0usize..6) {
            let base = [2u64, 3, 5, 7, 11, 13][base_pick];
            let v = halton(index, base).unwrap();
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn sample_states_matches_halton_in_one_dimension() {
        let sampler = HaltonSampler::new(1);
        let lower = DVector::from_element(1, 0.0);
        let upper = DVector::from_element(1, 1.0);
        let pts = sampler.sample_states(3, &lower, &upper).unwrap();
        assert_eq!(pts[0][0], 0.5);
        assert_eq!(pts[1][0], 0.25);
        assert_eq!(pts[2][0], 0.75);
    }

    #[test]
    fn sample_states_affine_image() {
        let sampler = HaltonSampler::new(1);
        let lower = DVector::from_element(1, -3.0);
        let upper = DVector::from_element(1, 3.0);
        let pts = sampler.sample_states(1, &lower, &upper).unwrap();
        assert_eq!(pts[0][0], 0.0);
    }

    #[test]
    fn sample_states_respects_bounds() {
        let sampler = HaltonSampler::new(5);
        let lower = DVector::from_fn(5, |i, _| -1.0 - i as f64);
        let upper = DVector::from_fn(5, |i, _| 2.0 + i as f64);
        for p in sampler.sample_states(200, &lower, &upper).unwrap() {
            for d in 0..5 {
                assert!(p[d] > lower[d] && p[d] < upper[d]);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let sampler = HaltonSampler::with_start(7, 13);
        let lower = DVector::from_element(7, -1.0);
        let upper = DVector::from_element(7, 1.0);
        let a = sampler.sample_states(50, &lower, &upper).unwrap();
        let b = sampler.sample_states(50, &lower, &upper).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn generate_includes_origin_record() {
        let sys = tiny_system();
        let states = vec![DVector::from_element(1, 0.0)];
        let ds = generate(&sys, &states, 1e-10, 1, None);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].u[0], 0.0);
        assert_eq!(ds.records[0].v, 0.0);
        assert_eq!(ds.records[0].grad_v[0], 0.0);
        assert_eq!(ds.meta.discarded, 0);
    }

    #[test]
    fn parallel_generation_preserves_input_order() {
        let sys = tiny_system();
        let sampler = HaltonSampler::new(1);
        let states = sampler
            .sample_states(
                64,
                &DVector::from_element(1, -1.5),
                &DVector::from_element(1, 1.5),
            )
            .unwrap();
        let ds = generate(&sys, &states, 1e-10, 1, None);
        // Sequential reference.
        let mut seq = Vec::new();
        for x in &states {
            if let Ok(s) = sdre::sdre_solve(&sys, x, 1e-10) {
                seq.push((s.x, s.u, s.v, s.grad_v));
            }
        }
        assert_eq!(ds.len(), seq.len());
        for (rec, (x, u, v, g)) in ds.records.iter().zip(seq.iter()) {
            assert_eq!(&rec.x, x);
            assert_eq!(&rec.u, u);
            assert_eq!(rec.v, *v);
            assert_eq!(&rec.grad_v, g);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let sys = tiny_system();
        let sampler = HaltonSampler::new(1);
        let states = sampler
            .sample_states(
                10,
                &DVector::from_element(1, -1.0),
                &DVector::from_element(1, 1.0),
            )
            .unwrap();
        let ds = generate(&sys, &states, 1e-10, 1, None);
        assert_eq!(ds.len(), 10);
        let (train, val) = split(&ds, 0.8, 7).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        // Same seed reproduces the same partition.
        let (train2, val2) = split(&ds, 0.8, 7).unwrap();
        assert_eq!(train.records, train2.records);
        assert_eq!(val.records, val2.records);
        // Disjoint union recovers the original multiset of states.
        let mut all: Vec<f64> = train
            .records
            .iter()
            .chain(val.records.iter())
            .map(|r| r.x[0])
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig: Vec<f64> = ds.records.iter().map(|r| r.x[0]).collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
    }

    #[test]
    fn split_rejects_empty_dataset() {
        let ds = Dataset {
            records: vec![],
            meta: DatasetMeta {
                system_name: "none".into(),
                state_dim: 1,
                control_dim: 1,
                bounds_lower: vec![-1.0],
                bounds_upper: vec![1.0],
                requested: 0,
                discarded: 0,
                start_index: 1,
                tolerance: 1e-9,
                model: None,
            },
        };
        assert!(matches!(split(&ds, 0.8, 1), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let sys = tiny_system();
        let sampler = HaltonSampler::new(1);
        let states = sampler
            .sample_states(
                3,
                &DVector::from_element(1, -1.0),
                &DVector::from_element(1, 1.0),
            )
            .unwrap();
        let ds = generate(&sys, &states, 1e-10, 1, None);
        let dir = std::env::temp_dir().join("sdrl_dataset_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        save(&ds, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.records.len(), ds.records.len());
        for (a, b) in ds.records.iter().zip(back.records.iter()) {
            assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
            assert_eq!(a.u[0].to_bits(), b.u[0].to_bits());
            assert_eq!(a.v.to_bits(), b.v.to_bits());
            assert_eq!(a.grad_v[0].to_bits(), b.grad_v[0].to_bits());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_dataset_round_trips_with_header() {
        let ds = Dataset {
            records: vec![],
            meta: DatasetMeta {
                system_name: "empty".into(),
                state_dim: 2,
                control_dim: 1,
                bounds_lower: vec![-1.0, -1.0],
                bounds_upper: vec![1.0, 1.0],
                requested: 0,
                discarded: 0,
                start_index: 1,
                tolerance: 1e-9,
                model: None,
            },
        };
        let dir = std::env::temp_dir().join("sdrl_dataset_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        save(&ds, &path).unwrap();
        let back = load(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.meta, ds.meta);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn column_count_mismatch_is_a_format_error() {
        let dir = std::env::temp_dir().join("sdrl_dataset_badcols");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let meta = DatasetMeta {
            system_name: "bad".into(),
            state_dim: 2,
            control_dim: 1,
            bounds_lower: vec![-1.0, -1.0],
            bounds_upper: vec![1.0, 1.0],
            requested: 1,
            discarded: 0,
            start_index: 1,
            tolerance: 1e-9,
            model: None,
        };
        std::fs::write(
            manifest_path(&path),
            serde_json::to_string(&meta).unwrap(),
        )
        .unwrap();
        std::fs::write(&path, "x_1,x_2,u_1,V,dV_1,dV_2\n1.0,2.0,3.0\n").unwrap();
        match load(&path) {
            Err(DatasetError::Format(_)) => {}
            other => panic!("expected Format error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn consistency_gap_is_small_on_generated_data() {
        let cfg = AllenCahnConfig {
            grid_points: 11,
            ..AllenCahnConfig::default()
        };
        let sys = allen_cahn_system(&cfg).unwrap();
        let sampler = HaltonSampler::new(11);
        let states = sampler
            .sample_states(5, sys.domain_lower(), sys.domain_upper())
            .unwrap();
        let ds = generate(&sys, &states, 1e-10, 1, None);
        assert_eq!(ds.len(), 5);
        assert!(consistency_gap(&ds, &sys) <= 1e-10);
    }
}
