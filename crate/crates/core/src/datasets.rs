//! Synthetic manifold samplers and CSV ingestion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Half-width of the Möbius band parameter `v ∈ [-w, w]`.
pub const MOEBIUS_HALF_WIDTH: f64 = 0.5;
/// Radius of the Möbius band's centre circle.
pub const MOEBIUS_RADIUS: f64 = 1.0;

const TAG_SAMPLE: u64 = 11;
const TAG_SPLIT: u64 = 12;
const TAG_SUBSAMPLE: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FuzzyLine,
    Sphere,
    Moebius,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Seeded row subsample applied before splitting.
    #[serde(default)]
    pub max_rows: Option<usize>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Sample count for synthetic kinds.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub csv: Option<CsvSource>,
}

fn default_n() -> usize {
    1000
}

impl DatasetSpec {
    pub fn synthetic(kind: DatasetKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            splits: Splits::default(),
            csv: None,
        }
    }

    pub(crate) fn collect_errors(&self, errs: &mut Vec<String>) {
        let s = self.splits;
        if [s.train, s.valid, s.test].iter().any(|v| !(*v >= 0.0)) {
            errs.push("dataset.splits fractions must be >= 0".into());
        }
        if ((s.train + s.valid + s.test) - 1.0).abs() > 1e-9 {
            errs.push(format!(
                "dataset.splits must sum to 1, got {}",
                s.train + s.valid + s.test
            ));
        }
        if self.kind == DatasetKind::Csv {
            match &self.csv {
                None => errs.push("dataset.csv is required for kind `csv`".into()),
                Some(c) if c.max_rows == Some(0) => errs.push("dataset.csv.max_rows must be >= 1".into()),
                _ => {}
            }
        } else if self.n == 0 {
            errs.push("dataset.n must be >= 1".into());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Ambient dimension for synthetic kinds.
    pub fn synthetic_dim(&self) -> Option<usize> {
        match self.kind {
            DatasetKind::FuzzyLine => Some(2),
            DatasetKind::Sphere | DatasetKind::Moebius => Some(3),
            DatasetKind::Csv => None,
        }
    }
}

/// Column statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub columns: Vec<String>,
    pub train: Vec<Vec<f64>>,
    pub valid: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub standardization: Option<Standardization>,
}

/// `x₁ ~ U(-2.5, 2.5)`, `x₂ = x₁ + ε`, `ε ~ U(-0.5, 0.5)`.
pub fn sample_fuzzy_line(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let x1 = rng.uniform_range(-2.5, 2.5);
            let eps = rng.uniform_range(-0.5, 0.5);
            vec![x1, x1 + eps]
        })
        .collect()
}

/// Uniform on the unit sphere `S²` (normalised Gaussians).
pub fn sample_sphere(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = [rng.normal(), rng.normal(), rng.normal()];
        let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if r < 1e-12 {
            continue;
        }
        out.push(vec![g[0] / r, g[1] / r, g[2] / r]);
    }
    out
}

/// Point of the band at parameters `(u, v)`.
pub fn moebius_point(u: f64, v: f64) -> [f64; 3] {
    let s = 0.5 * v;
    let r = MOEBIUS_RADIUS + s * (0.5 * u).cos();
    [r * u.cos(), r * u.sin(), s * (0.5 * u).sin()]
}

/// Area element `‖∂_u X × ∂_v X‖`.
pub fn moebius_area_element(u: f64, v: f64) -> f64 {
    let s = 0.5 * v;
    let r = MOEBIUS_RADIUS + s * (0.5 * u).cos();
    0.5 * (r * r + 0.25 * s * s).sqrt()
}

/// Upper bound of the area element over the parameter rectangle.
pub fn moebius_area_bound() -> f64 {
    let s = 0.5 * MOEBIUS_HALF_WIDTH;
    let r = MOEBIUS_RADIUS + s;
    0.5 * (r * r + 0.25 * s * s).sqrt()
}

/// Area-uniform samples on the band, by rejection on the area element.
/// Also returns the number of proposals used.
pub fn sample_moebius_counted(n: usize, rng: &mut Rng) -> (Vec<Vec<f64>>, usize) {
    let bound = moebius_area_bound();
    let mut out = Vec::with_capacity(n);
    let mut proposals = 0;
    while out.len() < n {
        proposals += 1;
        let u = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        let v = rng.uniform_range(-MOEBIUS_HALF_WIDTH, MOEBIUS_HALF_WIDTH);
        if rng.uniform() * bound < moebius_area_element(u, v) {
            out.push(moebius_point(u, v).to_vec());
        }
    }
    (out, proposals)
}

pub fn sample_moebius(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    sample_moebius_counted(n, rng).0
}

/// Reads a numeric CSV with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, path))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // row numbers are 1-based data rows (header excluded)
        let row = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::Parse {
                row,
                col: 0,
                msg: format!("expected {} fields", header.len()),
            },
            _ => csv_error(e, path),
        })?;
        let mut vals = Vec::with_capacity(rec.len());
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col,
                    msg: format!("`{field}` is not finite"),
                });
            }
            vals.push(v);
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    Ok((header, rows))
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            row: e.position().map_or(0, |p| p.record() as usize),
            col: 0,
            msg: format!("{}: {e}", path.display()),
        }
    }
}

fn split_rows(rows: Vec<Vec<f64>>, splits: &Splits, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = rows.len();
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::derive(seed, &[TAG_SPLIT]).shuffle(&mut idx);
    let n_train = ((n as f64) * splits.train).round() as usize;
    let n_valid = (((n as f64) * splits.valid).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let take = |ids: &[usize]| ids.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    (
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_valid]),
        take(&idx[n_train + n_valid..]),
    )
}

/// Fits per-column mean and (population) standard deviation on `train`.
pub fn fit_standardization(train: &[Vec<f64>]) -> Result<Standardization> {
    if train.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let dim = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in train {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in train {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut std = Vec::with_capacity(dim);
    for (j, s) in var.into_iter().enumerate() {
        let sd = (s / n).sqrt();
        if !(sd > 1e-12 * (1.0 + mean[j].abs())) {
            return Err(Error::ZeroVariance(j));
        }
        std.push(sd);
    }
    Ok(Standardization { mean, std })
}

impl Standardization {
    pub fn apply(&self, rows: &mut [Vec<f64>]) {
        for r in rows {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Loads and splits a CSV dataset, standardising with train statistics.
pub fn load_csv(spec: &DatasetSpec) -> Result<Dataset> {
    let src = spec
        .csv
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["dataset.csv is required for kind `csv`".into()]))?;
    let (columns, mut rows) = read_csv(&src.path)?;
    if let Some(m) = src.max_rows {
        if rows.len() > m {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            Rng::derive(spec.seed, &[TAG_SUBSAMPLE]).shuffle(&mut idx);
            idx.truncate(m);
            idx.sort_unstable();
            rows = idx.into_iter().map(|i| std::mem::take(&mut rows[i])).collect();
        }
    }
    let (mut train, mut valid, mut test) = split_rows(rows, &spec.splits, spec.seed);
    let standardization = if src.standardize {
        let st = fit_standardization(&train)?;
        st.apply(&mut train);
        st.apply(&mut valid);
        st.apply(&mut test);
        Some(st)
    } else {
        None
    };
    Ok(Dataset {
        dim: columns.len(),
        columns,
        train,
        valid,
        test,
        standardization,
    })
}

/// Builds the dataset described by `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, &[TAG_SAMPLE]);
    let rows = match spec.kind {
        DatasetKind::FuzzyLine => sample_fuzzy_line(spec.n, &mut rng),
        DatasetKind::Sphere => sample_sphere(spec.n, &mut rng),
        DatasetKind::Moebius => sample_moebius(spec.n, &mut rng),
        DatasetKind::Csv => return load_csv(spec),
    };
    let dim = rows[0].len();
    let (train, valid, test) = split_rows(rows, &spec.splits, spec.seed);
    Ok(Dataset {
        dim,
        columns: (0..dim).map(|i| format!("x{i}")).collect(),
        train,
        valid,
        test,
        standardization: None,
    })
}
