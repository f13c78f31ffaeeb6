//! Sweep-driven datasets of (geometry, reflection curve) pairs.
//!
//! Datasets are stored as CSV with one row per sample
//! (`a_mm,b_mm,c_mm,d_mm,t_mm,r_0001,...`) plus a TOML sidecar
//! (`<name>.meta.toml`) recording the sweep, stack, grid, generator and seed.
//! Reflection values are rounded to 6 decimals when generated so the stored
//! file reproduces the in-memory dataset bit for bit.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em_forward::{reflection_curve, FrequencyGrid, ReflectionCurve, StackSpec};
use crate::error::{Error, Result};
use crate::geometry::{enumerate_sweep, SweepTable, UnitCellGeometry};
use crate::io_util::{read_to_string, write_atomic};

pub const GENERATOR: &str = concat!("fss-absorber ", env!("CARGO_PKG_VERSION"));
pub const PRNG: &str = "ChaCha8Rng";
const GEOMETRY_COLUMNS: [&str; 5] = ["a_mm", "b_mm", "c_mm", "d_mm", "t_mm"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub geometry: UnitCellGeometry,
    pub curve: ReflectionCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub prng: String,
    pub seed: u64,
    pub grid: FrequencyGrid,
    pub stack: StackSpec,
    pub sweep: SweepTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    meta: DatasetMeta,
}

/// Rounds a dB value to the 6 decimals kept on disk.
pub fn quantize_db(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn geometry_key(g: &UnitCellGeometry) -> [u64; 5] {
    g.to_array().map(f64::to_bits)
}

impl Dataset {
    /// Checks the dataset invariants: nonempty, one shared grid, no
    /// duplicate geometries.
    pub fn new(samples: Vec<Sample>, meta: DatasetMeta) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !s.curve.grid.matches(&meta.grid) {
                return Err(Error::InvalidInput(format!(
                    "sample curve grid {} differs from dataset grid {}",
                    s.curve.grid, meta.grid
                )));
            }
            if !seen.insert(geometry_key(&s.geometry)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate geometry {}",
                    s.geometry
                )));
            }
        }
        Ok(Self { samples, meta })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.meta.grid
    }

    /// `n × 5` matrix of `(a, b, c, d, t)`.
    pub fn geometry_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 5), |(i, j)| {
            self.samples[i].geometry.to_array()[j]
        })
    }

    /// `n × grid` matrix of reflection values in dB.
    pub fn curve_matrix(&self) -> Array2<f64> {
        let m = self.meta.grid.len();
        Array2::from_shape_fn((self.len(), m), |(i, j)| self.samples[i].curve.values_db[j])
    }

    /// Distinct thicknesses, ascending.
    pub fn thicknesses(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.samples.iter().map(|s| s.geometry.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or_else(|| {
                    Error::InvalidInput(format!("sample index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.meta.clone())
    }

    /// Concatenates datasets that share a stack and grid. The sweep of the
    /// result is the first sweep with the union of thicknesses; duplicate
    /// geometries keep their first occurrence.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let mut meta = first.meta.clone();
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for p in parts {
            if !p.meta.grid.matches(&meta.grid) || p.meta.stack != meta.stack {
                return Err(Error::InvalidInput(
                    "datasets to combine must share stack and frequency grid".into(),
                ));
            }
            for t in &p.meta.sweep.thicknesses {
                if !meta.sweep.thicknesses.contains(t) {
                    meta.sweep.thicknesses.push(*t);
                }
            }
            for s in &p.samples {
                if seen.insert(geometry_key(&s.geometry)) {
                    samples.push(s.clone());
                }
            }
        }
        meta.sweep.thicknesses.sort_by(f64::total_cmp);
        Self::new(samples, meta)
    }

    /// SHA-256 over the grid, geometries and curves (hex).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let g = &self.meta.grid;
        for v in [g.start_ghz, g.stop_ghz, g.step_ghz] {
            h.update(v.to_le_bytes());
        }
        for s in &self.samples {
            for v in s.geometry.to_array() {
                h.update(v.to_le_bytes());
            }
            for v in &s.curve.values_db {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_csv_string(&self) -> String {
        let m = self.meta.grid.len();
        let mut out = String::with_capacity(self.len() * (m * 12 + 40));
        out.push_str(&header(m).join(","));
        out.push('\n');
        for s in &self.samples {
            let g = s.geometry;
            out.push_str(&format!("{},{},{},{},{}", g.a, g.b, g.c, g.d, g.t));
            for v in &s.curve.values_db {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    /// Writes the CSV and its metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = toml::to_string(&self.meta)
            .map_err(|e| Error::InvalidInput(format!("cannot serialise metadata: {e}")))?;
        write_atomic(&meta_path(path), meta.as_bytes())?;
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mp = meta_path(path);
        let meta_text = read_to_string(&mp)?;
        let meta: DatasetMeta = toml::from_str(&meta_text)
            .map_err(|e| Error::parse(&mp, 0, e.to_string()))?;
        meta.grid.validate()?;
        Self::from_csv_str(&text, meta, path)
    }

    /// Parses CSV text against known metadata. `origin` names the source in
    /// errors.
    pub fn from_csv_str(text: &str, meta: DatasetMeta, origin: &Path) -> Result<Self> {
        let m = meta.grid.len();
        let expected = header(m);
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut samples = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 1;
            let rec = rec.map_err(|e| Error::parse(origin, line, e.to_string()))?;
            if i == 0 {
                if rec.len() != expected.len() {
                    return Err(Error::parse(
                        origin,
                        line,
                        format!(
                            "header has {} columns, grid {} needs {}",
                            rec.len(),
                            meta.grid,
                            expected.len()
                        ),
                    ));
                }
                if let Some((got, want)) = rec.iter().zip(&expected).find(|(g, w)| g != w) {
                    return Err(Error::parse(
                        origin,
                        line,
                        format!("unexpected header column {got:?}, expected {want:?}"),
                    ));
                }
                continue;
            }
            if rec.len() != expected.len() {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("expected {} columns, found {}", expected.len(), rec.len()),
                ));
            }
            let mut values = Vec::with_capacity(rec.len());
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::parse(origin, line, format!("column {}: not a number: {cell:?}", expected[j]))
                })?;
                values.push(v);
            }
            let geometry = UnitCellGeometry::new(values[0], values[1], values[2], values[3], values[4]);
            geometry
                .check()
                .map_err(|e| Error::parse(origin, line, e.to_string()))?;
            let curve = ReflectionCurve::new(meta.grid, values.split_off(5))?;
            samples.push(Sample { geometry, curve });
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(samples, meta)
    }
}

/// Sidecar path: `data.csv` → `data.meta.toml`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

fn header(grid_len: usize) -> Vec<String> {
    GEOMETRY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=grid_len).map(|i| format!("r_{i:04}")))
        .collect()
}

/// One sample per feasible sweep geometry, in enumeration order. Duplicate
/// geometries keep their first occurrence. `seed` is recorded as the
/// dataset's default split seed.
pub fn generate(
    table: &SweepTable,
    stack: &StackSpec,
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<Dataset> {
    table.validate()?;
    stack.validate()?;
    grid.validate()?;
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for g in enumerate_sweep(table) {
        if !seen.insert(geometry_key(&g)) {
            continue;
        }
        let raw = reflection_curve(&g, stack, grid)?;
        let values = raw.values_db.into_iter().map(quantize_db).collect();
        samples.push(Sample {
            geometry: g,
            curve: ReflectionCurve::new(*grid, values)?,
        });
    }
    let meta = DatasetMeta {
        generator: GENERATOR.to_string(),
        prng: PRNG.to_string(),
        seed,
        grid: *grid,
        stack: *stack,
        sweep: table.clone(),
    };
    Dataset::new(samples, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Seeded Fisher–Yates permutation of `0..n` cut after
    /// `floor(n · train_fraction)` entries.
    pub fn indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let n_train = (n as f64 * self.train_fraction).floor() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::InvalidInput(format!(
                "train fraction {} leaves an empty side for {n} samples",
                self.train_fraction
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let test = order.split_off(n_train);
        Ok((order, test))
    }
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = spec.indices(ds.len())?;
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}
