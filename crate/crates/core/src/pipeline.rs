//! Inverse models: reflection curve → unit-cell dimensions.
//!
//! A model chains `standardise → PCA → network → min-max inverse`. Case 1
//! models are trained at one thickness and predict `(a, b, c, d)`; case 2
//! models are trained over several thicknesses and also predict `t`.
//! Predictions are clamped to the per-dimension range seen in training and
//! then nudged into the feasible region of the geometry constraints.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::{Dataset, Sample, SplitSpec};
use crate::em_forward::{
    db_to_magnitude, magnitude_to_db, reflection_curve, FrequencyGrid, Layer, MaterialSpec,
    ReflectionCurve, SheetLoad, StackSpec,
};
use crate::error::{Error, Result};
use crate::features::{FeatureScaler, PcaBasis, TargetScaler};
use crate::geometry::UnitCellGeometry;
use crate::io_util::{read_to_string, write_atomic};
use crate::model_file::{RecordReader, RecordWriter};
use crate::neuralnet::{
    fit, mse, r_squared, AdamConfig, BatchNorm, Dense, FitConfig, HiddenLayer, Network,
    NetworkSpec, TrainHistory, EpochRecord, TABLE2_HIDDEN,
};

pub const MODEL_MAGIC: &str = "fss-absorber-model";
pub const MODEL_VERSION: u32 = 1;
/// Thickness range a case 2 prediction is clamped to.
pub const CASE2_T_RANGE_MM: (f64, f64) = (1.0, 10.0);
/// Clearance kept between nested dimensions when projecting a prediction
/// onto the feasible region.
pub const FEASIBILITY_MARGIN_MM: f64 = 0.05;
/// Relative half-width of the band used for curve coverage.
pub const BAND_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseTag {
    /// Fixed thickness; outputs `(a, b, c, d)`.
    Case1 { thickness_mm: f64 },
    /// Variable thickness; outputs `(a, b, c, d, t)`.
    Case2,
}

impl CaseTag {
    pub fn output_dim(&self) -> usize {
        match self {
            CaseTag::Case1 { .. } => 4,
            CaseTag::Case2 => 5,
        }
    }

    pub fn output_names(&self) -> &'static [&'static str] {
        &UnitCellGeometry::DIMENSION_NAMES[..self.output_dim()]
    }
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseTag::Case1 { thickness_mm } => write!(f, "case 1 (t = {thickness_mm} mm)"),
            CaseTag::Case2 => write!(f, "case 2 (variable t)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub split: SplitSpec,
    /// Requested PCA components; capped by the training-set size.
    pub pca_components: usize,
    pub hidden_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub l2_lambda: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub fit: FitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            pca_components: crate::neuralnet::TABLE2_INPUT,
            hidden_dims: TABLE2_HIDDEN.to_vec(),
            leaky_slope: 0.01,
            l2_lambda: 1e-5,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            fit: FitConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Uses `seed` for both the split and the network.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.fit.seed = seed;
        self
    }

    fn network_spec(&self, input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim,
            leaky_slope: self.leaky_slope,
            l2_lambda: self.l2_lambda,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }
}

/// Held-out metrics on min-max scaled targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n_train: usize,
    pub n_test: usize,
    pub test_mse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub case: CaseTag,
    pub grid: FrequencyGrid,
    pub stack: StackSpec,
    pub scaler: FeatureScaler,
    pub pca: PcaBasis,
    pub targets: TargetScaler,
    pub network: Network,
    pub history: TrainHistory,
    pub config: TrainConfig,
    pub fingerprint: String,
    pub metrics: Metrics,
    /// Non-fatal remarks from fitting the transforms.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub geometry: UnitCellGeometry,
    /// Network output mapped back to millimetres, before clamping.
    pub raw: Vec<f64>,
    /// Names of dimensions changed by clamping or the feasibility projection.
    pub clamped: Vec<&'static str>,
}

impl Prediction {
    pub fn was_clamped(&self) -> bool {
        !self.clamped.is_empty()
    }

    /// Predicted values in output order.
    pub fn outputs(&self, case: CaseTag) -> Vec<f64> {
        self.geometry.to_array()[..case.output_dim()].to_vec()
    }
}

/// `100 |pred − true| / true`, rounded to 2 decimals.
pub fn percentage_error(true_val: f64, pred_val: f64) -> Result<f64> {
    if !(true_val.is_finite() && true_val > 0.0) || !pred_val.is_finite() {
        return Err(Error::InvalidInput(format!(
            "percentage error needs a positive true value, got {true_val} (predicted {pred_val})"
        )));
    }
    Ok((100.0 * (pred_val - true_val).abs() / true_val * 100.0).round() / 100.0)
}

/// Band in dB around a dB value: `±BAND_FRACTION` of its linear magnitude.
pub fn band_db(true_db: f64) -> (f64, f64) {
    let m = db_to_magnitude(true_db);
    (
        magnitude_to_db((1.0 - BAND_FRACTION) * m),
        magnitude_to_db((1.0 + BAND_FRACTION) * m),
    )
}

/// Fraction of points where `candidate` lies inside the band around `truth`,
/// compared in linear magnitude.
pub fn band_coverage(truth_db: &[f64], candidate_db: &[f64]) -> f64 {
    assert_eq!(truth_db.len(), candidate_db.len(), "curve lengths");
    if truth_db.is_empty() {
        return 0.0;
    }
    let inside = truth_db
        .iter()
        .zip(candidate_db)
        .filter(|(t, c)| {
            let (t, c) = (db_to_magnitude(**t), db_to_magnitude(**c));
            c >= (1.0 - BAND_FRACTION) * t && c <= (1.0 + BAND_FRACTION) * t
        })
        .count();
    inside as f64 / truth_db.len() as f64
}

/// Mean over grid points of the across-sample variance (dB²).
pub fn curve_variance(curves: ArrayView2<f64>) -> f64 {
    curves.var_axis(Axis(0), 0.0).mean().unwrap_or(0.0)
}

fn curve_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn target_matrix(ds: &Dataset, case: CaseTag) -> Array2<f64> {
    let g = ds.geometry_matrix();
    g.slice(ndarray::s![.., ..case.output_dim()]).to_owned()
}

pub fn train_case1(ds: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    match ds.thicknesses()[..] {
        [t] => train(ds, CaseTag::Case1 { thickness_mm: t }, config),
        ref ts => Err(Error::InvalidInput(format!(
            "case 1 needs a single thickness, dataset has {}: {:?}",
            ts.len(),
            ts
        ))),
    }
}

pub fn train_case2(ds: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    let ts = ds.thicknesses();
    if ts.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "case 2 needs at least 2 thicknesses, dataset has {ts:?}; use case 1 for a fixed thickness"
        )));
    }
    train(ds, CaseTag::Case2, config)
}

fn train(ds: &Dataset, case: CaseTag, config: &TrainConfig) -> Result<TrainedModel> {
    let (train_idx, test_idx) = config.split.indices(ds.len())?;
    let curves = ds.curve_matrix();
    let targets = target_matrix(ds, case);
    let x_train = curves.select(Axis(0), &train_idx);
    let x_test = curves.select(Axis(0), &test_idx);
    let y_train = targets.select(Axis(0), &train_idx);
    let y_test = targets.select(Axis(0), &test_idx);

    let (scaler, warnings) = FeatureScaler::fit(x_train.view())?;
    let z_train = scaler.apply(x_train.view())?;
    let k = config
        .pca_components
        .min(z_train.nrows() - 1)
        .min(z_train.ncols());
    let pca = PcaBasis::fit(z_train.view(), k)?;
    let f_train = pca.transform(z_train.view())?;
    let f_test = pca.transform(scaler.apply(x_test.view())?.view())?;

    let target_scaler = TargetScaler::fit(y_train.view())?;
    let t_train = target_scaler.apply(y_train.view())?;
    let t_test = target_scaler.apply(y_test.view())?;

    let spec = config.network_spec(k, case.output_dim());
    let (network, history) = fit(
        &spec,
        (f_train.view(), t_train.view()),
        (f_test.view(), t_test.view()),
        &config.fit,
    )?;
    let best = history.best().copied().expect("fit records the best epoch");
    Ok(TrainedModel {
        case,
        grid: *ds.grid(),
        stack: ds.meta().stack,
        scaler,
        pca,
        targets: target_scaler,
        network,
        history,
        config: config.clone(),
        fingerprint: ds.fingerprint(),
        metrics: Metrics {
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            test_mse: best.test_mse,
            r2: best.r2,
        },
        warnings,
    })
}

impl TrainedModel {
    fn check_grid(&self, grid: &FrequencyGrid) -> Result<()> {
        if grid.matches(&self.grid) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "curve grid {grid} does not match the model grid {}",
                self.grid
            )))
        }
    }

    /// Network input features for rows of dB curves.
    pub fn features(&self, curves: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.pca.transform(self.scaler.apply(curves)?.view())
    }

    /// Unclamped predictions in millimetres, one row per curve.
    pub fn predict_raw(&self, curves: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.network.predict(self.features(curves)?.view())?;
        self.targets.invert(out.view())
    }

    pub fn predict_batch(&self, curves: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        let raw = self.predict_raw(curves)?;
        Ok(raw.rows().into_iter().map(|r| self.constrain(r.to_vec())).collect())
    }

    /// Clamps to the training range, fills or clamps `t`, then enforces
    /// `b, d ≤ a − m` and `c ≤ b − m`.
    pub fn constrain(&self, raw: Vec<f64>) -> Prediction {
        let mut v = [0.0; 5];
        let mut clamped = Vec::new();
        for (j, &r) in raw.iter().enumerate() {
            let (mut lo, mut hi) = (self.targets.mins[j], self.targets.maxs[j]);
            if j == 4 {
                lo = lo.max(CASE2_T_RANGE_MM.0);
                hi = hi.min(CASE2_T_RANGE_MM.1);
                if lo > hi {
                    (lo, hi) = CASE2_T_RANGE_MM;
                }
            }
            let c = if r.is_nan() { (lo + hi) / 2.0 } else { r.clamp(lo, hi) };
            if c != r {
                clamped.push(UnitCellGeometry::DIMENSION_NAMES[j]);
            }
            v[j] = c;
        }
        if let CaseTag::Case1 { thickness_mm } = self.case {
            v[4] = thickness_mm;
        }
        let margin = |x: f64| FEASIBILITY_MARGIN_MM.min(x / 2.0);
        let [a, b, c, d, _] = &mut v;
        let mut project = |value: &mut f64, limit: f64, name: &'static str| {
            if *value > limit {
                *value = limit;
                if !clamped.contains(&name) {
                    clamped.push(name);
                }
            }
        };
        project(b, *a - margin(*a), "b");
        project(d, *a - margin(*a), "d");
        project(c, *b - margin(*b), "c");
        Prediction {
            geometry: UnitCellGeometry::from_array(v),
            raw,
            clamped,
        }
    }

    pub fn predict_geometry(&self, curve: &ReflectionCurve) -> Result<Prediction> {
        self.check_grid(&curve.grid)?;
        let row = Array2::from_shape_vec((1, curve.values_db.len()), curve.values_db.clone())
            .expect("row shape");
        Ok(self.predict_batch(row.view())?.remove(0))
    }

    pub fn to_text(&self) -> String {
        let mut w = RecordWriter::new(MODEL_MAGIC, MODEL_VERSION);
        match self.case {
            CaseTag::Case1 { thickness_mm } => {
                w.text("case", "case1").scalar("case.thickness_mm", thickness_mm);
            }
            CaseTag::Case2 => {
                w.text("case", "case2");
            }
        }
        w.text("outputs", &self.case.output_names().join(","))
            .text("dataset.fingerprint", &self.fingerprint)
            .vector(
                "grid",
                &[self.grid.start_ghz, self.grid.stop_ghz, self.grid.step_ghz],
            );
        let s = &self.stack;
        match s.superstrate {
            Some(l) => w.vector(
                "stack.superstrate",
                &[l.material.eps_r, l.material.tan_delta, l.thickness_mm],
            ),
            None => w.vector("stack.superstrate", &[]),
        };
        w.vector("stack.spacer", &[s.spacer.eps_r, s.spacer.tan_delta]);
        match s.sheet {
            SheetLoad::Resistive { ohms } => w.text("stack.sheet", "resistive").scalar("stack.sheet_ohms", ohms),
            SheetLoad::Open => w.text("stack.sheet", "open"),
        };

        let c = &self.config;
        w.scalar("config.train_fraction", c.split.train_fraction)
            .text("config.split_seed", &c.split.seed.to_string())
            .scalar("config.pca_components", c.pca_components as f64)
            .scalar("config.leaky_slope", c.leaky_slope)
            .scalar("config.l2_lambda", c.l2_lambda)
            .scalar("config.bn_momentum", c.bn_momentum)
            .scalar("config.bn_epsilon", c.bn_epsilon)
            .scalar("config.batch_size", c.fit.batch_size as f64)
            .scalar("config.max_epochs", c.fit.max_epochs as f64)
            .scalar("config.patience", c.fit.patience as f64)
            .scalar("config.learning_rate", c.fit.adam.learning_rate)
            .scalar("config.beta1", c.fit.adam.beta1)
            .scalar("config.beta2", c.fit.adam.beta2)
            .scalar("config.adam_epsilon", c.fit.adam.epsilon)
            .text("config.seed", &c.fit.seed.to_string());

        w.scalar("metrics.n_train", self.metrics.n_train as f64)
            .scalar("metrics.n_test", self.metrics.n_test as f64)
            .scalar("metrics.test_mse", self.metrics.test_mse)
            .scalar("metrics.r2", self.metrics.r2);
        for (i, note) in self.warnings.iter().enumerate() {
            w.text(&format!("warning.{i}"), note);
        }

        w.vector("scaler.means", self.scaler.means.as_slice().expect("contiguous"))
            .vector("scaler.std_devs", self.scaler.std_devs.as_slice().expect("contiguous"))
            .vector("pca.mean", self.pca.mean.as_slice().expect("contiguous"))
            .vector(
                "pca.explained_variance",
                self.pca.explained_variance.as_slice().expect("contiguous"),
            )
            .matrix("pca.components", &self.pca.components)
            .vector("targets.mins", self.targets.mins.as_slice().expect("contiguous"))
            .vector("targets.maxs", self.targets.maxs.as_slice().expect("contiguous"));

        let dims: Vec<f64> = self.network.spec.layer_dims().iter().map(|&d| d as f64).collect();
        w.vector("network.layer_dims", &dims);
        for (i, l) in self.network.hidden.iter().enumerate() {
            w.matrix(&format!("hidden.{i}.weights"), &l.dense.weights)
                .vector(&format!("hidden.{i}.bias"), l.dense.bias.as_slice().expect("contiguous"))
                .vector(&format!("hidden.{i}.gamma"), l.norm.gamma.as_slice().expect("contiguous"))
                .vector(&format!("hidden.{i}.beta"), l.norm.beta.as_slice().expect("contiguous"))
                .vector(
                    &format!("hidden.{i}.running_mean"),
                    l.norm.running_mean.as_slice().expect("contiguous"),
                )
                .vector(
                    &format!("hidden.{i}.running_var"),
                    l.norm.running_var.as_slice().expect("contiguous"),
                );
        }
        w.matrix("output.weights", &self.network.output.weights)
            .vector("output.bias", self.network.output.bias.as_slice().expect("contiguous"));

        let h = &self.history;
        let rows = Array2::from_shape_fn((h.records.len(), 4), |(i, j)| {
            let r = &h.records[i];
            [r.epoch as f64, r.train_mse, r.test_mse, r.r2][j]
        });
        w.scalar("history.best_epoch", h.best_epoch as f64)
            .matrix("history", &rows);
        w.finish()
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let r = RecordReader::parse(text, MODEL_MAGIC, origin)?;
        if r.version != MODEL_VERSION {
            return Err(r.error("", format!("unsupported model version {}", r.version)));
        }
        let case = match r.text("case")? {
            "case1" => CaseTag::Case1 {
                thickness_mm: r.scalar("case.thickness_mm")?,
            },
            "case2" => CaseTag::Case2,
            other => return Err(r.error("case", format!("unknown case {other:?}"))),
        };
        let grid_v = r.vector("grid")?;
        if grid_v.len() != 3 {
            return Err(r.error("grid", "grid needs start, stop, step"));
        }
        let grid = FrequencyGrid::new(grid_v[0], grid_v[1], grid_v[2])?;

        let sup = r.vector("stack.superstrate")?;
        let superstrate = match sup.len() {
            0 => None,
            3 => Some(Layer {
                material: MaterialSpec {
                    eps_r: sup[0],
                    tan_delta: sup[1],
                },
                thickness_mm: sup[2],
            }),
            _ => return Err(r.error("stack.superstrate", "expected 0 or 3 values")),
        };
        let sp = r.vector("stack.spacer")?;
        if sp.len() != 2 {
            return Err(r.error("stack.spacer", "expected eps_r and tan_delta"));
        }
        let sheet = match r.text("stack.sheet")? {
            "resistive" => SheetLoad::Resistive {
                ohms: r.scalar("stack.sheet_ohms")?,
            },
            "open" => SheetLoad::Open,
            other => return Err(r.error("stack.sheet", format!("unknown sheet {other:?}"))),
        };
        let stack = StackSpec {
            superstrate,
            spacer: MaterialSpec {
                eps_r: sp[0],
                tan_delta: sp[1],
            },
            sheet,
        };
        stack.validate()?;

        let seed = |name: &str| -> Result<u64> {
            r.text(name)?
                .parse()
                .map_err(|_| r.error(name, "seed must be an unsigned integer"))
        };
        let dims: Vec<usize> = r.vector("network.layer_dims")?.iter().map(|&d| d as usize).collect();
        if dims.len() < 2 {
            return Err(r.error("network.layer_dims", "need at least input and output"));
        }
        let config = TrainConfig {
            split: SplitSpec {
                train_fraction: r.scalar("config.train_fraction")?,
                seed: seed("config.split_seed")?,
            },
            pca_components: r.count("config.pca_components")? as usize,
            hidden_dims: dims[1..dims.len() - 1].to_vec(),
            leaky_slope: r.scalar("config.leaky_slope")?,
            l2_lambda: r.scalar("config.l2_lambda")?,
            bn_momentum: r.scalar("config.bn_momentum")?,
            bn_epsilon: r.scalar("config.bn_epsilon")?,
            fit: FitConfig {
                batch_size: r.count("config.batch_size")? as usize,
                max_epochs: r.count("config.max_epochs")? as usize,
                patience: r.count("config.patience")? as usize,
                adam: AdamConfig {
                    learning_rate: r.scalar("config.learning_rate")?,
                    beta1: r.scalar("config.beta1")?,
                    beta2: r.scalar("config.beta2")?,
                    epsilon: r.scalar("config.adam_epsilon")?,
                },
                seed: seed("config.seed")?,
            },
        };
        let spec = config.network_spec(dims[0], *dims.last().expect("len >= 2"));
        spec.validate()?;
        if spec.output_dim != case.output_dim() {
            return Err(r.error(
                "network.layer_dims",
                format!("{case} needs {} outputs, network has {}", case.output_dim(), spec.output_dim),
            ));
        }

        let shaped_matrix = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let m = r.matrix(name)?;
            if m.dim() != (rows, cols) {
                return Err(r.error(name, format!("expected {rows}×{cols}, found {:?}", m.dim())));
            }
            Ok(m)
        };
        let shaped_vector = |name: &str, len: usize| -> Result<Array1<f64>> {
            let v = r.vector(name)?;
            if v.len() != len {
                return Err(r.error(name, format!("expected {len} values, found {}", v.len())));
            }
            Ok(v)
        };

        let p = grid.len();
        let k = dims[0];
        let scaler = FeatureScaler {
            means: shaped_vector("scaler.means", p)?,
            std_devs: shaped_vector("scaler.std_devs", p)?,
        };
        let pca = PcaBasis {
            mean: shaped_vector("pca.mean", p)?,
            components: shaped_matrix("pca.components", k, p)?,
            explained_variance: shaped_vector("pca.explained_variance", k)?,
        };
        let out_dim = case.output_dim();
        let targets = TargetScaler {
            mins: shaped_vector("targets.mins", out_dim)?,
            maxs: shaped_vector("targets.maxs", out_dim)?,
        };

        let mut hidden = Vec::with_capacity(dims.len() - 2);
        for (i, w) in dims.windows(2).take(dims.len() - 2).enumerate() {
            let (fan_in, width) = (w[0], w[1]);
            hidden.push(HiddenLayer {
                dense: Dense {
                    weights: shaped_matrix(&format!("hidden.{i}.weights"), fan_in, width)?,
                    bias: shaped_vector(&format!("hidden.{i}.bias"), width)?,
                },
                norm: BatchNorm {
                    gamma: shaped_vector(&format!("hidden.{i}.gamma"), width)?,
                    beta: shaped_vector(&format!("hidden.{i}.beta"), width)?,
                    running_mean: shaped_vector(&format!("hidden.{i}.running_mean"), width)?,
                    running_var: shaped_vector(&format!("hidden.{i}.running_var"), width)?,
                },
            });
        }
        let last_in = dims[dims.len() - 2];
        let output = Dense {
            weights: shaped_matrix("output.weights", last_in, out_dim)?,
            bias: shaped_vector("output.bias", out_dim)?,
        };

        let hist = r.matrix("history")?;
        if hist.ncols() != 4 {
            return Err(r.error("history", "expected 4 columns"));
        }
        let history = TrainHistory {
            records: hist
                .rows()
                .into_iter()
                .map(|row| EpochRecord {
                    epoch: row[0] as usize,
                    train_mse: row[1],
                    test_mse: row[2],
                    r2: row[3],
                })
                .collect(),
            best_epoch: r.count("history.best_epoch")? as usize,
        };

        let mut warnings = Vec::new();
        while let Ok(w) = r.text(&format!("warning.{}", warnings.len())) {
            warnings.push(w.to_string());
        }

        Ok(Self {
            case,
            grid,
            stack,
            scaler,
            pca,
            targets,
            network: Network {
                spec,
                hidden,
                output,
            },
            history,
            config,
            fingerprint: r.text("dataset.fingerprint")?.to_string(),
            metrics: Metrics {
                n_train: r.count("metrics.n_train")? as usize,
                n_test: r.count("metrics.n_test")? as usize,
                test_mse: r.scalar("metrics.test_mse")?,
                r2: r.scalar("metrics.r2")?,
            },
            warnings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub true_geometry: UnitCellGeometry,
    pub true_db: Vec<f64>,
    pub prediction: Prediction,
    /// One per model output, in output order.
    pub percent_errors: Vec<f64>,
    /// `None` when the forward solver rejected the predicted geometry.
    pub roundtrip_db: Option<Vec<f64>>,
    pub curve_mse_db2: Option<f64>,
    pub band_coverage: Option<f64>,
    pub failure: Option<String>,
}

impl SampleReport {
    /// `f_GHz,true_dB,roundtrip_dB,band_lo_dB,band_hi_dB`
    pub fn curve_csv(&self, grid: &FrequencyGrid) -> String {
        let mut s = String::from("f_GHz,true_dB,roundtrip_dB,band_lo_dB,band_hi_dB\n");
        for (i, &t) in self.true_db.iter().enumerate() {
            let (lo, hi) = band_db(t);
            let rt = self
                .roundtrip_db
                .as_ref()
                .map_or(String::from("nan"), |v| format!("{:.6}", v[i]));
            let _ = writeln!(
                s,
                "{:.4},{t:.6},{rt},{lo:.6},{hi:.6}",
                grid.frequency(i)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub case: CaseTag,
    pub samples: Vec<SampleReport>,
    /// MSE between scaled true and predicted (clamped) outputs.
    pub test_mse: f64,
    /// `None` for fewer than 2 samples.
    pub r2: Option<f64>,
    pub median_percent_errors: Vec<f64>,
    pub p90_percent_errors: Vec<f64>,
    pub median_curve_mse_db2: f64,
    /// Mean per-point variance of the true curves (dB²).
    pub curve_variance_db2: f64,
    pub failures: usize,
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

impl ValidationReport {
    /// Fraction of non-failed samples whose band coverage reaches `min_coverage`.
    pub fn fraction_covered(&self, min_coverage: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ok = self
            .samples
            .iter()
            .filter(|s| s.band_coverage.is_some_and(|c| c >= min_coverage))
            .count();
        ok as f64 / self.samples.len() as f64
    }

    /// Table of true vs predicted dimensions with percentage errors.
    pub fn to_text(&self) -> String {
        let names = self.case.output_names();
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.case);
        let _ = write!(s, "{:<7}", "sample");
        for n in names {
            let _ = write!(s, " {:>8} {:>8} {:>7}", format!("true_{n}"), format!("pred_{n}"), format!("err_{n}%"));
        }
        let _ = writeln!(s, " {:>10} {:>8} clamped", "mse_dB2", "coverage");
        for (i, r) in self.samples.iter().enumerate() {
            let _ = write!(s, "{:<7}", sample_label(i));
            let t = r.true_geometry.to_array();
            let p = r.prediction.geometry.to_array();
            for j in 0..names.len() {
                let _ = write!(s, " {:>8.2} {:>8.2} {:>7.2}", t[j], p[j], r.percent_errors[j]);
            }
            let mse = r.curve_mse_db2.map_or("failed".into(), |v| format!("{v:.3}"));
            let cov = r.band_coverage.map_or("-".into(), |v| format!("{v:.3}"));
            let flags = if r.prediction.clamped.is_empty() {
                "-".to_string()
            } else {
                r.prediction.clamped.join("+")
            };
            let _ = writeln!(s, " {mse:>10} {cov:>8} {flags}");
        }
        let _ = writeln!(
            s,
            "aggregate: n={} test_mse={:.6} r2={} failures={}",
            self.samples.len(),
            self.test_mse,
            self.r2.map_or("n/a".into(), |v| format!("{v:.4}")),
            self.failures
        );
        let _ = writeln!(
            s,
            "median_percent_error: {}",
            join_pairs(names, &self.median_percent_errors)
        );
        let _ = writeln!(s, "p90_percent_error: {}", join_pairs(names, &self.p90_percent_errors));
        let _ = writeln!(
            s,
            "median_curve_mse_dB2={:.4} curve_variance_dB2={:.4} covered_at_0.8={:.3}",
            self.median_curve_mse_db2,
            self.curve_variance_db2,
            self.fraction_covered(0.8)
        );
        s
    }
}

/// `(a)`, `(b)`, …, `(z)`, `(27)`, …
pub fn sample_label(i: usize) -> String {
    if i < 26 {
        format!("({})", (b'a' + i as u8) as char)
    } else {
        format!("({})", i + 1)
    }
}

fn join_pairs(names: &[&str], values: &[f64]) -> String {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| format!("{n}={v:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Predicts each sample, re-simulates the prediction and compares curves
/// and dimensions.
pub fn round_trip_validate(model: &TrainedModel, samples: &[Sample]) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in samples {
        model.check_grid(&s.curve.grid)?;
    }
    let p = model.grid.len();
    let curves = Array2::from_shape_fn((samples.len(), p), |(i, j)| samples[i].curve.values_db[j]);
    let predictions = model.predict_batch(curves.view())?;
    let out_dim = model.case.output_dim();

    let mut reports = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(predictions) {
        let truth = s.geometry.to_array();
        let got = pred.geometry.to_array();
        let percent_errors = (0..out_dim)
            .map(|j| percentage_error(truth[j], got[j]))
            .collect::<Result<Vec<_>>>()?;
        let (roundtrip_db, curve_mse_db2, band, failure) =
            match reflection_curve(&pred.geometry, &model.stack, &model.grid) {
                Ok(c) => {
                    let m = curve_mse(&s.curve.values_db, &c.values_db);
                    let b = band_coverage(&s.curve.values_db, &c.values_db);
                    (Some(c.values_db), Some(m), Some(b), None)
                }
                Err(e) => (None, None, None, Some(e.to_string())),
            };
        reports.push(SampleReport {
            true_geometry: s.geometry,
            true_db: s.curve.values_db.clone(),
            prediction: pred,
            percent_errors,
            roundtrip_db,
            curve_mse_db2,
            band_coverage: band,
            failure,
        });
    }

    let truth = Array2::from_shape_fn((reports.len(), out_dim), |(i, j)| {
        reports[i].true_geometry.to_array()[j]
    });
    let pred = Array2::from_shape_fn((reports.len(), out_dim), |(i, j)| {
        reports[i].prediction.geometry.to_array()[j]
    });
    let t_scaled = model.targets.apply(truth.view())?;
    let p_scaled = model.targets.apply(pred.view())?;
    let test_mse = mse(p_scaled.view(), t_scaled.view());
    let r2 = r_squared(p_scaled.view(), t_scaled.view()).ok();

    let column = |j: usize| -> Vec<f64> { reports.iter().map(|r| r.percent_errors[j]).collect() };
    let median_percent_errors = (0..out_dim).map(|j| quantile(&mut column(j), 0.5)).collect();
    let p90_percent_errors = (0..out_dim).map(|j| quantile(&mut column(j), 0.9)).collect();
    let mut mses: Vec<f64> = reports.iter().filter_map(|r| r.curve_mse_db2).collect();
    let failures = reports.len() - mses.len();

    Ok(ValidationReport {
        case: model.case,
        test_mse,
        r2,
        median_percent_errors,
        p90_percent_errors,
        median_curve_mse_db2: quantile(&mut mses, 0.5),
        curve_variance_db2: curve_variance(curves.view()),
        failures,
        samples: reports,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRun {
    pub depth: usize,
    pub hidden_dims: Vec<usize>,
    pub history: TrainHistory,
    pub metrics: Metrics,
}

/// Trains one model per hidden-layer count with otherwise identical
/// settings and seeds.
pub fn layer_depth_study(
    ds: &Dataset,
    depths: &[usize],
    config: &TrainConfig,
) -> Result<Vec<DepthRun>> {
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::InvalidInput("depths must be a nonempty list of positive counts".into()));
    }
    let case2 = ds.thicknesses().len() > 1;
    depths
        .iter()
        .map(|&depth| {
            let cfg = TrainConfig {
                hidden_dims: NetworkSpec::hidden_stack(depth),
                ..config.clone()
            };
            let model = if case2 {
                train_case2(ds, &cfg)?
            } else {
                train_case1(ds, &cfg)?
            };
            Ok(DepthRun {
                depth,
                hidden_dims: cfg.hidden_dims,
                history: model.history,
                metrics: model.metrics,
            })
        })
        .collect()
}

/// `depth,hidden_dims,epochs,best_epoch,final_test_mse,best_test_mse,r2`
pub fn depth_summary_csv(runs: &[DepthRun]) -> String {
    let mut s = String::from("depth,hidden_dims,epochs,best_epoch,final_test_mse,best_test_mse,r2\n");
    for r in runs {
        let last = r.history.records.last().map_or(f64::NAN, |e| e.test_mse);
        let dims: Vec<String> = r.hidden_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.10e},{:.10e},{:.10}",
            r.depth,
            dims.join("-"),
            r.history.len(),
            r.history.best_epoch,
            last,
            r.metrics.test_mse,
            r.metrics.r2
        );
    }
    s
}
