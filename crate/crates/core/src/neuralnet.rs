//! Dense regression network trained with analytic gradients.
//!
//! Each hidden layer is `affine -> batch norm -> Leaky ReLU`; the output layer
//! is affine only. The loss is the mean squared error over batch and outputs
//! plus `λ Σ w²` over every dense weight matrix (biases and batch-norm
//! parameters are not decayed). Optimisation is Adam with bias correction.
//!
//! Weight matrices are stored `fan_in × fan_out` so a batch `X` (rows are
//! samples) maps to `X · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Hidden widths of the reference architecture.
pub const TABLE2_HIDDEN: [usize; 6] = [112, 112, 112, 8, 8, 8];
pub const TABLE2_INPUT: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub leaky_slope: f64,
    pub l2_lambda: f64,
    /// Weight kept on the old running statistic at each update.
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl NetworkSpec {
    /// 300 inputs, hidden widths 112-112-112-8-8-8.
    pub fn table2(output_dim: usize) -> Self {
        Self {
            input_dim: TABLE2_INPUT,
            hidden_dims: TABLE2_HIDDEN.to_vec(),
            output_dim,
            leaky_slope: 0.01,
            l2_lambda: 1e-5,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }

    /// Hidden widths for a stack of `depth` layers following the reference
    /// pattern: the first half wide, the second half narrow. Depth 6 gives
    /// the reference stack exactly.
    pub fn hidden_stack(depth: usize) -> Vec<usize> {
        let wide = depth.div_ceil(2);
        (0..depth)
            .map(|i| if i < wide { TABLE2_HIDDEN[0] } else { TABLE2_HIDDEN[5] })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidInput("layer dimensions must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidInput(format!(
                "leaky slope must be in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("l2 lambda must be >= 0, got {}", self.l2_lambda)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_epsilon.is_finite() && self.bn_epsilon > 0.0) {
            return Err(Error::InvalidInput("batch-norm momentum must be in [0,1) and epsilon > 0".into()));
        }
        Ok(())
    }

    /// `[input, hidden..., output]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn he_normal(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        Self {
            weights: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; needs at least two rows.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

struct HiddenCache {
    input: Array2<f64>,
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    /// Batch-norm output, i.e. the Leaky ReLU argument.
    normed: Array2<f64>,
}

/// Intermediate values of a train-mode forward pass, consumed by
/// [`Network::backward`].
pub struct ForwardCache {
    hidden: Vec<HiddenCache>,
    output_input: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrad {
    pub dense: DenseGrad,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<HiddenGrad>,
    pub output: DenseGrad,
}

impl Gradients {
    /// Flat views in the same order as [`Network::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 2);
        for h in &self.hidden {
            out.push(h.dense.weights.as_slice().expect("standard layout"));
            out.push(h.dense.bias.as_slice().expect("standard layout"));
            out.push(h.gamma.as_slice().expect("standard layout"));
            out.push(h.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output.weights.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Mean over rows and columns of the squared error.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let diff = &pred - &target;
    diff.mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// Coefficient of determination per output column, averaged.
pub fn r_squared(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if target.nrows() < 2 {
        return Err(Error::InvalidInput("R² needs at least 2 samples".into()));
    }
    let mean = target.mean_axis(Axis(0)).expect("nonempty");
    let mut total = 0.0;
    for j in 0..target.ncols() {
        let col = target.column(j);
        let ss_tot: f64 = col.iter().map(|v| (v - mean[j]).powi(2)).sum();
        if ss_tot == 0.0 {
            return Err(Error::InvalidInput(format!("target column {j} has zero variance")));
        }
        let ss_res: f64 = col
            .iter()
            .zip(pred.column(j))
            .map(|(t, p)| (t - p).powi(2))
            .sum();
        total += 1.0 - ss_res / ss_tot;
    }
    Ok(total / target.ncols() as f64)
}

impl Network {
    /// He-normal weights, zero biases, identity batch norm.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let hidden = dims
            .windows(2)
            .take(spec.hidden_dims.len())
            .map(|w| HiddenLayer {
                dense: Dense::he_normal(w[0], w[1], &mut rng),
                norm: BatchNorm::new(w[1]),
            })
            .collect();
        let n = dims.len();
        let output = Dense::he_normal(dims[n - 2], dims[n - 1], &mut rng);
        Ok(Self {
            spec: spec.clone(),
            hidden,
            output,
        })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.spec.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(out, _)| out),
            Mode::Infer => {
                self.check_input(&x)?;
                let eps = self.spec.bn_epsilon;
                let slope = self.spec.leaky_slope;
                let mut h = x.to_owned();
                for layer in &self.hidden {
                    let z = layer.dense.apply(&h.view());
                    let n = &layer.norm;
                    let scale = &n.gamma / &n.running_var.mapv(|v| (v + eps).sqrt());
                    h = ((&z - &n.running_mean) * &scale + &n.beta).mapv(|v| leaky_relu(v, slope));
                }
                Ok(self.output.apply(&h.view()))
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(x, Mode::Infer)
    }

    /// Train-mode pass using batch statistics. Running statistics are not
    /// touched; see [`update_running_stats`](Self::update_running_stats).
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        if x.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "train-mode forward needs a batch of at least 2, got {}",
                x.nrows()
            )));
        }
        let eps = self.spec.bn_epsilon;
        let slope = self.spec.leaky_slope;
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let z = layer.dense.apply(&h.view());
            let batch_mean = z.mean_axis(Axis(0)).expect("nonempty");
            let batch_var = z.var_axis(Axis(0), 0.0);
            let inv_std = batch_var.mapv(|v| 1.0 / (v + eps).sqrt());
            let x_hat = (&z - &batch_mean) * &inv_std;
            let normed = &x_hat * &layer.norm.gamma + &layer.norm.beta;
            let next = normed.mapv(|v| leaky_relu(v, slope));
            caches.push(HiddenCache {
                input: std::mem::replace(&mut h, next),
                x_hat,
                inv_std,
                batch_mean,
                batch_var,
                normed,
            });
        }
        let out = self.output.apply(&h.view());
        Ok((
            out,
            ForwardCache {
                hidden: caches,
                output_input: h,
            },
        ))
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.spec.bn_momentum;
        for (layer, c) in self.hidden.iter_mut().zip(&cache.hidden) {
            let n = &mut layer.norm;
            n.running_mean = &n.running_mean * m + &c.batch_mean * (1.0 - m);
            n.running_var = &n.running_var * m + &c.batch_var * (1.0 - m);
        }
    }

    /// `Σ w²` over all dense weight matrices.
    pub fn weight_norm_sq(&self) -> f64 {
        self.hidden
            .iter()
            .map(|l| &l.dense.weights)
            .chain(std::iter::once(&self.output.weights))
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn loss(&self, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
        mse(pred, target) + self.spec.l2_lambda * self.weight_norm_sq()
    }

    /// Gradients of [`loss`](Self::loss) given `d_out = ∂MSE/∂pred` from the
    /// same train-mode batch. The L2 term is added here.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Gradients {
        let two_lambda = 2.0 * self.spec.l2_lambda;
        let slope = self.spec.leaky_slope;
        let output = DenseGrad {
            weights: cache.output_input.t().dot(&d_out) + &self.output.weights * two_lambda,
            bias: d_out.sum_axis(Axis(0)),
        };
        let mut delta = d_out.dot(&self.output.weights.t());
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (layer, c) in self.hidden.iter().zip(&cache.hidden).rev() {
            // Leaky ReLU.
            let d_normed = ndarray::Zip::from(&delta)
                .and(&c.normed)
                .map_collect(|d, v| if *v > 0.0 { *d } else { slope * d });
            let gamma_grad = (&d_normed * &c.x_hat).sum_axis(Axis(0));
            let beta_grad = d_normed.sum_axis(Axis(0));
            // Batch norm through the batch statistics.
            let n = c.x_hat.nrows() as f64;
            let d_xhat = &d_normed * &layer.norm.gamma;
            let sum_d = d_xhat.sum_axis(Axis(0));
            let sum_dx = (&d_xhat * &c.x_hat).sum_axis(Axis(0));
            let d_z = (&d_xhat * n - &sum_d - &c.x_hat * &sum_dx) * &(&c.inv_std / n);

            hidden.push(HiddenGrad {
                dense: DenseGrad {
                    weights: c.input.t().dot(&d_z) + &layer.dense.weights * two_lambda,
                    bias: d_z.sum_axis(Axis(0)),
                },
                gamma: gamma_grad,
                beta: beta_grad,
            });
            delta = d_z.dot(&layer.dense.weights.t());
        }
        hidden.reverse();
        Gradients { hidden, output }
    }

    /// Train-mode loss and its gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
    ) -> Result<(f64, Gradients, ForwardCache)> {
        let (pred, cache) = self.forward_train(x)?;
        if pred.dim() != y.dim() {
            return Err(Error::Dimension(format!(
                "prediction {:?} vs target {:?}",
                pred.dim(),
                y.dim()
            )));
        }
        let loss = self.loss(pred.view(), y);
        let d_out = (&pred - &y) * (2.0 / pred.len() as f64);
        let grads = self.backward(&cache, d_out.view());
        Ok((loss, grads, cache))
    }

    /// Trainable parameters as flat mutable slices: per hidden layer weights,
    /// bias, gamma, beta; then output weights and bias.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 2);
        for h in &mut self.hidden {
            out.push(h.dense.weights.as_slice_mut().expect("standard layout"));
            out.push(h.dense.bias.as_slice_mut().expect("standard layout"));
            out.push(h.norm.gamma.as_slice_mut().expect("standard layout"));
            out.push(h.norm.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weights.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut copy = self.clone();
        copy.params_mut().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed accumulators shaped like the given parameter groups.
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = shapes.into_iter().collect();
        Self {
            config,
            step: 0,
            first_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(config: AdamConfig, net: &mut Network) -> Self {
        let lens: Vec<usize> = net.params_mut().iter().map(|s| s.len()).collect();
        Self::new(config, lens)
    }

    /// One bias-corrected update of every parameter group.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter group count");
        assert_eq!(grads.len(), self.first_moment.len(), "gradient group count");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            assert_eq!(p.len(), g.len(), "parameter/gradient shape");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without test-MSE improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 500,
            patience: 50,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,test_mse,r2\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.10e},{:.10e},{:.10}\n",
                r.epoch, r.train_mse, r.test_mse, r.r2
            ));
        }
        s
    }
}

/// Splits shuffled indices into batches, folding a trailing singleton into
/// the previous batch so every batch has batch statistics.
fn batches(indices: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = indices.chunks(size.max(2)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let start = (out.len() - 1) * size.max(2);
        *out.last_mut().expect("nonempty") = &indices[start..];
    }
    out
}

/// Mini-batch training with per-epoch evaluation and early stopping on the
/// test MSE. Returns the parameters of the best epoch.
pub fn fit(
    spec: &NetworkSpec,
    train: (ArrayView2<f64>, ArrayView2<f64>),
    test: (ArrayView2<f64>, ArrayView2<f64>),
    config: &FitConfig,
) -> Result<(Network, TrainHistory)> {
    let (x, y) = train;
    let (x_test, y_test) = test;
    if x.nrows() < 2 || x_test.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 training rows and 1 test row, got {} and {}",
            x.nrows(),
            x_test.nrows()
        )));
    }
    if x.nrows() != y.nrows() || x_test.nrows() != y_test.nrows() {
        return Err(Error::Dimension("input/target row counts differ".into()));
    }
    if y.ncols() != spec.output_dim || y_test.ncols() != spec.output_dim {
        return Err(Error::Dimension(format!(
            "targets have {} columns, network outputs {}",
            y.ncols(),
            spec.output_dim
        )));
    }
    if config.batch_size < 2 {
        return Err(Error::InvalidInput("batch size must be at least 2".into()));
    }

    let mut net = Network::init(spec, config.seed)?;
    let mut adam = AdamState::for_network(config.adam, &mut net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Network)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in batches(&order, config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (pred, cache) = net.forward_train(xb.view())?;
            let data_mse = mse(pred.view(), yb.view());
            if !data_mse.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("non-finite batch loss {data_mse}"),
                });
            }
            sq_sum += data_mse * batch.len() as f64;
            let d_out = (&pred - &yb) * (2.0 / pred.len() as f64);
            let grads = net.backward(&cache, d_out.view());
            net.update_running_stats(&cache);
            adam.update(&mut net.params_mut(), &grads.slices());
        }
        let train_mse = sq_sum / x.nrows() as f64;

        let pred = net.predict(x_test)?;
        let test_mse = mse(pred.view(), y_test);
        if !test_mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("non-finite test loss {test_mse}"),
            });
        }
        let r2 = r_squared(pred.view(), y_test).unwrap_or(f64::NAN);
        history.records.push(EpochRecord {
            epoch,
            train_mse,
            test_mse,
            r2,
        });

        if best.as_ref().is_none_or(|(m, _)| test_mse < *m) {
            best = Some((test_mse, net.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_net) = best.expect("at least one epoch");
    Ok((best_net, history))
}
