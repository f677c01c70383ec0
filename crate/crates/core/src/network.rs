//! Sequence classifier: 1-d convolution feeding a recurrent network.
//!
//! The forward path is conv (kernel 3, stride 1, zero padding to keep the
//! length) + ReLU, max-pool of 2, inverted dropout while training, an LSTM
//! over the pooled steps, and a dense layer with a sigmoid on the last
//! hidden state. Training minimizes binary cross-entropy with Adam,
//! backpropagating through the whole unrolled sequence. Everything is f64
//! and seeded: initialization, the per-epoch shuffle, and dropout masks all
//! derive from one seed, so a run reproduces exactly.
//!
//! Validation accuracy drives early stopping: the best epoch's weights are
//! snapshotted and restored at the end, whether training stopped on
//! patience, on the epoch cap, or because the loss left the finite range.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::Path;

use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::seeds::{rng_for, rng_for_indexed};
use crate::tensorio::{read_tensors, write_tensors};

/// Bump when the serialized layout changes.
pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Convolution kernel width and pooling factor are fixed.
pub const KERNEL: usize = 3;
pub const POOL: usize = 2;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    pub conv_filters: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            conv_filters: 32,
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            dropout: 0.1,
            patience: 20,
        }
    }
}

impl NetworkConfig {
    fn validate(&self) -> Result<()> {
        if self.conv_filters == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::config("network sizes must be positive"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::config("max_epochs and patience must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// All trainable tensors. Gradients use the same shape.
///
/// Layouts: `conv_w[(c * KERNEL + k, f)]` maps input channel c at kernel tap
/// k to filter f. LSTM matrices are input-major with gate blocks in
/// [input, forget, cell, output] order along the second axis.
#[derive(Debug, Clone, PartialEq)]
struct ParamSet {
    conv_w: Array2<f64>,  // (channels * KERNEL, filters)
    conv_b: Array1<f64>,  // (filters)
    w_x: Array2<f64>,     // (filters, 4 * hidden)
    w_h: Array2<f64>,     // (hidden, 4 * hidden)
    b_lstm: Array1<f64>,  // (4 * hidden)
    w_out: Array1<f64>,   // (hidden)
    b_out: Array1<f64>,   // (1)
}

pub const PARAM_NAMES: [&str; 7] = [
    "conv_w", "conv_b", "w_x", "w_h", "b_lstm", "w_out", "b_out",
];

impl ParamSet {
    fn zeros_like(&self) -> ParamSet {
        ParamSet {
            conv_w: Array2::zeros(self.conv_w.dim()),
            conv_b: Array1::zeros(self.conv_b.dim()),
            w_x: Array2::zeros(self.w_x.dim()),
            w_h: Array2::zeros(self.w_h.dim()),
            b_lstm: Array1::zeros(self.b_lstm.dim()),
            w_out: Array1::zeros(self.w_out.dim()),
            b_out: Array1::zeros(self.b_out.dim()),
        }
    }

    fn flat(&self, i: usize) -> &[f64] {
        match i {
            0 => self.conv_w.as_slice().unwrap(),
            1 => self.conv_b.as_slice().unwrap(),
            2 => self.w_x.as_slice().unwrap(),
            3 => self.w_h.as_slice().unwrap(),
            4 => self.b_lstm.as_slice().unwrap(),
            5 => self.w_out.as_slice().unwrap(),
            6 => self.b_out.as_slice().unwrap(),
            _ => unreachable!(),
        }
    }

    fn flat_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => self.conv_w.as_slice_mut().unwrap(),
            1 => self.conv_b.as_slice_mut().unwrap(),
            2 => self.w_x.as_slice_mut().unwrap(),
            3 => self.w_h.as_slice_mut().unwrap(),
            4 => self.b_lstm.as_slice_mut().unwrap(),
            5 => self.w_out.as_slice_mut().unwrap(),
            6 => self.b_out.as_slice_mut().unwrap(),
            _ => unreachable!(),
        }
    }

    fn is_finite(&self) -> bool {
        (0..PARAM_NAMES.len()).all(|i| self.flat(i).iter().all(|v| v.is_finite()))
    }
}

/// The classifier with its fixed input channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub channels: usize,
    params: ParamSet,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One LSTM step over a batch. Returns the gate activations and states so
/// callers can cache them for backpropagation.
pub struct LstmStep {
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

/// Advance the LSTM one step. `x` is (batch, inputs), `h_prev`/`c_prev` are
/// (batch, hidden); weight layouts match [`Network`]'s LSTM tensors.
pub fn lstm_step(
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
    w_x: ArrayView2<'_, f64>,
    w_h: ArrayView2<'_, f64>,
    b: &Array1<f64>,
) -> LstmStep {
    let hidden = h_prev.ncols();
    let mut z = x.dot(&w_x) + h_prev.dot(&w_h);
    z += b;
    let i = z.slice(s![.., 0..hidden]).mapv(sigmoid);
    let f = z.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
    let g = z.slice(s![.., 2 * hidden..3 * hidden]).mapv(f64::tanh);
    let o = z.slice(s![.., 3 * hidden..4 * hidden]).mapv(sigmoid);
    let c = &f * &c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    LstmStep {
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    }
}

struct StepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    step: LstmStep,
}

struct Cache {
    cols: Array2<f64>,     // (batch * steps, channels * KERNEL)
    pre_relu: Array2<f64>, // (batch * steps, filters)
    pool_src: Vec<u8>,     // winning offset per pooled cell, row-major
    drop_mask: Option<Array3<f64>>,
    steps: Vec<StepCache>,
    h_last: Array2<f64>,
    p: Array1<f64>,
}

fn bce_loss(p: &Array1<f64>, y: &[u8]) -> f64 {
    let n = y.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

fn accuracy(p: &Array1<f64>, y: &[u8]) -> f64 {
    let correct = p
        .iter()
        .zip(y)
        .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
        .count();
    correct as f64 / y.len() as f64
}

impl Network {
    /// Fresh network with uniform +-1/sqrt(fan_in) weights, zero biases and
    /// a forget-gate bias of one.
    pub fn init(config: &NetworkConfig, channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        let (filters, hidden) = (config.conv_filters, config.hidden);
        let mut rng = rng_for(seed, "init");
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        let conv_w = uniform(channels * KERNEL, filters, channels * KERNEL);
        let w_x = uniform(filters, 4 * hidden, filters);
        let w_h = uniform(hidden, 4 * hidden, hidden);
        let w_out = uniform(hidden, 1, hidden).column(0).to_owned();
        let mut b_lstm = Array1::zeros(4 * hidden);
        b_lstm.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Ok(Network {
            config: *config,
            channels,
            params: ParamSet {
                conv_w,
                conv_b: Array1::zeros(filters),
                w_x,
                w_h,
                b_lstm,
                w_out,
                b_out: Array1::zeros(1),
            },
        })
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (_, t, c) = x.dim();
        if c != self.channels {
            return Err(Error::shape(
                format!("{} channels", self.channels),
                format!("{c}"),
            ));
        }
        if t < POOL {
            return Err(Error::shape(
                format!("at least {POOL} steps"),
                format!("{t}"),
            ));
        }
        Ok(())
    }

    fn forward(&self, x: &Array3<f64>, dropout_rng: Option<&mut ChaCha8Rng>) -> Cache {
        let (batch, t, channels) = x.dim();
        let filters = self.config.conv_filters;
        let hidden = self.config.hidden;
        let t2 = t / POOL;

        // Every length-3 window as one row, zero padded at the edges.
        let mut cols = Array2::zeros((batch * t, channels * KERNEL));
        for b in 0..batch {
            for step in 0..t {
                for c in 0..channels {
                    for k in 0..KERNEL {
                        let src = step as isize + k as isize - 1;
                        if src >= 0 && (src as usize) < t {
                            cols[[b * t + step, c * KERNEL + k]] = x[[b, src as usize, c]];
                        }
                    }
                }
            }
        }
        let mut pre_relu = cols.dot(&self.params.conv_w);
        pre_relu += &self.params.conv_b;

        let mut pooled = Array3::zeros((batch, t2, filters));
        let mut pool_src = vec![0u8; batch * t2 * filters];
        for b in 0..batch {
            for step in 0..t2 {
                for f in 0..filters {
                    let a = pre_relu[[b * t + POOL * step, f]].max(0.0);
                    let c = pre_relu[[b * t + POOL * step + 1, f]].max(0.0);
                    // Ties keep the earlier element.
                    let (v, src) = if c > a { (c, 1) } else { (a, 0) };
                    pooled[[b, step, f]] = v;
                    pool_src[(b * t2 + step) * filters + f] = src;
                }
            }
        }

        let drop_mask = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let mask = Array3::from_shape_fn((batch, t2, filters), |_| {
                    if rng.gen_range(0.0..1.0) < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                pooled *= &mask;
                Some(mask)
            }
            _ => None,
        };

        let mut h = Array2::zeros((batch, hidden));
        let mut c = Array2::zeros((batch, hidden));
        let mut steps = Vec::with_capacity(t2);
        for step in 0..t2 {
            let x_t = pooled.index_axis(Axis(1), step).to_owned();
            let out = lstm_step(
                x_t.view(),
                h.view(),
                c.view(),
                self.params.w_x.view(),
                self.params.w_h.view(),
                &self.params.b_lstm,
            );
            let (h_next, c_next) = (out.h.clone(), out.c.clone());
            steps.push(StepCache {
                x: x_t,
                h_prev: h,
                c_prev: c,
                step: out,
            });
            h = h_next;
            c = c_next;
        }

        let z = h.dot(&self.params.w_out) + self.params.b_out[0];
        let p = z.mapv(sigmoid);
        Cache {
            cols,
            pre_relu,
            pool_src,
            drop_mask,
            steps,
            h_last: h,
            p,
        }
    }

    fn backward(&self, x_dim: (usize, usize, usize), cache: &Cache, y: &[u8]) -> ParamSet {
        let (batch, t, _channels) = x_dim;
        let filters = self.config.conv_filters;
        let hidden = self.config.hidden;
        let t2 = t / POOL;
        let mut grads = self.params.zeros_like();

        // Mean binary cross-entropy through the sigmoid: dL/dz = (p - y)/n.
        let n = y.len() as f64;
        let dz: Array1<f64> = Array1::from_iter(
            cache
                .p
                .iter()
                .zip(y)
                .map(|(&p, &y)| (p - f64::from(y)) / n),
        );
        grads.b_out[0] = dz.sum();
        grads.w_out = cache.h_last.t().dot(&dz);
        // dh = outer(dz, w_out)
        let dz_col = dz.view().insert_axis(Axis(1));
        let w_row = self.params.w_out.view().insert_axis(Axis(0));
        let mut dh = dz_col.dot(&w_row);
        let mut dc: Array2<f64> = Array2::zeros((batch, hidden));

        let mut d_pooled = Array3::zeros((batch, t2, filters));
        for (step_idx, sc) in cache.steps.iter().enumerate().rev() {
            let st = &sc.step;
            let one = 1.0;
            let d_o = &dh * &st.tanh_c;
            dc = dc + &dh * &st.o * st.tanh_c.mapv(|v| one - v * v);
            let d_i = &dc * &st.g;
            let d_g = &dc * &st.i;
            let d_f = &dc * &sc.c_prev;
            let dc_prev = &dc * &st.f;

            let dz_i = d_i * &st.i * st.i.mapv(|v| one - v);
            let dz_f = d_f * &st.f * st.f.mapv(|v| one - v);
            let dz_g = d_g * st.g.mapv(|v| one - v * v);
            let dz_o = d_o * &st.o * st.o.mapv(|v| one - v);

            let mut dz_all = Array2::zeros((batch, 4 * hidden));
            dz_all.slice_mut(s![.., 0..hidden]).assign(&dz_i);
            dz_all.slice_mut(s![.., hidden..2 * hidden]).assign(&dz_f);
            dz_all
                .slice_mut(s![.., 2 * hidden..3 * hidden])
                .assign(&dz_g);
            dz_all
                .slice_mut(s![.., 3 * hidden..4 * hidden])
                .assign(&dz_o);

            grads.w_x += &sc.x.t().dot(&dz_all);
            grads.w_h += &sc.h_prev.t().dot(&dz_all);
            grads.b_lstm += &dz_all.sum_axis(Axis(0));
            d_pooled
                .index_axis_mut(Axis(1), step_idx)
                .assign(&dz_all.dot(&self.params.w_x.t()));
            dh = dz_all.dot(&self.params.w_h.t());
            dc = dc_prev;
        }

        if let Some(mask) = &cache.drop_mask {
            d_pooled *= mask;
        }

        // Unpool onto the winning element, then gate by the ReLU.
        let mut d_pre = Array2::zeros(cache.pre_relu.dim());
        for b in 0..batch {
            for step in 0..t2 {
                for f in 0..filters {
                    let src = cache.pool_src[(b * t2 + step) * filters + f] as usize;
                    let row = b * t + POOL * step + src;
                    if cache.pre_relu[[row, f]] > 0.0 {
                        d_pre[[row, f]] = d_pooled[[b, step, f]];
                    }
                }
            }
        }
        grads.conv_w = cache.cols.t().dot(&d_pre);
        grads.conv_b = d_pre.sum_axis(Axis(0));
        grads
    }

    /// Positive-class probability per sequence, evaluated without dropout.
    pub fn predict_proba(&self, x: &Array3<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n = x.dim().0;
        let mut out = Vec::with_capacity(n);
        let mut lo = 0;
        while lo < n {
            let hi = (lo + self.config.batch_size).min(n);
            let chunk = x.slice(s![lo..hi, .., ..]).to_owned();
            let cache = self.forward(&chunk, None);
            out.extend(cache.p.iter().copied());
            lo = hi;
        }
        Ok(out)
    }

    /// Hard labels at the 0.5 threshold.
    pub fn predict(&self, x: &Array3<f64>) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| u8::from(p >= 0.5))
            .collect())
    }

    /// Persist weights plus layout metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, None)
    }

    /// Like [`Network::save`], stamping the file with a run identity.
    pub fn save_with(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        let mut meta = json!({
            "format_version": NETWORK_FORMAT_VERSION,
            "channels": self.channels,
            "config": self.config,
        });
        if let Some(prov) = provenance {
            meta["provenance"] = serde_json::to_value(prov)?;
        }
        let tensors: Vec<(&str, ndarray::ArrayViewD<'_, f64>)> = vec![
            ("conv_w", self.params.conv_w.view().into_dyn()),
            ("conv_b", self.params.conv_b.view().into_dyn()),
            ("w_x", self.params.w_x.view().into_dyn()),
            ("w_h", self.params.w_h.view().into_dyn()),
            ("b_lstm", self.params.b_lstm.view().into_dyn()),
            ("w_out", self.params.w_out.view().into_dyn()),
            ("b_out", self.params.b_out.view().into_dyn()),
        ];
        write_tensors(path, &tensors, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = read_tensors(path)?;
        let version = meta["format_version"].as_u64().unwrap_or(0);
        if version != u64::from(NETWORK_FORMAT_VERSION) {
            return Err(Error::data(format!(
                "unsupported network format version {version} (expected {NETWORK_FORMAT_VERSION})"
            )));
        }
        let channels = meta["channels"]
            .as_u64()
            .ok_or_else(|| Error::data("network file missing channel count"))?
            as usize;
        let config: NetworkConfig = serde_json::from_value(meta["config"].clone())?;
        let mut by_name: std::collections::BTreeMap<String, ndarray::ArrayD<f64>> =
            tensors.into_iter().collect();
        let mut take = |name: &str| -> Result<ndarray::ArrayD<f64>> {
            by_name
                .remove(name)
                .ok_or_else(|| Error::data(format!("network file missing tensor `{name}`")))
        };
        let net = Network {
            config,
            channels,
            params: ParamSet {
                conv_w: take("conv_w")?.into_dimensionality().map_err(bad_dims)?,
                conv_b: take("conv_b")?.into_dimensionality().map_err(bad_dims)?,
                w_x: take("w_x")?.into_dimensionality().map_err(bad_dims)?,
                w_h: take("w_h")?.into_dimensionality().map_err(bad_dims)?,
                b_lstm: take("b_lstm")?.into_dimensionality().map_err(bad_dims)?,
                w_out: take("w_out")?.into_dimensionality().map_err(bad_dims)?,
                b_out: take("b_out")?.into_dimensionality().map_err(bad_dims)?,
            },
        };
        let (filters, hidden) = (net.config.conv_filters, net.config.hidden);
        if net.params.conv_w.dim() != (channels * KERNEL, filters)
            || net.params.w_x.dim() != (filters, 4 * hidden)
            || net.params.w_h.dim() != (hidden, 4 * hidden)
            || net.params.b_lstm.len() != 4 * hidden
            || net.params.w_out.len() != hidden
        {
            return Err(Error::data("network tensor shapes disagree with config"));
        }
        Ok(net)
    }
}

fn bad_dims(e: ndarray::ShapeError) -> Error {
    Error::data(format!("network tensor has wrong rank: {e}"))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(params: &ParamSet) -> Self {
        let m = (0..PARAM_NAMES.len())
            .map(|i| vec![0.0; params.flat(i).len()])
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { m, v, t: 0 }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.t += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..PARAM_NAMES.len() {
            let g = grads.flat(i);
            let p = params.flat_mut(i);
            for j in 0..p.len() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g[j];
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    MaxEpochs,
    EarlyStopped,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stop_cause: StopCause,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn check_labels(y: &[u8], n: usize, what: &str) -> Result<()> {
    if y.len() != n {
        return Err(Error::shape(
            format!("{n} {what} labels"),
            format!("{}", y.len()),
        ));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::data("labels must be 0 or 1"));
    }
    Ok(())
}

/// Train a fresh network. The validation split drives early stopping; the
/// returned weights are the best-validation-accuracy snapshot.
pub fn train(
    config: &NetworkConfig,
    x_train: &Array3<f64>,
    y_train: &[u8],
    x_val: &Array3<f64>,
    y_val: &[u8],
    seed: u64,
) -> Result<(Network, TrainHistory)> {
    let (n, t, channels) = x_train.dim();
    if n == 0 || x_val.dim().0 == 0 {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    check_labels(y_train, n, "train")?;
    check_labels(y_val, x_val.dim().0, "validation")?;
    if x_val.dim().1 != t || x_val.dim().2 != channels {
        return Err(Error::shape(
            format!("validation sequences of {t} x {channels}"),
            format!("{} x {}", x_val.dim().1, x_val.dim().2),
        ));
    }
    if x_train.iter().chain(x_val.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in training input"));
    }

    let mut net = Network::init(config, channels, seed)?;
    net.check_input(x_train)?;
    let mut adam = Adam::new(&net.params);
    let mut dropout_rng = rng_for(seed, "dropout");

    let mut history = TrainHistory {
        epochs: Vec::new(),
        stop_cause: StopCause::MaxEpochs,
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
    };
    let mut best = net.params.clone();
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_for_indexed(seed, "shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y_train[i]).collect();
            let cache = net.forward(&xb, Some(&mut dropout_rng));
            loss_sum += bce_loss(&cache.p, &yb) * yb.len() as f64;
            correct += cache
                .p
                .iter()
                .zip(&yb)
                .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
                .count();
            let grads = net.backward(xb.dim(), &cache, &yb);
            adam.step(&mut net.params, &grads, config.learning_rate);
        }
        let train_loss = loss_sum / n as f64;
        let train_accuracy = correct as f64 / n as f64;

        let val_p = Array1::from_vec(net.predict_proba(x_val)?);
        let val_loss = bce_loss(&val_p, y_val);
        let val_accuracy = accuracy(&val_p, y_val);
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });

        if !train_loss.is_finite() || !val_loss.is_finite() || !net.params.is_finite() {
            history.stop_cause = StopCause::Diverged;
            break;
        }
        if val_accuracy > history.best_val_accuracy {
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best = net.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stop_cause = StopCause::EarlyStopped;
                break;
            }
        }
    }
    net.params = best;
    Ok((net, history))
}

/// Compare analytic gradients with central differences on sampled
/// coordinates; returns the largest relative error. Dropout is disabled so
/// the loss is a deterministic function of the weights.
pub fn gradient_check(
    net: &Network,
    x: &Array3<f64>,
    y: &[u8],
    eps: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<f64> {
    net.check_input(x)?;
    check_labels(y, x.dim().0, "check")?;
    let mut probe = net.clone();
    let cache = probe.forward(x, None);
    let analytic = probe.backward(x.dim(), &cache, y);

    let mut rng = rng_for(seed, "gradient-check");
    let mut worst = 0.0f64;
    for i in 0..PARAM_NAMES.len() {
        let len = probe.params.flat(i).len();
        let mut picks: Vec<usize> = (0..len).collect();
        if len > coords_per_tensor {
            // Partial Fisher-Yates, keeping the first coords_per_tensor.
            for j in 0..coords_per_tensor {
                let k = rng.gen_range(j..len);
                picks.swap(j, k);
            }
            picks.truncate(coords_per_tensor);
        }
        for &j in &picks {
            let orig = probe.params.flat(i)[j];
            probe.params.flat_mut(i)[j] = orig + eps;
            let up = bce_loss(&probe.forward(x, None).p, y);
            probe.params.flat_mut(i)[j] = orig - eps;
            let down = bce_loss(&probe.forward(x, None).p, y);
            probe.params.flat_mut(i)[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.flat(i)[j];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstm_step_matches_scalar_reference() {
        let (b, inputs, hidden) = (2, 3, 4);
        let mut val: f64 = 0.05;
        let mut next = || {
            val += 0.07;
            (val * 13.0).sin() * 0.9
        };
        let x = Array2::from_shape_fn((b, inputs), |_| next());
        let h = Array2::from_shape_fn((b, hidden), |_| next());
        let c = Array2::from_shape_fn((b, hidden), |_| next());
        let w_x = Array2::from_shape_fn((inputs, 4 * hidden), |_| next());
        let w_h = Array2::from_shape_fn((hidden, 4 * hidden), |_| next());
        let bias = Array1::from_shape_fn(4 * hidden, |_| next());

        let out = lstm_step(x.view(), h.view(), c.view(), w_x.view(), w_h.view(), &bias);

        for row in 0..b {
            for u in 0..hidden {
                let gate = |block: usize| {
                    let col = block * hidden + u;
                    let mut z = bias[col];
                    for k in 0..inputs {
                        z += x[[row, k]] * w_x[[k, col]];
                    }
                    for k in 0..hidden {
                        z += h[[row, k]] * w_h[[k, col]];
                    }
                    z
                };
                let i_ref = sigmoid(gate(0));
                let f_ref = sigmoid(gate(1));
                let g_ref = gate(2).tanh();
                let o_ref = sigmoid(gate(3));
                let c_ref = f_ref * c[[row, u]] + i_ref * g_ref;
                let h_ref = o_ref * c_ref.tanh();
                assert!((out.c[[row, u]] - c_ref).abs() < 1e-12);
                assert!((out.h[[row, u]] - h_ref).abs() < 1e-12);
            }
        }
    }

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            conv_filters: 3,
            hidden: 3,
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 30,
            dropout: 0.1,
            patience: 10,
        }
    }

    /// Sequences whose first channel is biased by the label, everything
    /// else noise.
    fn separable_task(seed: u64, n: usize, t: usize, c: usize) -> (Array3<f64>, Vec<u8>) {
        let mut rng = rng_for(seed, "task");
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array3::from_shape_fn((n, t, c), |(i, _, ch)| {
            let noise: f64 = rng.gen_range(-0.3..0.3);
            if ch == 0 {
                noise + if y[i] == 1 { 1.0 } else { -1.0 }
            } else {
                noise
            }
        });
        (x, y)
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = tiny_config();
        let net = Network::init(&cfg, 2, 5).unwrap();
        let (x, y) = separable_task(6, 4, 6, 2);
        let worst = gradient_check(&net, &x, &y, 1e-5, 50, 7).unwrap();
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn learns_a_separable_task() {
        let cfg = tiny_config();
        let (x, y) = separable_task(8, 60, 8, 2);
        let (x_val, y_val) = separable_task(9, 20, 8, 2);
        let (net, history) = train(&cfg, &x, &y, &x_val, &y_val, 11).unwrap();
        assert!(
            history.best_val_accuracy >= 0.95,
            "best val accuracy {}",
            history.best_val_accuracy
        );
        // The returned weights are the best snapshot: re-evaluating must
        // reproduce the recorded best validation accuracy.
        let p = Array1::from_vec(net.predict_proba(&x_val).unwrap());
        assert_eq!(accuracy(&p, &y_val), history.best_val_accuracy);
        assert_eq!(
            history.epochs[history.best_epoch].val_accuracy,
            history.best_val_accuracy
        );
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = NetworkConfig {
            max_epochs: 4,
            patience: 4,
            ..tiny_config()
        };
        let (x, y) = separable_task(14, 24, 6, 2);
        let (x_val, y_val) = separable_task(15, 8, 6, 2);
        let (net_a, hist_a) = train(&cfg, &x, &y, &x_val, &y_val, 3).unwrap();
        let (net_b, hist_b) = train(&cfg, &x, &y, &x_val, &y_val, 3).unwrap();
        assert_eq!(hist_a, hist_b);
        assert_eq!(
            net_a.predict_proba(&x).unwrap(),
            net_b.predict_proba(&x).unwrap()
        );
        let (_, hist_c) = train(&cfg, &x, &y, &x_val, &y_val, 4).unwrap();
        assert_ne!(hist_a, hist_c);
    }

    #[test]
    fn divergence_restores_the_best_snapshot() {
        let cfg = NetworkConfig {
            learning_rate: 1e6,
            max_epochs: 10,
            ..tiny_config()
        };
        let (x, y) = separable_task(20, 24, 6, 2);
        let (x_val, y_val) = separable_task(21, 8, 6, 2);
        let (net, history) = train(&cfg, &x, &y, &x_val, &y_val, 2).unwrap();
        assert_eq!(history.stop_cause, StopCause::Diverged);
        // Restored weights predict finite probabilities.
        let p = net.predict_proba(&x_val).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn save_load_round_trips() {
        let cfg = tiny_config();
        let net = Network::init(&cfg, 2, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tensors");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(net, back);
        let (x, _) = separable_task(30, 6, 6, 2);
        assert_eq!(
            net.predict_proba(&x).unwrap(),
            back.predict_proba(&x).unwrap()
        );
    }

    #[test]
    fn rejects_bad_configs_and_shapes() {
        let mut cfg = tiny_config();
        cfg.dropout = 1.0;
        assert!(Network::init(&cfg, 2, 0).is_err());
        cfg.dropout = 0.1;
        cfg.learning_rate = 0.0;
        assert!(Network::init(&cfg, 2, 0).is_err());

        let net = Network::init(&tiny_config(), 2, 0).unwrap();
        let wrong_channels = Array3::<f64>::zeros((1, 6, 3));
        assert!(net.predict_proba(&wrong_channels).is_err());
        let too_short = Array3::<f64>::zeros((1, 1, 2));
        assert!(net.predict_proba(&too_short).is_err());
    }
}
