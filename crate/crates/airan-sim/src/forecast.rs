//! Joint next-step demand regression and spike classification on a shared
//! two-layer LSTM backbone, with recursive multi-step rollout.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    adam_step, dropout_mask, init_uniform, AdamParams, AdamState, Graph, ParamStore, Tensor, Var,
};
use crate::rng::RngHub;
use crate::trace::{Scaler, WindowedDataset};
use crate::{Error, Result, Scalar};

/// Probability clip for the cross-entropy terms.
const PROB_EPS: f64 = 1e-7;

/// Forecaster hyperparameters. Defaults: two LSTM layers (64 then 32
/// units), layer norm after the first layer, dropout 0.2 between layers,
/// 10-step input windows, 1000 epochs of Adam(1e-3) on batches of 256,
/// equally weighted regression and spike-detection losses, spikes labeled
/// above the training split's 90th percentile.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_detect: f64,
    pub spike_percentile: f64,
    /// Epsilon in the min-max demand normalization denominator.
    pub norm_eps: f64,
    pub ln_eps: f64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            hidden1: 64,
            hidden2: 32,
            dropout: 0.2,
            seq_len: 10,
            epochs: 1000,
            batch: 256,
            lr: 1e-3,
            lambda_detect: 1.0,
            spike_percentile: 90.0,
            norm_eps: 1e-8,
            ln_eps: 1e-5,
        }
    }
}

/// H-step-ahead demand predictions per service channel plus the internal
/// spike probability from the first forecast step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle<S: Scalar> {
    d_ran: Vec<S>,
    d_ai: Vec<S>,
    spike_prob: S,
}

impl<S: Scalar> ForecastBundle<S> {
    /// Values are clamped to `[0, 1]`; both channels must provide exactly
    /// `horizon` entries.
    pub fn new(d_ran: Vec<S>, d_ai: Vec<S>, spike_prob: S) -> Result<Self> {
        if d_ran.len() != d_ai.len() || d_ran.is_empty() {
            return Err(Error::Shape("forecast channels must share a nonzero horizon".into()));
        }
        let clamp = |v: &mut Vec<S>| {
            for x in v.iter_mut() {
                *x = x.min(S::one()).max(S::zero());
            }
        };
        let mut d_ran = d_ran;
        let mut d_ai = d_ai;
        clamp(&mut d_ran);
        clamp(&mut d_ai);
        Ok(Self { d_ran, d_ai, spike_prob })
    }

    pub fn horizon(&self) -> usize {
        self.d_ran.len()
    }

    pub fn d_ran(&self) -> &[S] {
        &self.d_ran
    }

    pub fn d_ai(&self) -> &[S] {
        &self.d_ai
    }

    pub fn spike_prob(&self) -> S {
        self.spike_prob
    }
}

/// Network shape: sizes plus the fixed parameter naming. Forward passes are
/// expressed against an external [`ParamStore`] so training, inference and
/// finite-difference checks all share one code path.
#[derive(Debug, Clone, Copy)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub ln_eps: f64,
}

impl LstmSpec {
    pub fn from_config(cfg: &ForecasterConfig) -> Self {
        Self { input: 1, hidden1: cfg.hidden1, hidden2: cfg.hidden2, ln_eps: cfg.ln_eps }
    }

    fn shapes(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let (h1, h2, i) = (self.hidden1, self.hidden2, self.input);
        vec![
            ("lstm1.wx", vec![4 * h1, i], i),
            ("lstm1.wh", vec![4 * h1, h1], h1),
            ("lstm1.b", vec![4 * h1], h1),
            ("ln1.gain", vec![h1], h1),
            ("ln1.bias", vec![h1], h1),
            ("lstm2.wx", vec![4 * h2, h1], h1),
            ("lstm2.wh", vec![4 * h2, h2], h2),
            ("lstm2.b", vec![4 * h2], h2),
            ("reg.w", vec![1, h2], h2),
            ("reg.b", vec![1], h2),
            ("spike.w", vec![1, h2], h2),
            ("spike.b", vec![1], h2),
        ]
    }

    pub fn init_params<S: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for (name, shape, fan_in) in self.shapes() {
            match name {
                "ln1.gain" => store.insert(name, Tensor::full(shape, S::one())),
                "ln1.bias" => store.insert(name, Tensor::zeros(shape)),
                _ => store.insert(name, init_uniform(shape, fan_in, 1.0, rng)),
            };
        }
        store
    }

    pub fn zero_params<S: Scalar>(&self) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for (name, shape, _) in self.shapes() {
            store.insert(name, Tensor::zeros(shape));
        }
        store
    }

    /// Run the two-layer backbone over a `(B, T)` window tensor and emit
    /// `(regression (B,1), spike probability (B,1))`. Dropout masks, when
    /// given, must hold one `(B, hidden1)` mask per timestep.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        window: &Tensor<S>,
        masks: Option<&[Tensor<S>]>,
    ) -> Result<(Var, Var)> {
        let (b, t) = (window.rows(), window.cols());
        if t == 0 {
            return Err(Error::Shape("empty window".into()));
        }
        if let Some(m) = masks {
            if m.len() != t {
                return Err(Error::Shape(format!("{} masks for {t} timesteps", m.len())));
            }
        }
        let id = |name: &str| store.id(name).expect("spec-named parameter");
        let wx1 = g.param(store, 0, id("lstm1.wx"));
        let wh1 = g.param(store, 0, id("lstm1.wh"));
        let b1 = g.param(store, 0, id("lstm1.b"));
        let gain = g.param(store, 0, id("ln1.gain"));
        let bias = g.param(store, 0, id("ln1.bias"));
        let wx2 = g.param(store, 0, id("lstm2.wx"));
        let wh2 = g.param(store, 0, id("lstm2.wh"));
        let b2 = g.param(store, 0, id("lstm2.b"));
        let reg_w = g.param(store, 0, id("reg.w"));
        let reg_b = g.param(store, 0, id("reg.b"));
        let spk_w = g.param(store, 0, id("spike.w"));
        let spk_b = g.param(store, 0, id("spike.b"));

        let win = g.constant(window.clone());
        let mut hc1 = g.constant(Tensor::zeros(vec![b, 2 * self.hidden1]));
        let mut hc2 = g.constant(Tensor::zeros(vec![b, 2 * self.hidden2]));
        let mut h2 = None;
        for step in 0..t {
            let x_t = g.slice_cols(win, step, step + 1)?;
            hc1 = g.lstm_step(x_t, hc1, wx1, wh1, b1)?;
            let h1 = g.slice_cols(hc1, 0, self.hidden1)?;
            let normed = g.layer_norm(h1, gain, bias, self.ln_eps)?;
            let fed = match masks {
                Some(m) => {
                    let mask = g.constant(m[step].clone());
                    g.mul(normed, mask)?
                }
                None => normed,
            };
            hc2 = g.lstm_step(fed, hc2, wx2, wh2, b2)?;
            h2 = Some(g.slice_cols(hc2, 0, self.hidden2)?);
        }
        let h2 = h2.expect("t > 0");
        let reg = g.dense(h2, reg_w, reg_b)?;
        let logit = g.dense(h2, spk_w, spk_b)?;
        let prob = g.sigmoid(logit);
        Ok((reg, prob))
    }
}

/// Composite training loss: `MSE(r, r_hat) + lambda * BCE(s, s_hat)` with
/// the spike probabilities clipped away from {0, 1}.
pub fn composite_loss<S: Scalar>(
    g: &mut Graph<S>,
    r_hat: Var,
    r_true: Var,
    spike_prob: Var,
    s_true: Var,
    lambda_detect: f64,
) -> Result<Var> {
    let mse = g.mse(r_hat, r_true)?;
    let p = g.clamp(spike_prob, PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = g.ln(p);
    let pos = g.mul(s_true, ln_p)?;
    let one_minus_p = {
        let n = g.neg(p);
        g.add_scalar(n, 1.0)
    };
    let ln_q = g.ln(one_minus_p);
    let one_minus_s = {
        let n = g.neg(s_true);
        g.add_scalar(n, 1.0)
    };
    let negk = g.mul(one_minus_s, ln_q)?;
    let sum = g.add(pos, negk)?;
    let mean = g.mean_all(sum);
    let bce = g.neg(mean);
    let weighted = g.mul_scalar(bce, lambda_detect);
    g.add(mse, weighted)
}

/// Value-level convenience wrapper over [`composite_loss`].
pub fn composite_loss_value<S: Scalar>(
    r_hat: &[S],
    r_true: &[S],
    spike_prob: &[S],
    s_true: &[S],
    lambda_detect: f64,
) -> Result<S> {
    let n = r_hat.len();
    let mut g = Graph::new();
    let rh = g.constant(Tensor::new(vec![n, 1], r_hat.to_vec())?);
    let rt = g.constant(Tensor::new(vec![n, 1], r_true.to_vec())?);
    let sp = g.constant(Tensor::new(vec![n, 1], spike_prob.to_vec())?);
    let st = g.constant(Tensor::new(vec![n, 1], s_true.to_vec())?);
    let loss = composite_loss(&mut g, rh, rt, sp, st, lambda_detect)?;
    Ok(g.value(loss).item())
}

/// Training knobs for one fit; everything defaults from the config.
#[derive(Debug, Clone, Copy)]
pub struct TrainOpts {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

/// Evaluation metrics on a windowed test set. The regression error is
/// reported in de-standardized demand units; classification is at a fixed
/// 0.5 probability threshold.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ForecastReport {
    pub mse: f64,
    pub persistence_mse: f64,
    pub spike_precision: f64,
    pub spike_recall: f64,
    pub spike_f1: f64,
    pub samples: usize,
}

/// The multi-task forecaster: backbone parameters, optimizer state, the
/// train-split scaler and the frozen spike threshold.
pub struct SpikeAwareLstm<S: Scalar> {
    cfg: ForecasterConfig,
    spec: LstmSpec,
    params: ParamStore<S>,
    adam: AdamState<S>,
    scaler: Scaler,
    spike_tau: f64,
}

impl<S: Scalar> SpikeAwareLstm<S> {
    pub fn new(cfg: ForecasterConfig, hub: &RngHub) -> Self {
        let spec = LstmSpec::from_config(&cfg);
        let params = spec.init_params(&mut hub.stream("forecast.init"));
        let adam = AdamState::new(&params);
        Self { cfg, spec, params, adam, scaler: Scaler { mean: 0.0, std: 1.0 }, spike_tau: f64::MAX }
    }

    /// All-zero parameters; useful as an analytic fixture
    /// (regression 0, spike probability exactly 0.5).
    pub fn zeroed(cfg: ForecasterConfig) -> Self {
        let spec = LstmSpec::from_config(&cfg);
        let params = spec.zero_params();
        let adam = AdamState::new(&params);
        Self { cfg, spec, params, adam, scaler: Scaler { mean: 0.0, std: 1.0 }, spike_tau: f64::MAX }
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.cfg
    }

    pub fn scaler(&self) -> Scaler {
        self.scaler
    }

    pub fn set_scaler(&mut self, scaler: Scaler) {
        self.scaler = scaler;
    }

    pub fn spike_tau(&self) -> f64 {
        self.spike_tau
    }

    pub fn set_spike_tau(&mut self, tau: f64) {
        self.spike_tau = tau;
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    /// Single forward pass over standardized windows (inference mode).
    pub fn forward(&self, windows: &Tensor<S>) -> Result<(Vec<S>, Vec<S>)> {
        if windows.cols() != self.cfg.seq_len {
            return Err(Error::Shape(format!(
                "window length {} != configured sequence length {}",
                windows.cols(),
                self.cfg.seq_len
            )));
        }
        let mut g = Graph::new();
        let (reg, prob) = self.spec.forward(&mut g, &self.params, windows, None)?;
        Ok((g.value(reg).values().to_vec(), g.value(prob).values().to_vec()))
    }

    /// Fit on a windowed dataset. Returns the per-epoch mean training loss.
    /// Loss must stay finite; a NaN aborts with a diagnostic.
    pub fn train(
        &mut self,
        ds: &WindowedDataset<S>,
        opts: TrainOpts,
        hub: &RngHub,
    ) -> Result<Vec<f64>> {
        if ds.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let mut shuffle_rng = hub.stream("forecast.shuffle");
        let mut dropout_rng = hub.stream("forecast.dropout");
        let mut history = Vec::with_capacity(opts.epochs);
        let n = ds.len();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..opts.epochs {
            // Fisher-Yates driven by the shuffle stream.
            for i in (1..n).rev() {
                let j = shuffle_rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(opts.batch.max(1)) {
                let b = chunk.len();
                let mut wvals = Vec::with_capacity(b * ds.seq_len);
                let mut tvals = Vec::with_capacity(b);
                let mut svals = Vec::with_capacity(b);
                for &i in chunk {
                    wvals.extend_from_slice(&ds.inputs[i]);
                    tvals.push(ds.targets[i]);
                    svals.push(S::c(ds.spike_labels[i] as f64));
                }
                let window = Tensor::new(vec![b, ds.seq_len], wvals)?;
                let masks: Vec<Tensor<S>> = if self.cfg.dropout > 0.0 {
                    (0..ds.seq_len)
                        .map(|_| {
                            dropout_mask(
                                vec![b, self.cfg.hidden1],
                                self.cfg.dropout,
                                &mut dropout_rng,
                            )
                        })
                        .collect::<Result<_>>()?
                } else {
                    Vec::new()
                };
                let mut g = Graph::new();
                let (reg, prob) = self.spec.forward(
                    &mut g,
                    &self.params,
                    &window,
                    if masks.is_empty() { None } else { Some(&masks) },
                )?;
                let r_true = g.constant(Tensor::new(vec![b, 1], tvals)?);
                let s_true = g.constant(Tensor::new(vec![b, 1], svals)?);
                let loss =
                    composite_loss(&mut g, reg, r_true, prob, s_true, self.cfg.lambda_detect)?;
                let loss_v = g.value(loss).item().f64();
                if !loss_v.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
                }
                epoch_loss += loss_v * b as f64;
                g.backward(loss)?;
                g.apply_grads(&mut self.params, 0);
                adam_step(&mut self.params, &mut self.adam, opts.lr, AdamParams::default())?;
            }
            history.push(epoch_loss / n as f64);
        }
        Ok(history)
    }

    /// Recursive rollout of the RAN channel (raw demand units, before the
    /// bundle's clamp): each standardized prediction is appended to the
    /// window for the next step. Returns the de-standardized predictions
    /// and the first step's spike probability.
    pub fn predict_ran(&self, history: &[S], horizon: usize) -> Result<(Vec<S>, S)> {
        if history.len() < self.cfg.seq_len {
            return Err(Error::Config(format!(
                "history of {} steps is shorter than the {}-step window",
                history.len(),
                self.cfg.seq_len
            )));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let tail = &history[history.len() - self.cfg.seq_len..];
        let mut window: Vec<S> = tail.iter().map(|&v| self.scaler.transform_one(v)).collect();
        let mut out = Vec::with_capacity(horizon);
        let mut spike_prob = S::c(0.5);
        for step in 0..horizon {
            let w = Tensor::new(vec![1, self.cfg.seq_len], window.clone())?;
            let (reg, prob) = self.forward(&w)?;
            if step == 0 {
                spike_prob = prob[0];
            }
            window.remove(0);
            window.push(reg[0]);
            out.push(self.scaler.inverse_one(reg[0]));
        }
        Ok((out, spike_prob))
    }

    /// Recursive H-step rollout from the last `seq_len` raw demand values,
    /// de-standardized and clamped to `[0, 1]`. The spike probability is
    /// the first step's. `ai_future` supplies the analytic AI channel for
    /// the same horizon.
    pub fn predict_horizon(
        &self,
        history: &[S],
        horizon: usize,
        ai_future: Vec<S>,
    ) -> Result<ForecastBundle<S>> {
        if ai_future.len() != horizon {
            return Err(Error::Shape("ai_future must match the horizon".into()));
        }
        let (out, spike_prob) = self.predict_ran(history, horizon)?;
        ForecastBundle::new(out, ai_future, spike_prob)
    }

    /// Regression MSE (de-standardized) and spike classification metrics at
    /// threshold 0.5.
    pub fn evaluate(&self, test: &WindowedDataset<S>) -> Result<ForecastReport> {
        if test.is_empty() {
            return Err(Error::Config("test dataset is empty".into()));
        }
        let b = test.len();
        let mut wvals = Vec::with_capacity(b * test.seq_len);
        for input in &test.inputs {
            wvals.extend_from_slice(input);
        }
        let windows = Tensor::new(vec![b, test.seq_len], wvals)?;
        let (reg, prob) = self.forward(&windows)?;

        let mut sse = 0.0;
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..b {
            let pred = self.scaler.inverse_one(reg[i]).f64();
            let actual = self.scaler.inverse_one(test.targets[i]).f64();
            sse += (pred - actual) * (pred - actual);
            let said_spike = prob[i].f64() > 0.5;
            let is_spike = test.spike_labels[i] == 1;
            match (said_spike, is_spike) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(ForecastReport {
            mse: sse / b as f64,
            persistence_mse: persistence_mse(test, self.scaler),
            spike_precision: precision,
            spike_recall: recall,
            spike_f1: f1,
            samples: b,
        })
    }

    /// Persist parameters plus scaler/threshold/shape metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = ParamStore::<S>::new();
        for (name, value) in self.params.iter() {
            store.insert(name, value.clone());
        }
        store.insert("meta.scaler_mean", Tensor::scalar(S::c(self.scaler.mean)));
        store.insert("meta.scaler_std", Tensor::scalar(S::c(self.scaler.std)));
        store.insert("meta.spike_tau", Tensor::scalar(S::c(self.spike_tau)));
        store.insert("meta.seq_len", Tensor::scalar(S::c(self.cfg.seq_len as f64)));
        store.insert("meta.hidden1", Tensor::scalar(S::c(self.cfg.hidden1 as f64)));
        store.insert("meta.hidden2", Tensor::scalar(S::c(self.cfg.hidden2 as f64)));
        crate::nn::save(&store, path)
    }

    /// Load a checkpoint written by [`SpikeAwareLstm::save`]. Architecture
    /// fields come from the checkpoint; the remaining hyperparameters from
    /// `cfg`.
    pub fn load(path: &Path, mut cfg: ForecasterConfig) -> Result<Self> {
        let all: ParamStore<S> = crate::nn::load(path)?;
        let meta = |name: &str| -> Result<f64> {
            all.id(name)
                .map(|id| all.value(id).item().f64())
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        cfg.seq_len = meta("meta.seq_len")? as usize;
        cfg.hidden1 = meta("meta.hidden1")? as usize;
        cfg.hidden2 = meta("meta.hidden2")? as usize;
        let scaler = Scaler { mean: meta("meta.scaler_mean")?, std: meta("meta.scaler_std")? };
        let spike_tau = meta("meta.spike_tau")?;
        let spec = LstmSpec::from_config(&cfg);
        let mut params = ParamStore::new();
        for (name, shape, _) in spec.shapes() {
            let id = all
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let value = all.value(id).clone();
            if value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    shape
                )));
            }
            params.insert(name, value);
        }
        let adam = AdamState::new(&params);
        Ok(Self { cfg, spec, params, adam, scaler, spike_tau })
    }
}

/// Everything a training run needs from a pair of trace files: windowed
/// splits, the train-split scaler and the frozen spike threshold.
pub struct PreparedData<S: Scalar> {
    pub train: WindowedDataset<S>,
    pub test: WindowedDataset<S>,
    pub scaler: Scaler,
    pub spike_tau: f64,
    pub train_demand: Vec<S>,
    pub test_demand: Vec<S>,
}

/// Build supervised splits from raw traces: min-max normalize each series
/// by its own extremes, label spikes above the training split's percentile
/// threshold (reused verbatim on the test split), z-score with train
/// statistics, then window.
pub fn prepare<S: Scalar>(
    train_series: &crate::trace::TraceSeries,
    test_series: &crate::trace::TraceSeries,
    cfg: &ForecasterConfig,
) -> Result<PreparedData<S>> {
    let train_demand: Vec<S> = crate::trace::normalize_ran_demand(train_series, cfg.norm_eps)?;
    let test_demand: Vec<S> = crate::trace::normalize_ran_demand(test_series, cfg.norm_eps)?;
    let spike_tau = crate::trace::spike_threshold(&train_demand, cfg.spike_percentile)?;
    let train_labels = crate::trace::label_spikes_with_threshold(&train_demand, spike_tau);
    let test_labels = crate::trace::label_spikes_with_threshold(&test_demand, spike_tau);
    let scaler = Scaler::fit(&train_demand)?;
    let z_train = scaler.transform(&train_demand);
    let z_test = scaler.transform(&test_demand);
    let train = crate::trace::make_windows(&z_train, &train_labels, cfg.seq_len)?;
    let test = crate::trace::make_windows(&z_test, &test_labels, cfg.seq_len)?;
    Ok(PreparedData { train, test, scaler, spike_tau, train_demand, test_demand })
}

/// Naive next-equals-last reference error, in the same de-standardized
/// units as [`SpikeAwareLstm::evaluate`].
pub fn persistence_mse<S: Scalar>(test: &WindowedDataset<S>, scaler: Scaler) -> f64 {
    let mut sse = 0.0;
    for i in 0..test.len() {
        let last = scaler.inverse_one(*test.inputs[i].last().unwrap()).f64();
        let actual = scaler.inverse_one(test.targets[i]).f64();
        sse += (last - actual) * (last - actual);
    }
    sse / test.len().max(1) as f64
}
