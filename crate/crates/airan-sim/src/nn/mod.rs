//! Minimal dense-tensor kernel with reverse-mode gradients.
//!
//! Provides exactly what the crate's networks need: a finite-checked tensor,
//! a recorded-tape autodiff graph (dense, LSTM step, layer norm, elementwise
//! ops and reductions), Adam, seeded init/dropout helpers, and a versioned
//! checkpoint format.

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub mod gradcheck;

pub use checkpoint::{load, save};
pub use graph::{Graph, Var};
pub use params::{
    adam_step, dropout_mask, init_uniform, AdamParams, AdamState, ParamId, ParamStore,
};
pub use tensor::Tensor;

use crate::{Error, Result, Scalar};
use rand::Rng;

/// Dropout as a graph op: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`; in inference
/// mode the input node is returned untouched (exact identity).
pub fn dropout<S: Scalar, R: Rng>(
    g: &mut Graph<S>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let mask = dropout_mask::<S, R>(shape, rate, rng)?;
    let m = g.constant(mask);
    g.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngHub;

    fn t(shape: Vec<usize>, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![3.0, 4.0]));
        let w = g.constant(Tensor::identity(2));
        let b = g.constant(Tensor::zeros(vec![2]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_zero_weights_returns_bias() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![-7.0, 11.0]));
        let w = g.constant(Tensor::zeros(vec![2, 2]));
        let b = g.constant(t(vec![2], vec![1.0, 1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 1.0]);
    }

    #[test]
    fn dense_random_case_matches_scalar_loop() {
        let x = t(vec![1, 2], vec![0.3, -1.2]);
        let w = t(vec![3, 2], vec![0.5, 1.0, -0.25, 2.0, 0.75, -0.5]);
        let b = t(vec![3], vec![0.1, -0.2, 0.3]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.dense(xv, wv, bv).unwrap();
        for o in 0..3 {
            let mut acc = b.values()[o];
            for i in 0..2 {
                acc += x.values()[i] * w.values()[o * 2 + i];
            }
            assert!((g.value(y).values()[o] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_shape_mismatch_is_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(vec![1, 3], vec![1.0, 2.0, 3.0]));
        let w = g.constant(Tensor::identity(2));
        let b = g.constant(Tensor::zeros(vec![2]));
        assert!(matches!(g.dense(x, w, b), Err(Error::Shape(_))));
    }

    fn lstm_consts(
        g: &mut Graph<f64>,
        hidden: usize,
        input: usize,
        wx: Vec<f64>,
        wh: Vec<f64>,
        b: Vec<f64>,
    ) -> (Var, Var, Var) {
        let wx = g.constant(t(vec![4 * hidden, input], wx));
        let wh = g.constant(t(vec![4 * hidden, hidden], wh));
        let b = g.constant(t(vec![4 * hidden], b));
        (wx, wh, b)
    }

    #[test]
    fn lstm_zero_params_zero_cell_gives_zeros() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 1], vec![0.8]));
        let hc = g.constant(Tensor::zeros(vec![1, 4]));
        let (wx, wh, b) = lstm_consts(&mut g, 2, 1, vec![0.0; 8], vec![0.0; 16], vec![0.0; 8]);
        let out = g.lstm_step(x, hc, wx, wh, b).unwrap();
        for &v in g.value(out).values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn lstm_zero_params_carries_half_cell() {
        // sigma(0) = 0.5 on every gate, tanh(0) = 0 candidate:
        // c' = 0.5 * c_prev, h' = 0.5 * tanh(0.5 * c_prev)
        let v = [0.4, -1.0];
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 1], vec![0.0]));
        let hc = g.constant(t(vec![1, 4], vec![0.0, 0.0, v[0], v[1]]));
        let (wx, wh, b) = lstm_consts(&mut g, 2, 1, vec![0.0; 8], vec![0.0; 16], vec![0.0; 8]);
        let out = g.lstm_step(x, hc, wx, wh, b).unwrap();
        let o = g.value(out).values();
        for j in 0..2 {
            let c = 0.5 * v[j];
            assert!((o[2 + j] - c).abs() < 1e-15);
            assert!((o[j] - 0.5 * c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_random_cell_matches_scalar_recomputation() {
        let hidden = 2;
        let mut rng = RngHub::new(11).stream("test");
        let wx: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let wh: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let bb: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let xval = 0.37;
        let h0 = [0.1, -0.4];
        let c0 = [0.6, 0.2];

        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 1], vec![xval]));
        let hc = g.constant(t(vec![1, 4], vec![h0[0], h0[1], c0[0], c0[1]]));
        let (wxv, whv, bv) =
            lstm_consts(&mut g, hidden, 1, wx.clone(), wh.clone(), bb.clone());
        let out = g.lstm_step(x, hc, wxv, whv, bv).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for j in 0..hidden {
            let pre = |gate: usize| -> f64 {
                let k = gate * hidden + j;
                let mut p = wx[k] * xval + bb[k];
                for (m, &h) in h0.iter().enumerate() {
                    p += wh[k * hidden + m] * h;
                }
                p
            };
            let (i, f, gg, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c = f * c0[j] + i * gg;
            let h = o * c.tanh();
            assert!((g.value(out).values()[j] - h).abs() < 1e-12);
            assert!((g.value(out).values()[hidden + j] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero_before_affine() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 4], vec![5.0; 4]));
        let gain = g.constant(Tensor::full(vec![4], 1.0));
        let bias = g.constant(Tensor::zeros(vec![4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in g.value(y).values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_unit_row_is_near_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![1.0, -1.0]));
        let gain = g.constant(Tensor::full(vec![2], 1.0));
        let bias = g.constant(Tensor::zeros(vec![2]));
        let y = g.layer_norm(x, gain, bias, 1e-10).unwrap();
        assert!((g.value(y).values()[0] - 1.0).abs() < 1e-9);
        assert!((g.value(y).values()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_output_statistics() {
        let mut rng = RngHub::new(3).stream("ln");
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 64], vals));
        let gain = g.constant(Tensor::full(vec![64], 1.0));
        let bias = g.constant(Tensor::zeros(vec![64]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let out = g.value(y).values();
        let mean: f64 = out.iter().sum::<f64>() / 64.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() <= 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "var {var}");
    }

    #[test]
    fn dropout_rate_zero_and_inference_are_identity() {
        let hub = RngHub::new(5);
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 3], vec![1.0, 2.0, 3.0]));
        let y = dropout(&mut g, x, 0.0, true, &mut hub.stream("d")).unwrap();
        assert_eq!(y, x);
        let z = dropout(&mut g, x, 0.5, false, &mut hub.stream("d")).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn dropout_rate_must_be_below_one() {
        let hub = RngHub::new(5);
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 3], vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            dropout(&mut g, x, 1.0, true, &mut hub.stream("d")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_monte_carlo_zero_fraction() {
        let hub = RngHub::new(40);
        let mask = dropout_mask::<f64, _>(vec![100_000], 0.2, &mut hub.stream("d")).unwrap();
        let zeros = mask.values().iter().filter(|&&v| v == 0.0).count() as f64;
        let frac = zeros / 100_000.0;
        assert!((frac - 0.2).abs() < 0.01, "zero fraction {frac}");
        let keep = mask.values().iter().find(|&&v| v != 0.0).unwrap();
        assert!((keep - 1.0 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_dense_is_outer_product() {
        let mut store = ParamStore::new();
        let w = store.insert("w", t(vec![3, 2], vec![0.5; 6]));
        let b = store.insert("b", Tensor::zeros(vec![3]));
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![2.0, -3.0]));
        let wv = g.param(&store, 0, w);
        let bv = g.param(&store, 0, b);
        let y = g.dense(x, wv, bv).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        g.apply_grads(&mut store, 0);
        // d sum(W·x + b) / dW[o, i] = x[i] for every o
        for o in 0..3 {
            assert_eq!(store.grad(w).values()[o * 2], 2.0);
            assert_eq!(store.grad(w).values()[o * 2 + 1], -3.0);
        }
        assert_eq!(store.grad(b).values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn frozen_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", t(vec![1, 1], vec![0.7]));
        let unused = store.insert("unused", t(vec![2], vec![1.0, 2.0]));
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 1], vec![3.0]));
        let wv = g.param(&store, 0, w);
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.dense(x, wv, b).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        g.apply_grads(&mut store, 0);
        assert_eq!(store.grad(unused).values(), &[0.0, 0.0]);
        assert_eq!(store.grad(w).values(), &[3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        let hub = RngHub::new(17);
        let mut rng = hub.stream("init");
        let mut store = ParamStore::new();
        let w1 = store.insert("w1", init_uniform(vec![4, 3], 3, 1.0, &mut rng));
        let b1 = store.insert("b1", init_uniform(vec![4], 3, 1.0, &mut rng));
        let w2 = store.insert("w2", init_uniform(vec![2, 4], 4, 1.0, &mut rng));
        let b2 = store.insert("b2", init_uniform(vec![2], 4, 1.0, &mut rng));
        let x = t(vec![2, 3], vec![0.3, -0.8, 1.2, 0.0, 0.5, -0.6]);
        let target = t(vec![2, 2], vec![0.25, -0.5, 1.0, 0.1]);

        let report = gradcheck::finite_diff_check(&mut store, 1e-5, |g, s| {
            let xv = g.constant(x.clone());
            let tv = g.constant(target.clone());
            let (w1v, b1v) = (g.param(s, 0, w1), g.param(s, 0, b1));
            let (w2v, b2v) = (g.param(s, 0, w2), g.param(s, 0, b2));
            let h = g.dense(xv, w1v, b1v)?;
            let h = g.tanh(h);
            let y = g.dense(h, w2v, b2v)?;
            g.mse(y, tv)
        })
        .unwrap();
        assert!(
            report.max_rel_err <= 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let p = store.insert("p", t(vec![3], vec![1.0, -2.0, 0.5]));
        let mut state = AdamState::new(&store);
        let grad = t(vec![3], vec![0.3, -0.7, 1.9]);
        store.accumulate_grad(p, &grad);
        adam_step(&mut store, &mut state, 0.001, AdamParams::default()).unwrap();
        let vals = store.value(p).values();
        for (j, (&v0, &g)) in [1.0, -2.0, 0.5].iter().zip(grad.values()).enumerate() {
            let expected = v0 - 0.001 * g.signum();
            assert!((vals[j] - expected).abs() < 1e-6, "component {j}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let p = store.insert("p", t(vec![2], vec![0.4, -0.9]));
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state, 0.01, AdamParams::default()).unwrap();
        assert_eq!(store.value(p).values(), &[0.4, -0.9]);
    }

    #[test]
    fn adam_three_steps_match_scalar_oracle() {
        let grads = [0.3, -0.2, 0.05];
        let lr = 0.01;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);

        let mut store = ParamStore::new();
        let p = store.insert("p", t(vec![1], vec![1.0]));
        let mut state = AdamState::new(&store);

        // independent scalar Adam
        let (mut pv, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            let step = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(step));
            let vhat = v / (1.0 - b2.powi(step));
            pv -= lr * mhat / (vhat.sqrt() + eps);

            store.accumulate_grad(p, &t(vec![1], vec![g]));
            adam_step(&mut store, &mut state, lr, AdamParams::default()).unwrap();
            assert!((store.value(p).values()[0] - pv).abs() < 1e-15, "step {step}");
            assert_eq!(store.grad(p).values()[0], 0.0, "grads zeroed after step");
        }
    }

    #[test]
    fn forward_backward_deterministic_across_runs() {
        let run = || {
            let hub = RngHub::new(99);
            let mut rng = hub.stream("init");
            let mut store = ParamStore::new();
            let w = store.insert("w", init_uniform(vec![3, 3], 3, 1.0, &mut rng));
            let b = store.insert("b", init_uniform(vec![3], 3, 1.0, &mut rng));
            let mut g = Graph::new();
            let x = g.constant(t(vec![1, 3], vec![0.2, -0.4, 0.9]));
            let wv = g.param(&store, 0, w);
            let bv = g.param(&store, 0, b);
            let y = g.dense(x, wv, bv).unwrap();
            let y = g.tanh(y);
            let loss = g.mean_all(y);
            let lv = g.value(loss).item();
            g.backward(loss).unwrap();
            g.apply_grads(&mut store, 0);
            (lv, store.grad(w).values().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        store.insert("layer.w", t(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-17, 4.0, -5.5]));
        store.insert("layer.b", t(vec![3], vec![0.25, 0.5, -0.75]));
        save(&store, &path).unwrap();
        let loaded: ParamStore<f64> = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in store.iter().zip(loaded.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.shape(), b.1.shape());
            assert_eq!(a.1.values(), b.1.values());
        }
    }

    #[test]
    fn f32_gradcheck_within_width_tolerance() {
        let hub = RngHub::new(23);
        let mut rng = hub.stream("init");
        let mut store: ParamStore<f32> = ParamStore::new();
        let w = store.insert("w", init_uniform(vec![2, 2], 2, 1.0, &mut rng));
        let b = store.insert("b", init_uniform(vec![2], 2, 1.0, &mut rng));
        let x = Tensor::<f32>::new(vec![1, 2], vec![0.4, -0.7]).unwrap();
        let report = gradcheck::finite_diff_check(&mut store, 1e-2, |g, s| {
            let xv = g.constant(x.clone());
            let y = {
                let wv = g.param(s, 0, w);
                let bv = g.param(s, 0, b);
                g.dense(xv, wv, bv)?
            };
            let y = g.tanh(y);
            Ok(g.mean_all(y))
        })
        .unwrap();
        assert!(report.max_rel_err <= f32::grad_rtol(), "rel err {}", report.max_rel_err);
    }
}

#[cfg(test)]
use crate::scalar::Scalar as _;
