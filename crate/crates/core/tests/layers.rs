use deepgeo::autodiff::check::{check_gradients, DEFAULT_STEP, DEFAULT_TOLERANCE};
use deepgeo::autodiff::{Tape, Tensor, Var};
use deepgeo::layers::{
    fully_connected, init_linear, init_lstm, init_residual_block, lstm_cell, residual_block,
    BoundParams, LayerParams, LstmState,
};
use deepgeo::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn zeroed(params: &LayerParams) -> LayerParams {
    let mut z = params.clone();
    for (_, t) in z.iter_mut() {
        t.data_mut().fill(0.0);
    }
    z
}

/// Splits a parameter map into (names, tensors) so every tensor can be a checked input.
fn flatten(params: &LayerParams) -> (Vec<String>, Vec<Tensor>) {
    params.iter().map(|(k, v)| (k.to_string(), v.clone())).unzip()
}

fn rebind<'t>(names: &[String], vars: &[Var<'t>]) -> BoundParams<'t> {
    BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

#[test]
fn zero_residual_block_is_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = LayerParams::new();
    init_residual_block(&mut params, "b", 3, 3, 1, &mut rng).unwrap();
    assert!(params.get("b.proj.weight").is_err());
    let params = zeroed(&params);
    let x = random_tensor(&mut rng, &[2, 3, 5, 5]);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = residual_block(tape.leaf(x.clone()), &bound, "b", 1).unwrap();
    assert_eq!(*y.value(), x.map(|v| v.max(0.0)));
    assert_eq!(y.shape(), vec![2, 3, 5, 5]);
}

#[test]
fn projection_block_changes_channels_and_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = LayerParams::new();
    init_residual_block(&mut params, "b", 3, 6, 2, &mut rng).unwrap();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = residual_block(tape.leaf(random_tensor(&mut rng, &[1, 3, 8, 8])), &bound, "b", 2).unwrap();
    assert_eq!(y.shape(), vec![1, 6, 4, 4]);
}

#[test]
fn channel_mismatch_without_projection_is_a_shape_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = LayerParams::new();
    init_residual_block(&mut params, "b", 3, 6, 1, &mut rng).unwrap();
    let mut stripped = LayerParams::new();
    for (k, v) in params.iter().filter(|(k, _)| !k.contains("proj")) {
        stripped.insert(k, v.clone()).unwrap();
    }
    let tape = Tape::new();
    let bound = stripped.bind(&tape);
    let x = tape.leaf(random_tensor(&mut rng, &[1, 3, 4, 4]));
    assert!(matches!(residual_block(x, &bound, "b", 1), Err(Error::Shape { .. })));
}

#[test]
fn residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (in_ch, out_ch, stride) in [(2, 2, 1), (2, 3, 2), (3, 3, 1), (1, 4, 2)] {
        for _ in 0..5 {
            let mut params = LayerParams::new();
            init_residual_block(&mut params, "b", in_ch, out_ch, stride, &mut rng).unwrap();
            for (_, t) in params.iter_mut() {
                // nonzero biases so every path is exercised
                for v in t.data_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            let (names, mut inputs) = flatten(&params);
            inputs.push(random_tensor(&mut rng, &[2, in_ch, 5, 5]));
            let proj = random_tensor(&mut rng, &[2, out_ch, (5 - 1) / stride + 1, (5 - 1) / stride + 1]);
            let report = check_gradients(&inputs, DEFAULT_STEP, |tape, vars| {
                let (x, pv) = vars.split_last().unwrap();
                let bound = rebind(&names, pv);
                let y = residual_block(*x, &bound, "b", stride)?;
                y.mul(tape.leaf(proj.clone())).map(|v| v.mean())
            })
            .unwrap();
            assert!(report.passes(DEFAULT_TOLERANCE), "{:?}", report.relative_errors);
        }
    }
}

#[test]
fn fully_connected_identity_and_bias_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[3, 4]);
    let mut params = LayerParams::new();
    params.insert("fc.weight", Tensor::eye(4)).unwrap();
    params.insert("fc.bias", Tensor::zeros([4])).unwrap();
    let tape = Tape::new();
    let y = fully_connected(tape.leaf(x.clone()), &params.bind(&tape), "fc").unwrap();
    assert_eq!(*y.value(), x);

    let b = Tensor::new([2], vec![0.5, -1.5]).unwrap();
    let mut params = LayerParams::new();
    params.insert("fc.weight", Tensor::zeros([4, 2])).unwrap();
    params.insert("fc.bias", b).unwrap();
    let tape = Tape::new();
    let y = fully_connected(tape.leaf(x), &params.bind(&tape), "fc").unwrap();
    assert_eq!(y.value().data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
}

#[test]
fn fully_connected_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (d_in, d_out) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut params = LayerParams::new();
        init_linear(&mut params, "fc", d_in, d_out, &mut rng).unwrap();
        let (names, mut inputs) = flatten(&params);
        inputs.push(random_tensor(&mut rng, &[3, d_in]));
        let proj = random_tensor(&mut rng, &[3, d_out]);
        let report = check_gradients(&inputs, DEFAULT_STEP, |tape, vars| {
            let (x, pv) = vars.split_last().unwrap();
            let y = fully_connected(*x, &rebind(&names, pv), "fc")?;
            y.mul(tape.leaf(proj.clone())).map(|v| v.mean())
        })
        .unwrap();
        assert!(report.passes(DEFAULT_TOLERANCE), "{:?}", report.relative_errors);
    }
}

fn zero_lstm(d: usize, h: usize) -> LayerParams {
    let mut p = LayerParams::new();
    p.insert("l.w_ih", Tensor::zeros([d, 4 * h])).unwrap();
    p.insert("l.w_hh", Tensor::zeros([h, 4 * h])).unwrap();
    p.insert("l.bias", Tensor::zeros([4 * h])).unwrap();
    p
}

#[test]
fn zero_lstm_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = zero_lstm(3, 2);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.leaf(random_tensor(&mut rng, &[2, 3]));
    let (h, st) = lstm_cell(x, LstmState::zeros(&tape, 2, 2), &bound, "l").unwrap();
    assert!(h.value().data().iter().all(|v| *v == 0.0));
    assert!(st.c.value().data().iter().all(|v| *v == 0.0));

    let c0 = Tensor::new([2, 2], vec![1.0, -2.0, 0.3, 4.0]).unwrap();
    let state = LstmState {
        h: tape.leaf(random_tensor(&mut rng, &[2, 2])),
        c: tape.leaf(c0.clone()),
    };
    let (h, st) = lstm_cell(x, state, &bound, "l").unwrap();
    for ((c1, h1), c) in st.c.value().data().iter().zip(h.value().data()).zip(c0.data()) {
        assert!((c1 - 0.5 * c).abs() < 1e-15);
        assert!((h1 - 0.5 * (0.5 * c).tanh()).abs() < 1e-15);
    }
}

#[test]
fn lstm_state_shape_mismatch() {
    let params = zero_lstm(3, 2);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.leaf(Tensor::zeros([2, 3]));
    let bad = LstmState::zeros(&tape, 2, 3);
    assert!(matches!(lstm_cell(x, bad, &bound, "l"), Err(Error::Shape { .. })));
}

#[test]
fn two_chained_lstm_cells_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let (d, h) = (rng.random_range(1..5), rng.random_range(1..4));
        let mut params = LayerParams::new();
        init_lstm(&mut params, "l0", d, h, &mut rng).unwrap();
        init_lstm(&mut params, "l1", h, h, &mut rng).unwrap();
        let (names, mut inputs) = flatten(&params);
        inputs.push(random_tensor(&mut rng, &[2, d]));
        inputs.push(random_tensor(&mut rng, &[2, h]));
        inputs.push(random_tensor(&mut rng, &[2, h]));
        let proj = random_tensor(&mut rng, &[2, h]);
        let report = check_gradients(&inputs, DEFAULT_STEP, |tape, vars| {
            let n = vars.len();
            let bound = rebind(&names, &vars[..n - 3]);
            let state = LstmState { h: vars[n - 2], c: vars[n - 1] };
            // two time steps through layer 0, then layer 1 on its output
            let (_, s0) = lstm_cell(vars[n - 3], state, &bound, "l0")?;
            let (y0, _) = lstm_cell(vars[n - 3], s0, &bound, "l0")?;
            let (y1, _) = lstm_cell(y0, LstmState::zeros(tape, 2, h), &bound, "l1")?;
            y1.mul(tape.leaf(proj.clone())).map(|v| v.mean())
        })
        .unwrap();
        assert!(report.passes(DEFAULT_TOLERANCE), "{:?}", report.relative_errors);
    }
}

#[test]
fn stacked_lstm_output_width_is_hidden_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for d in [1, 7, 64] {
        let mut params = LayerParams::new();
        init_lstm(&mut params, "l0", d, 5, &mut rng).unwrap();
        init_lstm(&mut params, "l1", 5, 5, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.leaf(random_tensor(&mut rng, &[3, d]));
        let (h0, _) = lstm_cell(x, LstmState::zeros(&tape, 3, 5), &bound, "l0").unwrap();
        let (h1, _) = lstm_cell(h0, LstmState::zeros(&tape, 3, 5), &bound, "l1").unwrap();
        assert_eq!(h1.shape(), vec![3, 5]);
    }
}

proptest! {
    #[test]
    fn lstm_outputs_are_bounded(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = LayerParams::new();
        init_lstm(&mut params, "l", 4, 3, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.leaf(random_tensor(&mut rng, &[2, 4]).map(|v| v * scale));
        let state = LstmState {
            h: tape.leaf(random_tensor(&mut rng, &[2, 3])),
            c: tape.leaf(random_tensor(&mut rng, &[2, 3]).map(|v| v * scale)),
        };
        let (h, _) = lstm_cell(x, state, &bound, "l").unwrap();
        prop_assert!(h.value().data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..40),
                                          split in 1usize..4) {
        let mut params = LayerParams::new();
        let n = values.len();
        params.insert("a.weight", Tensor::new([n], values.clone()).unwrap()).unwrap();
        let m = n / split;
        if m > 0 {
            params.insert("b.bias", Tensor::new([m, 1], values[..m].to_vec()).unwrap()).unwrap();
        }
        params.insert("scalar", Tensor::scalar(values[0])).unwrap();
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let back = LayerParams::read_from(&buf[..]).unwrap();
        prop_assert_eq!(params.len(), back.len());
        for ((k1, t1), (k2, t2)) in params.iter().zip(back.iter()) {
            prop_assert_eq!(k1, k2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
    }
}
