use agcnn_core::autodiff::{grad_check, same_padding, ActivationKind, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Oracles

fn conv_valid_oracle(seq: &[Vec<f64>], kernel: &[Vec<f64>], bias: f64) -> Vec<f64> {
    let (l, h) = (seq.len(), kernel.len());
    let d = seq[0].len();
    let mut out = vec![0.0; l - h + 1];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = bias;
        for j in 0..h {
            for k in 0..d {
                acc += seq[i + j][k] * kernel[j][k];
            }
        }
        *o = acc;
    }
    out
}

fn conv_same_oracle(map: &[f64], kernel: &[f64], bias: f64) -> Vec<f64> {
    let w = kernel.len();
    let left = (w - 1) / 2;
    let right = w - 1 - left;
    let mut padded = vec![0.0; left];
    padded.extend_from_slice(map);
    padded.extend(std::iter::repeat(0.0).take(right));
    (0..map.len())
        .map(|i| bias + (0..w).map(|j| padded[i + j] * kernel[j]).sum::<f64>())
        .collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn run1(build: impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, TensorError>, inputs: &[Tensor]) -> Tensor {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).clone()
}

/// Gradient check of `sum(weights ⊙ op(inputs))` w.r.t. every input in turn.
fn check_all(inputs: &[Tensor], build: impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, TensorError>) -> f64 {
    let probe = run1(&build, inputs);
    let weights: Vec<f64> = (0..probe.len()).map(|i| 0.3 + ((i as f64) * 1.7).sin()).collect();
    let weights = Tensor::new(probe.shape().to_vec(), weights).unwrap();
    let mut worst: f64 = 0.0;
    for which in 0..inputs.len() {
        let err = grad_check(
            |t, x| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, inp)| if j == which { x } else { t.constant(inp.clone()) })
                    .collect();
                let y = build(t, &vars)?;
                let w = t.constant(weights.clone());
                let prod = t.mul(y, w)?;
                t.sum(prod)
            },
            &inputs[which],
            EPS,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

// ---------------------------------------------------------------------------
// conv1d_valid

#[test]
fn conv1d_valid_examples() {
    let seq = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    let kernel = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let out = run1(|t, v| t.conv1d_valid(v[0], v[1], v[2]), &[seq.clone(), kernel, Tensor::scalar(0.0)]);
    assert_eq!(out.data(), &[3.0, 5.0]);

    let zero = Tensor::zeros(vec![2, 1]).unwrap();
    let out = run1(|t, v| t.conv1d_valid(v[0], v[1], v[2]), &[seq.clone(), zero, Tensor::scalar(0.0)]);
    assert_eq!(out.data(), &[0.0, 0.0]);

    let full = Tensor::from_rows(&[vec![0.5], vec![-1.0], vec![2.0]]).unwrap();
    let out = run1(|t, v| t.conv1d_valid(v[0], v[1], v[2]), &[seq.clone(), full, Tensor::scalar(0.25)]);
    assert_eq!(out.data(), &[0.5 - 2.0 + 6.0 + 0.25]);
}

#[test]
fn conv1d_valid_rejects_long_window() {
    let seq = Tensor::zeros(vec![2, 3]).unwrap();
    let kernel = Tensor::zeros(vec![3, 3]).unwrap();
    let mut tape = Tape::new();
    let (s, k, b) = (tape.constant(seq), tape.constant(kernel), tape.constant(Tensor::scalar(0.0)));
    assert_eq!(
        tape.conv1d_valid(s, k, b),
        Err(TensorError::WindowExceedsSequence { window: 3, len: 2 })
    );
}

#[test]
fn conv1d_valid_matches_nested_loops_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for l in 1..=10 {
        for h in 1..=l.min(5) {
            for d in 1..=4 {
                let seq: Vec<Vec<f64>> = (0..l).map(|_| rand_vec(&mut rng, d)).collect();
                let kernel: Vec<Vec<f64>> = (0..h).map(|_| rand_vec(&mut rng, d)).collect();
                let bias = rng.gen_range(-1.0..1.0);
                let expect = conv_valid_oracle(&seq, &kernel, bias);
                let out = run1(
                    |t, v| t.conv1d_valid(v[0], v[1], v[2]),
                    &[
                        Tensor::from_rows(&seq).unwrap(),
                        Tensor::from_rows(&kernel).unwrap(),
                        Tensor::scalar(bias),
                    ],
                );
                assert_eq!(out.len(), l - h + 1);
                for (a, b) in out.data().iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12, "L={l} h={h} d={d}");
                }
            }
        }
    }
}

#[test]
fn conv1d_valid_bank_matches_single_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (l, h, d, n) = (7, 3, 4, 5);
    let seq = Tensor::new(vec![l, d], rand_vec(&mut rng, l * d)).unwrap();
    let kernels = Tensor::new(vec![n, h, d], rand_vec(&mut rng, n * h * d)).unwrap();
    let bias = Tensor::vector(rand_vec(&mut rng, n));
    let bank = run1(|t, v| t.conv1d_valid_bank(v[0], v[1], v[2]), &[seq.clone(), kernels.clone(), bias.clone()]);
    assert_eq!(bank.shape(), &[n, l - h + 1]);
    for f in 0..n {
        let k = Tensor::new(vec![h, d], kernels.row(f).to_vec()).unwrap();
        let single = run1(
            |t, v| t.conv1d_valid(v[0], v[1], v[2]),
            &[seq.clone(), k, Tensor::scalar(bias.data()[f])],
        );
        assert_eq!(single.data(), bank.row(f));
    }
}

// ---------------------------------------------------------------------------
// conv1d_same_asym

#[test]
fn conv1d_same_examples() {
    let same = |map: Vec<f64>, kernel: Vec<f64>| {
        run1(
            |t, v| t.conv1d_same_asym(v[0], v[1], v[2]),
            &[Tensor::vector(map), Tensor::vector(kernel), Tensor::scalar(0.0)],
        )
        .into_data()
    };
    assert_eq!(same(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]), vec![1.0, 2.0, 3.0]);
    assert_eq!(same(vec![1.0, 2.0], vec![1.0, 1.0]), vec![3.0, 2.0]);
    assert_eq!(same(vec![1.0, 2.0, 3.0], vec![2.0]), vec![2.0, 4.0, 6.0]);
    assert_eq!(same_padding(2), (0, 1));
    assert_eq!(same_padding(5), (2, 2));
}

#[test]
fn conv1d_same_matches_padded_oracle_and_preserves_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for l in 1..=10 {
        for w in 1..=8 {
            let map = rand_vec(&mut rng, l);
            let kernel = rand_vec(&mut rng, w);
            let bias = rng.gen_range(-1.0..1.0);
            let out = run1(
                |t, v| t.conv1d_same_asym(v[0], v[1], v[2]),
                &[Tensor::vector(map.clone()), Tensor::vector(kernel.clone()), Tensor::scalar(bias)],
            );
            assert_eq!(out.len(), l, "L={l} w={w}");
            let expect = conv_same_oracle(&map, &kernel, bias);
            for (a, b) in out.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "L={l} w={w}");
            }
            if w % 2 == 1 {
                let mut one_hot = vec![0.0; w];
                one_hot[w / 2] = 1.0;
                let ident = run1(
                    |t, v| t.conv1d_same_asym(v[0], v[1], v[2]),
                    &[Tensor::vector(map.clone()), Tensor::vector(one_hot), Tensor::scalar(0.0)],
                );
                assert_eq!(ident.data(), &map[..]);
            }
        }
    }
}

#[test]
fn conv1d_same_bank_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (n, l, k, w) = (3, 6, 4, 4);
    let maps = Tensor::new(vec![n, l], rand_vec(&mut rng, n * l)).unwrap();
    let kernels = Tensor::new(vec![k, w], rand_vec(&mut rng, k * w)).unwrap();
    let bias = Tensor::vector(rand_vec(&mut rng, k));
    let out = run1(|t, v| t.conv1d_same_bank(v[0], v[1], v[2]), &[maps.clone(), kernels.clone(), bias.clone()]);
    assert_eq!(out.shape(), &[k, n, l]);
    for c in 0..k {
        for r in 0..n {
            let expect = conv_same_oracle(maps.row(r), kernels.row(c), bias.data()[c]);
            let got = &out.data()[(c * n + r) * l..(c * n + r + 1) * l];
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// pooling, activation, products

#[test]
fn max_over_time_examples() {
    let out = run1(|t, v| t.max_over_time(v[0]), &[Tensor::vector(vec![1.0, 3.0, 2.0])]);
    assert_eq!(out.data(), &[3.0]);
    let out = run1(|t, v| t.max_over_time(v[0]), &[Tensor::vector(vec![-4.5])]);
    assert_eq!(out.data(), &[-4.5]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![2.0, 2.0]).with_requires_grad(true));
    let m = tape.max_over_time(x).unwrap();
    assert_eq!(tape.data(m), &[2.0]);
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0]);
}

#[test]
fn activate_examples() {
    let out = run1(|t, v| t.activate(ActivationKind::Relu, v[0]), &[Tensor::vector(vec![-1.0, 2.0])]);
    assert_eq!(out.data(), &[0.0, 2.0]);
    let out = run1(
        |t, v| t.activate(ActivationKind::NlRelu, v[0]),
        &[Tensor::vector(vec![0.0, std::f64::consts::E - 1.0])],
    );
    assert_eq!(out.data()[0], 0.0);
    assert!((out.data()[1] - 1.0).abs() < 1e-15);
    let out = run1(|t, v| t.activate(ActivationKind::Selu, v[0]), &[Tensor::vector(vec![0.0, -40.0])]);
    assert_eq!(out.data()[0], 0.0);
    assert!((out.data()[1] - -1.7580993408473766).abs() < 1e-12);
}

#[test]
fn mul_and_dense_examples() {
    let a = Tensor::vector(vec![1.0, 2.0]);
    let out = run1(|t, v| t.mul(v[0], v[1]), &[a.clone(), Tensor::vector(vec![3.0, 4.0])]);
    assert_eq!(out.data(), &[3.0, 8.0]);
    let out = run1(|t, v| t.mul(v[0], v[1]), &[a.clone(), Tensor::vector(vec![1.0, 1.0])]);
    assert_eq!(out.data(), a.data());
    let out = run1(|t, v| t.mul(v[0], v[1]), &[a.clone(), Tensor::vector(vec![0.0, 0.0])]);
    assert_eq!(out.data(), &[0.0, 0.0]);
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(Tensor::vector(vec![1.0; 3])));
    assert!(matches!(tape.mul(x, y), Err(TensorError::ShapeMismatch { .. })));

    let x = Tensor::vector(vec![1.0, 1.0]);
    let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let out = run1(|t, v| t.dense(v[0], v[1], v[2]), &[x.clone(), w, Tensor::vector(vec![0.0, 0.0])]);
    assert_eq!(out.data(), &[3.0, 7.0]);
    let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let xs = Tensor::vector(vec![0.3, -0.7]);
    let out = run1(|t, v| t.dense(v[0], v[1], v[2]), &[xs.clone(), eye.clone(), Tensor::vector(vec![0.0, 0.0])]);
    assert_eq!(out.data(), xs.data());

    // d out_i / d b_j = delta_ij
    for i in 0..2 {
        let mut tape = Tape::new();
        let xv = tape.constant(xs.clone());
        let wv = tape.constant(eye.clone());
        let bv = tape.leaf(Tensor::vector(vec![0.0, 0.0]).with_requires_grad(true));
        let out = tape.dense(xv, wv, bv).unwrap();
        let mut sel = vec![0.0, 0.0];
        sel[i] = 1.0;
        let s = tape.constant(Tensor::vector(sel.clone()));
        let picked = tape.mul(out, s).unwrap();
        let loss = tape.sum(picked).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(bv).unwrap(), &sel[..]);
    }
}

// ---------------------------------------------------------------------------
// dropout

#[test]
fn dropout_identity_cases() {
    let x = Tensor::vector(vec![1.5, -2.0, 3.25]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for training in [true, false] {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = tape.dropout(v, 1.0, &mut rng, training).unwrap();
        assert_eq!(tape.data(out), x.data());
    }
    for keep in [0.1, 0.5, 0.9] {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = tape.dropout(v, keep, &mut rng, false).unwrap();
        assert_eq!(tape.data(out), x.data());
    }
    for bad in [0.0, -0.5, 1.5, f64::NAN] {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        assert!(matches!(tape.dropout(v, bad, &mut rng, true), Err(TensorError::InvalidKeepRate(_))));
    }
}

#[test]
fn dropout_preserves_expectation() {
    let n = 100_000;
    for keep in [0.2, 0.5, 0.8] {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0; n]));
        let out = tape.dropout(v, keep, &mut rng, true).unwrap();
        let mean = tape.data(out).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "keep={keep} mean={mean}");
        for &o in tape.data(out) {
            assert!(o == 0.0 || o == 1.0 / keep);
        }
    }
}

#[test]
fn dropout_gradient_uses_recorded_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![2.0; 64]).with_requires_grad(true));
    let y = tape.dropout(x, 0.5, &mut rng, true).unwrap();
    let out: Vec<f64> = tape.data(y).to_vec();
    let loss = tape.sum(y).unwrap();
    tape.backward(loss).unwrap();
    for (g, o) in tape.grad(x).unwrap().iter().zip(out) {
        assert_eq!(*g, o / 2.0);
    }
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

#[test]
fn softmax_xent_examples() {
    let loss = run1(|t, v| t.softmax_xent(v[0], 0), &[Tensor::vector(vec![0.0, 0.0])]);
    assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-15);
    let loss = run1(|t, v| t.softmax_xent(v[0], 0), &[Tensor::vector(vec![10.0, -10.0])]);
    let closed = (-20.0f64).exp().ln_1p();
    assert!((loss.item() - closed).abs() < 1e-20, "{} vs {closed}", loss.item());
    assert!((loss.item() - 2.06e-9).abs() < 0.01e-9);

    let mut tape = Tape::new();
    let z = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(
        tape.softmax_xent(z, 2),
        Err(TensorError::LabelOutOfRange { label: 2, classes: 2 })
    );
}

#[test]
fn softmax_xent_closed_form_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let c = rng.gen_range(2..=8);
        let z = rand_vec(&mut rng, c).into_iter().map(|v| v * 20.0).collect::<Vec<_>>();
        let label = rng.gen_range(0..c);
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::vector(z.clone()).with_requires_grad(true));
        let p = tape.softmax(zv).unwrap();
        let total: f64 = tape.data(p).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let probs = tape.data(p).to_vec();
        let loss = tape.softmax_xent(zv, label).unwrap();
        let closed = -probs[label].ln();
        assert!((tape.data(loss)[0] - closed).abs() < 1e-9 * closed.abs().max(1.0));
        tape.backward(loss).unwrap();
        for (j, g) in tape.grad(zv).unwrap().iter().enumerate() {
            let expect = probs[j] - if j == label { 1.0 } else { 0.0 };
            assert!((g - expect).abs() < 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// backward

#[test]
fn backward_basic_contracts() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).with_requires_grad(true));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let c = tape.constant(Tensor::scalar(4.0));
    let loss = tape.scale(c, 2.0).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let y = tape.scale(x, 3.0).unwrap();
    assert!(matches!(tape.backward(y), Err(TensorError::NotScalar(_))));
}

#[test]
fn fan_out_accumulates() {
    // loss = sum(x * x) + sum(3x): d/dx = 2x + 3
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.5, -1.0, 2.0]).with_requires_grad(true));
    let sq = tape.mul(x, x).unwrap();
    let lin = tape.scale(x, 3.0).unwrap();
    let both = tape.add(sq, lin).unwrap();
    let loss = tape.sum(both).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, 1.0, 7.0]);

    // y = x used twice in a sum.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let y = tape.add(x, x).unwrap();
    let loss = tape.sum(y).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_visits_each_op_once_in_reverse() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let a = tape.scale(x, 2.0).unwrap();
    let b = tape.activate(ActivationKind::Elu, a).unwrap();
    let c = tape.mul(b, a).unwrap();
    let loss = tape.sum(c).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward_trace(), &[loss, c, b, a]);
    // A second pass recomputes from scratch rather than doubling.
    let first = tape.grad(x).unwrap().to_vec();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &first[..]);
}

#[test]
fn owned_leaf_tensor_receives_grad_slot() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.value(x).grad(), Some(&[1.0, 1.0][..]));
}

// ---------------------------------------------------------------------------
// Finite-difference properties (100 cases each, extents ≤ 8)

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn away_from_kinks(xs: &[f64], kind: ActivationKind) -> bool {
    xs.iter().all(|x| kind.kinks().iter().all(|k| (x - k).abs() >= 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn grad_conv1d_valid((l, h, d) in (1usize..=8, 1usize..=8, 1usize..=8).prop_filter("h<=L", |(l, h, _)| h <= l),
                         seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            Tensor::new(vec![l, d], rand_vec(&mut rng, l * d)).unwrap(),
            Tensor::new(vec![h, d], rand_vec(&mut rng, h * d)).unwrap(),
            Tensor::scalar(rng.gen_range(-1.0..1.0)),
        ];
        let err = check_all(&inputs, |t, v| t.conv1d_valid(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_conv1d_valid_bank((l, h, d, n) in (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8).prop_filter("h<=L", |(l, h, _, _)| h <= l),
                              seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            Tensor::new(vec![l, d], rand_vec(&mut rng, l * d)).unwrap(),
            Tensor::new(vec![n, h, d], rand_vec(&mut rng, n * h * d)).unwrap(),
            Tensor::vector(rand_vec(&mut rng, n)),
        ];
        let err = check_all(&inputs, |t, v| t.conv1d_valid_bank(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_conv1d_same(l in 1usize..=8, w in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            Tensor::vector(rand_vec(&mut rng, l)),
            Tensor::vector(rand_vec(&mut rng, w)),
            Tensor::scalar(rng.gen_range(-1.0..1.0)),
        ];
        let err = check_all(&inputs, |t, v| t.conv1d_same_asym(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_conv1d_same_bank(n in 1usize..=8, l in 1usize..=8, k in 1usize..=8, w in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            Tensor::new(vec![n, l], rand_vec(&mut rng, n * l)).unwrap(),
            Tensor::new(vec![k, w], rand_vec(&mut rng, k * w)).unwrap(),
            Tensor::vector(rand_vec(&mut rng, k)),
        ];
        let err = check_all(&inputs, |t, v| t.conv1d_same_bank(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_activations(xs in (1usize..=8).prop_flat_map(vals), kind_idx in 0usize..8) {
        let kind = ActivationKind::ALL[kind_idx];
        prop_assume!(away_from_kinks(&xs, kind));
        let err = check_all(&[Tensor::vector(xs)], |t, v| t.activate(kind, v[0]));
        prop_assert!(err < TOL, "{kind}: err={err}");
    }

    #[test]
    fn grad_prelu(xs in (1usize..=8).prop_flat_map(vals), slope in -1.0f64..1.0) {
        prop_assume!(xs.iter().all(|x| x.abs() >= 1e-3));
        let err = check_all(&[Tensor::vector(xs), Tensor::scalar(slope)], |t, v| t.prelu(v[0], v[1]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_mul(n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [Tensor::vector(rand_vec(&mut rng, n)), Tensor::vector(rand_vec(&mut rng, n))];
        let err = check_all(&inputs, |t, v| t.mul(v[0], v[1]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_dense(m in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            Tensor::vector(rand_vec(&mut rng, m)),
            Tensor::new(vec![c, m], rand_vec(&mut rng, c * m)).unwrap(),
            Tensor::vector(rand_vec(&mut rng, c)),
        ];
        let err = check_all(&inputs, |t, v| t.dense(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_max_pool(rows in 1usize..=8, len in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = rand_vec(&mut rng, rows * len);
        let separated = data.chunks(len).all(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            sorted.len() < 2 || sorted[0] - sorted[1] >= 1e-3
        });
        prop_assume!(separated);
        let x = Tensor::new(vec![rows, len], data.clone()).unwrap();
        let err = check_all(&[x], |t, v| t.max_pool_rows(v[0]));
        prop_assert!(err < TOL, "err={err}");
        if rows == 1 {
            let err = check_all(&[Tensor::vector(data)], |t, v| t.max_over_time(v[0]));
            prop_assert!(err < TOL, "err={err}");
        }
    }

    #[test]
    fn grad_dropout_fixed_mask(n in 1usize..=8, keep in 0.1f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::vector(rand_vec(&mut rng, n));
        let err = check_all(&[x], |t, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            t.dropout(v[0], keep, &mut mask_rng, true)
        });
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_softmax_and_xent(c in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::vector(rand_vec(&mut rng, c));
        let label = rng.gen_range(0..c);
        let err = check_all(&[z.clone()], |t, v| t.softmax(v[0]));
        prop_assert!(err < TOL, "err={err}");
        let err = check_all(&[z], |t, v| t.softmax_xent(v[0], label));
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_reductions(k in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![k, n], rand_vec(&mut rng, k * n)).unwrap();
        let y = Tensor::new(vec![n, n], rand_vec(&mut rng, n * n)).unwrap();
        let err = check_all(&[x.clone()], |t, v| t.mean_leading(v[0]));
        prop_assert!(err < TOL, "err={err}");
        let err = check_all(&[x.clone(), y], |t, v| t.concat(&[v[0], v[1]]));
        prop_assert!(err < TOL, "err={err}");
        let err = check_all(&[x.clone(), x], |t, v| {
            let s = t.add(v[0], v[1])?;
            t.scale(s, 0.5)
        });
        prop_assert!(err < TOL, "err={err}");
    }

    #[test]
    fn grad_composed_graph(l in 3usize..=8, d in 1usize..=4, seed in any::<u64>()) {
        // conv -> elu -> same-conv gate (sigmoid) -> mul -> pool -> dense -> xent
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = Tensor::new(vec![l, d], rand_vec(&mut rng, l * d)).unwrap();
        let kernels = Tensor::new(vec![2, 2, d], rand_vec(&mut rng, 4 * d)).unwrap();
        let attn = Tensor::new(vec![2, 3], rand_vec(&mut rng, 6)).unwrap();
        let w = Tensor::new(vec![2, 2], rand_vec(&mut rng, 4)).unwrap();
        let inputs = [seq, kernels, attn, w];
        let build = |t: &mut Tape<'_>, v: &[Var]| {
            let cb = t.constant(Tensor::vector(vec![0.1, -0.2]));
            let conv = t.conv1d_valid_bank(v[0], v[1], cb)?;
            let act = t.activate(ActivationKind::Elu, conv)?;
            let ab = t.constant(Tensor::vector(vec![0.0, 0.3]));
            let gates = t.conv1d_same_bank(act, v[2], ab)?;
            let gates = t.activate(ActivationKind::Sigmoid, gates)?;
            let gate = t.mean_leading(gates)?;
            let gated = t.mul(gate, act)?;
            let pooled = t.max_pool_rows(gated)?;
            let db = t.constant(Tensor::vector(vec![0.0, 0.0]));
            let logits = t.dense(pooled, v[3], db)?;
            t.softmax_xent(logits, 1)
        };
        let probe = run1(|t, v| {
            let cb = t.constant(Tensor::vector(vec![0.1, -0.2]));
            let conv = t.conv1d_valid_bank(v[0], v[1], cb)?;
            let act = t.activate(ActivationKind::Elu, conv)?;
            let ab = t.constant(Tensor::vector(vec![0.0, 0.3]));
            let gates = t.conv1d_same_bank(act, v[2], ab)?;
            let gates = t.activate(ActivationKind::Sigmoid, gates)?;
            let gate = t.mean_leading(gates)?;
            t.mul(gate, act)
        }, &inputs);
        let separated = probe.data().chunks(probe.shape()[1]).all(|row| {
            let mut s = row.to_vec();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s.len() < 2 || s[0] - s[1] >= 1e-3
        });
        prop_assume!(separated);
        for which in 0..inputs.len() {
            let err = grad_check(|t, x| {
                let vars: Vec<Var> = inputs.iter().enumerate()
                    .map(|(j, inp)| if j == which { x } else { t.constant(inp.clone()) })
                    .collect();
                build(t, &vars)
            }, &inputs[which], EPS).unwrap();
            prop_assert!(err < TOL, "input {which}: err={err}");
        }
    }
}

// ---------------------------------------------------------------------------
// attention_gate

fn gate_composite<'a>(
    t: &mut Tape<'a>,
    maps: Var,
    groups: &[(Var, Var)],
    kind: ActivationKind,
    slope: Option<Var>,
) -> Result<Var, TensorError> {
    let parts = groups
        .iter()
        .map(|&(k, b)| t.conv1d_same_bank(maps, k, b))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = t.concat(&parts)?;
    let activated = match (kind, slope) {
        (ActivationKind::PRelu, Some(s)) => t.prelu(stacked, s)?,
        _ => t.activate(kind, stacked)?,
    };
    let gate = t.mean_leading(activated)?;
    t.mul(maps, gate)
}

/// Random maps, `(kernels, bias)` groups and a slope, flattened into inputs.
fn gate_inputs(rng: &mut ChaCha8Rng, n: usize, l: usize, windows: &[(usize, usize)]) -> Vec<Tensor> {
    let mut inputs = vec![Tensor::new(vec![n, l], rand_vec(rng, n * l)).unwrap()];
    for &(k, w) in windows {
        inputs.push(Tensor::new(vec![k, w], rand_vec(rng, k * w)).unwrap());
        inputs.push(Tensor::vector(rand_vec(rng, k)));
    }
    inputs.push(Tensor::scalar(rng.gen_range(-0.5..0.5)));
    inputs
}

fn gate_build(
    fused: bool,
    kind: ActivationKind,
) -> impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, TensorError> {
    move |t, v| {
        let groups: Vec<(Var, Var)> = v[1..v.len() - 1].chunks(2).map(|p| (p[0], p[1])).collect();
        let slope = Some(v[v.len() - 1]);
        if fused {
            t.attention_gate(v[0], &groups, kind, slope)
        } else {
            gate_composite(t, v[0], &groups, kind, slope)
        }
    }
}

fn gate_grads(inputs: &[Tensor], build: impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, TensorError>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone().with_requires_grad(true))).collect();
    let y = build(&mut tape, &vars).unwrap();
    let weights: Vec<f64> = (0..tape.value(y).len()).map(|i| 0.3 + ((i as f64) * 1.7).sin()).collect();
    let w = tape.constant(Tensor::new(tape.shape(y).to_vec(), weights).unwrap());
    let prod = tape.mul(y, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    let value = tape.data(y).to_vec();
    (value, vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect())
}

#[test]
fn attention_gate_identity_kernels_pass_maps_through() {
    let maps = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.0, 1.5]).unwrap();
    let out = run1(
        |t, v| t.attention_gate(v[0], &[(v[1], v[2])], ActivationKind::Relu, None),
        &[maps.clone(), Tensor::matrix(2, 3, vec![0.0; 6]).unwrap(), Tensor::vector(vec![1.0, 1.0])],
    );
    assert_eq!(out.data(), maps.data());
}

#[test]
fn attention_gate_rejects_bad_shapes() {
    let mut tape = Tape::new();
    let maps = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let k = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0; 3]));
    assert!(tape.attention_gate(maps, &[(k, b)], ActivationKind::Relu, None).is_err());
    assert!(tape.attention_gate(maps, &[], ActivationKind::Relu, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn attention_gate_matches_composite_ops(
        n in 1usize..=6,
        l in 1usize..=8,
        windows in prop::collection::vec((1usize..=4, 1usize..=8), 1..=3),
        kind_idx in 0usize..8,
        seed in any::<u64>(),
    ) {
        let kind = ActivationKind::ALL[kind_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = gate_inputs(&mut rng, n, l, &windows);
        let (fv, fg) = gate_grads(&inputs, gate_build(true, kind));
        let (cv, cg) = gate_grads(&inputs, gate_build(false, kind));
        for (a, b) in fv.iter().zip(&cv) {
            prop_assert!((a - b).abs() < 1e-12, "{kind}: value {a} vs {b}");
        }
        for (ga, gb) in fg.iter().zip(&cg) {
            for (a, b) in ga.iter().zip(gb) {
                prop_assert!((a - b).abs() < 1e-12, "{kind}: grad {a} vs {b}");
            }
        }
    }

    #[test]
    fn grad_attention_gate(
        n in 1usize..=4,
        l in 1usize..=8,
        windows in prop::collection::vec((1usize..=3, 1usize..=8), 1..=2),
        kind in prop::sample::select(vec![ActivationKind::Sigmoid, ActivationKind::Softplus, ActivationKind::Elu]),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = gate_inputs(&mut rng, n, l, &windows);
        let err = check_all(&inputs, gate_build(true, kind));
        prop_assert!(err < TOL, "{kind}: err={err}");
    }
}
