use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, DEFAULT_STEP};
use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, 1.0)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_identity_and_projector() {
    let mut tape = Tape::<f64>::new();
    let i2 = tape.constant(Tensor::matrix(2, 2, &[1., 0., 0., 1.]).unwrap());
    let m = tape.constant(Tensor::matrix(2, 2, &[1., 2., 3., 4.]).unwrap());
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out), &[1., 2., 3., 4.]);

    let p = tape.constant(Tensor::matrix(2, 2, &[1., 0., 0., 0.]).unwrap());
    let q = tape.constant(Tensor::matrix(2, 2, &[5., 6., 7., 8.]).unwrap());
    let out = tape.matmul(p, q).unwrap();
    assert_eq!(tape.value(out), &[5., 6., 0., 0.]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        tape.matmul(a, b),
        Err(crate::CdnError::Dimension(_))
    ));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let w = rand_tensor(&mut rng, &[3, 2]);
    let report = check_gradients(
        &[a, b, w],
        |t, v| {
            let p = t.matmul(v[0], v[1])?;
            let q = t.mul(p, v[2])?;
            Ok(t.sum(q))
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn masked_softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[4], &[1., 1., 1., 1.]).unwrap());
    let mask: Arc<[bool]> = vec![true, false, true, false].into();
    let y = tape.masked_softmax(x, &mask).unwrap();
    assert_eq!(tape.value(y), &[0.5, 0., 0.5, 0.]);

    let x = tape.constant(Tensor::from_f64(&[2], &[0., 2f64.ln()]).unwrap());
    let mask: Arc<[bool]> = vec![true, true].into();
    let y = tape.masked_softmax(x, &mask).unwrap();
    assert_close(tape.value(y), &[1. / 3., 2. / 3.], 1e-12);

    let x = tape.constant(Tensor::from_f64(&[3], &[7., -3., 2.]).unwrap());
    let mask: Arc<[bool]> = vec![false; 3].into();
    let y = tape.masked_softmax(x, &mask).unwrap();
    assert_eq!(tape.value(y), &[0., 0., 0.]);
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[3], &[0., -3., 3.]).unwrap());
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s)[0], 0.5);
    let r = tape.relu(x);
    assert_eq!(tape.value(r), &[0., 0., 3.]);

    let report = check_gradients(
        &[Tensor::scalar(0.0)],
        |t, v| Ok(t.tanh(v[0])),
        DEFAULT_STEP,
    )
    .unwrap();
    let (_, _, analytic, numeric) = report.worst.unwrap();
    assert_eq!(analytic, 1.0);
    assert!((numeric - 1.0).abs() < 1e-9);
}

#[test]
fn broadcast_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.add(a, b).is_err());
}

#[test]
fn concat_last_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.variable(Tensor::from_f64(&[2], &[1., 2.]).unwrap());
    let b = tape.variable(Tensor::from_f64(&[1], &[3.]).unwrap());
    let c = tape.concat_last(&[a, b]).unwrap();
    assert_eq!(tape.value(c), &[1., 2., 3.]);
    let single = tape.concat_last(&[a]).unwrap();
    assert_eq!(tape.value(single), tape.value(a));

    let s = tape.sum(c);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[1., 1.]);
    assert_eq!(tape.grad(b).unwrap(), &[1.]);
}

#[test]
fn concat_last_leading_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 2]));
    let b = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(tape.concat_last(&[a, b]).is_err());
}

#[test]
fn segment_max_pool_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::matrix(2, 2, &[1., -2., 3., 0.]).unwrap());
    let p = tape.segment_max_pool(x, &[0, 0], &[true, true], 1).unwrap();
    assert_eq!(tape.value(p), &[3., 0.]);
    let m = tape.segment_mean_pool(x, &[0, 0], &[true, true], 1).unwrap();
    assert_eq!(tape.value(m), &[2., -1.]);

    let x = tape.constant(Tensor::matrix(1, 3, &[4., -5., 6.]).unwrap());
    let p = tape.segment_max_pool(x, &[0], &[true], 1).unwrap();
    assert_eq!(tape.value(p), &[4., -5., 6.]);

    // empty segment pools to zeros; padded rows are ignored
    let x = tape.constant(Tensor::matrix(2, 1, &[-1., 9.]).unwrap());
    let p = tape.segment_max_pool(x, &[0, 0], &[true, false], 2).unwrap();
    assert_eq!(tape.value(p), &[-1., 0.]);

    assert!(tape.segment_max_pool(x, &[0, 2], &[true, true], 2).is_err());
}

#[test]
fn segment_max_pool_ties_go_to_lowest_row() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::matrix(3, 1, &[2., 2., 1.]).unwrap());
    let p = tape.segment_max_pool(x, &[0, 0, 0], &[true; 3], 1).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1., 0., 0.]);
}

#[test]
fn segment_max_pool_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[6, 3]);
    let w = rand_tensor(&mut rng, &[2, 3]);
    let seg = [0, 0, 1, 1, 0, 1];
    let report = check_gradients(
        &[x, w],
        |t, v| {
            let p = t.segment_max_pool(v[0], &seg, &[true; 6], 2)?;
            let q = t.mul(p, v[1])?;
            Ok(t.sum(q))
        },
        1e-7,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::scalar(0.5));
    let l = tape.binary_cross_entropy(p, 1.0, 1e-7).unwrap();
    assert!((tape.item(l) - 2f64.ln()).abs() < 1e-12);

    let z = tape.constant(Tensor::matrix(1, 4, &[0.3; 4]).unwrap());
    for gold in 0..4 {
        let l = tape.softmax_cross_entropy(z, &[gold]).unwrap();
        assert!((tape.item(l) - 4f64.ln()).abs() < 1e-12);
    }

    let z = tape.constant(Tensor::matrix(1, 4, &[2., 0., 0., 0.]).unwrap());
    let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
    // direct softmax evaluation
    let e2 = 2f64.exp();
    let expected = -(e2 / (e2 + 3.0)).ln();
    assert!((tape.item(l) - expected).abs() < 1e-12);

    assert!(tape.softmax_cross_entropy(z, &[4]).is_err());
}

#[test]
fn binary_cross_entropy_clamps() {
    let mut tape = Tape::<f64>::new();
    let p = tape.variable(Tensor::scalar(0.0));
    let l = tape.binary_cross_entropy(p, 1.0, 1e-7).unwrap();
    assert!((tape.item(l) - (-(1e-7f64).ln())).abs() < 1e-9);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(p).unwrap(), &[0.0]);
}

fn store_with(values: &[(&str, f64, f64)]) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for &(name, w, g) in values {
        let mut t = Tensor::scalar(w);
        t.set_grad(vec![g]).unwrap();
        store.insert(name, t).unwrap();
    }
    store
}

#[test]
fn adamw_single_step_hand_value() {
    let mut store = store_with(&[("w", 1.0, 1.0)]);
    let mut opt = AdamWState::new(AdamWConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
    });
    opt.step(&mut store).unwrap();
    // decay: 1 − 0.1·0.01 = 0.999; m̂ = v̂ = 1 → step 0.1/(1 + 1e-8)
    let expected = 0.999 - 0.1 / (1.0 + 1e-8);
    let w = store.get("w").unwrap().item();
    assert!((w - expected).abs() < 1e-12);
    assert!((w - 0.899).abs() < 1e-5);
    assert_eq!(opt.step_count(), 1);
    assert_eq!(store.get("w").unwrap().grad().unwrap(), &[0.0]);
}

#[test]
fn adamw_zero_grad_zero_decay_is_noop() {
    let mut store = store_with(&[("a", 0.3, 0.0), ("b", -2.0, 0.0)]);
    let before = store.clone();
    let mut opt = AdamWState::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    for _ in 0..5 {
        opt.step(&mut store).unwrap();
    }
    for (p, t) in store.iter() {
        assert_eq!(t.data(), before.get(p).unwrap().data());
    }
}

#[test]
fn adamw_missing_grad_is_contract_error() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::scalar(1.0)).unwrap();
    let mut opt = AdamWState::new(AdamWConfig::default());
    assert!(matches!(
        opt.step(&mut store),
        Err(crate::CdnError::Contract(_))
    ));
    assert_eq!(opt.step_count(), 0);
}

/// Textbook Adam, written independently of `AdamWState`.
fn plain_adam(w: &mut [f64], grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) {
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adamw_without_decay_matches_plain_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let init: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads: Vec<Vec<f64>> = (0..7)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut reference = init.clone();
    plain_adam(&mut reference, &grads, 0.01, 0.9, 0.999, 1e-8);

    let mut store = ParamStore::new();
    store
        .insert("p", Tensor::from_f64(&[6], &init).unwrap())
        .unwrap();
    let mut opt = AdamWState::new(AdamWConfig {
        lr: 0.01,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    for g in &grads {
        store.get_mut("p").unwrap().set_grad(g.clone()).unwrap();
        opt.step(&mut store).unwrap();
    }
    assert_close(store.get("p").unwrap().data(), &reference, 1e-12);
}

#[test]
fn layer_norm_zero_mean_unit_variance() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::matrix(1, 4, &[1., 2., 3., 4.]).unwrap());
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = tape.layer_norm(x, g, b, 0.0).unwrap();
    let v = tape.value(y);
    let mean: f64 = v.iter().sum::<f64>() / 4.0;
    let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn unused_leaves_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.variable(Tensor::scalar(2.0));
    let unused = tape.variable(Tensor::scalar(5.0));
    let y = tape.scale(a, 3.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[3.0]);
    assert!(tape.grad(unused).is_none());
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::<f64>::new();
    let a = tape.variable(Tensor::zeros(&[2]));
    assert!(tape.backward(a).is_err());
}

#[test]
fn tensor_shape_must_match_data() {
    assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    let t = Tensor::<f32>::zeros(&[2, 3]);
    assert_eq!((t.rows(), t.cols()), (2, 3));
}

// One differentiable operator per case, each wrapped so that the output is
// reduced to a scalar through a random projection.
#[derive(Clone, Copy, Debug)]
enum OpCase {
    MatMul,
    Transpose,
    Add,
    AddRow,
    Sub,
    Mul,
    MulRow,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Concat,
    SliceLast,
    ConcatRows,
    SliceRows,
    Gather,
    MaxPool,
    MeanPool,
    LayerNorm,
    Mean,
    Bce,
    Xent,
}

const ALL_CASES: [OpCase; 23] = [
    OpCase::MatMul,
    OpCase::Transpose,
    OpCase::Add,
    OpCase::AddRow,
    OpCase::Sub,
    OpCase::Mul,
    OpCase::MulRow,
    OpCase::Scale,
    OpCase::Relu,
    OpCase::Sigmoid,
    OpCase::Tanh,
    OpCase::Softmax,
    OpCase::Concat,
    OpCase::SliceLast,
    OpCase::ConcatRows,
    OpCase::SliceRows,
    OpCase::Gather,
    OpCase::MaxPool,
    OpCase::MeanPool,
    OpCase::LayerNorm,
    OpCase::Mean,
    OpCase::Bce,
    OpCase::Xent,
];

fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, crate::CdnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let w = t.constant(uniform(&mut rng, &shape, 1.0));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn run_case(case: OpCase, r: usize, c: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[r, c]);
    let y = rand_tensor(&mut rng, &[r, c]);
    let row = rand_tensor(&mut rng, &[c]);
    let sq = rand_tensor(&mut rng, &[c, r]);
    let mask: Arc<[bool]> = (0..r * c).map(|_| rng.gen_bool(0.7)).collect::<Vec<_>>().into();
    let seg: Vec<usize> = (0..r).map(|_| rng.gen_range(0..2)).collect();
    let idx: Vec<usize> = (0..r + 1).map(|_| rng.gen_range(0..r)).collect();
    let gold: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
    let target = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    let proj = seed.wrapping_add(1);
    let (inputs, build): (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> crate::Result<Var>>) =
        match case {
            OpCase::MatMul => (vec![x, sq], Box::new(move |t, v| {
                let o = t.matmul(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::Transpose => (vec![x], Box::new(move |t, v| {
                let o = t.transpose(v[0])?;
                project(t, o, proj)
            })),
            OpCase::Add => (vec![x, y], Box::new(move |t, v| {
                let o = t.add(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::AddRow => (vec![x, row], Box::new(move |t, v| {
                let o = t.add(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::Sub => (vec![x, y], Box::new(move |t, v| {
                let o = t.sub(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::Mul => (vec![x, y], Box::new(move |t, v| {
                let o = t.mul(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::MulRow => (vec![x, row], Box::new(move |t, v| {
                let o = t.mul(v[0], v[1])?;
                project(t, o, proj)
            })),
            OpCase::Scale => (vec![x], Box::new(move |t, v| {
                let o = t.scale(v[0], -1.7);
                let o = t.one_minus(o);
                project(t, o, proj)
            })),
            OpCase::Relu => (vec![x], Box::new(move |t, v| {
                let o = t.relu(v[0]);
                project(t, o, proj)
            })),
            OpCase::Sigmoid => (vec![x], Box::new(move |t, v| {
                let o = t.sigmoid(v[0]);
                project(t, o, proj)
            })),
            OpCase::Tanh => (vec![x], Box::new(move |t, v| {
                let o = t.tanh(v[0]);
                project(t, o, proj)
            })),
            OpCase::Softmax => (vec![x], Box::new(move |t, v| {
                let o = t.masked_softmax(v[0], &mask)?;
                project(t, o, proj)
            })),
            OpCase::Concat => (vec![x, row.reshape(vec![1, c]).unwrap()], Box::new(move |t, v| {
                let b = t.slice_rows(v[1], 0, 1)?;
                let rows: Vec<Var> = (0..r).map(|_| b).collect();
                let tiled = t.concat_rows(&rows)?;
                let o = t.concat_last(&[v[0], tiled, v[0]])?;
                project(t, o, proj)
            })),
            OpCase::SliceLast => (vec![x], Box::new(move |t, v| {
                let o = t.slice_last(v[0], c / 2, c - c / 2)?;
                project(t, o, proj)
            })),
            OpCase::ConcatRows => (vec![x, y], Box::new(move |t, v| {
                let o = t.concat_rows(&[v[1], v[0]])?;
                project(t, o, proj)
            })),
            OpCase::SliceRows => (vec![x], Box::new(move |t, v| {
                let o = t.slice_rows(v[0], r / 2, r - r / 2)?;
                project(t, o, proj)
            })),
            OpCase::Gather => (vec![x], Box::new(move |t, v| {
                let o = t.gather_rows(v[0], &idx)?;
                project(t, o, proj)
            })),
            OpCase::MaxPool => (vec![x], Box::new(move |t, v| {
                let o = t.segment_max_pool(v[0], &seg, &vec![true; r], 2)?;
                project(t, o, proj)
            })),
            OpCase::MeanPool => (vec![x], Box::new(move |t, v| {
                let o = t.segment_mean_pool(v[0], &seg, &vec![true; r], 2)?;
                project(t, o, proj)
            })),
            OpCase::LayerNorm => (vec![x, row.clone(), row.clone()], Box::new(move |t, v| {
                let o = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                project(t, o, proj)
            })),
            OpCase::Mean => (vec![x], Box::new(move |t, v| {
                let o = t.tanh(v[0]);
                Ok(t.mean(o))
            })),
            OpCase::Bce => (vec![Tensor::scalar(0.4 * row.data()[0])], Box::new(move |t, v| {
                let p = t.sigmoid(v[0]);
                t.binary_cross_entropy(p, target, 1e-7)
            })),
            OpCase::Xent => (vec![x], Box::new(move |t, v| t.softmax_cross_entropy(v[0], &gold))),
        };
    check_gradients(&inputs, build, DEFAULT_STEP)
        .unwrap()
        .max_rel_err
}

#[test]
fn every_op_passes_gradient_check_on_a_fixed_instance() {
    for case in ALL_CASES {
        let err = run_case(case, 4, 5, 17);
        assert!(err <= 1e-4, "{case:?}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ops_pass_gradient_checks(case in 0usize..ALL_CASES.len(), r in 2usize..=8, c in 2usize..=8, seed in any::<u64>()) {
        let err = run_case(ALL_CASES[case], r, c, seed);
        prop_assert!(err <= 1e-4, "{:?} {}x{}: {}", ALL_CASES[case], r, c, err);
    }

    #[test]
    fn masked_softmax_rows_sum_to_one(r in 1usize..6, c in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform::<f32, _>(&mut rng, &[r, c], 30.0);
        let mask: Vec<bool> = (0..r * c).map(|_| rng.gen_bool(0.5)).collect();
        let rc: Arc<[bool]> = mask.clone().into();
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x);
        let y = tape.masked_softmax(xv, &rc).unwrap();
        let v = tape.value(y);
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            for (p, ok) in row.iter().zip(m) {
                if !ok { prop_assert_eq!(*p, 0.0); }
            }
            if m.iter().any(|&b| b) {
                let s: f32 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn tape_runs_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f32>::new();
        store.insert("a", uniform(&mut rng, &[4, 4], 1.0)).unwrap();
        store.insert("b", uniform(&mut rng, &[4], 1.0)).unwrap();
        let x = uniform::<f32, _>(&mut rng, &[3, 4], 1.0);
        let mut opt = AdamWState::new(AdamWConfig::default());
        for _ in 0..10 {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let h = tape.matmul(xv, vars.get("a").unwrap()).unwrap();
            let h = tape.add(h, vars.get("b").unwrap()).unwrap();
            let h = tape.tanh(h);
            let loss = tape.sum(h);
            tape.backward(loss).unwrap();
            store.accumulate_grads(&tape, &vars).unwrap();
            opt.step(&mut store).unwrap();
        }
        store
    };
    let (a, b) = (run(), run());
    for (p, t) in a.iter() {
        let other = b.get(p).unwrap();
        let bits_a: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u32> = other.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
}
