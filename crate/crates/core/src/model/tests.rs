use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Candidate, DialogueExample, TaskKind, Utterance};
use crate::numeric::gradcheck::{check_gradients, DEFAULT_STEP};
use crate::numeric::{Bindings, Var};

fn tiny(d: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 30,
        d,
        heads: 2,
        ffn: 2 * d,
        max_len: 16,
        ..ModelConfig::default()
    }
}

fn example(turns: &[(u8, &[u32])], responses: &[&[u32]]) -> DialogueExample {
    let last = turns.last().map_or(1, |t| t.0);
    DialogueExample {
        context: turns
            .iter()
            .map(|(s, ids)| Utterance {
                speaker: *s,
                tokens: ids.to_vec(),
                word_start: vec![true; ids.len()],
            })
            .collect(),
        candidates: responses
            .iter()
            .enumerate()
            .map(|(i, r)| Candidate {
                speaker: 1 - last,
                tokens: r.to_vec(),
                word_start: vec![true; r.len()],
                label: (i == 0) as u8,
            })
            .collect(),
        task: if responses.len() == 1 { TaskKind::Pointwise } else { TaskKind::Multichoice },
    }
}

fn seq(cfg: &ModelConfig) -> EncodedSequence {
    let ex = example(&[(0, &[5, 6, 7]), (1, &[8, 9]), (0, &[10])], &[&[11, 12]]);
    encode_example(&ex, 0, cfg.max_len, cfg.max_utts).unwrap()
}

fn with_tape<F: Scalar, R>(
    model: &CdnModel<F>,
    f: impl FnOnce(&mut Tape<F>, &Bindings, &Forward) -> R,
) -> R {
    let mut t = Tape::new();
    let vars = model.params().bind(&mut t);
    let fw = Forward::new(model.config(), &vars);
    f(&mut t, &vars, &fw)
}

fn zero_params<F: Scalar>(m: &mut CdnModel<F>, prefix: &str) {
    for (p, t) in m.params_mut().iter_mut() {
        if p.starts_with(prefix) {
            t.data_mut().iter_mut().for_each(|x| *x = F::zero());
        }
    }
}

#[test]
fn param_count_matches_specs() {
    let mut cfgs = vec![tiny(8), ModelConfig::default()];
    for &g in GateVariant::ALL {
        for &i in Integrator::ALL {
            cfgs.push(ModelConfig {
                gate_variant: g,
                integrator: i,
                n_bigru_layers: 2,
                n_decoupling_blocks: 2,
                decouple_residual: true,
                encoder_layers: 2,
                ..tiny(8)
            });
        }
    }
    for cfg in cfgs {
        let from_specs: usize = param_specs(&cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum();
        assert_eq!(from_specs, cfg.param_count(), "{cfg:?}");
        let m = CdnModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.params().num_elements(), cfg.param_count());
    }
    // d = 8, V = 30, f = 16, l = 16: spelled out term by term
    let c = tiny(8);
    let encoder = 30 * 8 + 16 * 8 + 16 + (4 * 64 + 8 * 16 + 16 + 16 * 8 + 8 + 32);
    let decouple = 4 * 4 * 64;
    let gate = 2 * (32 * 8 + 8) + (16 * 8 + 8);
    let gru = 2 * (8 * 24 + 8 * 24 + 48);
    let head = (32 * 8 + 8) + (8 + 1) + 30 + (8 + 1);
    assert_eq!(c.param_count(), encoder + decouple + 2 * gate + 2 * gru + head);
}

#[test]
fn encoder_zeroes_pads() {
    let cfg = tiny(8);
    let m = CdnModel::<f64>::new(cfg.clone(), 1).unwrap();
    let s = seq(&cfg);
    let tr = m.trace(&s).unwrap();
    for i in s.n_valid()..s.len() {
        assert!(tr.e.row(i).iter().all(|&x| x == 0.0));
    }
    assert!(tr.e.row(0).iter().any(|&x| x != 0.0));
}

#[test]
fn encoder_with_zero_weights_is_normalised_embeddings() {
    let cfg = tiny(8);
    let mut m = CdnModel::<f64>::new(cfg.clone(), 2).unwrap();
    for w in ["attn", "ffn"] {
        zero_params(&mut m, &format!("encoder.layer0.{w}"));
    }
    let s = seq(&cfg);
    let e = m.trace(&s).unwrap().e;
    let tok = m.params().get("encoder.tok_emb").unwrap();
    let pos = m.params().get("encoder.pos_emb").unwrap();
    for i in 0..s.n_valid() {
        let x: Vec<f64> = (0..8).map(|j| tok.at(s.ids[i] as usize, j) + pos.at(i, j)).collect();
        let mean = x.iter().sum::<f64>() / 8.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let want = (x[j] - mean) / (var + 1e-5).sqrt();
            assert!((e.at(i, j) - want).abs() < 1e-3, "{i},{j}");
        }
    }
}

#[test]
fn single_utterance_other_channel_is_zero() {
    let cfg = tiny(8);
    let m = CdnModel::<f64>::new(cfg.clone(), 3).unwrap();
    let ex = example(&[], &[&[5, 6, 7]]);
    let s = encode_example(&ex, 0, 16, 20).unwrap();
    let tr = m.trace(&s).unwrap();
    assert!(tr.channels[1].as_ref().unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn gate_examples() {
    let cfg = tiny(8);
    let mut m = CdnModel::<f64>::new(cfg.clone(), 4).unwrap();
    zero_params(&mut m, "gate.u");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = crate::numeric::uniform::<f64, _>(&mut rng, &[5, 8], 1.0);
    let ca = crate::numeric::uniform::<f64, _>(&mut rng, &[5, 8], 1.0);
    let cb = crate::numeric::uniform::<f64, _>(&mut rng, &[5, 8], 1.0);
    let run = |m: &CdnModel<f64>| {
        with_tape(m, |t, _, fw| {
            let (e, a, b) = (t.constant(e.clone()), t.constant(ca.clone()), t.constant(cb.clone()));
            let (out, p) = fw.gate(t, 0, e, a, b).unwrap();
            (t.tensor(out), t.tensor(p.unwrap()))
        })
    };
    let (out, p) = run(&m);
    assert!(p.data().iter().all(|&x| x == 0.5));
    for i in 0..out.len() {
        assert!((out.data()[i] - (ca.data()[i] + cb.data()[i]) / 2.0).abs() < 1e-15);
    }
    m.params_mut()
        .get_mut("gate.u.fc_p.b")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = 20.0);
    let (out, _) = run(&m);
    for i in 0..out.len() {
        assert!((out.data()[i] - ca.data()[i]).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn gate_output_is_convex_combination(seed in any::<u64>()) {
        let cfg = tiny(8);
        let m = CdnModel::<f64>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| crate::numeric::uniform::<f64, _>(rng, &[4, 8], 3.0);
        let (e, ca, cb) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let (out, p) = with_tape(&m, |t, _, fw| {
            let (e, a, b) = (t.constant(e.clone()), t.constant(ca.clone()), t.constant(cb.clone()));
            let (out, p) = fw.gate(t, 1, e, a, b).unwrap();
            (t.tensor(out), t.tensor(p.unwrap()))
        });
        for i in 0..out.len() {
            let (a, b, o) = (ca.data()[i], cb.data()[i], out.data()[i]);
            prop_assert!(p.data()[i] > 0.0 && p.data()[i] < 1.0);
            prop_assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
        }
    }
}

#[test]
fn aggregation_examples() {
    for (agg, want) in [(Aggregation::Max, [3.0, 0.0]), (Aggregation::Mean, [2.0, -1.0])] {
        let cfg = ModelConfig { aggregation: agg, ..tiny(2) };
        let m = CdnModel::<f64>::new(ModelConfig { heads: 1, ..cfg }, 0).unwrap();
        let s = EncodedSequence {
            ids: vec![2, 3, 0],
            utt: vec![0, 0, 0],
            speaker: vec![0, 0, 0],
            valid: vec![true, true, false],
            word_start: vec![false; 3],
            n_utts: 1,
        };
        let got = with_tape(&m, |t, _, fw| {
            let x = t.constant(Tensor::matrix(3, 2, &[1., -2., 3., 0., 99., 99.]).unwrap());
            let p = fw.aggregate(t, x, &s).unwrap();
            t.value(p).to_vec()
        });
        assert_eq!(got, want);
    }
}

/// Stepwise GRU written directly from the cell equations.
fn gru_oracle(x: &[Vec<f64>], w_ih: &Tensor<f64>, w_hh: &Tensor<f64>, b_ih: &[f64], b_hh: &[f64], d: usize, reverse: bool) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; d];
    let order: Vec<usize> = if reverse { (0..x.len()).rev().collect() } else { (0..x.len()).collect() };
    for t in order {
        let gi = |g: usize, j: usize| {
            (0..x[t].len()).map(|k| x[t][k] * w_ih.at(k, g * d + j)).sum::<f64>() + b_ih[g * d + j]
        };
        let gh = |g: usize, j: usize, h: &[f64]| {
            (0..d).map(|k| h[k] * w_hh.at(k, g * d + j)).sum::<f64>() + b_hh[g * d + j]
        };
        let mut next = vec![0.0; d];
        for j in 0..d {
            let r = sig(gi(0, j) + gh(0, j, &h));
            let z = sig(gi(1, j) + gh(1, j, &h));
            let n = (gi(2, j) + r * gh(2, j, &h)).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
    }
    h
}

#[test]
fn bigru_matches_stepwise_oracle() {
    let cfg = tiny(4);
    let mut m = CdnModel::<f64>::new(cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (p, t) in m.params_mut().iter_mut() {
        if p.starts_with("bigru.u") && p.contains(".b_") {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
    let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let flat: Vec<f64> = xs.concat();
    let v = with_tape(&m, |t, _, fw| {
        let l = t.constant(Tensor::matrix(3, 4, &flat).unwrap());
        let (v, _) = fw.integrate(t, 0, l).unwrap();
        t.value(v).to_vec()
    });
    let p = |n: &str| m.params().get(&format!("bigru.u.layer0.{n}")).unwrap();
    let f = gru_oracle(&xs, p("fwd.w_ih"), p("fwd.w_hh"), p("fwd.b_ih").data(), p("fwd.b_hh").data(), 4, false);
    let b = gru_oracle(&xs, p("bwd.w_ih"), p("bwd.w_hh"), p("bwd.b_ih").data(), p("bwd.b_hh").data(), 4, true);
    let want = [f, b].concat();
    for (x, y) in v.iter().zip(&want) {
        assert!((x - y).abs() < 1e-12, "{v:?} vs {want:?}");
    }
}

#[test]
fn bigru_boundary_cases() {
    let cfg = tiny(4);
    let mut m = CdnModel::<f64>::new(cfg, 5).unwrap();
    let l = Tensor::matrix(2, 4, &[0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.0, 0.7]).unwrap();
    let run = |m: &CdnModel<f64>, l: &Tensor<f64>| {
        with_tape(m, |t, _, fw| {
            let x = t.constant(l.clone());
            let (v, _) = fw.integrate(t, 0, x).unwrap();
            t.value(v).to_vec()
        })
    };
    // identical weights in both directions on one element: equal halves
    for n in ["w_ih", "w_hh", "b_ih", "b_hh"] {
        let fwd = m.params().get(&format!("bigru.u.layer0.fwd.{n}")).unwrap().clone();
        *m.params_mut().get_mut(&format!("bigru.u.layer0.bwd.{n}")).unwrap() = fwd;
    }
    let one = Tensor::matrix(1, 4, &l.data()[..4]).unwrap();
    let v = run(&m, &one);
    assert_eq!(v[..4], v[4..]);
    zero_params(&mut m, "bigru.u");
    assert!(run(&m, &l).iter().all(|&x| x == 0.0));
}

#[test]
fn zero_head_scores_half() {
    let cfg = tiny(8);
    let mut m = CdnModel::<f64>::new(cfg.clone(), 6).unwrap();
    zero_params(&mut m, "fusion");
    zero_params(&mut m, "classifier");
    let z = m.logit(&seq(&cfg)).unwrap();
    assert_eq!(crate::numeric::sigmoid(z), 0.5);
}

#[test]
fn identical_candidates_give_uniform_softmax() {
    let cfg = tiny(8);
    let m = CdnModel::<f64>::new(cfg, 7).unwrap();
    let ex = example(&[(0, &[5, 6]), (1, &[7])], &[&[9, 9], &[9, 9], &[9, 9], &[9, 9]]);
    let z = m.logits(&ex).unwrap();
    assert!(z.iter().all(|&x| x == z[0]));
    let mut t = Tape::<f64>::new();
    let vs: Vec<Var> = z.iter().map(|&x| t.constant(Tensor::matrix(1, 1, &[x]).unwrap())).collect();
    let l = loss::multichoice_loss(&mut t, &vs, 0).unwrap();
    assert!((t.item(l) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn candidate_order_permutes_logits() {
    let cfg = tiny(8);
    let m = CdnModel::<f32>::new(cfg, 8).unwrap();
    let ex = example(&[(0, &[5, 6]), (1, &[7])], &[&[9], &[10, 11], &[12]]);
    let z = m.logits(&ex).unwrap();
    let mut rev = ex.clone();
    rev.candidates.reverse();
    let mut zr = m.logits(&rev).unwrap();
    zr.reverse();
    assert_eq!(z, zr);
    assert_eq!(m.logits(&ex).unwrap(), z);
}

#[test]
fn ablated_channels_receive_no_gradient() {
    let cfg = ModelConfig { channel_ablation: ChannelAblation::UtteranceOnly, ..tiny(8) };
    let m = CdnModel::<f64>::new(cfg.clone(), 10).unwrap();
    let s = seq(&cfg);
    let masks = ChannelMaskSet::build(&s);
    let mut t = Tape::new();
    let vars = m.params().bind(&mut t);
    let f = Forward::new(&cfg, &vars).run(&mut t, &s, &masks, None).unwrap();
    let l = loss::pointwise_loss(&mut t, f.logit, 1).unwrap();
    t.backward(l).unwrap();
    for p in m.params().paths() {
        let g = t.grad(vars.get(p).unwrap());
        let speaker = p.contains(".ch2.") || p.contains(".ch3.") || p.starts_with("gate.s") || p.starts_with("bigru.s");
        if speaker || p.starts_with("posttrain") {
            assert!(g.is_none(), "{p}");
        } else {
            assert!(g.is_some(), "{p}");
        }
    }
}

fn gradcheck_model(cfg: ModelConfig, seed: u64) -> f64 {
    let s = seq(&cfg);
    let m = CdnModel::<f64>::new(cfg.clone(), seed).unwrap();
    let names: Vec<String> = m.params().paths().filter(|p| !p.starts_with("posttrain")).map(String::from).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|p| m.params().get(p).unwrap().clone()).collect();
    let masks = ChannelMaskSet::build(&s);
    let report = check_gradients(
        &inputs,
        |t, vs| {
            let mut store = crate::numeric::ParamStore::new();
            for p in m.params().paths().filter(|p| p.starts_with("posttrain")) {
                store.insert(p, m.params().get(p).unwrap().clone()).unwrap();
            }
            let mut vars = store.bind(t);
            for (n, &v) in names.iter().zip(vs) {
                vars.insert(n, v);
            }
            let f = Forward::new(&cfg, &vars).run(t, &s, &masks, None)?;
            loss::pointwise_loss(t, f.logit, 1)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    if let Some((i, e, a, n)) = report.worst {
        eprintln!("worst {} [{e}]: analytic {a:e} numeric {n:e}", names[i]);
    }
    report.max_rel_err
}

#[test]
fn end_to_end_gradient_check() {
    let err = gradcheck_model(tiny(8), 11);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny(8);
    let m = CdnModel::<f32>::new(cfg.clone(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    m.save(&p1).unwrap();
    let back = CdnModel::load(&p1).unwrap();
    back.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let s = seq(&cfg);
    assert_eq!(m.logit(&s).unwrap().to_bits(), back.logit(&s).unwrap().to_bits());
    assert!(CdnModel::load_expecting(&p1, &tiny(16)).is_err());

    let bytes = std::fs::read(&p1).unwrap();
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(from_bytes(&bad).is_err());
}
