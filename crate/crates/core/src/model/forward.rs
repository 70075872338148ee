use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::EncodedSequence;
use crate::error::{CdnError, Result};
use crate::masks::{Channel, ChannelMaskSet};
use crate::numeric::{Bindings, Scalar, Tape, Tensor, Var};

use super::config::{Aggregation, ChannelAblation, GateVariant, Integrator, ModelConfig};
use super::layers::{gru_direction, layer_norm, linear, mhsa};
use super::params::GROUPS;

/// Tape handles of every intermediate of one forward pass. Entries of
/// channels a channel ablation skips are `None`.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// Encoder output `E`, `l × d`.
    pub e: Var,
    /// Final-block decoupled outputs `C₁..C₄`.
    pub channels: [Option<Var>; 4],
    /// Attention probabilities, `[block][channel][head]`, each `l × l`.
    pub attention: Vec<[Vec<Var>; 4]>,
    /// Gate ratios `P` for the utterance and speaker pairs.
    pub gates: [Option<Var>; 2],
    /// Fused channel outputs `C_u`, `C_s`.
    pub fused: [Option<Var>; 2],
    /// Utterance vectors `L_u`, `L_s`, `n_utts × d`.
    pub pooled: [Option<Var>; 2],
    /// Last-layer BiGRU outputs, `n_utts × 2d`.
    pub states: [Option<Var>; 2],
    /// Channel vectors `v₁`, `v₂`.
    pub channel_vecs: [Option<Var>; 2],
    /// Dialogue vector `v`, `1 × d`.
    pub v: Var,
    /// Matching logit, `1 × 1`.
    pub logit: Var,
}

/// Graph builder over bound parameters.
pub struct Forward<'a> {
    pub cfg: &'a ModelConfig,
    pub vars: &'a Bindings,
}

fn dropout<F: Scalar>(t: &mut Tape<F>, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng.filter(|_| p > 0.0) else {
        return Ok(x);
    };
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    let shape = t.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<F> = (0..n)
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
        .collect();
    let m = t.constant(Tensor::new(shape, mask)?);
    t.mul(x, m)
}

fn row_mask<F: Scalar>(valid: &[bool], d: usize) -> Result<Tensor<F>> {
    let data = valid
        .iter()
        .flat_map(|&v| std::iter::repeat_n(if v { F::one() } else { F::zero() }, d))
        .collect();
    Tensor::new(vec![valid.len(), d], data)
}

impl<'a> Forward<'a> {
    pub fn new(cfg: &'a ModelConfig, vars: &'a Bindings) -> Self {
        Forward { cfg, vars }
    }

    fn p(&self, path: &str) -> Result<Var> {
        self.vars.get(path)
    }

    fn active_groups(&self) -> [bool; 2] {
        match self.cfg.channel_ablation {
            ChannelAblation::Both => [true, true],
            ChannelAblation::UtteranceOnly => [true, false],
            ChannelAblation::SpeakerOnly => [false, true],
        }
    }

    /// Toy post-LN transformer encoder. Pad rows of the output are zero.
    pub fn encode<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        seq: &EncodedSequence,
        masks: &ChannelMaskSet,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = self.cfg;
        let l = seq.len();
        if l > cfg.max_len {
            return Err(CdnError::Contract(format!(
                "sequence length {l} exceeds max_len {}",
                cfg.max_len
            )));
        }
        if masks.len() != l {
            return Err(CdnError::Contract("mask set does not match sequence".into()));
        }
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let mut x = t.gather_rows(self.p("encoder.tok_emb")?, &ids)?;
        if cfg.position_embeddings {
            let pos: Vec<usize> = (0..l).collect();
            let pe = t.gather_rows(self.p("encoder.pos_emb")?, &pos)?;
            x = t.add(x, pe)?;
        }
        x = layer_norm(t, self.vars, "encoder.emb_ln", x)?;
        x = dropout(t, x, cfg.dropout, rng.as_deref_mut())?;
        for i in 0..cfg.encoder_layers {
            let p = format!("encoder.layer{i}");
            let a = mhsa(t, self.vars, &format!("{p}.attn"), x, masks.valid_pairs(), cfg.heads, None)?;
            let r = t.add(x, a)?;
            x = layer_norm(t, self.vars, &format!("{p}.ln1"), r)?;
            let h = linear(t, x, self.p(&format!("{p}.ffn.w1"))?, self.p(&format!("{p}.ffn.b1"))?)?;
            let h = t.relu(h);
            let h = linear(t, h, self.p(&format!("{p}.ffn.w2"))?, self.p(&format!("{p}.ffn.b2"))?)?;
            let r = t.add(x, h)?;
            x = layer_norm(t, self.vars, &format!("{p}.ln2"), r)?;
        }
        let m = t.constant(row_mask(&seq.valid, cfg.d)?);
        t.mul(x, m)
    }

    /// Runs the decoupling blocks for the channels of the active groups,
    /// each channel chaining through the blocks on its own.
    pub fn decouple<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        e: Var,
        masks: &ChannelMaskSet,
    ) -> Result<([Option<Var>; 4], Vec<[Vec<Var>; 4]>)> {
        let groups = self.active_groups();
        let mut cur: [Option<Var>; 4] = [None; 4];
        for ch in Channel::ALL {
            if groups[ch.index() / 2] {
                cur[ch.index()] = Some(e);
            }
        }
        let mut attention = Vec::with_capacity(self.cfg.n_decoupling_blocks);
        for b in 0..self.cfg.n_decoupling_blocks {
            let mut block_attn: [Vec<Var>; 4] = Default::default();
            for ch in Channel::ALL {
                let k = ch.index();
                let Some(x) = cur[k] else { continue };
                let prefix = format!("decouple.block{b}.ch{k}");
                let y = mhsa(t, self.vars, &prefix, x, masks.get(ch), self.cfg.heads, Some(&mut block_attn[k]))?;
                cur[k] = Some(if self.cfg.decouple_residual {
                    let r = t.add(x, y)?;
                    layer_norm(t, self.vars, &format!("{prefix}.ln"), r)?
                } else {
                    y
                });
            }
            attention.push(block_attn);
        }
        Ok((cur, attention))
    }

    fn heuristic<F: Scalar>(&self, t: &mut Tape<F>, prefix: &str, e: Var, c: Var, with_e: bool) -> Result<Var> {
        let input = if with_e {
            let diff = t.sub(e, c)?;
            let prod = t.mul(e, c)?;
            t.concat_last(&[e, c, diff, prod])?
        } else {
            c
        };
        let y = linear(t, input, self.p(&format!("{prefix}.w"))?, self.p(&format!("{prefix}.b"))?)?;
        Ok(t.relu(y))
    }

    /// Fuses a complementary channel pair. Returns the fused output and, for
    /// gated variants, the gate ratio `P`.
    pub fn gate<F: Scalar>(&self, t: &mut Tape<F>, group: usize, e: Var, ca: Var, cb: Var) -> Result<(Var, Option<Var>)> {
        let g = GROUPS[group];
        let fc_p = (self.p(&format!("gate.{g}.fc_p.w"))?, self.p(&format!("gate.{g}.fc_p.b"))?);
        let variant = self.cfg.gate_variant;
        if variant == GateVariant::NoOriginalNoGate {
            let cat = t.concat_last(&[ca, cb])?;
            return Ok((linear(t, cat, fc_p.0, fc_p.1)?, None));
        }
        let with_e = variant != GateVariant::NoOriginalInfo;
        let ea = self.heuristic(t, &format!("gate.{g}.fc_a"), e, ca, with_e)?;
        let eb = self.heuristic(t, &format!("gate.{g}.fc_b"), e, cb, with_e)?;
        let cat = t.concat_last(&[ea, eb])?;
        let z = linear(t, cat, fc_p.0, fc_p.1)?;
        if variant == GateVariant::NoGate {
            return Ok((z, None));
        }
        let p = t.sigmoid(z);
        let a = t.mul(p, ca)?;
        let q = t.one_minus(p);
        let b = t.mul(q, cb)?;
        Ok((t.add(a, b)?, Some(p)))
    }

    /// Token pooling per utterance over valid positions.
    pub fn aggregate<F: Scalar>(&self, t: &mut Tape<F>, x: Var, seq: &EncodedSequence) -> Result<Var> {
        match self.cfg.aggregation {
            Aggregation::Max => t.segment_max_pool(x, &seq.utt, &seq.valid, seq.n_utts),
            Aggregation::Mean => t.segment_mean_pool(x, &seq.utt, &seq.valid, seq.n_utts),
        }
    }

    /// Channel vector from utterance vectors, plus the last BiGRU layer's
    /// outputs when the integrator is a BiGRU.
    pub fn integrate<F: Scalar>(&self, t: &mut Tape<F>, group: usize, l: Var) -> Result<(Var, Option<Var>)> {
        let n = t.shape(l)[0];
        match self.cfg.integrator {
            Integrator::MaxPool => Ok((t.segment_max_pool(l, &vec![0; n], &vec![true; n], 1)?, None)),
            Integrator::MeanPool => Ok((t.segment_mean_pool(l, &vec![0; n], &vec![true; n], 1)?, None)),
            Integrator::BiGru => {
                let d = self.cfg.d;
                let g = GROUPS[group];
                let mut x = l;
                let mut last = (x, x);
                for layer in 0..self.cfg.n_bigru_layers {
                    let p = format!("bigru.{g}.layer{layer}");
                    let fwd = gru_direction(t, self.vars, &format!("{p}.fwd"), x, d, false)?;
                    let bwd = gru_direction(t, self.vars, &format!("{p}.bwd"), x, d, true)?;
                    let f = t.concat_rows(&fwd)?;
                    let b = t.concat_rows(&bwd)?;
                    x = t.concat_last(&[f, b])?;
                    last = (fwd[n - 1], bwd[0]);
                }
                Ok((t.concat_last(&[last.0, last.1])?, Some(x)))
            }
        }
    }

    /// `v = tanh(W[v₁; v₂] + b)` and the classifier logit.
    pub fn head<F: Scalar>(&self, t: &mut Tape<F>, v1: Var, v2: Var, rng: Option<&mut ChaCha8Rng>) -> Result<(Var, Var)> {
        let cat = t.concat_last(&[v1, v2])?;
        let v = linear(t, cat, self.p("fusion.w")?, self.p("fusion.b")?)?;
        let v = t.tanh(v);
        let vd = dropout(t, v, self.cfg.dropout, rng)?;
        let logit = linear(t, vd, self.p("classifier.w")?, self.p("classifier.b")?)?;
        Ok((v, logit))
    }

    /// Everything from the encoded sequence to the matching logit. `rng`
    /// enables dropout (training mode).
    pub fn run<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        seq: &EncodedSequence,
        masks: &ChannelMaskSet,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardVars> {
        let e = self.encode(t, seq, masks, rng.as_deref_mut())?;
        let (channels, attention) = self.decouple(t, e, masks)?;
        let mut out = ForwardVars {
            e,
            channels,
            attention,
            gates: [None; 2],
            fused: [None; 2],
            pooled: [None; 2],
            states: [None; 2],
            channel_vecs: [None; 2],
            v: e,
            logit: e,
        };
        for g in 0..2 {
            let (Some(ca), Some(cb)) = (channels[2 * g], channels[2 * g + 1]) else {
                continue;
            };
            let (fused, p) = self.gate(t, g, e, ca, cb)?;
            let pooled = self.aggregate(t, fused, seq)?;
            let (vch, states) = self.integrate(t, g, pooled)?;
            out.gates[g] = p;
            out.fused[g] = Some(fused);
            out.pooled[g] = Some(pooled);
            out.states[g] = states;
            out.channel_vecs[g] = Some(vch);
        }
        let (v1, v2) = match out.channel_vecs {
            [Some(a), Some(b)] => (a, b),
            [Some(a), None] | [None, Some(a)] => (a, a),
            [None, None] => unreachable!("at least one channel group is active"),
        };
        let (v, logit) = self.head(t, v1, v2, rng)?;
        out.v = v;
        out.logit = logit;
        Ok(out)
    }

    /// Tied-embedding token logits at `positions` of an encoder output.
    pub fn mlm_logits<F: Scalar>(&self, t: &mut Tape<F>, e: Var, positions: &[usize]) -> Result<Var> {
        let x = t.gather_rows(e, positions)?;
        let emb_t = t.transpose(self.p("encoder.tok_emb")?)?;
        let y = t.matmul(x, emb_t)?;
        t.add(y, self.p("posttrain.mlm_bias")?)
    }

    /// Next-utterance probability from the [CLS] row of an encoder output.
    pub fn nup_probability<F: Scalar>(&self, t: &mut Tape<F>, e: Var) -> Result<Var> {
        let cls = t.slice_rows(e, 0, 1)?;
        let z = linear(t, cls, self.p("posttrain.nup.w")?, self.p("posttrain.nup.b")?)?;
        Ok(t.sigmoid(z))
    }
}
