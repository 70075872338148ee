//! The channel-aware decoupling network: toy transformer encoder, four
//! masked attention channels, gated pair fusion, utterance pooling, BiGRU
//! integration and the matching head.

mod checkpoint;
mod config;
mod forward;
mod layers;
pub mod loss;
mod params;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC};
pub use config::{parse_kv, Aggregation, ChannelAblation, GateVariant, Integrator, ModelConfig};
pub use forward::{Forward, ForwardVars};
pub(crate) use config::keyword_enum;
pub use params::{check_params, init_params, param_specs, Init, ParamSpec, GROUPS};

use std::path::Path;

use crate::data::{encode_example, DialogueExample, EncodedSequence};
use crate::error::Result;
use crate::masks::ChannelMaskSet;
use crate::numeric::{ParamStore, Scalar, Tape, Tensor};

/// Values of one forward pass, copied off the tape.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    pub e: Tensor<F>,
    pub channels: [Option<Tensor<F>>; 4],
    /// `[block][channel][head]` attention probabilities.
    pub attention: Vec<[Vec<Tensor<F>>; 4]>,
    pub gates: [Option<Tensor<F>>; 2],
    pub fused: [Option<Tensor<F>>; 2],
    pub pooled: [Option<Tensor<F>>; 2],
    pub states: [Option<Tensor<F>>; 2],
    pub channel_vecs: [Option<Tensor<F>>; 2],
    pub v: Tensor<F>,
    pub logit: F,
}

impl<F: Scalar> ForwardTrace<F> {
    fn capture(t: &Tape<F>, f: &ForwardVars) -> Self {
        let opt = |v: &Option<crate::numeric::Var>| v.map(|v| t.tensor(v));
        ForwardTrace {
            e: t.tensor(f.e),
            channels: std::array::from_fn(|k| opt(&f.channels[k])),
            attention: f
                .attention
                .iter()
                .map(|b| std::array::from_fn(|k| b[k].iter().map(|&v| t.tensor(v)).collect()))
                .collect(),
            gates: std::array::from_fn(|g| opt(&f.gates[g])),
            fused: std::array::from_fn(|g| opt(&f.fused[g])),
            pooled: std::array::from_fn(|g| opt(&f.pooled[g])),
            states: std::array::from_fn(|g| opt(&f.states[g])),
            channel_vecs: std::array::from_fn(|g| opt(&f.channel_vecs[g])),
            v: t.tensor(f.v),
            logit: t.item(f.logit),
        }
    }
}

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct CdnModel<F = f32> {
    config: ModelConfig,
    params: ParamStore<F>,
}

impl<F: Scalar> CdnModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(CdnModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(CdnModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ParamStore<F>) {
        (self.config, self.params)
    }

    pub fn cast<G: Scalar>(&self) -> CdnModel<G> {
        CdnModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Encode every candidate of `ex` at the model's length limits.
    pub fn encode_candidates(&self, ex: &DialogueExample) -> Result<Vec<EncodedSequence>> {
        (0..ex.candidates.len())
            .map(|i| encode_example(ex, i, self.config.max_len, self.config.max_utts))
            .collect()
    }

    /// Matching logit of one encoded sequence (inference mode).
    pub fn logit(&self, seq: &EncodedSequence) -> Result<F> {
        Ok(self.trace_with(seq, false)?.logit)
    }

    /// One logit per candidate.
    pub fn logits(&self, ex: &DialogueExample) -> Result<Vec<F>> {
        self.encode_candidates(ex)?
            .iter()
            .map(|s| self.logit(s))
            .collect()
    }

    pub fn trace(&self, seq: &EncodedSequence) -> Result<ForwardTrace<F>> {
        self.trace_with(seq, true)
    }

    fn trace_with(&self, seq: &EncodedSequence, full: bool) -> Result<ForwardTrace<F>> {
        let mut t = Tape::new();
        let vars = self.params.bind(&mut t);
        let masks = ChannelMaskSet::build(seq);
        let f = Forward::new(&self.config, &vars).run(&mut t, seq, &masks, None)?;
        if full {
            Ok(ForwardTrace::capture(&t, &f))
        } else {
            Ok(ForwardTrace {
                e: Tensor::zeros(&[0]),
                channels: Default::default(),
                attention: Vec::new(),
                gates: Default::default(),
                fused: Default::default(),
                pooled: Default::default(),
                states: Default::default(),
                channel_vecs: Default::default(),
                v: Tensor::zeros(&[0]),
                logit: t.item(f.logit),
            })
        }
    }
}

impl CdnModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, params) = load_checkpoint(path)?;
        Ok(CdnModel { config, params })
    }

    /// Load a checkpoint that must have been saved with `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let m = Self::load(path)?;
        if &m.config != expected {
            return Err(crate::CdnError::Config(format!(
                "checkpoint configuration differs:\n{}expected:\n{}",
                m.config, expected
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests;
