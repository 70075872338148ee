use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CdnError, Result};
use crate::numeric::{uniform_fan_in, ParamStore, Scalar, Tensor};

use super::config::{GateVariant, Integrator, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Channel-group prefix: `u` for the utterance pair, `s` for the speaker pair.
pub const GROUPS: [&str; 2] = ["u", "s"];

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn add(&mut self, path: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            path,
            shape: shape.to_vec(),
            init,
        });
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize) {
        self.add(format!("{prefix}.w"), &[i, o], Init::FanIn(i));
        self.add(format!("{prefix}.b"), &[o], Init::Zeros);
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.add(format!("{prefix}.gamma"), &[d], Init::Ones);
        self.add(format!("{prefix}.beta"), &[d], Init::Zeros);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for w in ["wq", "wk", "wv", "wo"] {
            self.add(format!("{prefix}.{w}"), &[d, d], Init::FanIn(d));
        }
    }
}

/// Every parameter of a model with configuration `cfg`, in initialisation
/// order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, v, f) = (cfg.d, cfg.vocab_size, cfg.ffn);
    let mut s = Specs(Vec::new());
    s.add("encoder.tok_emb".into(), &[v, d], Init::FanIn(d));
    if cfg.position_embeddings {
        s.add("encoder.pos_emb".into(), &[cfg.max_len, d], Init::FanIn(d));
    }
    s.layer_norm("encoder.emb_ln", d);
    for l in 0..cfg.encoder_layers {
        let p = format!("encoder.layer{l}");
        s.attention(&format!("{p}.attn"), d);
        s.layer_norm(&format!("{p}.ln1"), d);
        s.add(format!("{p}.ffn.w1"), &[d, f], Init::FanIn(d));
        s.add(format!("{p}.ffn.b1"), &[f], Init::Zeros);
        s.add(format!("{p}.ffn.w2"), &[f, d], Init::FanIn(f));
        s.add(format!("{p}.ffn.b2"), &[d], Init::Zeros);
        s.layer_norm(&format!("{p}.ln2"), d);
    }
    for t in 0..cfg.n_decoupling_blocks {
        for k in 0..4 {
            let p = format!("decouple.block{t}.ch{k}");
            s.attention(&p, d);
            if cfg.decouple_residual {
                s.layer_norm(&format!("{p}.ln"), d);
            }
        }
    }
    for g in GROUPS {
        let p = format!("gate.{g}");
        match cfg.gate_variant {
            GateVariant::Full | GateVariant::NoGate => {
                s.linear(&format!("{p}.fc_a"), 4 * d, d);
                s.linear(&format!("{p}.fc_b"), 4 * d, d);
            }
            GateVariant::NoOriginalInfo => {
                s.linear(&format!("{p}.fc_a"), d, d);
                s.linear(&format!("{p}.fc_b"), d, d);
            }
            GateVariant::NoOriginalNoGate => {}
        }
        s.linear(&format!("{p}.fc_p"), 2 * d, d);
    }
    if cfg.integrator == Integrator::BiGru {
        for g in GROUPS {
            for l in 0..cfg.n_bigru_layers {
                let input = if l == 0 { d } else { 2 * d };
                for dir in ["fwd", "bwd"] {
                    let p = format!("bigru.{g}.layer{l}.{dir}");
                    s.add(format!("{p}.w_ih"), &[input, 3 * d], Init::FanIn(input));
                    s.add(format!("{p}.w_hh"), &[d, 3 * d], Init::FanIn(d));
                    s.add(format!("{p}.b_ih"), &[3 * d], Init::Zeros);
                    s.add(format!("{p}.b_hh"), &[3 * d], Init::Zeros);
                }
            }
        }
    }
    s.linear("fusion", 2 * cfg.channel_dim(), d);
    s.linear("classifier", d, 1);
    s.add("posttrain.mlm_bias".into(), &[v], Init::Zeros);
    s.linear("posttrain.nup", d, 1);
    s.0
}

/// Fresh parameters drawn from a generator seeded with `seed`.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let t = match spec.init {
            Init::FanIn(n) => uniform_fan_in(&mut rng, &spec.shape, n),
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Ones => Tensor::full(&spec.shape, F::one()),
        };
        store.insert(spec.path, t)?;
    }
    Ok(store)
}

/// Checks that `store` has exactly the parameters `cfg` calls for.
pub fn check_params<F: Scalar>(cfg: &ModelConfig, store: &ParamStore<F>) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != store.len() {
        return Err(CdnError::Config(format!(
            "configuration expects {} parameters, found {}",
            specs.len(),
            store.len()
        )));
    }
    for spec in &specs {
        let t = store
            .get(&spec.path)
            .ok_or_else(|| CdnError::Config(format!("missing parameter {}", spec.path)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(CdnError::Config(format!(
                "parameter {} has shape {:?}, configuration expects {:?}",
                spec.path,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}
