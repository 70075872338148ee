use std::fmt;
use std::str::FromStr;

use crate::error::{CdnError, Result};

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::error::CdnError;
            fn from_str(s: &str) -> $crate::error::Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    _ => Err($crate::error::CdnError::Config(format!(
                        "unknown {} {:?} (expected one of: {})",
                        stringify!($name), s, [$($s),+].join(", ")
                    ))),
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}
pub(crate) use keyword_enum;

keyword_enum!(
    /// Token pooling inside an utterance.
    Aggregation { Max => "max", Mean => "mean" }
);

keyword_enum!(
    /// How the sequence of utterance vectors becomes one channel vector.
    /// The pooling variants replace the BiGRU.
    Integrator { BiGru => "bigru", MaxPool => "max_pool", MeanPool => "mean_pool" }
);

keyword_enum!(
    GateVariant {
        Full => "full",
        NoGate => "no_gate",
        NoOriginalInfo => "no_original_info",
        NoOriginalNoGate => "no_original_no_gate",
    }
);

keyword_enum!(
    ChannelAblation { Both => "both", UtteranceOnly => "utterance_only", SpeakerOnly => "speaker_only" }
);

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub position_embeddings: bool,
    pub n_decoupling_blocks: usize,
    /// Residual connection plus layer norm around each decoupling MHSA.
    pub decouple_residual: bool,
    pub gate_variant: GateVariant,
    pub aggregation: Aggregation,
    pub integrator: Integrator,
    pub n_bigru_layers: usize,
    pub channel_ablation: ChannelAblation,
    pub max_len: usize,
    pub max_utts: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 1000,
            d: 32,
            heads: 2,
            ffn: 64,
            encoder_layers: 1,
            position_embeddings: true,
            n_decoupling_blocks: 1,
            decouple_residual: false,
            gate_variant: GateVariant::Full,
            aggregation: Aggregation::Max,
            integrator: Integrator::BiGru,
            n_bigru_layers: 1,
            channel_ablation: ChannelAblation::Both,
            max_len: 256,
            max_utts: crate::data::DEFAULT_MAX_UTTS,
            dropout: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CdnError::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "vocab_size",
        "d",
        "heads",
        "ffn",
        "encoder_layers",
        "position_embeddings",
        "n_decoupling_blocks",
        "decouple_residual",
        "gate_variant",
        "aggregation",
        "integrator",
        "n_bigru_layers",
        "channel_ablation",
        "max_len",
        "max_utts",
        "dropout",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CdnError::Config(m.to_string()));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail("d must be a positive multiple of heads");
        }
        if self.n_decoupling_blocks == 0 || self.n_bigru_layers == 0 {
            return fail("n_decoupling_blocks and n_bigru_layers must be ≥ 1");
        }
        if self.vocab_size <= crate::data::NUM_SPECIALS as usize {
            return fail("vocab_size must exceed the 5 reserved specials");
        }
        if self.max_len < 4 || self.max_utts == 0 || self.ffn == 0 {
            return fail("max_len ≥ 4, max_utts ≥ 1 and ffn ≥ 1 required");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Set one field from its textual form. Returns `Ok(false)` for keys that
    /// are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ffn" => self.ffn = parse(key, value)?,
            "encoder_layers" => self.encoder_layers = parse(key, value)?,
            "position_embeddings" => self.position_embeddings = parse(key, value)?,
            "n_decoupling_blocks" => self.n_decoupling_blocks = parse(key, value)?,
            "decouple_residual" => self.decouple_residual = parse(key, value)?,
            "gate_variant" => self.gate_variant = value.trim().parse()?,
            "aggregation" => self.aggregation = value.trim().parse()?,
            "integrator" => self.integrator = value.trim().parse()?,
            "n_bigru_layers" => self.n_bigru_layers = parse(key, value)?,
            "channel_ablation" => self.channel_ablation = value.trim().parse()?,
            "max_len" => self.max_len = parse(key, value)?,
            "max_utts" => self.max_utts = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("d", self.d.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn", self.ffn.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("position_embeddings", self.position_embeddings.to_string()),
            ("n_decoupling_blocks", self.n_decoupling_blocks.to_string()),
            ("decouple_residual", self.decouple_residual.to_string()),
            ("gate_variant", self.gate_variant.to_string()),
            ("aggregation", self.aggregation.to_string()),
            ("integrator", self.integrator.to_string()),
            ("n_bigru_layers", self.n_bigru_layers.to_string()),
            ("channel_ablation", self.channel_ablation.to_string()),
            ("max_len", self.max_len.to_string()),
            ("max_utts", self.max_utts.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines (blank lines and `#` comments allowed).
    /// Every key must be a model key.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(CdnError::Config(format!("unknown model key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Width of one channel vector entering the fusion layer.
    pub fn channel_dim(&self) -> usize {
        match self.integrator {
            Integrator::BiGru => 2 * self.d,
            Integrator::MaxPool | Integrator::MeanPool => self.d,
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, v, f) = (self.d, self.vocab_size, self.ffn);
        let ln = 2 * d;
        let pos = if self.position_embeddings { self.max_len * d } else { 0 };
        let encoder = v * d + pos + ln + self.encoder_layers * (4 * d * d + d * f + f + f * d + d + 2 * ln);
        let per_mhsa = 4 * d * d + if self.decouple_residual { ln } else { 0 };
        let decouple = self.n_decoupling_blocks * 4 * per_mhsa;
        let fc = |i: usize, o: usize| i * o + o;
        let gate = match self.gate_variant {
            GateVariant::Full | GateVariant::NoGate => 2 * fc(4 * d, d) + fc(2 * d, d),
            GateVariant::NoOriginalInfo => 2 * fc(d, d) + fc(2 * d, d),
            GateVariant::NoOriginalNoGate => fc(2 * d, d),
        };
        let gru_dir = |i: usize| i * 3 * d + d * 3 * d + 6 * d;
        let bigru = match self.integrator {
            Integrator::BiGru => (0..self.n_bigru_layers)
                .map(|l| 2 * gru_dir(if l == 0 { d } else { 2 * d }))
                .sum(),
            _ => 0,
        };
        let fusion = fc(2 * self.channel_dim(), d);
        let classifier = fc(d, 1);
        let posttrain = v + fc(d, 1);
        encoder + decouple + 2 * gate + 2 * bigru + fusion + classifier + posttrain
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv_text())
    }
}

/// `key = value` lines; `#` starts a comment. Duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CdnError::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CdnError::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(x, _)| x == k) {
            return Err(CdnError::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
