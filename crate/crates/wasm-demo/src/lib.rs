//! Browser bindings for three small views of the model: the channel masks
//! (with attention of a randomly initialised model), ranking metrics of a
//! scored file, and a masked-token preview.
//!
//! Every export takes plain strings and numbers and returns a JSON string;
//! failures come back as `{"error": "..."}`.

use cdn_core::data::{encode_example, Candidate, DialogueExample, EncodedSequence, TaskKind, TokenizeMode, Utterance, Vocab, NUM_SPECIALS};
use cdn_core::masks::{Channel, ChannelMaskSet};
use cdn_core::metrics::{Metric, RankedRun};
use cdn_core::model::{CdnModel, ModelConfig};
use cdn_core::posttrain::{apply_mlm_mask, MaskLevel, MaskingPolicy, SpanSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: cdn_core::Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn bad(msg: impl Into<String>) -> cdn_core::CdnError {
    cdn_core::CdnError::Config(msg.into())
}

fn parse_list(s: &str, what: &str) -> cdn_core::Result<Vec<usize>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| bad(format!("bad {what} entry {x:?}"))))
        .collect()
}

fn grid(rows: usize, cell: impl Fn(usize, usize) -> Value) -> Value {
    Value::Array((0..rows).map(|i| Value::Array((0..rows).map(|j| cell(i, j)).collect())).collect())
}

/// Masks for a token layout given as utterance and speaker indices per
/// token, plus head-averaged attention of a fresh model seeded with `seed`.
pub fn channel_view(utterances: &str, speakers: &str, seed: u32) -> cdn_core::Result<Value> {
    let utt = parse_list(utterances, "utterance")?;
    let spk = parse_list(speakers, "speaker")?;
    if utt.is_empty() || utt.len() != spk.len() {
        return Err(bad("utterances and speakers need the same non-zero length"));
    }
    if utt.len() > 64 {
        return Err(bad("at most 64 tokens"));
    }
    if spk.iter().any(|&s| s > 1) {
        return Err(bad("speakers must be 0 or 1"));
    }
    let l = utt.len();
    let seq = EncodedSequence {
        ids: (0..l).map(|i| NUM_SPECIALS + i as u32).collect(),
        n_utts: utt.iter().max().map_or(0, |m| m + 1),
        utt,
        speaker: spk.iter().map(|&s| s as u8).collect(),
        valid: vec![true; l],
        word_start: vec![true; l],
    };
    let masks = ChannelMaskSet::build(&seq);
    let cfg = ModelConfig { vocab_size: NUM_SPECIALS as usize + l, d: 16, heads: 2, ffn: 32, max_len: l.max(4), ..ModelConfig::default() };
    let model = CdnModel::<f32>::new(cfg, u64::from(seed))?;
    let trace = model.trace(&seq)?;
    let channels: Vec<Value> = Channel::ALL
        .iter()
        .map(|&ch| {
            let heads = &trace.attention[0][ch.index()];
            let attention = grid(l, |i, j| {
                let mean = heads.iter().map(|a| f64::from(a.row(i)[j])).sum::<f64>() / heads.len() as f64;
                json!((mean * 1000.0).round() / 1000.0)
            });
            json!({
                "name": ch.name(),
                "mask": grid(l, |i, j| json!(u8::from(masks.allowed(ch, i, j)))),
                "attention": attention,
            })
        })
        .collect();
    Ok(json!({ "tokens": l, "channels": channels }))
}

/// Ranking metrics of `label<TAB>score` lines grouped `group_size` at a time.
pub fn metrics_view(tsv: &str, group_size: usize, filter: bool) -> cdn_core::Result<Value> {
    let run = RankedRun::from_scored_tsv(tsv, group_size)?;
    let report = run.report(&Metric::standard(group_size, false), filter)?;
    let rows: Vec<Value> = report.rows.iter().map(|(n, v)| json!({ "metric": n, "value": v })).collect();
    Ok(json!({ "rows": rows }))
}

/// Splits every word into pieces of at most three characters so the three
/// masking levels behave differently on ordinary text.
fn piece_vocab(text: &str) -> cdn_core::Result<Vocab> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        for (k, chunk) in chars.chunks(3).enumerate() {
            let piece: String = chunk.iter().collect();
            tokens.push(if k == 0 { piece } else { format!("##{piece}") });
        }
    }
    tokens.sort();
    tokens.dedup();
    Vocab::from_tokens(tokens)
}

/// One masking draw over a dialogue (one turn per line, speakers
/// alternating) and the empirical span-length histogram next to the
/// truncated geometric it samples from.
pub fn masking_view(text: &str, level: &str, mask_ratio: f64, span_p: f64, seed: u32) -> cdn_core::Result<Value> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() < 2 {
        return Err(bad("need at least two non-empty lines"));
    }
    let vocab = piece_vocab(text)?;
    let turns: Vec<Utterance> = lines
        .iter()
        .enumerate()
        .map(|(k, line)| {
            let t = vocab.tokenize(line, TokenizeMode::Subword);
            Utterance { speaker: (k % 2) as u8, tokens: t.ids, word_start: t.word_start }
        })
        .collect();
    let (last, context) = turns.split_last().expect("two lines");
    let ex = DialogueExample {
        context: context.to_vec(),
        candidates: vec![Candidate { speaker: last.speaker, tokens: last.tokens.clone(), word_start: last.word_start.clone(), label: 1 }],
        task: TaskKind::Pointwise,
    };
    let n_tokens: usize = turns.iter().map(|u| u.tokens.len() + 1).sum::<usize>() + 1;
    if n_tokens > 512 {
        return Err(bad("text too long for the preview (512 pieces)"));
    }
    let seq = encode_example(&ex, 0, n_tokens, turns.len())?;
    let level: MaskLevel = level.parse()?;
    let policy = MaskingPolicy { mask_ratio, span_p, ..MaskingPolicy::with_level(level) };
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let masked = apply_mlm_mask(&seq, &policy, vocab.len(), &mut rng)?;
    let out = masked.as_ref().map(|m| m.to_sequence(n_tokens)).transpose()?;
    let targets: Vec<usize> = masked.iter().flat_map(|m| m.targets.iter().map(|t| t.0 as usize)).collect();
    let name = |id: u32| vocab.token(id).unwrap_or("?").to_string();
    let tokens: Vec<Value> = (0..seq.n_valid())
        .map(|i| {
            json!({
                "text": name(seq.ids[i]),
                "utterance": seq.utt[i],
                "masked": targets.contains(&i),
                "shown": out.as_ref().map_or_else(|| name(seq.ids[i]), |o| name(o.ids[i])),
            })
        })
        .collect();

    let sampler = SpanSampler::new(span_p, policy.span_max_len)?;
    let draws = 20_000;
    let mut counts = vec![0usize; policy.span_max_len];
    for _ in 0..draws {
        counts[sampler.sample(&mut rng) - 1] += 1;
    }
    let weights: Vec<f64> = (0..policy.span_max_len).map(|k| span_p * (1.0 - span_p).powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let spans: Vec<Value> = (0..policy.span_max_len)
        .map(|k| json!({ "length": k + 1, "empirical": counts[k] as f64 / draws as f64, "expected": weights[k] / total }))
        .collect();
    let maskable = seq.ids.iter().zip(&seq.valid).filter(|(&i, &v)| v && i >= NUM_SPECIALS).count();
    Ok(json!({
        "tokens": tokens,
        "maskable": maskable,
        "masked": targets.len(),
        "spans": spans,
    }))
}

#[wasm_bindgen]
pub fn channel_masks(utterances: &str, speakers: &str, seed: u32) -> String {
    respond(channel_view(utterances, speakers, seed))
}

#[wasm_bindgen]
pub fn ranking_metrics(tsv: &str, group_size: usize, filter: bool) -> String {
    respond(metrics_view(tsv, group_size, filter))
}

#[wasm_bindgen]
pub fn masking_preview(text: &str, level: &str, mask_ratio: f64, span_p: f64, seed: u32) -> String {
    respond(masking_view(text, level, mask_ratio, span_p, seed))
}
