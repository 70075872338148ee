//! Post-training data: masked-token examples at three granularities and
//! next-utterance prediction pairs.
//!
//! # Record file
//!
//! Examples are stored as a sequence of records, each a little-endian `u32`
//! byte length followed by a body of that many bytes:
//!
//! ```text
//! kind      u8         0 = masked tokens, 1 = next utterance
//! n_ids     u32
//! ids       n_ids × u32      [CLS] u1 [SEP] u2 [SEP] … (no padding)
//! n_targets u32
//! targets   n_targets × (position u32, original id u32)
//! label     u8         next-utterance label (0 for masked-token records)
//! ```
//!
//! Utterance indices are implied by the [SEP] positions; speakers are not
//! stored (the encoder does not use them).

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    encode_example, Candidate, DialogueExample, EncodedSequence, TaskKind, Utterance, CLS, MASK, NUM_SPECIALS, PAD, SEP,
};
use crate::error::{CdnError, Result};
use crate::model::{keyword_enum, ModelConfig};

keyword_enum!(MaskLevel { Subword => "subword", WholeWord => "whole_word", Span => "span" });

/// One dialogue as an ordered list of turns.
pub type Dialogue = Vec<Utterance>;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskingPolicy {
    pub level: MaskLevel,
    pub mask_ratio: f64,
    /// Probabilities of replacing a selected token by [MASK], by a random
    /// token, or keeping it.
    pub replace_probs: [f64; 3],
    pub span_p: f64,
    pub span_max_len: usize,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            level: MaskLevel::Subword,
            mask_ratio: 0.15,
            replace_probs: [0.8, 0.1, 0.1],
            span_p: 0.2,
            span_max_len: 10,
        }
    }
}

impl MaskingPolicy {
    pub fn with_level(level: MaskLevel) -> Self {
        MaskingPolicy { level, ..MaskingPolicy::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CdnError::Config(m.into()));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail("mask_ratio must be in (0, 1)");
        }
        if self.replace_probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.replace_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return fail("replace_probs must be probabilities summing to 1");
        }
        if self.span_max_len == 0 {
            return fail("span_max_len must be ≥ 1");
        }
        if !(self.span_p > 0.0 && self.span_p <= 1.0) {
            return fail("span_p must be in (0, 1]");
        }
        Ok(())
    }

    /// Number of targets for `maskable` candidate positions.
    pub fn target_count(&self, maskable: usize) -> usize {
        ((self.mask_ratio * maskable as f64).ceil() as usize).min(maskable)
    }
}

/// Span lengths `1..=max` with probability proportional to `p(1−p)^(ℓ−1)`.
#[derive(Clone, Debug)]
pub struct SpanSampler {
    dist: WeightedIndex<f64>,
}

impl SpanSampler {
    pub fn new(p: f64, max_len: usize) -> Result<Self> {
        let weights: Vec<f64> = (0..max_len).map(|k| p * (1.0 - p).powi(k as i32)).collect();
        let dist = WeightedIndex::new(weights).map_err(|e| CdnError::Config(format!("span distribution: {e}")))?;
        Ok(SpanSampler { dist })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng) + 1
    }
}

keyword_enum!(PosttrainKind { Mlm => "mlm", Nup => "nup" });

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PosttrainExample {
    pub kind: PosttrainKind,
    /// Input ids without padding, masked where `targets` says so.
    pub ids: Vec<u32>,
    /// `(position, original id)` sorted by position.
    pub targets: Vec<(u32, u32)>,
    pub label: u8,
}

impl PosttrainExample {
    /// Padded sequence with utterance indices recovered from [SEP]s and
    /// speakers alternating by utterance.
    pub fn to_sequence(&self, max_len: usize) -> Result<EncodedSequence> {
        if self.ids.len() > max_len {
            return Err(CdnError::Contract(format!(
                "record of {} tokens exceeds max_len {max_len}",
                self.ids.len()
            )));
        }
        let mut seq = EncodedSequence {
            ids: Vec::with_capacity(max_len),
            utt: Vec::with_capacity(max_len),
            speaker: Vec::with_capacity(max_len),
            valid: Vec::with_capacity(max_len),
            word_start: Vec::with_capacity(max_len),
            n_utts: self.ids.iter().filter(|&&i| i == SEP).count().max(1),
        };
        let mut u = 0;
        for &id in &self.ids {
            seq.ids.push(id);
            seq.utt.push(u);
            seq.speaker.push((u % 2) as u8);
            seq.valid.push(true);
            seq.word_start.push(id >= NUM_SPECIALS);
            if id == SEP {
                u += 1;
            }
        }
        while seq.ids.len() < max_len {
            seq.ids.push(PAD);
            seq.utt.push(0);
            seq.speaker.push(0);
            seq.valid.push(false);
            seq.word_start.push(false);
        }
        Ok(seq)
    }
}

fn valid_ids(seq: &EncodedSequence) -> Vec<u32> {
    seq.ids.iter().zip(&seq.valid).filter(|(_, &v)| v).map(|(&i, _)| i).collect()
}

/// Positions that may be masked: valid non-special tokens.
pub fn maskable_positions(seq: &EncodedSequence) -> Vec<bool> {
    seq.ids
        .iter()
        .zip(&seq.valid)
        .map(|(&id, &v)| v && id >= NUM_SPECIALS)
        .collect()
}

/// Maskable positions grouped into words. A word starts at a flagged word
/// start, after a non-maskable position, or at an utterance change.
pub fn word_groups(seq: &EncodedSequence) -> Vec<Vec<usize>> {
    let maskable = maskable_positions(seq);
    let mut words: Vec<Vec<usize>> = Vec::new();
    for i in 0..seq.len() {
        if !maskable[i] {
            continue;
        }
        let continues = i > 0 && maskable[i - 1] && !seq.word_start[i] && seq.utt[i - 1] == seq.utt[i];
        match words.last_mut() {
            Some(w) if continues => w.push(i),
            _ => words.push(vec![i]),
        }
    }
    words
}

/// Choose target positions, replace them per the policy and record the
/// originals. `Ok(None)` means the sequence has nothing to mask.
pub fn apply_mlm_mask<R: Rng>(
    seq: &EncodedSequence,
    policy: &MaskingPolicy,
    vocab_size: usize,
    rng: &mut R,
) -> Result<Option<PosttrainExample>> {
    policy.validate()?;
    let maskable = maskable_positions(seq);
    let candidates: Vec<usize> = (0..seq.len()).filter(|&i| maskable[i]).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let target = policy.target_count(candidates.len());
    let mut chosen = vec![false; seq.len()];
    let mut count = 0;
    match policy.level {
        MaskLevel::Subword => {
            for &i in candidates.choose_multiple(rng, target) {
                chosen[i] = true;
            }
            count = target;
        }
        MaskLevel::WholeWord => {
            let mut words = word_groups(seq);
            words.shuffle(rng);
            for w in words {
                if count >= target {
                    break;
                }
                if count + w.len() > target {
                    continue;
                }
                for &i in &w {
                    chosen[i] = true;
                }
                count += w.len();
            }
        }
        MaskLevel::Span => {
            let spans = SpanSampler::new(policy.span_p, policy.span_max_len)?;
            while count < target {
                let len = spans.sample(rng);
                let start = candidates[rng.gen_range(0..candidates.len())];
                let mut i = start;
                while i < seq.len() && i < start + len && maskable[i] && seq.utt[i] == seq.utt[start] && count < target {
                    if !chosen[i] {
                        chosen[i] = true;
                        count += 1;
                    }
                    i += 1;
                }
            }
        }
    }
    let mut ids = valid_ids(seq);
    let mut targets = Vec::with_capacity(count);
    let [p_mask, p_random, _] = policy.replace_probs;
    for (i, id) in ids.iter_mut().enumerate() {
        if !chosen[i] {
            continue;
        }
        targets.push((i as u32, *id));
        let u: f64 = rng.gen();
        if u < p_mask {
            *id = MASK;
        } else if u < p_mask + p_random {
            *id = rng.gen_range(NUM_SPECIALS..vocab_size as u32);
        }
    }
    Ok(Some(PosttrainExample {
        kind: PosttrainKind::Mlm,
        ids,
        targets,
        label: 0,
    }))
}

fn encode_turns(context: &[Utterance], cand: &Utterance, label: u8, cfg: &ModelConfig) -> Result<EncodedSequence> {
    let ex = DialogueExample {
        context: context.to_vec(),
        candidates: vec![Candidate {
            speaker: cand.speaker,
            tokens: cand.tokens.clone(),
            word_start: cand.word_start.clone(),
            label,
        }],
        task: TaskKind::Pointwise,
    };
    encode_example(&ex, 0, cfg.max_len, cfg.max_utts)
}

fn encode_pair(context: &[Utterance], cand: &Utterance, label: u8, cfg: &ModelConfig) -> Result<Vec<u32>> {
    Ok(valid_ids(&encode_turns(context, cand, label, cfg)?))
}

/// For every turn after the first, one positive pair (prefix, true turn)
/// and one negative with the turn replaced by a different pool utterance.
pub fn sample_nup_pairs<R: Rng>(
    dialogue: &[Utterance],
    pool: &[&Utterance],
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<PosttrainExample>> {
    if dialogue.len() < 2 {
        return Ok(Vec::new());
    }
    let first = pool.first().map(|u| &u.tokens);
    if !pool.iter().any(|u| Some(&u.tokens) != first) {
        return Err(CdnError::Config(
            "next-utterance negatives need at least 2 distinct utterances in the pool".into(),
        ));
    }
    let mut out = Vec::with_capacity(2 * (dialogue.len() - 1));
    for k in 1..dialogue.len() {
        let truth = &dialogue[k];
        out.push(PosttrainExample {
            kind: PosttrainKind::Nup,
            ids: encode_pair(&dialogue[..k], truth, 1, cfg)?,
            targets: Vec::new(),
            label: 1,
        });
        let neg = loop {
            let u = pool[rng.gen_range(0..pool.len())];
            if u.tokens != truth.tokens {
                break u;
            }
        };
        let neg = Utterance { speaker: truth.speaker, ..neg.clone() };
        out.push(PosttrainExample {
            kind: PosttrainKind::Nup,
            ids: encode_pair(&dialogue[..k], &neg, 0, cfg)?,
            targets: Vec::new(),
            label: 0,
        });
    }
    Ok(out)
}

/// One masked-token example per dialogue followed by its next-utterance
/// pairs, all drawn from a single seeded stream. Negatives come from the
/// turns of the whole corpus.
pub fn build_corpus(dialogues: &[Dialogue], policy: &MaskingPolicy, cfg: &ModelConfig, seed: u64) -> Result<Vec<PosttrainExample>> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<&Utterance> = dialogues.iter().flatten().filter(|u| !u.tokens.is_empty()).collect();
    let mut out = Vec::new();
    for d in dialogues {
        let d: Vec<Utterance> = d.iter().filter(|u| !u.tokens.is_empty()).cloned().collect();
        let Some((last, context)) = d.split_last() else {
            continue;
        };
        let seq = encode_turns(context, last, 1, cfg)?;
        if let Some(ex) = apply_mlm_mask(&seq, policy, cfg.vocab_size, &mut rng)? {
            out.push(ex);
        }
        out.extend(sample_nup_pairs(&d, &pool, cfg, &mut rng)?);
    }
    Ok(out)
}

/// Each example's context plus its gold response, as post-training
/// dialogues. Examples without a gold response contribute their context.
pub fn dialogues_from_examples(examples: &[DialogueExample]) -> Vec<Dialogue> {
    examples
        .iter()
        .map(|ex| {
            let mut d = ex.context.clone();
            if let Some(c) = ex.gold().map(|g| &ex.candidates[g]) {
                d.push(Utterance {
                    speaker: c.speaker,
                    tokens: c.tokens.clone(),
                    word_start: c.word_start.clone(),
                });
            }
            d
        })
        .collect()
}

pub fn write_records(examples: &[PosttrainExample]) -> Vec<u8> {
    let mut out = Vec::new();
    for ex in examples {
        let mut body = Vec::with_capacity(10 + 4 * ex.ids.len() + 8 * ex.targets.len());
        body.push(match ex.kind {
            PosttrainKind::Mlm => 0,
            PosttrainKind::Nup => 1,
        });
        body.extend((ex.ids.len() as u32).to_le_bytes());
        ex.ids.iter().for_each(|i| body.extend(i.to_le_bytes()));
        body.extend((ex.targets.len() as u32).to_le_bytes());
        for &(p, id) in &ex.targets {
            body.extend(p.to_le_bytes());
            body.extend(id.to_le_bytes());
        }
        body.push(ex.label);
        out.extend((body.len() as u32).to_le_bytes());
        out.extend(body);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CdnError::Format(format!("record truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_records(buf: &[u8]) -> Result<Vec<PosttrainExample>> {
    let mut outer = Reader { buf, pos: 0 };
    let mut out = Vec::new();
    while outer.pos < buf.len() {
        let len = outer.u32()? as usize;
        let mut r = Reader { buf: outer.take(len)?, pos: 0 };
        let kind = match r.u8()? {
            0 => PosttrainKind::Mlm,
            1 => PosttrainKind::Nup,
            k => return Err(CdnError::Format(format!("unknown record kind {k}"))),
        };
        let n = r.u32()? as usize;
        let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = r.u32()? as usize;
        let targets = (0..n).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<Vec<_>>>()?;
        let label = r.u8()?;
        if r.pos != len {
            return Err(CdnError::Format("record length does not match its contents".into()));
        }
        if ids.first() != Some(&CLS) {
            return Err(CdnError::Format("record does not start with [CLS]".into()));
        }
        out.push(PosttrainExample { kind, ids, targets, label });
    }
    Ok(out)
}

pub fn save_records(path: impl AsRef<Path>, examples: &[PosttrainExample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_records(examples)).map_err(|e| CdnError::io(path, e))
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<PosttrainExample>> {
    let path = path.as_ref();
    read_records(&std::fs::read(path).map_err(|e| CdnError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::loss;
    use crate::numeric::{Tape, Tensor};

    fn flat(n: usize) -> EncodedSequence {
        let mut ids = vec![CLS];
        ids.extend((0..n as u32).map(|i| NUM_SPECIALS + i % 20));
        ids.push(SEP);
        PosttrainExample { kind: PosttrainKind::Mlm, ids, targets: vec![], label: 0 }
            .to_sequence(n + 4)
            .unwrap()
    }

    fn utt(speaker: u8, tokens: &[u32]) -> Utterance {
        Utterance { speaker, tokens: tokens.to_vec(), word_start: vec![true; tokens.len()] }
    }

    fn cfg() -> ModelConfig {
        ModelConfig { vocab_size: 40, max_len: 64, ..ModelConfig::default() }
    }

    #[test]
    fn ceiling_rule_gives_exact_counts() {
        let seq = flat(100);
        for level in MaskLevel::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let ex = apply_mlm_mask(&seq, &MaskingPolicy::with_level(*level), 40, &mut rng).unwrap().unwrap();
            assert_eq!(ex.targets.len(), 15, "{level}");
            assert!(ex.targets.iter().all(|&(p, id)| id >= NUM_SPECIALS && seq.ids[p as usize] == id));
            assert_eq!(ex.ids[0], CLS);
            assert_eq!(*ex.ids.last().unwrap(), SEP);
        }
    }

    #[test]
    fn nothing_to_mask_is_skipped() {
        let seq = flat(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_mlm_mask(&seq, &MaskingPolicy::default(), 40, &mut rng).unwrap().is_none());
    }

    #[test]
    fn unit_spans_are_single_tokens() {
        let s = SpanSampler::new(0.2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| s.sample(&mut rng) == 1));
        let policy = MaskingPolicy { level: MaskLevel::Span, span_max_len: 1, ..MaskingPolicy::default() };
        let ex = apply_mlm_mask(&flat(40), &policy, 40, &mut rng).unwrap().unwrap();
        assert_eq!(ex.targets.len(), 6);
    }

    #[test]
    fn whole_words_are_masked_together() {
        let words: Vec<(u32, bool)> = (0..60u32).map(|i| (NUM_SPECIALS + i, i % 3 == 0)).collect();
        let ex = DialogueExample {
            context: vec![Utterance {
                speaker: 0,
                tokens: words.iter().map(|w| w.0).collect(),
                word_start: words.iter().map(|w| w.1).collect(),
            }],
            candidates: vec![Candidate { speaker: 1, tokens: vec![7, 8], word_start: vec![true, false], label: 1 }],
            task: TaskKind::Pointwise,
        };
        let seq = encode_example(&ex, 0, 80, 20).unwrap();
        let groups = word_groups(&seq);
        assert_eq!(groups.len(), 21);
        let policy = MaskingPolicy::with_level(MaskLevel::WholeWord);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = apply_mlm_mask(&seq, &policy, 40, &mut rng).unwrap().unwrap();
            let masked: Vec<usize> = m.targets.iter().map(|t| t.0 as usize).collect();
            for g in &groups {
                let hit = g.iter().filter(|p| masked.contains(p)).count();
                assert!(hit == 0 || hit == g.len());
            }
        }
    }

    #[test]
    fn replacement_respects_probabilities() {
        let seq = flat(200);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all_mask = MaskingPolicy { replace_probs: [1.0, 0.0, 0.0], ..MaskingPolicy::default() };
        let ex = apply_mlm_mask(&seq, &all_mask, 40, &mut rng).unwrap().unwrap();
        assert!(ex.targets.iter().all(|&(p, _)| ex.ids[p as usize] == MASK));
        let keep = MaskingPolicy { replace_probs: [0.0, 0.0, 1.0], ..MaskingPolicy::default() };
        let ex = apply_mlm_mask(&seq, &keep, 40, &mut rng).unwrap().unwrap();
        assert_eq!(ex.ids, valid_ids(&seq));
        let random = MaskingPolicy { replace_probs: [0.0, 1.0, 0.0], ..MaskingPolicy::default() };
        let ex = apply_mlm_mask(&seq, &random, 40, &mut rng).unwrap().unwrap();
        assert!(ex.targets.iter().all(|&(p, _)| (NUM_SPECIALS..40).contains(&ex.ids[p as usize])));
    }

    #[test]
    fn nup_pairs_per_turn() {
        let d = vec![utt(0, &[5, 6]), utt(1, &[7]), utt(0, &[8, 9])];
        let pool: Vec<&Utterance> = d.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_nup_pairs(&d, &pool, &cfg(), &mut rng).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 2);
        assert_eq!(pairs[0].ids, vec![CLS, 5, 6, SEP, 7, SEP]);
        assert_eq!(pairs[2].ids, vec![CLS, 5, 6, SEP, 7, SEP, 8, 9, SEP]);
        for neg in [&pairs[1], &pairs[3]] {
            assert_eq!(neg.label, 0);
            assert_eq!(*neg.ids.last().unwrap(), SEP);
        }
        assert_ne!(pairs[1].ids, pairs[0].ids);
        assert!(sample_nup_pairs(&d[..1], &pool, &cfg(), &mut rng).unwrap().is_empty());
        let same = [utt(0, &[5]), utt(1, &[5])];
        let pool: Vec<&Utterance> = same.iter().collect();
        assert!(matches!(sample_nup_pairs(&d, &pool, &cfg(), &mut rng), Err(CdnError::Config(_))));
    }

    #[test]
    fn records_round_trip_and_corpus_is_deterministic() {
        let dialogues: Vec<Dialogue> = (0..10u32)
            .map(|i| (0..4u32).map(|k| utt((k % 2) as u8, &[5 + (i + k) % 30, 6 + k])).collect())
            .collect();
        for level in MaskLevel::ALL {
            let policy = MaskingPolicy::with_level(*level);
            let a = build_corpus(&dialogues, &policy, &cfg(), 11).unwrap();
            let b = build_corpus(&dialogues, &policy, &cfg(), 11).unwrap();
            let bytes = write_records(&a);
            assert_eq!(bytes, write_records(&b));
            assert_eq!(read_records(&bytes).unwrap(), a);
            assert_ne!(bytes, write_records(&build_corpus(&dialogues, &policy, &cfg(), 12).unwrap()));
            assert!(matches!(read_records(&bytes[..bytes.len() - 1]), Err(CdnError::Format(_))));
            let labels: Vec<u8> = a.iter().filter(|e| e.kind == PosttrainKind::Nup).map(|e| e.label).collect();
            assert_eq!(labels.iter().filter(|&&l| l == 1).count() * 2, labels.len());
        }
    }

    #[test]
    fn loss_examples() {
        let mut t = Tape::<f64>::new();
        let z = t.constant(Tensor::zeros(&[3, 40]));
        let l = loss::mlm_loss(&mut t, Some(z), &[5, 9, 30]).unwrap();
        assert!((t.item(l) - 40f64.ln()).abs() < 1e-12);
        let none = loss::mlm_loss(&mut t, None, &[]).unwrap();
        assert_eq!(t.item(none), 0.0);
        let p = t.constant(Tensor::scalar(0.5));
        let n = loss::nup_loss(&mut t, p, 1).unwrap();
        assert!((t.item(n) - 2f64.ln()).abs() < 1e-12);
        let a = t.constant(Tensor::scalar(1.0));
        let b = t.constant(Tensor::scalar(2.0));
        let c = loss::combined_loss(&mut t, a, b).unwrap();
        assert_eq!(t.item(c), 3.0);
    }
}
