//! Seeded toy ranking tasks whose answers depend on a specific channel.
//!
//! * `speaker_echo`: every turn is one distinct keyword. The right response
//!   repeats the sender's last keyword; distractors repeat receiver
//!   keywords. Without speaker identity the candidates are indistinguishable.
//! * `utterance_order`: two `marker payload` turns among one-word filler
//!   turns. The right response is the later payload; the earlier payload is
//!   always a distractor, so utterance order is required.
//!
//! Tokens are `w0 … w{V−1}`; `utterance_order` reserves `w0` as the marker.
//! Examples are emitted as multiple-choice JSON lines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::data::{parse_multichoice_json, DialogueExample, TokenizeMode, Vocab};
use crate::error::{CdnError, Result};
use crate::metrics::Group;
use crate::model::keyword_enum;

keyword_enum!(SyntheticTask { SpeakerEcho => "speaker_echo", UtteranceOrder => "utterance_order" });

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub vocab_size: usize,
    pub n_utts: usize,
    pub n_candidates: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            task: SyntheticTask::SpeakerEcho,
            vocab_size: 40,
            n_utts: 6,
            n_candidates: 4,
            n_train: 2000,
            n_dev: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Dev = 1,
}

pub const MARKER: &str = "w0";

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CdnError::Config(m));
        if self.n_candidates < 2 {
            return fail("n_candidates must be ≥ 2".into());
        }
        if self.vocab_size < 20 {
            return fail("vocab_size must be ≥ 20".into());
        }
        let min_utts = match self.task {
            SyntheticTask::SpeakerEcho => 2,
            SyntheticTask::UtteranceOrder => 2,
        };
        if self.n_utts < min_utts {
            return fail(format!("n_utts must be ≥ {min_utts}"));
        }
        if self.n_utts + self.n_candidates + 1 > self.vocab_size {
            return fail("vocab_size too small for n_utts distinct keywords plus distractors".into());
        }
        if self.n_candidates > 26 {
            return fail("at most 26 candidates (answer letters)".into());
        }
        Ok(())
    }

    /// `w0 … w{V−1}` with the usual specials in front.
    pub fn vocab(&self) -> Vocab {
        Vocab::from_tokens((0..self.vocab_size).map(|i| format!("w{i}"))).expect("distinct tokens")
    }

    fn rng(&self, split: Split) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split as u64);
        rng
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
        }
    }

    /// Records for one split, in generation order.
    pub fn records(&self, split: Split) -> Result<Vec<Value>> {
        self.validate()?;
        let mut rng = self.rng(split);
        (0..self.len(split))
            .map(|i| {
                let id = format!("{}-{}-{i}", self.task, if split == Split::Train { "train" } else { "dev" });
                Ok(match self.task {
                    SyntheticTask::SpeakerEcho => speaker_echo(self, &mut rng, id),
                    SyntheticTask::UtteranceOrder => utterance_order(self, &mut rng, id),
                })
            })
            .collect()
    }

    /// One JSON record per line.
    pub fn jsonl(&self, split: Split) -> Result<String> {
        let mut out = String::new();
        for r in self.records(split)? {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        Ok(out)
    }

    /// The split as tokenised examples, read back through the
    /// multiple-choice loader.
    pub fn examples(&self, split: Split) -> Result<Vec<DialogueExample>> {
        let vocab = self.vocab();
        parse_multichoice_json(&self.jsonl(split)?)?
            .iter()
            .map(|r| r.tokenize(&vocab, TokenizeMode::Word))
            .collect()
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn record(id: String, turns: &[(char, String)], mut options: Vec<String>, positive: &str, rng: &mut ChaCha8Rng, tag: char) -> Value {
    options.shuffle(rng);
    let gold = options.iter().position(|o| o == positive).expect("positive among options");
    let article = turns
        .iter()
        .map(|(s, t)| format!("{s} : {t}"))
        .collect::<Vec<_>>()
        .join(" ");
    json!({
        "id": id,
        "article": article,
        "options": options.iter().map(|o| format!("{tag} : {o}")).collect::<Vec<_>>(),
        "answers": ((b'A' + gold as u8) as char).to_string(),
    })
}

/// Tokens from `pool` not in `used`, drawn without replacement.
fn fresh(rng: &mut ChaCha8Rng, pool: std::ops::Range<usize>, used: &[usize], n: usize) -> Vec<usize> {
    let mut free: Vec<usize> = pool.filter(|t| !used.contains(t)).collect();
    free.shuffle(rng);
    free.truncate(n);
    free
}

fn speaker_echo(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, id: String) -> Value {
    let n = spec.n_utts;
    let keywords = fresh(rng, 0..spec.vocab_size, &[], n);
    let mut sender = vec![false; n];
    sender[0] = true;
    for s in sender.iter_mut().take(n - 1).skip(1) {
        *s = rng.gen_bool(0.5);
    }
    let turns: Vec<(char, String)> = (0..n)
        .map(|i| (if sender[i] { 'f' } else { 'm' }, word(keywords[i])))
        .collect();
    let last_sender = (0..n).rev().find(|&i| sender[i]).expect("turn 0 is the sender");
    let positive = keywords[last_sender];
    let mut receivers: Vec<usize> = (0..n).filter(|&i| !sender[i]).map(|i| keywords[i]).collect();
    receivers.shuffle(rng);
    receivers.truncate(spec.n_candidates - 1);
    let missing = spec.n_candidates - 1 - receivers.len();
    receivers.extend(fresh(rng, 0..spec.vocab_size, &keywords, missing));
    let mut options = vec![word(positive)];
    options.extend(receivers.into_iter().map(word));
    record(id, &turns, options, &word(positive), rng, 'f')
}

fn utterance_order(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, id: String) -> Value {
    let n = spec.n_utts;
    let tokens = fresh(rng, 1..spec.vocab_size, &[], n);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    let (a, b) = (slots[0].min(slots[1]), slots[0].max(slots[1]));
    let turns: Vec<(char, String)> = (0..n)
        .map(|i| {
            let speaker = if i % 2 == 0 { 'f' } else { 'm' };
            let text = if i == a || i == b {
                format!("{MARKER} {}", word(tokens[i]))
            } else {
                word(tokens[i])
            };
            (speaker, text)
        })
        .collect();
    let mut fillers: Vec<usize> = (0..n).filter(|&i| i != a && i != b).map(|i| tokens[i]).collect();
    fillers.shuffle(rng);
    fillers.truncate(spec.n_candidates - 2);
    let missing = spec.n_candidates - 2 - fillers.len();
    fillers.extend(fresh(rng, 1..spec.vocab_size, &tokens, missing));
    let mut options = vec![word(tokens[b]), word(tokens[a])];
    options.extend(fillers.into_iter().map(word));
    let tag = if n % 2 == 0 { 'f' } else { 'm' };
    record(id, &turns, options, &word(tokens[b]), rng, tag)
}

/// Speaker-blind baseline: how many context tokens each candidate's tokens
/// match.
pub fn bag_of_tokens_scores(ex: &DialogueExample) -> Vec<f64> {
    ex.candidates
        .iter()
        .map(|c| {
            c.tokens
                .iter()
                .map(|t| ex.context.iter().flat_map(|u| &u.tokens).filter(|&u| u == t).count())
                .sum::<usize>() as f64
        })
        .collect()
}

/// Position-blind baseline: how many marker turns (turns whose first token
/// is `marker`) contain the candidate's tokens. Depends on the context only
/// as an unordered bag of turns.
pub fn marker_bag_scores(ex: &DialogueExample, marker: u32) -> Vec<f64> {
    ex.candidates
        .iter()
        .map(|c| {
            ex.context
                .iter()
                .filter(|u| u.tokens.first() == Some(&marker))
                .filter(|u| c.tokens.iter().all(|t| u.tokens[1..].contains(t)))
                .count() as f64
        })
        .collect()
}

/// R@1 with ties among the top score shared evenly: a positive tied with
/// `m − 1` others at the top counts `1/m`.
pub fn tie_averaged_r1(groups: &[Group]) -> f64 {
    let total: f64 = groups
        .iter()
        .map(|g| {
            let best = g.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let top: Vec<usize> = (0..g.len()).filter(|&i| g.scores[i] == best).collect();
            let hits = top.iter().filter(|&&i| g.labels[i] == 1).count();
            hits as f64 / top.len() as f64
        })
        .sum();
    total / groups.len().max(1) as f64
}
