use std::collections::VecDeque;

use crate::error::{CdnError, Result};

use super::example::{Candidate, DialogueExample, TaskKind, Utterance};
use super::vocab::{CLS, PAD, SEP};

pub const DEFAULT_MAX_UTTS: usize = 20;

/// `[CLS] u₁ [SEP] u₂ [SEP] … response [SEP]` padded to a fixed length,
/// with per-token utterance index `utt`, speaker role and pad flags.
///
/// [CLS] belongs to utterance 0; every [SEP] belongs to the segment it
/// closes. Pads carry `utt = 0`, `speaker = 0`, `valid = false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub utt: Vec<usize>,
    pub speaker: Vec<u8>,
    pub valid: Vec<bool>,
    pub word_start: Vec<bool>,
    /// Segment count including the response.
    pub n_utts: usize,
}

/// Content of one segment, without its [CLS]/[SEP] markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub speaker: u8,
    pub ids: Vec<u32>,
    pub word_start: Vec<bool>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut segs: Vec<Segment> = (0..self.n_utts)
            .map(|_| Segment {
                speaker: 0,
                ids: Vec::new(),
                word_start: Vec::new(),
            })
            .collect();
        for i in 0..self.len() {
            if !self.valid[i] {
                continue;
            }
            let s = &mut segs[self.utt[i]];
            s.speaker = self.speaker[i];
            if self.ids[i] != CLS && self.ids[i] != SEP || i > 0 && self.ids[i] == CLS {
                s.ids.push(self.ids[i]);
                s.word_start.push(self.word_start[i]);
            }
        }
        segs
    }

    /// The single-candidate example this sequence encodes; re-encoding it at
    /// the same length reproduces `self`.
    pub fn to_example(&self) -> DialogueExample {
        let mut segs = self.segments();
        let resp = segs.pop().expect("at least one segment");
        DialogueExample {
            context: segs
                .into_iter()
                .map(|s| Utterance {
                    speaker: s.speaker,
                    tokens: s.ids,
                    word_start: s.word_start,
                })
                .collect(),
            candidates: vec![Candidate {
                speaker: resp.speaker,
                tokens: resp.ids,
                word_start: resp.word_start,
                label: 1,
            }],
            task: TaskKind::Pointwise,
        }
    }

    /// Checks the layout invariants, reporting the first violation.
    pub fn check(&self) -> Result<()> {
        let l = self.len();
        let bad = |m: String| Err(CdnError::Contract(m));
        if [self.utt.len(), self.speaker.len(), self.valid.len(), self.word_start.len()]
            .iter()
            .any(|&n| n != l)
        {
            return bad("field lengths differ".into());
        }
        let nv = self.n_valid();
        if self.valid[..nv].iter().any(|v| !v) {
            return bad("valid positions are not a prefix".into());
        }
        if nv < 3 || self.ids[0] != CLS || self.utt[0] != 0 {
            return bad("sequence must open with [CLS] in utterance 0".into());
        }
        for i in 0..nv {
            if self.speaker[i] > 1 {
                return bad(format!("speaker {} at {i}", self.speaker[i]));
            }
            let last_of_seg = i + 1 == nv || self.utt[i + 1] != self.utt[i];
            if i + 1 < nv && self.utt[i + 1] != self.utt[i] && self.utt[i + 1] != self.utt[i] + 1 {
                return bad(format!("utterance index jumps at {i}"));
            }
            if (self.ids[i] == SEP) != last_of_seg {
                return bad(format!("[SEP] misplaced at {i}"));
            }
            if i > 0 && !last_of_seg && self.speaker[i + 1] != self.speaker[i] {
                return bad(format!("speaker changes inside utterance at {i}"));
            }
        }
        if self.utt[nv - 1] + 1 != self.n_utts {
            return bad("n_utts disagrees with the last utterance index".into());
        }
        for i in nv..l {
            if self.ids[i] != PAD || self.utt[i] != 0 || self.speaker[i] != 0 {
                return bad(format!("padding at {i} is not inert"));
            }
        }
        Ok(())
    }
}

/// Trims one token at a time until `ctx.len() + resp.len() ≤ budget`: from
/// the front of the context while it is at least as long as the response,
/// otherwise from the back of the response.
pub fn truncate_longest_first<T: Clone>(ctx: &[T], resp: &[T], budget: usize) -> (Vec<T>, Vec<T>) {
    let (mut start, mut end) = (0, resp.len());
    while ctx.len() - start + end > budget {
        if ctx.len() - start >= end && start < ctx.len() {
            start += 1;
        } else {
            end -= 1;
        }
    }
    (ctx[start..].to_vec(), resp[..end].to_vec())
}

struct Turn {
    speaker: u8,
    ids: VecDeque<u32>,
    word_start: VecDeque<bool>,
}

/// Encode candidate `cand_idx` of `ex` with its context.
///
/// Only the last `max_utts` context turns are kept; the rest is trimmed
/// longest-first (one [SEP] is saved whenever a context turn empties).
pub fn encode_example(
    ex: &DialogueExample,
    cand_idx: usize,
    max_len: usize,
    max_utts: usize,
) -> Result<EncodedSequence> {
    let cand = ex.candidates.get(cand_idx).ok_or_else(|| {
        CdnError::Contract(format!(
            "candidate {cand_idx} of {}",
            ex.candidates.len()
        ))
    })?;
    if max_len < 4 {
        return Err(CdnError::Contract(format!("max_len {max_len} < 4")));
    }
    let keep = ex.context.len().saturating_sub(max_utts);
    let mut turns: VecDeque<Turn> = ex.context[keep..]
        .iter()
        .filter(|u| !u.tokens.is_empty())
        .map(|u| Turn {
            speaker: u.speaker,
            ids: u.tokens.iter().copied().collect(),
            word_start: u.word_start.iter().copied().collect(),
        })
        .collect();
    let mut ctx_len: usize = turns.iter().map(|t| t.ids.len()).sum();
    let mut resp_len = cand.tokens.len();
    while 2 + turns.len() + ctx_len + resp_len > max_len {
        if ctx_len >= resp_len && ctx_len > 0 {
            let front = turns.front_mut().expect("non-empty context");
            front.ids.pop_front();
            front.word_start.pop_front();
            if let Some(w) = front.word_start.front_mut() {
                *w = true;
            }
            if front.ids.is_empty() {
                turns.pop_front();
            }
            ctx_len -= 1;
        } else {
            resp_len -= 1;
        }
    }
    if resp_len == 0 {
        return Err(CdnError::MalformedExample(
            "response empty after truncation".into(),
        ));
    }

    let mut seq = EncodedSequence {
        ids: Vec::with_capacity(max_len),
        utt: Vec::with_capacity(max_len),
        speaker: Vec::with_capacity(max_len),
        valid: Vec::with_capacity(max_len),
        word_start: Vec::with_capacity(max_len),
        n_utts: turns.len() + 1,
    };
    let mut push = |id: u32, t: usize, s: u8, w: bool| {
        seq.ids.push(id);
        seq.utt.push(t);
        seq.speaker.push(s);
        seq.valid.push(true);
        seq.word_start.push(w);
    };
    let first_speaker = turns.front().map_or(cand.speaker, |t| t.speaker);
    push(CLS, 0, first_speaker, false);
    for (i, turn) in turns.iter().enumerate() {
        for (&id, &w) in turn.ids.iter().zip(&turn.word_start) {
            push(id, i, turn.speaker, w);
        }
        push(SEP, i, turn.speaker, false);
    }
    let r = turns.len();
    for (&id, &w) in cand.tokens[..resp_len].iter().zip(&cand.word_start) {
        push(id, r, cand.speaker, w);
    }
    push(SEP, r, cand.speaker, false);
    while seq.ids.len() < max_len {
        seq.ids.push(PAD);
        seq.utt.push(0);
        seq.speaker.push(0);
        seq.valid.push(false);
        seq.word_start.push(false);
    }
    Ok(seq)
}
