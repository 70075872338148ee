use std::fmt;
use std::str::FromStr;

use crate::error::{CdnError, Result};

use super::vocab::{TokenizeMode, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Pointwise,
    Multichoice,
}

impl FromStr for TaskKind {
    type Err = CdnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(TaskKind::Pointwise),
            "multichoice" => Ok(TaskKind::Multichoice),
            _ => Err(CdnError::Config(format!("unknown task kind {s:?}"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Pointwise => "pointwise",
            TaskKind::Multichoice => "multichoice",
        })
    }
}

/// One context turn before tokenisation. `tag` is an explicit speaker label
/// such as `"f"` or `"m"`, when the corpus provides one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawUtterance {
    pub tag: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCandidate {
    pub tag: Option<String>,
    pub text: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub context: Vec<RawUtterance>,
    pub candidates: Vec<RawCandidate>,
    pub task: TaskKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    /// 0 = sender, 1 = receiver.
    pub speaker: u8,
    pub tokens: Vec<u32>,
    pub word_start: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub speaker: u8,
    pub tokens: Vec<u32>,
    pub word_start: Vec<bool>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueExample {
    pub context: Vec<Utterance>,
    pub candidates: Vec<Candidate>,
    pub task: TaskKind,
}

impl DialogueExample {
    /// Checks the candidate-count and label contracts of `task`.
    pub fn validate(&self) -> Result<()> {
        let positives = self.candidates.iter().filter(|c| c.label == 1).count();
        if let Some(c) = self.candidates.iter().find(|c| c.label > 1) {
            return Err(CdnError::MalformedExample(format!("label {} not in {{0,1}}", c.label)));
        }
        match self.task {
            TaskKind::Pointwise if self.candidates.len() != 1 => Err(CdnError::MalformedExample(
                format!("pointwise example with {} candidates", self.candidates.len()),
            )),
            TaskKind::Multichoice if self.candidates.len() < 2 || positives != 1 => {
                Err(CdnError::MalformedExample(format!(
                    "multichoice example with {} candidates and {} positives",
                    self.candidates.len(),
                    positives
                )))
            }
            _ => {
                if self.context.iter().any(|u| u.tokens.is_empty() || u.speaker > 1) {
                    return Err(CdnError::MalformedExample("empty utterance or bad speaker".into()));
                }
                Ok(())
            }
        }
    }

    /// Index of the positive candidate (multichoice).
    pub fn gold(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.label == 1)
    }
}

/// Maps up to two distinct speaker tags to roles in order of first
/// appearance.
#[derive(Default)]
struct TagMap {
    tags: Vec<String>,
}

impl TagMap {
    fn role(&mut self, tag: &str) -> Result<u8> {
        let tag = tag.to_lowercase();
        if let Some(i) = self.tags.iter().position(|t| *t == tag) {
            return Ok(i as u8);
        }
        if self.tags.len() == 2 {
            return Err(CdnError::UnsupportedDialogue(format!(
                "third speaker tag {tag:?} after {:?}",
                self.tags
            )));
        }
        self.tags.push(tag);
        Ok(self.tags.len() as u8 - 1)
    }
}

/// Speaker roles for the context turns and for the response.
///
/// Tags, when present, map to roles by first appearance. Untagged contexts
/// alternate from 0. An untagged response takes the role opposite to the
/// last context turn (0 after an empty context). Mixing tagged and untagged
/// context turns is rejected.
pub fn assign_speakers(context_tags: &[Option<&str>], response_tag: Option<&str>) -> Result<(Vec<u8>, u8)> {
    let tagged = context_tags.iter().filter(|t| t.is_some()).count();
    if tagged != 0 && tagged != context_tags.len() {
        return Err(CdnError::UnsupportedDialogue(
            "context mixes tagged and untagged utterances".into(),
        ));
    }
    let mut map = TagMap::default();
    let roles: Vec<u8> = if tagged == 0 {
        (0..context_tags.len()).map(|i| (i % 2) as u8).collect()
    } else {
        context_tags
            .iter()
            .map(|t| map.role(t.expect("all tagged")))
            .collect::<Result<_>>()?
    };
    let response = match response_tag {
        Some(t) if tagged > 0 || context_tags.is_empty() => map.role(t)?,
        _ => roles.last().map_or(0, |&r| 1 - r),
    };
    Ok((roles, response))
}

impl RawExample {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.context
            .iter()
            .map(|u| u.text.as_str())
            .chain(self.candidates.iter().map(|c| c.text.as_str()))
    }

    /// Tokenises every turn and resolves speakers. Context turns that
    /// tokenise to nothing are dropped; an empty candidate is an error.
    pub fn tokenize(&self, vocab: &Vocab, mode: TokenizeMode) -> Result<DialogueExample> {
        let mut ctx = Vec::new();
        let mut tags = Vec::new();
        for u in &self.context {
            let t = vocab.tokenize(&u.text, mode);
            if !t.ids.is_empty() {
                tags.push(u.tag.as_deref());
                ctx.push(t);
            }
        }
        let mut roles = Vec::new();
        let mut candidates = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            let (r, speaker) = assign_speakers(&tags, c.tag.as_deref())?;
            roles = r;
            let t = vocab.tokenize(&c.text, mode);
            if t.ids.is_empty() {
                return Err(CdnError::MalformedExample("empty candidate response".into()));
            }
            candidates.push(Candidate {
                speaker,
                tokens: t.ids,
                word_start: t.word_start,
                label: c.label,
            });
        }
        if self.candidates.is_empty() {
            roles = assign_speakers(&tags, None)?.0;
        }
        let context = ctx
            .into_iter()
            .zip(roles)
            .map(|(t, speaker)| Utterance {
                speaker,
                tokens: t.ids,
                word_start: t.word_start,
            })
            .collect();
        let ex = DialogueExample {
            context,
            candidates,
            task: self.task,
        };
        ex.validate()?;
        Ok(ex)
    }
}
