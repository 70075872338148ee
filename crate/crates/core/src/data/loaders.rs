use std::path::Path;

use serde_json::Value;

use crate::error::{CdnError, Result};

use super::example::{DialogueExample, RawCandidate, RawExample, RawUtterance, TaskKind};
use super::vocab::{TokenizeMode, Vocab};

#[derive(Clone, Copy, Debug)]
pub struct PointwiseOptions {
    pub group_size: usize,
    /// Drop groups whose candidates are all negative or all positive.
    pub filter_degenerate: bool,
}

impl Default for PointwiseOptions {
    fn default() -> Self {
        PointwiseOptions {
            group_size: 10,
            filter_degenerate: false,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CdnError::io(path, e))
}

/// `label \t utt₁ \t … \t response` lines, `group_size` consecutive lines
/// per context.
pub fn parse_pointwise_tsv(text: &str, opts: PointwiseOptions) -> Result<Vec<Vec<RawExample>>> {
    if opts.group_size == 0 {
        return Err(CdnError::Config("group_size must be ≥ 1".into()));
    }
    let mut groups = Vec::new();
    let mut group = Vec::with_capacity(opts.group_size);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(CdnError::Format(format!(
                "line {}: expected ≥ 3 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label = match fields[0].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(CdnError::Format(format!(
                    "line {}: label {other:?} not in {{0,1}}",
                    lineno + 1
                )))
            }
        };
        let (resp, ctx) = fields[1..].split_last().expect("≥ 2 fields");
        group.push(RawExample {
            context: ctx
                .iter()
                .map(|t| RawUtterance {
                    tag: None,
                    text: t.to_string(),
                })
                .collect(),
            candidates: vec![RawCandidate {
                tag: None,
                text: resp.to_string(),
                label,
            }],
            task: TaskKind::Pointwise,
        });
        if group.len() == opts.group_size {
            let positives: usize = group.iter().map(|e| e.candidates[0].label as usize).sum();
            let degenerate = positives == 0 || positives == group.len();
            if !(opts.filter_degenerate && degenerate) {
                groups.push(std::mem::take(&mut group));
            } else {
                group.clear();
            }
        }
    }
    if !group.is_empty() {
        return Err(CdnError::Format(format!(
            "ragged final group: {} lines for group size {}",
            group.len(),
            opts.group_size
        )));
    }
    Ok(groups)
}

pub fn load_pointwise_tsv(path: impl AsRef<Path>, opts: PointwiseOptions) -> Result<Vec<Vec<RawExample>>> {
    parse_pointwise_tsv(&read(path.as_ref())?, opts)
}

fn is_tag(word: &str) -> bool {
    let mut c = word.chars();
    matches!((c.next(), c.next()), (Some(ch), None) if ch.is_ascii_alphabetic())
}

/// Splits a leading `"x :"` speaker prefix off `text`.
pub fn split_speaker_prefix(text: &str) -> (Option<String>, String) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() >= 2 && is_tag(words[0]) && words[1] == ":" {
        (Some(words[0].to_lowercase()), words[2..].join(" "))
    } else {
        (None, words.join(" "))
    }
}

/// Splits `"f : hi m : yo"` into tagged turns. Text before the first tag
/// (or the whole article when there is none) forms one untagged turn.
pub fn split_tagged_article(article: &str) -> Vec<RawUtterance> {
    let words: Vec<&str> = article.split_whitespace().collect();
    let mut turns: Vec<RawUtterance> = Vec::new();
    let mut current: Option<(Option<String>, Vec<&str>)> = None;
    let mut i = 0;
    while i < words.len() {
        if i + 1 < words.len() && is_tag(words[i]) && words[i + 1] == ":" {
            if let Some((tag, w)) = current.take() {
                if !w.is_empty() {
                    turns.push(RawUtterance { tag, text: w.join(" ") });
                }
            }
            current = Some((Some(words[i].to_lowercase()), Vec::new()));
            i += 2;
            continue;
        }
        current.get_or_insert((None, Vec::new())).1.push(words[i]);
        i += 1;
    }
    if let Some((tag, w)) = current {
        if !w.is_empty() {
            turns.push(RawUtterance { tag, text: w.join(" ") });
        }
    }
    turns
}

fn record(v: &Value, n: usize) -> Result<RawExample> {
    let ctx = |m: &str| CdnError::Format(format!("record {n}: {m}"));
    let article = v
        .get("article")
        .and_then(Value::as_str)
        .ok_or_else(|| ctx("missing string field `article`"))?;
    let options = v
        .get("options")
        .and_then(Value::as_array)
        .ok_or_else(|| ctx("missing array field `options`"))?;
    if options.len() < 2 {
        return Err(ctx("fewer than 2 options"));
    }
    let answer = v
        .get("answers")
        .and_then(Value::as_str)
        .ok_or_else(|| ctx("missing string field `answers`"))?
        .trim();
    let gold = match answer.as_bytes() {
        [c @ b'A'..=b'Z'] if ((c - b'A') as usize) < options.len() => (c - b'A') as usize,
        _ => return Err(ctx(&format!("answer {answer:?} does not name one of {} options", options.len()))),
    };
    let candidates = options
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let text = o.as_str().ok_or_else(|| ctx("non-string option"))?;
            let (tag, text) = split_speaker_prefix(text);
            Ok(RawCandidate {
                tag,
                text,
                label: (i == gold) as u8,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RawExample {
        context: split_tagged_article(article),
        candidates,
        task: TaskKind::Multichoice,
    })
}

/// Records with `article`, `options` and `answers` fields, given as one
/// JSON value, a JSON array, or one value per line.
pub fn parse_multichoice_json(text: &str) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for value in serde_json::Deserializer::from_str(text).into_iter::<Value>() {
        let value = value.map_err(|e| CdnError::Format(format!("invalid JSON: {e}")))?;
        match value {
            Value::Array(items) => {
                for item in &items {
                    out.push(record(item, out.len())?);
                }
            }
            v => out.push(record(&v, out.len())?),
        }
    }
    Ok(out)
}

/// A file, or a directory whose files are read in name order.
pub fn load_multichoice_json(path: impl AsRef<Path>) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| CdnError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut out = Vec::new();
        for p in entries {
            out.extend(parse_multichoice_json(&read(&p)?)?);
        }
        Ok(out)
    } else {
        parse_multichoice_json(&read(path)?)
    }
}

/// Tokenises every example of every group.
pub fn tokenize_groups(groups: &[Vec<RawExample>], vocab: &Vocab, mode: TokenizeMode) -> Result<Vec<Vec<DialogueExample>>> {
    groups
        .iter()
        .map(|g| g.iter().map(|e| e.tokenize(vocab, mode)).collect())
        .collect()
}
