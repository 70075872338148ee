//! The four channel masks: same utterance (M1), other utterances (M2),
//! same speaker (M3), other speaker (M4). A pair touching a pad position is
//! disallowed in every mask.

use std::fmt;
use std::sync::Arc;

use crate::data::EncodedSequence;

/// Additive stand-in for −∞.
pub const LARGE: f32 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    SameUtterance = 0,
    OtherUtterance = 1,
    SameSpeaker = 2,
    OtherSpeaker = 3,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::SameUtterance,
        Channel::OtherUtterance,
        Channel::SameSpeaker,
        Channel::OtherSpeaker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::SameUtterance => "M1 same-utterance",
            Channel::OtherUtterance => "M2 other-utterance",
            Channel::SameSpeaker => "M3 same-speaker",
            Channel::OtherSpeaker => "M4 other-speaker",
        }
    }
}

/// Four row-major `l × l` boolean masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMaskSet {
    len: usize,
    allowed: [Arc<[bool]>; 4],
    pairs: Arc<[bool]>,
}

impl ChannelMaskSet {
    pub fn build(seq: &EncodedSequence) -> Self {
        let l = seq.len();
        let mut m: [Vec<bool>; 4] = std::array::from_fn(|_| vec![false; l * l]);
        let mut pairs = vec![false; l * l];
        for i in 0..l {
            if !seq.valid[i] {
                continue;
            }
            for j in 0..l {
                if !seq.valid[j] {
                    continue;
                }
                pairs[i * l + j] = true;
                let same_u = seq.utt[i] == seq.utt[j];
                let same_s = seq.speaker[i] == seq.speaker[j];
                m[0][i * l + j] = same_u;
                m[1][i * l + j] = !same_u;
                m[2][i * l + j] = same_s;
                m[3][i * l + j] = !same_s;
            }
        }
        ChannelMaskSet {
            len: l,
            allowed: m.map(Arc::from),
            pairs: Arc::from(pairs),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, ch: Channel) -> &Arc<[bool]> {
        &self.allowed[ch.index()]
    }

    /// Every pair of valid positions: the encoder's own attention mask.
    pub fn valid_pairs(&self) -> &Arc<[bool]> {
        &self.pairs
    }

    pub fn allowed(&self, ch: Channel, i: usize, j: usize) -> bool {
        self.allowed[ch.index()][i * self.len + j]
    }

    pub fn row(&self, ch: Channel, i: usize) -> &[bool] {
        &self.get(ch)[i * self.len..(i + 1) * self.len]
    }

    pub fn additive(&self, ch: Channel) -> Vec<f32> {
        additive_form(self.get(ch))
    }

    /// One line of `0`/`1` characters per row.
    pub fn render(&self, ch: Channel) -> String {
        let mut out = String::with_capacity(self.len * (self.len + 1));
        for i in 0..self.len {
            out.extend(self.row(ch, i).iter().map(|&b| if b { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ChannelMaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, ch) in Channel::ALL.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            writeln!(f, "{}", ch.name())?;
            f.write_str(&self.render(*ch))?;
        }
        Ok(())
    }
}

/// `0` where allowed, `−1e9` elsewhere.
pub fn additive_form(mask: &[bool]) -> Vec<f32> {
    mask.iter().map(|&b| if b { 0.0 } else { -LARGE }).collect()
}
