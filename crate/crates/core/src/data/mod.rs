//! Vocabulary, tokenisation, dialogue examples, sequence encoding and the
//! two corpus formats (pointwise TSV, multiple-choice JSON).

mod encode;
mod example;
mod loaders;
mod vocab;

pub use encode::{encode_example, truncate_longest_first, EncodedSequence, DEFAULT_MAX_UTTS};
pub use example::{
    assign_speakers, Candidate, DialogueExample, RawCandidate, RawExample, RawUtterance, TaskKind,
    Utterance,
};
pub use loaders::{
    load_multichoice_json, load_pointwise_tsv, parse_multichoice_json, parse_pointwise_tsv,
    split_speaker_prefix, split_tagged_article, tokenize_groups, PointwiseOptions,
};
pub use vocab::{TokenizeMode, Tokenized, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SEP, SPECIAL_TOKENS, UNK};
