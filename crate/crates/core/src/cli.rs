//! The `cdn` command-line front end.
//!
//! Every subcommand takes its settings from an optional `--config` file of
//! `key = value` lines and from flags (`--max-len 64` sets `max_len`); flags
//! win. Runs that write outputs also write `config.txt`, the fully resolved
//! settings, so `cdn <cmd> --config out/config.txt` repeats the run.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::data::{
    encode_example, load_multichoice_json, load_pointwise_tsv, DialogueExample, EncodedSequence, PointwiseOptions,
    RawExample, TaskKind, TokenizeMode, Vocab,
};
use crate::error::{CdnError, Result};
use crate::masks::{Channel, ChannelMaskSet};
use crate::metrics::{Group, Metric, RankedRun};
use crate::model::{parse_kv, CdnModel, ModelConfig};
use crate::posttrain::{build_corpus, dialogues_from_examples, save_records, MaskLevel, MaskingPolicy};
use crate::synthetic::{Split, SyntheticSpec};
use crate::train::{evaluate, TrainConfig, TrainTask};

/// Why a command failed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(CdnError),
}

impl From<CdnError> for Failure {
    fn from(e: CdnError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Settings keys that are boolean switches on the command line.
const SWITCHES: &[&str] = &["filter"];

struct Spec {
    name: &'static str,
    about: &'static str,
    keys: Vec<(&'static str, &'static str)>,
}

fn model_and_train_keys() -> Vec<(&'static str, &'static str)> {
    let mut keys: Vec<(&str, &str)> = ModelConfig::KEYS.iter().map(|&k| (k, "model setting")).collect();
    keys.extend(TrainConfig::KEYS.iter().map(|&k| (k, "training setting")));
    keys
}

fn specs() -> Vec<Spec> {
    let corpus = [
        ("data", "training corpus: .tsv (pointwise) or .json/.jsonl/directory (multiple choice)"),
        ("vocab", "vocabulary file (built from the data and saved when absent)"),
        ("vocab_min_freq", "minimum word count when building the vocabulary"),
        ("tokenize", "word or subword"),
        ("group_size", "lines per context in pointwise files"),
        ("out", "output directory"),
        ("init_checkpoint", "start from this checkpoint instead of a fresh model"),
        ("preset", "desk (small models from scratch) or reference (large-scale batch size and lr)"),
    ];
    let mut train_keys: Vec<(&str, &str)> = corpus.to_vec();
    train_keys.extend([("dev", "validation corpus, same format as --data"), ("filter", "leave out dev groups without positives")]);
    train_keys.extend(model_and_train_keys());
    let mut post_keys: Vec<(&str, &str)> = corpus.to_vec();
    post_keys.extend([
        ("level", "subword, whole_word or span"),
        ("mask_ratio", "fraction of maskable tokens to mask"),
        ("span_p", "geometric parameter of span lengths"),
        ("span_max_len", "longest span"),
    ]);
    post_keys.extend(model_and_train_keys());
    vec![
        Spec { name: "train", about: "Fine-tune a matching model", keys: train_keys },
        Spec { name: "posttrain", about: "Post-train the encoder with masked-token and next-utterance objectives", keys: post_keys },
        Spec {
            name: "eval",
            about: "Ranking metrics of a scored file or of a checkpoint on a corpus",
            keys: vec![
                ("run", "label<TAB>score file"),
                ("group_size", "candidates per context"),
                ("filter", "leave out groups without positives"),
                ("checkpoint", "model checkpoint"),
                ("data", "corpus to score"),
                ("vocab", "vocabulary file"),
                ("tokenize", "word or subword"),
                ("task", "pointwise or multichoice (default: from the file name)"),
                ("out", "write scores.tsv, metrics.txt and config.txt here"),
            ],
        },
        Spec {
            name: "gen-synthetic",
            about: "Write a seeded synthetic corpus (train.jsonl, dev.jsonl, vocab.txt)",
            keys: vec![
                ("task", "speaker_echo or utterance_order"),
                ("seed", "random seed"),
                ("out", "output directory"),
                ("vocab_size", "number of distinct words"),
                ("n_utts", "turns per dialogue"),
                ("n_candidates", "candidates per example"),
                ("n_train", "training examples"),
                ("n_dev", "validation examples"),
            ],
        },
        Spec {
            name: "dump-masks",
            about: "Print the four channel masks (and attention with --checkpoint) as text",
            keys: vec![
                ("data", "corpus file"),
                ("example", "example index"),
                ("candidate", "candidate index"),
                ("vocab", "vocabulary file"),
                ("tokenize", "word or subword"),
                ("group_size", "lines per context in pointwise files"),
                ("max_len", "sequence length limit"),
                ("utterances", "explicit layout: comma-separated utterance index per token"),
                ("speakers", "explicit layout: comma-separated speaker per token"),
                ("checkpoint", "also print attention weights of this model"),
            ],
        },
        Spec {
            name: "inspect-checkpoint",
            about: "Print a checkpoint's configuration and parameter shapes",
            keys: vec![("checkpoint", "model checkpoint")],
        },
    ]
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Command::new("cdn")
        .about("Channel-aware decoupling network for dialogue response selection")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in specs() {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings file; flags override it"),
        );
        let mut seen = std::collections::HashSet::new();
        for (key, help) in spec.keys {
            if !seen.insert(key) {
                continue;
            }
            let arg = Arg::new(key).long(flag(key)).help(help);
            sub = sub.arg(if SWITCHES.contains(&key) {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE")
            });
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Merged settings of one invocation.
#[derive(Clone, Debug, Default)]
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn gather(name: &str, m: &ArgMatches) -> CliResult<Self> {
        let keys: Vec<&str> = specs()
            .into_iter()
            .find(|s| s.name == name)
            .expect("known subcommand")
            .keys
            .into_iter()
            .map(|k| k.0)
            .collect();
        let mut s = Settings::default();
        if let Some(path) = m.get_one::<String>("config") {
            let text = std::fs::read_to_string(path).map_err(|e| CdnError::io(path, e))?;
            for (k, v) in parse_kv(&text)? {
                if !keys.contains(&k.as_str()) {
                    return usage(format!("{path}: unknown key {k:?} for `{name}`"));
                }
                s.values.insert(k, v);
            }
        }
        for key in keys {
            if SWITCHES.contains(&key) {
                if m.get_flag(key) {
                    s.values.insert(key.into(), "true".into());
                }
            } else if let Some(v) = m.get_one::<String>(key) {
                s.values.insert(key.into(), v.clone());
            }
        }
        Ok(s)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .map_or_else(|| usage(format!("missing --{}", flag(key))), Ok)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::Usage(format!("bad value {v:?} for --{}", flag(key)))),
        }
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        self.parse(key, false)
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.into(), value.to_string());
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn write_to(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("config.txt"), self.to_text().as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CdnError::io(path, e))
}

fn out_dir(s: &Settings) -> CliResult<PathBuf> {
    let dir = PathBuf::from(s.require("out")?);
    std::fs::create_dir_all(&dir).map_err(|e| CdnError::io(&dir, e))?;
    Ok(dir)
}

/// Run `cdn` with `args` (including the program name), writing normal output
/// to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = Settings::gather(name, sub).and_then(|s| dispatch(name, s, out));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(name: &str, s: Settings, out: &mut dyn Write) -> CliResult<()> {
    match name {
        "train" => cmd_train(s, out),
        "posttrain" => cmd_posttrain(s, out),
        "eval" => cmd_eval(s, out),
        "gen-synthetic" => cmd_gen(s, out),
        "dump-masks" => cmd_dump(s, out),
        "inspect-checkpoint" => cmd_inspect(s, out),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Runtime(CdnError::io("<stdout>", e)))
}

fn task_of(path: &str, s: &Settings) -> CliResult<TaskKind> {
    if let Some(t) = s.get("task").filter(|t| *t != "posttrain") {
        return Ok(t.parse()?);
    }
    Ok(if path.ends_with(".tsv") { TaskKind::Pointwise } else { TaskKind::Multichoice })
}

/// Raw examples of a corpus, one per context (pointwise groups merged).
fn load_raw(path: &str, task: TaskKind, s: &Settings) -> CliResult<Vec<RawExample>> {
    Ok(match task {
        TaskKind::Multichoice => load_multichoice_json(path)?,
        TaskKind::Pointwise => {
            let opts = PointwiseOptions {
                group_size: s.parse("group_size", PointwiseOptions::default().group_size)?,
                filter_degenerate: false,
            };
            load_pointwise_tsv(path, opts)?
                .into_iter()
                .map(merge_group)
                .collect::<Result<_>>()?
        }
    })
}

/// One example holding every candidate of a pointwise group.
fn merge_group(group: Vec<RawExample>) -> Result<RawExample> {
    let mut it = group.into_iter();
    let mut first = it.next().ok_or_else(|| CdnError::Format("empty group".into()))?;
    for ex in it {
        if ex.context != first.context {
            return Err(CdnError::Format("lines of one group have different contexts".into()));
        }
        first.candidates.extend(ex.candidates);
    }
    Ok(first)
}

fn tokenize_all(raw: &[RawExample], vocab: &Vocab, mode: TokenizeMode) -> Result<Vec<DialogueExample>> {
    raw.iter().map(|r| r.tokenize(vocab, mode)).collect()
}

/// Load `vocab`, or build one from `raw` and record where it was saved.
fn resolve_vocab(s: &mut Settings, raw: &[RawExample], dir: &Path) -> CliResult<Vocab> {
    if let Some(p) = s.get("vocab") {
        return Ok(Vocab::load(p)?);
    }
    let v = Vocab::build(raw.iter().flat_map(|r| r.texts()), s.parse("vocab_min_freq", 1)?);
    let path = dir.join("vocab.txt");
    v.save(&path)?;
    s.set("vocab", path.display());
    Ok(v)
}

/// Model and training settings. Explicit keys override the preset and the
/// task-dependent length default.
fn resolve_configs(s: &mut Settings, task: TrainTask, vocab: &Vocab, dir: &Path) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut tc = match s.get("preset").unwrap_or("desk") {
        "desk" => TrainConfig::desk(task),
        "reference" => TrainConfig::reference(task),
        p => return usage(format!("unknown preset {p:?} (desk, reference)")),
    };
    s.set("preset", s.get("preset").unwrap_or("desk").to_string());
    let mut mc = ModelConfig {
        max_len: if task == TrainTask::Pointwise { 384 } else { 256 },
        ..ModelConfig::default()
    };
    if s.get("checkpoint_path").is_none() {
        s.set("checkpoint_path", dir.join("model.ckpt").display());
    }
    s.set("task", task);
    for (k, v) in s.values.clone() {
        if ModelConfig::KEYS.contains(&k.as_str()) {
            mc.set(&k, &v)?;
        } else if TrainConfig::KEYS.contains(&k.as_str()) {
            tc.set(&k, &v)?;
        }
    }
    mc.vocab_size = vocab.len();
    mc.validate()?;
    tc.validate()?;
    for (k, v) in mc.entries().into_iter().chain(tc.entries()) {
        s.set(k, v);
    }
    Ok((mc, tc))
}

fn initial_model(s: &Settings, mc: &ModelConfig, seed: u64) -> CliResult<CdnModel> {
    Ok(match s.get("init_checkpoint") {
        Some(p) => CdnModel::load_expecting(p, mc)?,
        None => CdnModel::new(mc.clone(), seed)?,
    })
}

fn cmd_train(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let data = s.require("data")?.to_string();
    let dir = out_dir(&s)?;
    let task = task_of(&data, &s)?;
    let raw = load_raw(&data, task, &s)?;
    let vocab = resolve_vocab(&mut s, &raw, &dir)?;
    let mode: TokenizeMode = s.parse("tokenize", TokenizeMode::Word)?;
    s.set("tokenize", mode);
    let train_set = tokenize_all(&raw, &vocab, mode)?;
    let dev_set = match s.get("dev") {
        Some(p) => tokenize_all(&load_raw(p, task, &s)?, &vocab, mode)?,
        None => Vec::new(),
    };
    let (mc, tc) = resolve_configs(&mut s, task.into(), &vocab, &dir)?;
    s.write_to(&dir)?;
    let mut model = initial_model(&s, &mc, tc.seed)?;
    let outcome = crate::train::train(&mut model, &train_set, &dev_set, &tc)?;
    write_file(&dir.join("history.txt"), outcome.history.to_string().as_bytes())?;
    let mut msg = format!("trained {} steps; checkpoint {}\n", outcome.steps, tc.checkpoint_path.as_ref().expect("set").display());
    if !dev_set.is_empty() {
        let report = evaluate(&model, &dev_set, s.flag("filter")?)?;
        write_file(&dir.join("metrics.txt"), report.to_string().as_bytes())?;
        msg.push_str(&report.to_string());
    }
    emit(out, &msg)
}

fn cmd_posttrain(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let data = s.require("data")?.to_string();
    let dir = out_dir(&s)?;
    let task = task_of(&data, &s)?;
    let raw = load_raw(&data, task, &s)?;
    let vocab = resolve_vocab(&mut s, &raw, &dir)?;
    let mode: TokenizeMode = s.parse("tokenize", TokenizeMode::Word)?;
    s.set("tokenize", mode);
    let dialogues = dialogues_from_examples(&tokenize_all(&raw, &vocab, mode)?);
    let defaults = MaskingPolicy::default();
    let policy = MaskingPolicy {
        level: s.parse("level", MaskLevel::Subword)?,
        mask_ratio: s.parse("mask_ratio", defaults.mask_ratio)?,
        span_p: s.parse("span_p", defaults.span_p)?,
        span_max_len: s.parse("span_max_len", defaults.span_max_len)?,
        ..defaults
    };
    policy.validate()?;
    s.set("level", policy.level);
    s.set("mask_ratio", policy.mask_ratio);
    s.set("span_p", policy.span_p);
    s.set("span_max_len", policy.span_max_len);
    let (mc, tc) = resolve_configs(&mut s, TrainTask::Posttrain, &vocab, &dir)?;
    s.write_to(&dir)?;
    let corpus = build_corpus(&dialogues, &policy, &mc, tc.seed)?;
    save_records(dir.join("posttrain.bin"), &corpus)?;
    let mut model = initial_model(&s, &mc, tc.seed)?;
    let outcome = crate::train::posttrain(&mut model, &dialogues, &policy, &tc)?;
    write_file(&dir.join("history.txt"), outcome.history.to_string().as_bytes())?;
    emit(
        out,
        &format!(
            "post-trained {} steps on {} records; checkpoint {}\n",
            outcome.steps,
            corpus.len(),
            tc.checkpoint_path.as_ref().expect("set").display()
        ),
    )
}

fn cmd_eval(s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let filter = s.flag("filter")?;
    if let Some(run) = s.get("run") {
        let group_size = s.parse("group_size", 10usize)?;
        let text = std::fs::read_to_string(run).map_err(|e| CdnError::io(run, e))?;
        let ranked = RankedRun::from_scored_tsv(&text, group_size)?;
        let report = ranked.report(&Metric::standard(group_size, false), filter)?;
        return emit(out, &report.to_string());
    }
    let (Some(ckpt), Some(data), Some(vocab)) = (s.get("checkpoint"), s.get("data"), s.get("vocab")) else {
        return usage("eval needs --run, or --checkpoint with --data and --vocab");
    };
    let model = CdnModel::load(ckpt)?;
    let task = task_of(data, &s)?;
    let mode: TokenizeMode = s.parse("tokenize", TokenizeMode::Word)?;
    let examples = tokenize_all(&load_raw(data, task, &s)?, &Vocab::load(vocab)?, mode)?;
    let report = evaluate(&model, &examples, filter)?;
    if s.get("out").is_some() {
        let dir = out_dir(&s)?;
        let mut scores = String::new();
        let mut groups = Vec::new();
        for ex in &examples {
            let z = model.logits(ex)?;
            for (c, v) in ex.candidates.iter().zip(&z) {
                let _ = writeln!(scores, "{}\t{v}", c.label);
            }
            groups.push(Group::new(z.iter().map(|&v| f64::from(v)).collect(), ex.candidates.iter().map(|c| c.label).collect())?);
        }
        write_file(&dir.join("scores.tsv"), scores.as_bytes())?;
        write_file(&dir.join("metrics.txt"), report.to_string().as_bytes())?;
        let mut echo = s.clone();
        echo.set("task", task);
        echo.set("tokenize", mode);
        echo.write_to(&dir)?;
    }
    emit(out, &report.to_string())
}

fn cmd_gen(s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        task: s.parse("task", d.task)?,
        seed: s.parse("seed", d.seed)?,
        vocab_size: s.parse("vocab_size", d.vocab_size)?,
        n_utts: s.parse("n_utts", d.n_utts)?,
        n_candidates: s.parse("n_candidates", d.n_candidates)?,
        n_train: s.parse("n_train", d.n_train)?,
        n_dev: s.parse("n_dev", d.n_dev)?,
    };
    spec.validate()?;
    let dir = out_dir(&s)?;
    write_file(&dir.join("train.jsonl"), spec.jsonl(Split::Train)?.as_bytes())?;
    write_file(&dir.join("dev.jsonl"), spec.jsonl(Split::Dev)?.as_bytes())?;
    spec.vocab().save(dir.join("vocab.txt"))?;
    let mut echo = Settings::default();
    echo.set("task", spec.task);
    echo.set("seed", spec.seed);
    echo.set("vocab_size", spec.vocab_size);
    echo.set("n_utts", spec.n_utts);
    echo.set("n_candidates", spec.n_candidates);
    echo.set("n_train", spec.n_train);
    echo.set("n_dev", spec.n_dev);
    echo.set("out", dir.display());
    echo.write_to(&dir)?;
    emit(out, &format!("wrote {} train and {} dev examples to {}\n", spec.n_train, spec.n_dev, dir.display()))
}

fn parse_list(s: &str, what: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Failure::Usage(format!("bad {what} entry {x:?}"))))
        .collect()
}

/// Sequence given directly by per-token utterance and speaker indices.
fn layout_sequence(utt: &str, speakers: &str) -> CliResult<EncodedSequence> {
    let utt = parse_list(utt, "utterance")?;
    let spk = parse_list(speakers, "speaker")?;
    if utt.len() != spk.len() || utt.is_empty() {
        return usage("--utterances and --speakers need the same non-zero length");
    }
    if spk.iter().any(|&x| x > 1) {
        return usage("speakers must be 0 or 1");
    }
    Ok(EncodedSequence {
        ids: vec![crate::data::UNK; utt.len()],
        n_utts: utt.iter().max().map_or(0, |m| m + 1),
        utt,
        speaker: spk.iter().map(|&x| x as u8).collect(),
        valid: vec![true; spk.len()],
        word_start: vec![true; spk.len()],
    })
}

fn trim_padding(mut seq: EncodedSequence) -> EncodedSequence {
    let n = seq.n_valid();
    seq.ids.truncate(n);
    seq.utt.truncate(n);
    seq.speaker.truncate(n);
    seq.valid.truncate(n);
    seq.word_start.truncate(n);
    seq
}

fn cmd_dump(s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let mut text = String::new();
    let (seq, vocab) = match (s.get("utterances"), s.get("speakers"), s.get("data")) {
        (Some(u), Some(sp), _) => (layout_sequence(u, sp)?, None),
        (None, None, Some(data)) => {
            let task = task_of(data, &s)?;
            let raw = load_raw(data, task, &s)?;
            let idx = s.parse("example", 0usize)?;
            let r = raw
                .get(idx)
                .ok_or_else(|| Failure::Usage(format!("example {idx} out of range ({} examples)", raw.len())))?;
            let vocab = match s.get("vocab") {
                Some(p) => Vocab::load(p)?,
                None => Vocab::build(r.texts(), 1),
            };
            let ex = r.tokenize(&vocab, s.parse("tokenize", TokenizeMode::Word)?)?;
            let max_len = s.parse("max_len", if task == TaskKind::Pointwise { 384 } else { 256 })?;
            let seq = encode_example(&ex, s.parse("candidate", 0usize)?, max_len, crate::data::DEFAULT_MAX_UTTS)?;
            (trim_padding(seq), Some(vocab))
        }
        _ => return usage("dump-masks needs --data, or both --utterances and --speakers"),
    };
    if let Some(v) = &vocab {
        let _ = writeln!(text, "tokens:    {}", v.detokenize(&seq.ids));
    }
    let join = |xs: Vec<String>| xs.join(" ");
    let _ = writeln!(text, "utterance: {}", join(seq.utt.iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(text, "speaker:   {}", join(seq.speaker.iter().map(|x| x.to_string()).collect()));
    let masks = ChannelMaskSet::build(&seq);
    let _ = write!(text, "\n{masks}");
    if let Some(ckpt) = s.get("checkpoint") {
        let model = CdnModel::load(ckpt)?;
        if seq.ids.iter().any(|&i| i as usize >= model.config().vocab_size) {
            return Err(CdnError::Config("token ids exceed the checkpoint vocabulary; pass its --vocab".into()).into());
        }
        let trace = model.trace(&seq)?;
        for (b, block) in trace.attention.iter().enumerate() {
            for ch in Channel::ALL {
                for (h, a) in block[ch.index()].iter().enumerate() {
                    let _ = writeln!(text, "\nattention block {b} {} head {h}", ch.name());
                    for i in 0..a.rows() {
                        let row: Vec<String> = a.row(i).iter().map(|x| format!("{x:.3}")).collect();
                        let _ = writeln!(text, "{}", row.join(" "));
                    }
                }
            }
        }
    }
    emit(out, &text)
}

fn cmd_inspect(s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let path = s.require("checkpoint")?;
    let model = CdnModel::load(path)?;
    let mut text = String::new();
    let _ = writeln!(text, "# configuration");
    text.push_str(&model.config().to_kv_text());
    let _ = writeln!(text, "\n# parameters ({} tensors, {} values)", model.params().len(), model.params().num_elements());
    for (p, t) in model.params().iter() {
        let _ = writeln!(text, "{p:<40} {:<12} norm {:.6}", format!("{:?}", t.shape()), t.sq_norm().sqrt());
    }
    emit(out, &text)
}
