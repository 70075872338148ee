//! Fine-tuning and post-training loops.
//!
//! One optimizer step consumes `batch_size` items, averages their losses,
//! back-propagates, clips the global gradient norm and applies AdamW under a
//! linear warmup / linear decay schedule. Fine-tuning keeps the parameters
//! with the best validation R@1.

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{encode_example, DialogueExample, EncodedSequence, TaskKind};
use crate::error::{CdnError, Result};
use crate::masks::ChannelMaskSet;
use crate::metrics::{Group, Metric, RankedRun, Report};
use crate::model::{loss, keyword_enum, CdnModel, Forward, ModelConfig};
use crate::numeric::{AdamWConfig, AdamWState, ParamStore, Tape, Var};
use crate::posttrain::{build_corpus, Dialogue, MaskingPolicy, PosttrainExample, PosttrainKind};

keyword_enum!(TrainTask { Pointwise => "pointwise", Multichoice => "multichoice", Posttrain => "posttrain" });

impl From<TaskKind> for TrainTask {
    fn from(k: TaskKind) -> Self {
        match k {
            TaskKind::Pointwise => TrainTask::Pointwise,
            TaskKind::Multichoice => TrainTask::Multichoice,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TrainTask,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub warmup_fraction: f64,
    /// Non-positive disables clipping.
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate every this many steps (0: only at the end).
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TrainTask::Multichoice,
            batch_size: 8,
            lr: 2e-3,
            epochs: 1,
            max_steps: None,
            warmup_fraction: 0.1,
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 100,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    /// Batch size and learning rate of the large-scale setup: 24 and 4e-6
    /// for multiple choice, 64 and 3e-6 otherwise. Meant for pre-trained
    /// encoders; randomly initialised desk models want [`TrainConfig::desk`].
    pub fn reference(task: TrainTask) -> Self {
        let (batch_size, lr) = match task {
            TrainTask::Multichoice => (24, 4e-6),
            _ => (64, 3e-6),
        };
        TrainConfig { task, batch_size, lr, ..TrainConfig::default() }
    }

    /// Defaults for small models trained from scratch.
    pub fn desk(task: TrainTask) -> Self {
        TrainConfig { task, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CdnError::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be a finite non-negative number");
        }
        if self.epochs == 0 {
            return fail("epochs must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must be in [0, 1)");
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return fail("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "task",
        "batch_size",
        "lr",
        "epochs",
        "max_steps",
        "warmup_fraction",
        "grad_clip_norm",
        "weight_decay",
        "seed",
        "eval_every",
        "checkpoint_path",
    ];

    /// Set one field from its textual form. Returns `false` for keys that
    /// are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CdnError::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "warmup_fraction" => self.warmup_fraction = num(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "checkpoint_path" => {
                self.checkpoint_path = match value {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        vec![
            ("task", self.task.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", opt(self.max_steps.map(|s| s.to_string()))),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("grad_clip_norm", self.grad_clip_norm.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_path", opt(self.checkpoint_path.as_ref().map(|p| p.display().to_string()))),
        ]
    }
}

/// Learning rate at `step` (0-based) of `total`: linear warmup over the
/// first `⌈warmup_fraction·total⌉` steps, then linear decay to zero.
pub fn lr_at(base: f64, step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total as f64).ceil() as usize;
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        let rest = total.saturating_sub(warmup).max(1);
        base * (total.saturating_sub(step)) as f64 / rest as f64
    }
}

/// Scale gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads((max_norm / (norm + 1e-12)) as f32);
    }
    norm
}

/// Encoded sequences of a batch, every one padded to the same length, with
/// their mask sets. `groups[i]` indexes the candidates of example `i`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub task: TaskKind,
    pub seqs: Vec<EncodedSequence>,
    pub masks: Vec<ChannelMaskSet>,
    pub labels: Vec<u8>,
    pub groups: Vec<Range<usize>>,
    pub gold: Vec<Option<usize>>,
}

pub fn pad_batch(examples: &[&DialogueExample], cfg: &ModelConfig) -> Result<Batch> {
    let task = examples
        .first()
        .map(|e| e.task)
        .ok_or_else(|| CdnError::Contract("empty batch".into()))?;
    let mut b = Batch {
        task,
        seqs: Vec::new(),
        masks: Vec::new(),
        labels: Vec::new(),
        groups: Vec::new(),
        gold: Vec::new(),
    };
    for ex in examples {
        if ex.task != task {
            return Err(CdnError::Contract("batch mixes pointwise and multiple-choice examples".into()));
        }
        let start = b.seqs.len();
        for (i, c) in ex.candidates.iter().enumerate() {
            let seq = encode_example(ex, i, cfg.max_len, cfg.max_utts)?;
            b.masks.push(ChannelMaskSet::build(&seq));
            b.seqs.push(seq);
            b.labels.push(c.label);
        }
        b.groups.push(start..b.seqs.len());
        b.gold.push(ex.gold());
    }
    Ok(b)
}

impl Batch {
    /// Logits of every sequence on one tape.
    pub fn logits(&self, fwd: &Forward, t: &mut Tape<f32>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Var>> {
        self.seqs
            .iter()
            .zip(&self.masks)
            .map(|(s, m)| Ok(fwd.run(t, s, m, rng.as_deref_mut())?.logit))
            .collect()
    }

    /// Mean loss over examples (multiple choice) or over candidate pairs
    /// (pointwise).
    pub fn loss(&self, t: &mut Tape<f32>, logits: &[Var]) -> Result<Var> {
        let terms: Vec<Var> = match self.task {
            TaskKind::Multichoice => self
                .groups
                .iter()
                .zip(&self.gold)
                .map(|(r, g)| {
                    let g = g.ok_or_else(|| CdnError::MalformedExample("no gold candidate".into()))?;
                    loss::multichoice_loss(t, &logits[r.clone()], g)
                })
                .collect::<Result<_>>()?,
            TaskKind::Pointwise => logits
                .iter()
                .zip(&self.labels)
                .map(|(&z, &y)| loss::pointwise_loss(t, z, y))
                .collect::<Result<_>>()?,
        };
        mean_of(t, &terms)
    }
}

fn mean_of(t: &mut Tape<f32>, terms: &[Var]) -> Result<Var> {
    let row = t.concat_last(terms)?;
    Ok(t.mean(row))
}

/// Split pointwise examples into one item per (context, candidate) pair so
/// that the batch size counts pairs.
pub fn pointwise_pairs(examples: &[DialogueExample]) -> Vec<DialogueExample> {
    examples
        .iter()
        .flat_map(|ex| {
            ex.candidates.iter().map(move |c| DialogueExample {
                context: ex.context.clone(),
                candidates: vec![c.clone()],
                task: ex.task,
            })
        })
        .collect()
}

/// Score every candidate and report the standard metrics for the task.
pub fn evaluate(model: &CdnModel, examples: &[DialogueExample], filter: bool) -> Result<Report> {
    let mut groups = Vec::with_capacity(examples.len());
    for ex in examples {
        let scores = model.logits(ex)?.into_iter().map(f64::from).collect();
        groups.push(Group::new(scores, ex.candidates.iter().map(|c| c.label).collect())?);
    }
    let n = examples.first().map_or(0, |e| e.candidates.len());
    let multichoice = examples.first().is_some_and(|e| e.task == TaskKind::Multichoice);
    RankedRun::new(groups).report(&Metric::standard(n, multichoice), filter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl fmt::Display for HistoryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} split {} metric {} value {}", self.step, self.split, self.metric, self.value)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
}

impl History {
    fn push(&mut self, step: usize, split: &str, metric: &str, value: f64) {
        self.entries.push(HistoryEntry {
            step,
            split: split.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.split == split && e.metric == metric)
            .map(|e| e.value)
    }

    pub fn best(&self, split: &str, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.metric == metric)
            .map(|e| e.value)
            .reduce(f64::max)
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub steps: usize,
    /// Loss of the very first batch, before any update.
    pub first_loss: f64,
    /// Best validation R@1 and the step it was reached at.
    pub best: Option<(usize, f64)>,
}

/// Total optimizer steps for `n_items` under `cfg`.
pub fn total_steps(n_items: usize, cfg: &TrainConfig) -> usize {
    let per_epoch = n_items.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    cfg.max_steps.map_or(total, |m| m.min(total))
}

struct Loop {
    cfg: TrainConfig,
    opt: AdamWState<f32>,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    total: usize,
    step: usize,
    history: History,
    first_loss: Option<f64>,
    running: (f64, usize),
}

impl Loop {
    fn new(cfg: &TrainConfig, total: usize) -> Result<Self> {
        cfg.validate()?;
        let rng = |stream| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(stream);
            r
        };
        Ok(Loop {
            cfg: cfg.clone(),
            opt: AdamWState::new(AdamWConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            }),
            order_rng: rng(1),
            dropout_rng: rng(2),
            total,
            step: 0,
            history: History::default(),
            first_loss: None,
            running: (0.0, 0),
        })
    }

    fn done(&self) -> bool {
        self.step >= self.total
    }

    fn order(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.order_rng);
        idx
    }

    /// Backward, clip and update for a loss already on `t`.
    fn update(&mut self, model: &mut CdnModel, t: &mut Tape<f32>, vars: &crate::numeric::Bindings, loss: Var) -> Result<()> {
        let value = f64::from(t.item(loss));
        if !value.is_finite() {
            return Err(CdnError::NonFiniteLoss { step: self.step, loss: value });
        }
        self.first_loss.get_or_insert(value);
        self.running.0 += value;
        self.running.1 += 1;
        t.backward(loss)?;
        let params = model.params_mut();
        params.zero_grads();
        params.accumulate_grads(t, vars)?;
        clip_grad_norm(params, self.cfg.grad_clip_norm);
        self.opt
            .set_lr(lr_at(self.cfg.lr, self.step, self.total, self.cfg.warmup_fraction));
        self.opt.step(params)?;
        self.step += 1;
        Ok(())
    }

    fn should_eval(&self) -> bool {
        (self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0) || self.done()
    }

    fn log_train_loss(&mut self) {
        if self.running.1 > 0 {
            let mean = self.running.0 / self.running.1 as f64;
            self.history.push(self.step, "train", "loss", mean);
            self.running = (0.0, 0);
        }
    }

    fn outcome(self, best: Option<(usize, f64)>) -> TrainOutcome {
        TrainOutcome {
            history: self.history,
            steps: self.step,
            first_loss: self.first_loss.unwrap_or(f64::NAN),
            best,
        }
    }
}

/// Fine-tune `model` on `train`, evaluating on `dev` (when non-empty) and
/// keeping the parameters with the best validation R@1.
pub fn train(model: &mut CdnModel, train: &[DialogueExample], dev: &[DialogueExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let items: Vec<DialogueExample> = match cfg.task {
        TrainTask::Pointwise => pointwise_pairs(train),
        TrainTask::Multichoice => train.to_vec(),
        TrainTask::Posttrain => {
            return Err(CdnError::Config("use `posttrain` for the post-training task".into()))
        }
    };
    let want = match cfg.task {
        TrainTask::Pointwise => TaskKind::Pointwise,
        _ => TaskKind::Multichoice,
    };
    if let Some(ex) = items.iter().chain(dev).find(|e| e.task != want) {
        return Err(CdnError::Config(format!("{} example given to a {} run", ex.task, cfg.task)));
    }
    if items.is_empty() {
        return Err(CdnError::Config("no training examples".into()));
    }
    let mut lp = Loop::new(cfg, total_steps(items.len(), cfg))?;
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let model_cfg = model.config().clone();
    'epochs: for _ in 0..cfg.epochs {
        let order = lp.order(items.len());
        for chunk in order.chunks(cfg.batch_size) {
            if lp.done() {
                break 'epochs;
            }
            let exs: Vec<&DialogueExample> = chunk.iter().map(|&i| &items[i]).collect();
            let batch = pad_batch(&exs, &model_cfg)?;
            let mut t = Tape::new();
            let vars = model.params().bind(&mut t);
            let fwd = Forward::new(&model_cfg, &vars);
            let rng = (model_cfg.dropout > 0.0).then_some(&mut lp.dropout_rng);
            let logits = batch.logits(&fwd, &mut t, rng)?;
            let loss = batch.loss(&mut t, &logits)?;
            lp.update(model, &mut t, &vars, loss)?;
            if lp.should_eval() {
                lp.log_train_loss();
                if !dev.is_empty() {
                    let report = evaluate(model, dev, false)?;
                    for (name, v) in &report.rows {
                        lp.history.push(lp.step, "dev", name, *v);
                    }
                    let r1 = report.rows[0].1;
                    if best.as_ref().is_none_or(|b| r1 > b.1) {
                        best = Some((lp.step, r1, model.params().clone()));
                        if let Some(p) = &cfg.checkpoint_path {
                            model.save(p)?;
                        }
                    }
                }
            }
        }
    }
    let best = best.map(|(step, r1, params)| {
        *model.params_mut() = params;
        (step, r1)
    });
    if best.is_none() {
        if let Some(p) = &cfg.checkpoint_path {
            model.save(p)?;
        }
    }
    Ok(lp.outcome(best))
}

/// Loss of one post-training batch: mean MLM loss over the MLM examples plus
/// mean NUP loss over the NUP examples. A kind absent from the batch
/// contributes zero.
pub fn posttrain_batch_loss(
    fwd: &Forward,
    t: &mut Tape<f32>,
    batch: &[&PosttrainExample],
    max_len: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var, Var)> {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for ex in batch {
        let seq = ex.to_sequence(max_len)?;
        let masks = ChannelMaskSet::build(&seq);
        let e = fwd.encode(t, &seq, &masks, rng.as_deref_mut())?;
        match ex.kind {
            PosttrainKind::Mlm => {
                let positions: Vec<usize> = ex.targets.iter().map(|&(p, _)| p as usize).collect();
                let targets: Vec<usize> = ex.targets.iter().map(|&(_, id)| id as usize).collect();
                let logits = if positions.is_empty() { None } else { Some(fwd.mlm_logits(t, e, &positions)?) };
                intra.push(loss::mlm_loss(t, logits, &targets)?);
            }
            PosttrainKind::Nup => {
                let p = fwd.nup_probability(t, e)?;
                inter.push(loss::nup_loss(t, p, ex.label)?);
            }
        }
    }
    let zero = |t: &mut Tape<f32>| t.constant(crate::numeric::Tensor::scalar(0.0));
    let a = if intra.is_empty() { zero(t) } else { mean_of(t, &intra)? };
    let b = if inter.is_empty() { zero(t) } else { mean_of(t, &inter)? };
    let total = loss::combined_loss(t, a, b)?;
    Ok((a, b, total))
}

/// Post-train on `dialogues`. The masked corpus is rebuilt every epoch with
/// seed `cfg.seed + epoch`.
pub fn posttrain(model: &mut CdnModel, dialogues: &[Dialogue], policy: &MaskingPolicy, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model_cfg = model.config().clone();
    let mut corpus = build_corpus(dialogues, policy, &model_cfg, cfg.seed)?;
    if corpus.is_empty() {
        return Err(CdnError::Config("post-training corpus is empty".into()));
    }
    let mut lp = Loop::new(cfg, total_steps(corpus.len(), cfg))?;
    let mut parts = (0.0, 0.0, 0usize);
    'epochs: for epoch in 0..cfg.epochs {
        if epoch > 0 {
            corpus = build_corpus(dialogues, policy, &model_cfg, cfg.seed.wrapping_add(epoch as u64))?;
        }
        let order = lp.order(corpus.len());
        for chunk in order.chunks(cfg.batch_size) {
            if lp.done() {
                break 'epochs;
            }
            let exs: Vec<&PosttrainExample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let mut t = Tape::new();
            let vars = model.params().bind(&mut t);
            let fwd = Forward::new(&model_cfg, &vars);
            let rng = (model_cfg.dropout > 0.0).then_some(&mut lp.dropout_rng);
            let (a, b, total) = posttrain_batch_loss(&fwd, &mut t, &exs, model_cfg.max_len, rng)?;
            parts.0 += f64::from(t.item(a));
            parts.1 += f64::from(t.item(b));
            parts.2 += 1;
            lp.update(model, &mut t, &vars, total)?;
            if lp.should_eval() {
                lp.log_train_loss();
                let n = parts.2 as f64;
                lp.history.push(lp.step, "train", "mlm_loss", parts.0 / n);
                lp.history.push(lp.step, "train", "nup_loss", parts.1 / n);
                parts = (0.0, 0.0, 0);
            }
        }
    }
    if let Some(p) = &cfg.checkpoint_path {
        model.save(p)?;
    }
    Ok(lp.outcome(None))
}
