//! Closed-loop training: forward, gradient step, then state writes.

mod negatives;
mod optim;

pub use negatives::{sample_negatives, sample_uniform_negatives, NegativeSet};
pub use optim::{clip_global_norm, lr_at, AdamW};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityId, Quadruple, Split, TemporalKG};
use crate::error::{EstError, Result};
use crate::eval::{by_timestamp, evaluate, EvalOptions, FilterMode};
use crate::memory::{DualStateMemory, MemoryParams};
use crate::model::params::Gradients;
use crate::model::tape::logsumexp;
use crate::model::{EstModel, QueryContext, StateSource};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Predict from subject and relation embeddings alone.
    pub wo_context: bool,
    /// Read zero states and never write memory.
    pub wo_state: bool,
    /// Uniform negatives instead of historically plausible ones.
    pub wo_ccl: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        wo_context: false,
        wo_state: false,
        wo_ccl: false,
    };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.wo_context {
            names.push("wo_context");
        }
        if self.wo_state {
            names.push("wo_state");
        }
        if self.wo_ccl {
            names.push("wo_ccl");
        }
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = EstError;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "none" | "full" => {}
                "wo_context" => a.wo_context = true,
                "wo_state" => a.wo_state = true,
                "wo_ccl" => a.wo_ccl = true,
                other => {
                    return Err(EstError::Config(format!(
                        "unknown ablation '{other}' (valid: wo_context, wo_state, wo_ccl)"
                    )))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub min_lr_factor: f64,
    pub neg_count: usize,
    pub memory: MemoryParams,
    pub history_len: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub grad_clip: f64,
    /// Filter used for the per-epoch validation MRR.
    pub filter: FilterMode,
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 5e-3,
            weight_decay: 1e-4,
            warmup_epochs: 2,
            min_lr_factor: 0.1,
            neg_count: 64,
            memory: MemoryParams::default(),
            history_len: 32,
            ablation: Ablation::NONE,
            seed: 0,
            grad_clip: 5.0,
            filter: FilterMode::Rolling,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EstError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if !(self.min_lr_factor > 0.0 && self.min_lr_factor <= 1.0) {
            return bad("min_lr_factor must lie in (0, 1]");
        }
        if self.neg_count == 0 {
            return bad("neg_count must be at least 1");
        }
        if self.history_len == 0 {
            return bad("history_len must be at least 1");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        self.memory.validate()
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            filter: self.filter,
            history_len: self.history_len,
            ablation: self.ablation,
        }
    }
}

/// A severed context waiting to be written into the memory.
#[derive(Debug, Clone)]
pub struct PendingWrite {
    pub subject: EntityId,
    pub context: Vec<f64>,
    pub window_objects: Vec<EntityId>,
    pub gate_means: Vec<f64>,
}

impl PendingWrite {
    pub fn from_context(subject: EntityId, ctx: QueryContext) -> Self {
        PendingWrite {
            subject,
            context: ctx.context,
            window_objects: ctx.window_objects,
            gate_means: ctx.gate_means,
        }
    }
}

/// Applies writes in order, recording perceiver-gate means for window objects.
pub fn apply_writes(memory: &mut DualStateMemory, writes: &[PendingWrite]) -> Result<()> {
    for w in writes {
        for (&o, &g) in w.window_objects.iter().zip(&w.gate_means) {
            memory.record_perceiver_gate(o, g)?;
        }
        memory.update(w.subject, &w.context)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean loss per training query.
    pub loss: f64,
    pub valid_mrr: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
}

impl TrainingLog {
    /// CSV with `epoch,step,lr,loss,valid_mrr,wall_clock_secs`; `header` lines
    /// are written first, each prefixed with `# `.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, header: &[String]) -> std::io::Result<()> {
        for h in header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "epoch,step,lr,loss,valid_mrr,wall_clock_secs")?;
        for e in &self.epochs {
            let mrr = e.valid_mrr.map(|m| format!("{m:.6}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{:.6e},{:.6},{},{:.3}",
                e.epoch, e.step, e.lr, e.loss, mrr, e.wall_clock_secs
            )?;
        }
        Ok(())
    }
}

/// Softmax loss over logits with the gold logit at index 0.
pub fn ccl_loss(logits: &[f64]) -> f64 {
    let gold = logits[0];
    if logits[1..].iter().all(|l| *l <= gold) {
        // log(1 + sum exp(l - gold)) stays positive where the subtraction would round to zero.
        logits[1..].iter().map(|l| (l - gold).exp()).sum::<f64>().ln_1p()
    } else {
        logsumexp(logits) - gold
    }
}

/// Training order for one epoch: ascending time, shuffled within each timestamp.
fn epoch_order(facts: &[Quadruple], rng: &mut ChaCha8Rng) -> Vec<Quadruple> {
    let mut out = Vec::with_capacity(facts.len());
    for group in by_timestamp(facts) {
        let mut g = group.to_vec();
        g.shuffle(rng);
        out.extend(g);
    }
    out
}

struct BatchOutcome {
    loss_sum: f64,
    writes: Vec<PendingWrite>,
}

fn run_batch(
    kg: &TemporalKG,
    model: &EstModel,
    memory: &DualStateMemory,
    cfg: &TrainConfig,
    batch: &[Quadruple],
    neg_rng: &mut ChaCha8Rng,
    grads: &mut Gradients,
) -> Result<BatchOutcome> {
    let states = if cfg.ablation.wo_state {
        StateSource::Zeros
    } else {
        StateSource::Memory(memory)
    };
    let mut loss_sum = 0.0;
    let mut writes = Vec::with_capacity(batch.len());
    let seed = 1.0 / batch.len() as f64;
    for q in batch {
        let negs = if cfg.ablation.wo_ccl {
            sample_uniform_negatives(kg.entity_count(), q.object, cfg.neg_count, neg_rng)?
        } else {
            sample_negatives(kg, q, cfg.neg_count, neg_rng)?
        };
        let out = model.query_loss(
            kg,
            states,
            q,
            &negs.candidates,
            cfg.history_len,
            cfg.ablation.wo_context,
            Some((&mut *grads, seed)),
        )?;
        loss_sum += out.loss;
        writes.push(PendingWrite::from_context(q.subject, out.context));
    }
    Ok(BatchOutcome { loss_sum, writes })
}

/// Trains `model` and evolves `memory` over the training split.
pub fn train(kg: &TemporalKG, model: &mut EstModel, memory: &mut DualStateMemory, cfg: &TrainConfig) -> Result<TrainingLog> {
    train_with(kg, model, memory, cfg, |_, _, _| Ok(()))
}

/// [`train`] with a hook called after every epoch.
pub fn train_with<F>(
    kg: &TemporalKG,
    model: &mut EstModel,
    memory: &mut DualStateMemory,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainingLog>
where
    F: FnMut(&EpochLog, &EstModel, &DualStateMemory) -> Result<()>,
{
    cfg.validate()?;
    let facts = kg.split(Split::Train);
    if facts.is_empty() {
        return Err(EstError::Config("training split is empty".into()));
    }
    if memory.dim() != model.dim() || memory.entity_count() != kg.entity_count() {
        return Err(EstError::Validation(format!(
            "memory is {}x{}, expected {}x{}",
            memory.entity_count(),
            memory.dim(),
            kg.entity_count(),
            model.dim()
        )));
    }
    if model.config().entity_count != kg.entity_count() || model.config().relation_count < kg.relation_count() {
        return Err(EstError::Validation("model vocabulary does not match the dataset".into()));
    }
    let steps_per_epoch = facts.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    if total_steps <= warmup_steps {
        return Err(EstError::Config(format!(
            "{} epochs leave no steps after {} warmup epochs",
            cfg.epochs, cfg.warmup_epochs
        )));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt = AdamW::new(model.params(), cfg.weight_decay);
    let mut grads = Gradients::zeros_like(model.params());
    let mut log = TrainingLog {
        epochs: Vec::with_capacity(cfg.epochs),
        steps_per_epoch,
        total_steps,
    };
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(facts, &mut order_rng);
        let mut loss_total = 0.0;
        let mut lr = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let out = run_batch(kg, model, memory, cfg, batch, &mut neg_rng, &mut grads)?;
            if !out.loss_sum.is_finite() {
                return Err(EstError::Numeric(format!(
                    "non-finite loss in epoch {epoch}, batch {b} (first fact {:?})",
                    batch[0]
                )));
            }
            if let Some((id, i)) = grads.first_non_finite() {
                return Err(EstError::Numeric(format!(
                    "non-finite gradient for parameter '{}' element {i} in epoch {epoch}, batch {b}",
                    model.params().name(id)
                )));
            }
            loss_total += out.loss_sum;
            clip_global_norm(&mut grads, cfg.grad_clip);
            lr = lr_at(step, total_steps, warmup_steps, cfg.lr, cfg.min_lr_factor)?;
            opt.step(model.params_mut(), &grads, lr);
            step += 1;
            if !model.params().all_finite() {
                return Err(EstError::Numeric(format!("parameters became non-finite in epoch {epoch}, batch {b}")));
            }
            if !cfg.ablation.wo_state {
                apply_writes(memory, &out.writes)?;
            }
        }
        let valid_mrr = if cfg.validate {
            let mut scratch = memory.clone();
            Some(evaluate(kg, model, &mut scratch, Split::Valid, &cfg.eval_options())?.mrr)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            step,
            lr,
            loss: loss_total / facts.len() as f64,
            valid_mrr,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, model, memory)?;
        log.epochs.push(entry);
    }
    Ok(log)
}
