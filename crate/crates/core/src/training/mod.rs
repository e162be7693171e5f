//! Stage-1 and Stage-2 training loops.
//!
//! Both stages share one loop. Stage 1 is the special case with no ranked
//! candidates and `gamma = 0`; in that case the contrastive branch is never
//! built, so the two give bit-identical updates.

pub mod loss;
pub mod optim;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ReformulationProblem;
use crate::error::{Error, Result};
use crate::model::graph::Graph;
use crate::model::tensor::Tensor;
use crate::model::{vocab, EncodedProblem, SeqModel};
pub use loss::{contrastive_loss, label_smooth_ce, smoothing_distribution};
pub use optim::{clip_global_norm, lr_schedule, AdamW};

/// Which sequence the cross-entropy term of Stage 2 is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeTarget {
    #[default]
    Label,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub n: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Drop the cross-entropy term and train on the ranking loss alone.
    pub contrastive_only: bool,
    pub ce_target: CeTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lambda: 0.1,
            gamma: 100.0,
            alpha: 0.6,
            n: 32,
            lr: 1e-3,
            warmup_ratio: 0.1,
            epochs: 5,
            batch_size: 8,
            seed: 42,
            weight_decay: 0.01,
            clip_norm: 1.0,
            contrastive_only: false,
            ce_target: CeTarget::Label,
        }
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("lr", self.lr),
            ("warmup_ratio", self.warmup_ratio),
            ("weight_decay", self.weight_decay),
            ("clip_norm", self.clip_norm),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite, got {v}")));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1), got {}", self.beta)));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 || self.lr < 0.0 {
            return Err(Error::Config("lambda, gamma and lr must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn uses_contrastive(&self) -> bool {
        self.contrastive_only || self.gamma > 0.0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training example in token space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub source: EncodedProblem,
    /// Label tokens ending in EOS.
    pub target: Vec<usize>,
    /// Candidate token sequences, best first under the fusion order.
    pub ranked: Vec<Vec<usize>>,
}

impl TrainItem {
    pub fn new(model: &SeqModel, problem: &ReformulationProblem, label: &str) -> Result<Self> {
        Ok(Self {
            id: problem.id(),
            source: model.encode_problem(problem)?,
            target: target_tokens(model, label),
            ranked: Vec::new(),
        })
    }

    pub fn with_ranked(mut self, ranked: Vec<Vec<usize>>) -> Self {
        self.ranked = ranked;
        self
    }
}

/// Encodes `text` as a decoder target: at most `max_tgt_len` tokens, EOS last.
pub fn target_tokens(model: &SeqModel, text: &str) -> Vec<usize> {
    let mut ids = model.vocab().encode(text);
    ids.truncate(model.arch().max_tgt_len - 1);
    ids.push(vocab::EOS);
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_g: f64,
    pub l_c: f64,
    pub l_total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_l_total: f64,
    pub checkpoint: Option<PathBuf>,
    pub eval: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Items dropped because they had fewer than two candidates.
    pub skipped: usize,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,L_g,L_c,L_total,lr\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{},{}\n", s.step, s.l_g, s.l_c, s.l_total, s.lr));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<&Path> {
        self.epochs.iter().filter_map(|e| e.checkpoint.as_deref()).collect()
    }
}

/// Called after every epoch; may save the model and return evaluation scores.
pub trait EpochHook {
    fn after_epoch(&mut self, epoch: usize, model: &SeqModel) -> Result<EpochRecord>;
}

/// Does nothing.
pub struct NoHook;

impl EpochHook for NoHook {
    fn after_epoch(&mut self, epoch: usize, _: &SeqModel) -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            mean_l_total: 0.0,
            checkpoint: None,
            eval: BTreeMap::new(),
        })
    }
}

/// Saves `<dir>/<prefix>_epoch<k>.ckpt` after each epoch.
pub struct CheckpointHook {
    pub dir: PathBuf,
    pub prefix: String,
}

impl EpochHook for CheckpointHook {
    fn after_epoch(&mut self, epoch: usize, model: &SeqModel) -> Result<EpochRecord> {
        let path = self.dir.join(format!("{}_epoch{epoch}.ckpt", self.prefix));
        model.save(&path)?;
        Ok(EpochRecord {
            epoch,
            mean_l_total: 0.0,
            checkpoint: Some(path),
            eval: BTreeMap::new(),
        })
    }
}

/// Loss values and gradients of one item.
pub struct ItemLoss {
    pub l_g: f64,
    pub l_c: f64,
    pub total: f64,
    pub grads: Vec<Tensor>,
}

/// `L_g + γ·L_c` for one item (or `L_c` alone in contrastive-only mode).
pub fn item_loss(model: &SeqModel, item: &TrainItem, cfg: &TrainConfig) -> ItemLoss {
    let mut g = Graph::new(model.params());
    let enc = model.encode(&mut g, &item.source.ids);
    let mem = model.memory(&mut g, enc);
    let mut total = None;
    let mut l_g = 0.0;
    if !cfg.contrastive_only {
        let target = match cfg.ce_target {
            CeTarget::Oracle if !item.ranked.is_empty() => &item.ranked[0],
            _ => &item.target,
        };
        let lp = model.teacher_forced(&mut g, &mem, target);
        let node = loss::label_smooth_ce_node(&mut g, lp, target, cfg.beta);
        l_g = g.value(node).item();
        total = Some(node);
    }
    let mut l_c = 0.0;
    if cfg.uses_contrastive() && item.ranked.len() >= 2 {
        let scores: Vec<_> = item
            .ranked
            .iter()
            .map(|c| {
                let lp = model.teacher_forced(&mut g, &mem, c);
                loss::sequence_score_node(&mut g, lp, c, cfg.alpha)
            })
            .collect();
        let f = g.stack(&scores);
        let hinge = g.pairwise_hinge(f, cfg.lambda);
        l_c = g.value(hinge).item();
        total = Some(match total {
            Some(ce) => {
                let weighted = g.scale(hinge, cfg.gamma);
                g.add(ce, weighted)
            }
            None => hinge,
        });
    }
    match total {
        Some(node) => ItemLoss {
            l_g,
            l_c,
            total: g.value(node).item(),
            grads: g.backward(node),
        },
        None => ItemLoss {
            l_g,
            l_c,
            total: 0.0,
            grads: model.params().zeros_like(),
        },
    }
}

/// Shared optimization loop.
pub fn train(model: &mut SeqModel, items: &[TrainItem], cfg: &TrainConfig, hook: &mut dyn EpochHook) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    let usable: Vec<&TrainItem> = if cfg.uses_contrastive() {
        let (keep, drop): (Vec<_>, Vec<_>) = items.iter().partition(|it| it.ranked.len() >= 2);
        report.skipped = drop.len();
        if report.skipped > 0 {
            log::warn!("skipping {} items with fewer than 2 candidates", report.skipped);
        }
        keep
    } else {
        items.iter().collect()
    };
    let batches_per_epoch = usable.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.params(), cfg.weight_decay);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.params().zeros_like();
            let (mut l_g, mut l_c, mut l_total) = (0.0, 0.0, 0.0);
            for &i in batch {
                let r = item_loss(model, usable[i], cfg);
                if !r.total.is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                l_g += r.l_g;
                l_c += r.l_c;
                l_total += r.total;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.scale(inv);
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = lr_schedule(step + 1, total_steps, cfg.warmup_ratio, cfg.lr);
            opt.step(model.params_mut(), &grads, lr);
            if !model.all_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            report.steps.push(StepRecord {
                step,
                l_g: l_g * inv,
                l_c: l_c * inv,
                l_total: l_total * inv,
                lr,
            });
            epoch_total += l_total;
            step += 1;
        }
        let mut record = hook.after_epoch(epoch, model)?;
        record.epoch = epoch;
        record.mean_l_total = epoch_total / usable.len().max(1) as f64;
        log::info!("epoch {epoch}: mean loss {:.4}", record.mean_l_total);
        report.epochs.push(record);
    }
    Ok(report)
}

/// Minimizes the label-smoothed cross-entropy alone.
pub fn stage1_train(model: &mut SeqModel, items: &[TrainItem], cfg: &TrainConfig, hook: &mut dyn EpochHook) -> Result<TrainReport> {
    let cfg = TrainConfig {
        gamma: 0.0,
        contrastive_only: false,
        ce_target: CeTarget::Label,
        ..cfg.clone()
    };
    let plain: Vec<TrainItem> = items
        .iter()
        .map(|it| TrainItem {
            ranked: Vec::new(),
            ..it.clone()
        })
        .collect();
    train(model, &plain, &cfg, hook)
}

/// Minimizes `L_g + γ·L_c` with candidate scores recomputed every step.
pub fn stage2_train(model: &mut SeqModel, items: &[TrainItem], cfg: &TrainConfig, hook: &mut dyn EpochHook) -> Result<TrainReport> {
    train(model, items, cfg, hook)
}

/// Mean teacher-forced label-smoothed cross-entropy over `items`.
pub fn mean_ce(model: &SeqModel, items: &[TrainItem], beta: f64) -> f64 {
    let mut total = 0.0;
    for it in items {
        let mut g = Graph::new(model.params());
        let enc = model.encode(&mut g, &it.source.ids);
        let mem = model.memory(&mut g, enc);
        let lp = model.teacher_forced(&mut g, &mem, &it.target);
        let node = loss::label_smooth_ce_node(&mut g, lp, &it.target, beta);
        total += g.value(node).item();
    }
    total / items.len().max(1) as f64
}
