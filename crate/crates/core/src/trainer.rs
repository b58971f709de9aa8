//! Two-phase training: MI pretraining of the encoders, then joint training
//! of the policy, preference miner, and reasoner on `L_a + L_r`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::context::{gru_names, EncodedConversation};
use crate::corpus::Action;
use crate::error::{Error, Result};
use crate::graph_encoder::{EmbeddingTable, TapeEncoder};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::mi::{self, MiEpochStats};
use crate::model::Model;
use crate::numerics::{gru_cell, ParameterStore, Tape, Var};
use crate::{policy, preference, reasoner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointEpochStats {
    pub epoch: usize,
    pub train_la: f64,
    pub train_lr: f64,
    pub val_la: f64,
    pub val_lr: f64,
}

impl JointEpochStats {
    pub fn train_total(&self) -> f64 {
        self.train_la + self.train_lr
    }

    pub fn val_total(&self) -> f64 {
        self.val_la + self.val_lr
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain: Vec<MiEpochStats>,
    pub joint: Vec<JointEpochStats>,
    pub best_epoch: Option<usize>,
    pub split: DataSplit,
}

/// Conversation indices per partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 8:1:1 split by conversation.
pub fn split_conversations(n: usize, seed: u64) -> DataSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0005_9117));
    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    DataSplit {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

/// Parameters updated in the joint phase.
pub fn joint_trains(name: &str, finetune_encoders: bool) -> bool {
    name.starts_with("policy.")
        || name.starts_with("pref.")
        || name.starts_with("reason.")
        || (finetune_encoders && (name.starts_with("graph.") || name.starts_with("gru.")))
}

/// One supervised round: the gold action of the system response, and the
/// reasoning label when one was derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSample {
    pub conversation: usize,
    pub round: usize,
    pub action: Action,
    pub label: Option<usize>,
}

pub fn joint_samples(convs: &[EncodedConversation], subset: &[usize]) -> Vec<JointSample> {
    let mut out = Vec::new();
    for &c in subset {
        let conv = &convs[c];
        for r in &conv.rounds {
            if let Some(action) = conv.action(r.index) {
                out.push(JointSample {
                    conversation: c,
                    round: r.index,
                    action,
                    label: conv.labels.iter().position(|l| l.round == r.index),
                });
            }
        }
    }
    out
}

/// Frozen encoder outputs, shared as tape constants.
struct FrozenEncoders {
    table: EmbeddingTable,
    contexts: HashMap<usize, Vec<Vec<f64>>>,
}

impl FrozenEncoders {
    fn new(convs: &[EncodedConversation], subset: &[usize], kg: &KnowledgeGraph, store: &ParameterStore, cfg: &Config) -> Result<Self> {
        let table = crate::graph_encoder::encode_entities(kg, store, cfg)?;
        let mut contexts = HashMap::new();
        for &c in subset {
            contexts.insert(c, convs[c].contexts(store)?);
        }
        Ok(FrozenEncoders { table, contexts })
    }
}

struct BatchLosses {
    la: Vec<f64>,
    lr: Vec<f64>,
}

/// Records the joint loss of `samples` on one tape. The returned scalar is
/// the batch mean of `L_a` plus the batch mean of `L_r` over labeled rounds.
fn record_batch(
    tape: &mut Tape,
    convs: &[EncodedConversation],
    kg: &KnowledgeGraph,
    cfg: &Config,
    frozen: Option<&FrozenEncoders>,
    samples: &[JointSample],
) -> Result<(Option<Var>, BatchLosses)> {
    let store = tape.store();
    let mut encoder = match frozen {
        Some(_) => None,
        None => Some(TapeEncoder::new(kg, store, cfg)?),
    };
    let mut entity_vars: HashMap<EntityId, Var> = HashMap::new();
    let mut embed = |tape: &mut Tape, e: EntityId| -> Result<Var> {
        if let Some(&v) = entity_vars.get(&e) {
            return Ok(v);
        }
        let v = match (&mut encoder, frozen) {
            (Some(enc), _) => enc.embed(tape, kg, cfg, e)?,
            (None, Some(f)) => tape.constant(f.table.row(e).to_vec()),
            (None, None) => unreachable!(),
        };
        entity_vars.insert(e, v);
        Ok(v)
    };
    let names = gru_names();
    let mut ctx_vars: HashMap<(usize, usize), Var> = HashMap::new();
    let mut context = |tape: &mut Tape, c: usize, k: usize| -> Result<Var> {
        if let Some(f) = frozen {
            return Ok(tape.constant(f.contexts[&c][k].clone()));
        }
        let mut h = tape.constant(vec![0.0; cfg.embed_dim]);
        for j in 0..=k {
            h = match ctx_vars.get(&(c, j)) {
                Some(&v) => v,
                None => {
                    let x = tape.constant(convs[c].inputs[j].clone());
                    let v = gru_cell(tape, &names, h, x)?;
                    ctx_vars.insert((c, j), v);
                    v
                }
            };
        }
        Ok(h)
    };

    let mut terms = Vec::new();
    let mut losses = BatchLosses { la: Vec::new(), lr: Vec::new() };
    let mut la_terms = Vec::new();
    let mut lr_terms = Vec::new();
    for s in samples {
        let conv = &convs[s.conversation];
        let q = context(tape, s.conversation, s.round)?;
        let probs = policy::action_probs(tape, q)?;
        let la = policy::policy_loss(tape, probs, s.action);
        losses.la.push(tape.scalar(la));
        la_terms.push(la);
        if let Some(li) = s.label {
            let label = conv.labels[li];
            let mut belief = conv.belief_until(s.round);
            if belief.is_empty() {
                belief.push(label.start);
            }
            let cols = belief.iter().map(|&e| embed(tape, e)).collect::<Result<Vec<_>>>()?;
            let u = preference::mine_preference(tape, &cols, cfg.gamma, cfg.damping_normalize)?;
            let proj = reasoner::context_projection(tape, probs, u, q)?;
            let (l1, l2) = reasoner::label_losses(tape, kg, proj, &label, &mut embed)?;
            let lr = reasoner::combine_losses(tape, l1, l2, cfg.lambda)?;
            losses.lr.push(tape.scalar(lr));
            lr_terms.push(lr);
        }
    }
    if !la_terms.is_empty() {
        let v = tape.stack(&la_terms);
        terms.push(tape.mean(v));
    }
    if !lr_terms.is_empty() {
        let v = tape.stack(&lr_terms);
        terms.push(tape.mean(v));
    }
    let total = match terms.as_slice() {
        [] => None,
        [a] => Some(*a),
        [a, b] => Some(tape.add(*a, *b)?),
        _ => unreachable!(),
    };
    Ok((total, losses))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean `(L_a, L_r)` over `samples` without updating anything.
pub fn joint_losses(
    convs: &[EncodedConversation],
    subset: &[usize],
    kg: &KnowledgeGraph,
    store: &ParameterStore,
    cfg: &Config,
) -> Result<(f64, f64)> {
    let frozen = FrozenEncoders::new(convs, subset, kg, store, cfg)?;
    let samples = joint_samples(convs, subset);
    let (mut la, mut lr) = (Vec::new(), Vec::new());
    for chunk in samples.chunks(cfg.batch_joint.max(1)) {
        let mut tape = Tape::new(store);
        let (_, l) = record_batch(&mut tape, convs, kg, cfg, Some(&frozen), chunk)?;
        la.extend(l.la);
        lr.extend(l.lr);
    }
    Ok((mean(&la), mean(&lr)))
}

/// Joint phase with early stopping on validation `L_a + L_r`; the best
/// parameters are restored at the end.
pub fn joint_train(
    model: &mut Model,
    convs: &[EncodedConversation],
    split: &DataSplit,
    kg: &KnowledgeGraph,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<JointEpochStats>, Option<usize>)> {
    let cfg = model.config.clone();
    let mut samples = joint_samples(convs, &split.train);
    if cfg.joint_epochs > 0 && samples.is_empty() {
        return Err(Error::Training("no labeled rounds in the training split".into()));
    }
    let adam = cfg.adam();
    let finetune = cfg.finetune_encoders;
    let frozen = if finetune {
        None
    } else {
        Some(FrozenEncoders::new(convs, &split.train, kg, &model.store, &cfg)?)
    };
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.joint_epochs {
        samples.shuffle(rng);
        let (mut la, mut lr) = (Vec::new(), Vec::new());
        for chunk in samples.chunks(cfg.batch_joint) {
            let grads = {
                let mut tape = Tape::new(&model.store);
                let (total, l) = record_batch(&mut tape, convs, kg, &cfg, frozen.as_ref(), chunk)?;
                la.extend(l.la);
                lr.extend(l.lr);
                total.map(|t| {
                    if !tape.scalar(t).is_finite() {
                        return Err(Error::Training(format!("non-finite joint loss in epoch {epoch}")));
                    }
                    Ok(tape.backward(t))
                })
            };
            if let Some(g) = grads {
                g?.accumulate_into(&mut model.store);
            }
            model.store.adam_step_filtered(&adam, |n| joint_trains(n, finetune));
        }
        let (val_la, val_lr) = if split.val.is_empty() {
            (mean(&la), mean(&lr))
        } else {
            joint_losses(convs, &split.val, kg, &model.store, &cfg)?
        };
        let stats = JointEpochStats {
            epoch,
            train_la: mean(&la),
            train_lr: mean(&lr),
            val_la,
            val_lr,
        };
        log::info!(
            "joint epoch {epoch}: train L_a {:.5} L_r {:.5} | val {:.5}",
            stats.train_la,
            stats.train_lr,
            stats.val_total()
        );
        trace.push(stats);
        let improved = best.as_ref().is_none_or(|(b, _, _)| stats.val_total() < *b);
        if improved {
            best = Some((stats.val_total(), epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = best.map(|(_, e, store)| {
        model.store = store;
        e
    });
    Ok((trace, best_epoch))
}

/// Runs both phases on the training split from `model`'s current state.
pub fn train(model: &mut Model, convs: &[EncodedConversation], kg: &KnowledgeGraph) -> Result<TrainReport> {
    train_phases(model, convs, kg, true)
}

/// Only the MI phase, on the training split, with the same seeding as
/// [`train_phases`].
pub fn pretrain_phase(model: &mut Model, convs: &[EncodedConversation], kg: &KnowledgeGraph) -> Result<Vec<mi::MiEpochStats>> {
    let cfg = model.config.clone();
    let split = split_conversations(convs.len(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let train_convs: Vec<EncodedConversation> = split.train.iter().map(|&i| convs[i].clone()).collect();
    mi::pretrain(&train_convs, kg, &mut model.store, &cfg, &mut rng)
}

pub fn train_phases(model: &mut Model, convs: &[EncodedConversation], kg: &KnowledgeGraph, pretrain: bool) -> Result<TrainReport> {
    let cfg = model.config.clone();
    let split = split_conversations(convs.len(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let train_convs: Vec<EncodedConversation> = split.train.iter().map(|&i| convs[i].clone()).collect();
    let pretrain_trace = if pretrain && cfg.pretrain_epochs > 0 {
        mi::pretrain(&train_convs, kg, &mut model.store, &cfg, &mut rng)?
    } else {
        Vec::new()
    };
    let (joint, best_epoch) = joint_train(model, convs, &split, kg, &mut rng)?;
    Ok(TrainReport {
        pretrain: pretrain_trace,
        joint,
        best_epoch,
        split,
    })
}
