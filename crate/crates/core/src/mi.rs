//! Mutual-information pretraining that aligns entity embeddings with the
//! conversation context.
//!
//! A two-layer classifier `g(e, q) = sigmoid(w2 tanh(W1 [e; q] + b1) + b2)`
//! separates entities mentioned in a round from randomly drawn ones, and the
//! lower bound `mean log g(pos) + mean log(1 - g(neg))` is maximized jointly
//! over the classifier, the graph encoder, and the GRU.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::context::{gru_names, EncodedConversation};
use crate::error::{Error, Result};
use crate::graph_encoder::{self, TapeEncoder};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::numerics::{gru_cell, linear, ParameterStore, Tape, Var};

pub const W1: &str = "mi.w1";
pub const B1: &str = "mi.b1";
pub const W2: &str = "mi.w2";
pub const B2: &str = "mi.b2";
pub const LOG_EPS: f64 = 1e-12;

pub fn param_names() -> Vec<String> {
    [W1, B1, W2, B2].iter().map(|s| s.to_string()).collect()
}

/// Hidden width equals `d`.
pub fn init_params<R: Rng>(store: &mut ParameterStore, d: usize, rng: &mut R) {
    store.insert_uniform(W1, &[d, 2 * d], 2 * d, rng);
    store.insert_uniform(B1, &[d], 2 * d, rng);
    store.insert_uniform(W2, &[1, d], d, rng);
    store.insert_uniform(B2, &[1], d, rng);
}

/// Names of the parameters updated during pretraining.
pub fn trains(name: &str) -> bool {
    name.starts_with("graph.") || name.starts_with("gru.") || name.starts_with("mi.")
}

pub fn classifier(tape: &mut Tape, e: Var, q: Var) -> Result<Var> {
    let w1 = tape.param(W1)?;
    let b1 = tape.param(B1)?;
    let w2 = tape.param(W2)?;
    let b2 = tape.param(B2)?;
    let x = tape.concat(&[e, q]);
    let h = linear(tape, w1, x, Some(b1))?;
    let h = tape.tanh(h);
    let o = linear(tape, w2, h, Some(b2))?;
    Ok(tape.sigmoid(o))
}

/// Lower bound on the mutual information; at most zero. Returned as the
/// objective to maximize.
pub fn mi_loss(tape: &mut Tape, positives: &[Var], negatives: &[Var]) -> Result<Var> {
    let pos = tape.stack(positives);
    let neg = tape.stack(negatives);
    let lp = tape.log_clamped(pos, LOG_EPS);
    let pos_term = tape.mean(lp);
    let one_minus = tape.one_minus(neg);
    let ln = tape.log_clamped(one_minus, LOG_EPS);
    let neg_term = tape.mean(ln);
    tape.add(pos_term, neg_term)
}

/// An (entity, round) pairing; the round context is the GRU state after the
/// round is consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiPair {
    pub entity: EntityId,
    pub conversation: usize,
    pub round: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiBatch {
    pub positives: Vec<MiPair>,
    pub negatives: Vec<MiPair>,
}

/// Draws `n` entities uniformly from those not in `exclude`.
pub fn sample_negatives<R: Rng>(entity_count: usize, exclude: &HashSet<EntityId>, n: usize, rng: &mut R) -> Result<Vec<EntityId>> {
    let available = entity_count - exclude.iter().filter(|e| e.0 < entity_count).count();
    if available == 0 || entity_count < n + 1 {
        return Err(Error::Sampling {
            needed: n + 1,
            available: entity_count,
        });
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = EntityId(rng.gen_range(0..entity_count));
        if !exclude.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Groups every round that mentions at least one entity into batches of
/// `batch_rounds` rounds, shuffled under `rng`. Each distinct mentioned
/// entity is a positive and gets `neg_samples` negatives.
pub fn build_mi_batches<R: Rng>(
    convs: &[EncodedConversation],
    entity_count: usize,
    batch_rounds: usize,
    neg_samples: usize,
    rng: &mut R,
) -> Result<Vec<MiBatch>> {
    let mut slots: Vec<(usize, usize)> = convs
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| {
            conv.rounds
                .iter()
                .filter(|r| !r.entities.is_empty())
                .map(move |r| (c, r.index))
        })
        .collect();
    slots.shuffle(rng);
    let mut batches = Vec::new();
    for chunk in slots.chunks(batch_rounds.max(1)) {
        let mut batch = MiBatch::default();
        for &(c, k) in chunk {
            let mentioned = &convs[c].rounds[k].entities;
            let exclude: HashSet<EntityId> = mentioned.iter().copied().collect();
            let mut seen = HashSet::new();
            for &e in mentioned {
                if !seen.insert(e) {
                    continue;
                }
                batch.positives.push(MiPair {
                    entity: e,
                    conversation: c,
                    round: k,
                });
                for n in sample_negatives(entity_count, &exclude, neg_samples, rng)? {
                    batch.negatives.push(MiPair {
                        entity: n,
                        conversation: c,
                        round: k,
                    });
                }
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEpochStats {
    pub epoch: usize,
    pub mean_l_mi: f64,
    pub pos_mean_g: f64,
    pub neg_mean_g: f64,
}

struct BatchOutcome {
    l_mi: f64,
    pos_g: Vec<f64>,
    neg_g: Vec<f64>,
}

/// Records one batch on a tape; accumulates gradients of `-L_MI` into
/// `grads` when given.
fn run_batch(
    convs: &[EncodedConversation],
    kg: &KnowledgeGraph,
    store: &ParameterStore,
    cfg: &Config,
    batch: &MiBatch,
    want_grads: bool,
) -> Result<(BatchOutcome, Option<crate::numerics::Gradients>)> {
    let mut tape = Tape::new(store);
    let mut encoder = TapeEncoder::new(kg, store, cfg)?;
    let names = gru_names();
    let mut contexts: HashMap<(usize, usize), Var> = HashMap::new();
    let mut ctx = |tape: &mut Tape, c: usize, k: usize| -> Result<Var> {
        if let Some(&v) = contexts.get(&(c, k)) {
            return Ok(v);
        }
        let mut start = 0;
        let mut h = tape.constant(vec![0.0; cfg.embed_dim]);
        for j in (0..k).rev() {
            if let Some(&v) = contexts.get(&(c, j)) {
                start = j + 1;
                h = v;
                break;
            }
        }
        for j in start..=k {
            let x = tape.constant(convs[c].inputs[j].clone());
            h = gru_cell(tape, &names, h, x)?;
            contexts.insert((c, j), h);
        }
        Ok(h)
    };
    let mut score = |tape: &mut Tape, p: &MiPair| -> Result<Var> {
        let q = ctx(tape, p.conversation, p.round)?;
        let e = encoder.embed(tape, kg, cfg, p.entity)?;
        classifier(tape, e, q)
    };
    let pos: Vec<Var> = batch.positives.iter().map(|p| score(&mut tape, p)).collect::<Result<_>>()?;
    let neg: Vec<Var> = batch.negatives.iter().map(|p| score(&mut tape, p)).collect::<Result<_>>()?;
    let l = mi_loss(&mut tape, &pos, &neg)?;
    let outcome = BatchOutcome {
        l_mi: tape.scalar(l),
        pos_g: pos.iter().map(|v| tape.scalar(*v)).collect(),
        neg_g: neg.iter().map(|v| tape.scalar(*v)).collect(),
    };
    let grads = if want_grads {
        let objective = tape.scale(l, -1.0);
        Some(tape.backward(objective))
    } else {
        None
    };
    Ok((outcome, grads))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs `cfg.pretrain_epochs` epochs of minibatch ascent on the MI bound.
/// Returns one trace row per epoch, averaged over the epoch's batches as
/// they were seen before each update.
pub fn pretrain<R: Rng>(
    convs: &[EncodedConversation],
    kg: &KnowledgeGraph,
    store: &mut ParameterStore,
    cfg: &Config,
    rng: &mut R,
) -> Result<Vec<MiEpochStats>> {
    let adam = cfg.adam();
    let mut trace = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let batches = build_mi_batches(convs, kg.entity_count(), cfg.batch_pretrain, cfg.neg_samples, rng)?;
        let (mut ls, mut pos, mut neg) = (Vec::new(), Vec::new(), Vec::new());
        for batch in batches.iter().filter(|b| !b.positives.is_empty()) {
            let (out, grads) = run_batch(convs, kg, store, cfg, batch, true)?;
            if !out.l_mi.is_finite() {
                return Err(Error::Training(format!("non-finite MI bound in epoch {epoch}")));
            }
            if let Some(g) = grads {
                g.accumulate_into(store);
            }
            store.adam_step_filtered(&adam, trains);
            ls.push(out.l_mi);
            pos.extend(out.pos_g);
            neg.extend(out.neg_g);
        }
        let stats = MiEpochStats {
            epoch,
            mean_l_mi: mean(&ls),
            pos_mean_g: mean(&pos),
            neg_mean_g: mean(&neg),
        };
        log::info!(
            "pretrain epoch {epoch}: L_MI {:.5} pos g {:.4} neg g {:.4}",
            stats.mean_l_mi,
            stats.pos_mean_g,
            stats.neg_mean_g
        );
        trace.push(stats);
    }
    Ok(trace)
}

/// Classifier statistics on `convs` without updating anything.
pub fn evaluate<R: Rng>(
    convs: &[EncodedConversation],
    kg: &KnowledgeGraph,
    store: &ParameterStore,
    cfg: &Config,
    rng: &mut R,
) -> Result<MiEpochStats> {
    let batches = build_mi_batches(convs, kg.entity_count(), cfg.batch_pretrain, cfg.neg_samples, rng)?;
    let (mut ls, mut pos, mut neg) = (Vec::new(), Vec::new(), Vec::new());
    for batch in batches.iter().filter(|b| !b.positives.is_empty()) {
        let (out, _) = run_batch(convs, kg, store, cfg, batch, false)?;
        ls.push(out.l_mi);
        pos.extend(out.pos_g);
        neg.extend(out.neg_g);
    }
    Ok(MiEpochStats {
        epoch: 0,
        mean_l_mi: mean(&ls),
        pos_mean_g: mean(&pos),
        neg_mean_g: mean(&neg),
    })
}

pub fn write_trace(path: &Path, trace: &[MiEpochStats]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,mean_L_MI,pos_mean_g,neg_mean_g\n");
    for s in trace {
        text.push_str(&format!("{},{},{},{}\n", s.epoch, s.mean_l_mi, s.pos_mean_g, s.neg_mean_g));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Graph encoder parameters are part of the pretraining set.
pub fn pretrained_names(kg: &KnowledgeGraph, cfg: &Config) -> Vec<String> {
    let mut names = graph_encoder::param_names(kg, cfg);
    names.extend(gru_names().all());
    names.extend(param_names());
    names
}
