//! Two-step reasoning over the knowledge graph.
//!
//! Every neighbor `k` of the current entity is scored by
//! `J(k) = sigmoid([e_from; e_k] . (W_proj [a; u; q]))`. The first step picks
//! the next entity from the start, the second step picks an explanation
//! entity next to the first.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::DialogueState;
use crate::corpus::{Action, ReasoningLabel};
use crate::error::{Error, Result};
use crate::graph_encoder::EmbeddingTable;
use crate::kg::{EntityId, EntityKind, KnowledgeGraph};
use crate::numerics::tensor::{dot, matvec, sigmoid};
use crate::numerics::{ParameterStore, Tape, Var};

pub const W_PROJ: &str = "reason.w_proj";
pub const LOG_EPS: f64 = 1e-12;

pub fn param_names() -> Vec<String> {
    vec![W_PROJ.to_string()]
}

pub fn init_params<R: Rng>(store: &mut ParameterStore, d: usize, rng: &mut R) {
    store.insert_uniform(W_PROJ, &[2 * d, 3 + 2 * d], 3 + 2 * d, rng);
}

/// `W_proj [a; u; q]`, shared by every score under one context.
pub fn context_projection(tape: &mut Tape, a: Var, u: Var, q: Var) -> Result<Var> {
    let w = tape.param(W_PROJ)?;
    let hc = tape.concat(&[a, u, q]);
    tape.matvec(w, hc)
}

pub fn relevance(tape: &mut Tape, projection: Var, from: Var, to: Var) -> Result<Var> {
    let hk = tape.concat(&[from, to]);
    let s = tape.dot(hk, projection)?;
    Ok(tape.sigmoid(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity: EntityId,
    pub score: f64,
}

/// Plain-value scorer over a fixed embedding table and dialogue context.
pub struct Scorer<'a> {
    table: &'a EmbeddingTable,
    projection: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(store: &ParameterStore, table: &'a EmbeddingTable, a: &[f64], u: &[f64], q: &[f64]) -> Result<Self> {
        let w = store.get(W_PROJ)?;
        let hc: Vec<f64> = a.iter().chain(u).chain(q).copied().collect();
        let d = table.dim;
        if w.shape != [2 * d, hc.len()] {
            return Err(Error::Shape {
                op: "relevance",
                left: w.shape.clone(),
                right: vec![2 * d, hc.len()],
            });
        }
        Ok(Scorer {
            table,
            projection: matvec(&w.values, hc.len(), &hc),
        })
    }

    pub fn score(&self, from: EntityId, to: EntityId) -> f64 {
        let hk: Vec<f64> = self.table.row(from).iter().chain(self.table.row(to)).copied().collect();
        sigmoid(dot(&hk, &self.projection))
    }

    /// Scores of every neighbor of `from`, descending, ties by entity id.
    pub fn score_neighbors(&self, kg: &KnowledgeGraph, from: EntityId) -> Result<Vec<ScoredEntity>> {
        let neighbors = kg.neighbor_entities(from)?;
        if neighbors.is_empty() {
            return Err(Error::NoNeighbors(from.0));
        }
        Ok(rank(neighbors.into_iter().map(|k| ScoredEntity {
            entity: k,
            score: self.score(from, k),
        })))
    }
}

fn rank(scored: impl Iterator<Item = ScoredEntity>) -> Vec<ScoredEntity> {
    let mut v: Vec<ScoredEntity> = scored.collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.entity.cmp(&b.entity)));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResult {
    pub action: Action,
    pub start: EntityId,
    pub step1: ScoredEntity,
    pub step2: Option<ScoredEntity>,
    pub candidates1: Vec<ScoredEntity>,
    pub candidates2: Vec<ScoredEntity>,
}

fn dedup(ids: impl IntoIterator<Item = EntityId>) -> Vec<EntityId> {
    let mut seen = HashSet::new();
    ids.into_iter().filter(|e| seen.insert(*e)).collect()
}

/// Entities the next reasoning step may start from, in preference order:
/// the latest round's mentions, else the most recent earlier mention, else
/// the category entities.
pub fn start_pool(state: &DialogueState, kg: &KnowledgeGraph) -> Vec<EntityId> {
    if !state.last_round.is_empty() {
        return dedup(state.last_round.iter().copied());
    }
    if let Some(&m) = state.mentioned.last() {
        return vec![m];
    }
    kg.categories()
}

/// Uniform choice under `seed` from [`start_pool`].
pub fn pick_start(state: &DialogueState, kg: &KnowledgeGraph, seed: u64) -> Result<EntityId> {
    let pool = start_pool(state, kg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.choose(&mut rng).copied().ok_or(Error::CannotStart)
}

/// Admissibility of a candidate given its kind and whether it was mentioned.
type Tier = Box<dyn Fn(Option<EntityKind>, bool) -> bool>;

fn step1_tiers(action: Action) -> Vec<Tier> {
    let item = |k: Option<EntityKind>| k == Some(EntityKind::Item);
    let attr = |k: Option<EntityKind>| matches!(k, Some(EntityKind::Attribute | EntityKind::Category));
    match action {
        Action::Recommend => vec![
            Box::new(move |k, mentioned| item(k) && !mentioned),
            Box::new(move |k, _| item(k)),
            Box::new(|_, _| true),
        ],
        Action::Query => vec![
            Box::new(move |k, mentioned| attr(k) && !mentioned),
            Box::new(move |k, _| attr(k)),
            Box::new(|_, _| true),
        ],
        Action::Chat => vec![Box::new(|_, _| true)],
    }
}

/// Picks `step1` among neighbors of the start (trying the other candidate
/// starts when the action constraint leaves nothing), then `step2` among the
/// neighbors of `step1`.
pub fn reason_two_step(
    kg: &KnowledgeGraph,
    scorer: &Scorer,
    action: Action,
    start: EntityId,
    alternatives: &[EntityId],
    mentioned: &[EntityId],
) -> Result<ReasoningResult> {
    let mentioned: HashSet<EntityId> = mentioned.iter().copied().collect();
    let starts = dedup(std::iter::once(start).chain(alternatives.iter().copied()));
    let mut rankings = Vec::with_capacity(starts.len());
    for &s in &starts {
        match scorer.score_neighbors(kg, s) {
            Ok(r) => rankings.push((s, r)),
            Err(Error::NoNeighbors(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut chosen = None;
    'tiers: for accept in step1_tiers(action) {
        for (s, ranking) in &rankings {
            if let Some(top) = ranking.iter().find(|c| accept(kg.kind(c.entity), mentioned.contains(&c.entity))) {
                chosen = Some((*s, *top, ranking.clone()));
                break 'tiers;
            }
        }
    }
    let (start, step1, candidates1) = chosen.ok_or(Error::NoPath)?;

    let (step2, candidates2) = if action == Action::Recommend {
        let ranking: Vec<ScoredEntity> = scorer
            .score_neighbors(kg, step1.entity)?
            .into_iter()
            .filter(|c| c.entity != start && c.entity != step1.entity)
            .collect();
        let top = ranking.iter().find(|c| kg.kind(c.entity) == Some(EntityKind::Attribute)).copied();
        (top, ranking)
    } else {
        (None, Vec::new())
    };

    Ok(ReasoningResult {
        action,
        start,
        step1,
        step2,
        candidates1,
        candidates2,
    })
}

/// Ranks items near the conversation. Candidates are items within two hops
/// of the start or any mentioned entity (all items when there are none),
/// minus mentioned items. An item adjacent to an anchor `m` scores
/// `J(m, c)`; one reached through a bridge `b` scores `J(m, b) J(b, c)`.
/// Items reachable from the start rank ahead of those reachable only from
/// other mentions, since scores from different anchors are not comparable.
pub fn rank_items(
    kg: &KnowledgeGraph,
    scorer: &Scorer,
    start: EntityId,
    mentioned: &[EntityId],
    k: usize,
) -> Result<Vec<ScoredEntity>> {
    let excluded: HashSet<EntityId> = mentioned.iter().copied().collect();
    let anchors = dedup(std::iter::once(start).chain(mentioned.iter().copied()));
    let is_item = |e: EntityId| kg.kind(e) == Some(EntityKind::Item);
    // (tier, best score) per candidate; tier 0 is reachable from the start.
    let mut best: std::collections::BTreeMap<EntityId, (usize, f64)> = std::collections::BTreeMap::new();
    let mut offer = |c: EntityId, tier: usize, s: f64| {
        if is_item(c) && !excluded.contains(&c) {
            let slot = best.entry(c).or_insert((tier, s));
            if tier < slot.0 || (tier == slot.0 && s > slot.1) {
                *slot = (tier, s);
            }
        }
    };
    for (i, &a) in anchors.iter().enumerate() {
        let tier = usize::from(i > 0);
        for b in kg.neighbor_entities(a)? {
            let jab = scorer.score(a, b);
            offer(b, tier, jab);
            for c in kg.neighbor_entities(b)? {
                if c != a && !kg.is_adjacent(a, c) {
                    offer(c, tier, jab * scorer.score(b, c));
                }
            }
        }
    }
    if mentioned.is_empty() && best.is_empty() {
        for v in 0..kg.entity_count() {
            let c = EntityId(v);
            if is_item(c) {
                best.insert(c, (0, scorer.score(start, c)));
            }
        }
    }
    let mut ranked: Vec<(usize, ScoredEntity)> = best
        .into_iter()
        .map(|(entity, (tier, score))| (tier, ScoredEntity { entity, score }))
        .collect();
    ranked.sort_by(|(ta, a), (tb, b)| ta.cmp(tb).then(b.score.total_cmp(&a.score)).then(a.entity.cmp(&b.entity)));
    Ok(ranked.into_iter().take(k).map(|(_, e)| e).collect())
}

/// Per-label reasoning losses `(L1, L2)`; `L2` is absent for labels without a
/// second target. Each is the summed binary cross-entropy over the scored
/// neighbor set with the labeled entity as the only positive.
pub fn label_losses(
    tape: &mut Tape,
    kg: &KnowledgeGraph,
    projection: Var,
    label: &ReasoningLabel,
    embed: &mut dyn FnMut(&mut Tape, EntityId) -> Result<Var>,
) -> Result<(Var, Option<Var>)> {
    let step = |tape: &mut Tape,
                embed: &mut dyn FnMut(&mut Tape, EntityId) -> Result<Var>,
                from: EntityId,
                exclude: Option<EntityId>,
                target: EntityId|
     -> Result<Var> {
        let e_from = embed(tape, from)?;
        let neighbors: Vec<EntityId> = kg
            .neighbor_entities(from)?
            .into_iter()
            .filter(|k| Some(*k) != exclude)
            .collect();
        let mut scores = Vec::with_capacity(neighbors.len());
        for &k in &neighbors {
            let e_k = embed(tape, k)?;
            scores.push(relevance(tape, projection, e_from, e_k)?);
        }
        let targets = neighbors.iter().map(|k| if *k == target { 1.0 } else { 0.0 }).collect();
        let p = tape.stack(&scores);
        tape.bce_sum(p, targets, LOG_EPS)
    };
    let l1 = step(tape, embed, label.start, None, label.first_target)?;
    let l2 = match label.second_target {
        Some(t) => Some(step(tape, embed, label.first_target, Some(label.start), t)?),
        None => None,
    };
    Ok((l1, l2))
}

/// `L1 + lambda * L2`. With `lambda = 0` the second step is not recorded at
/// all.
pub fn combine_losses(tape: &mut Tape, l1: Var, l2: Option<Var>, lambda: f64) -> Result<Var> {
    match l2 {
        Some(l2) if lambda != 0.0 => {
            let w = tape.scale(l2, lambda);
            tape.add(l1, w)
        }
        _ => Ok(l1),
    }
}
