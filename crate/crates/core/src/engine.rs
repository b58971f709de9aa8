//! Per-turn inference: context update, action choice, two-step reasoning,
//! item ranking, and realization. The engine is immutable; all per-dialogue
//! state lives in [`DialogueState`].

use serde::{Deserialize, Serialize};

use crate::context::DialogueState;
use crate::corpus::{link_entities, Action};
use crate::error::{Error, Result};
use crate::graph_encoder::EmbeddingTable;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::model::Model;
use crate::policy::{predict_action, ActionDistribution};
use crate::preference::mine_preference_values;
use crate::realizer::{GeneratorAdapter, GeneratorRequest, Slots, TemplateSet};
use crate::reasoner::{pick_start, rank_items, reason_two_step, start_pool, ReasoningResult, ScoredEntity, Scorer};

pub struct Engine {
    pub model: Model,
    pub kg: KnowledgeGraph,
    pub table: EmbeddingTable,
    pub templates: TemplateSet,
    pub adapter: GeneratorAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub reply: String,
    pub action: Action,
    pub distribution: ActionDistribution,
    pub start: Option<EntityId>,
    pub reasoning: Option<ReasoningResult>,
    pub top_items: Vec<ScoredEntity>,
}

impl Engine {
    pub fn new(model: Model, kg: KnowledgeGraph, templates: TemplateSet) -> Result<Self> {
        let table = model.entity_table(&kg)?;
        Ok(Engine {
            model,
            kg,
            table,
            templates,
            adapter: GeneratorAdapter::disabled(),
        })
    }

    pub fn with_adapter(mut self, adapter: GeneratorAdapter) -> Self {
        self.adapter = adapter;
        self
    }

    pub fn new_state(&self) -> DialogueState {
        DialogueState::new(self.model.config.embed_dim)
    }

    /// Consumes one round of text with its linked entities.
    pub fn observe(&self, state: &mut DialogueState, text: &str, entities: &[EntityId]) -> Result<()> {
        let x = self.model.embedder.embed(text);
        state.advance_context(&self.model.store, &x)?;
        state.update_belief(entities, &self.table)
    }

    /// Chooses and realizes the system response for the current state.
    pub fn decide(&self, state: &mut DialogueState, user_text: &str, seed: u64) -> Result<TurnOutcome> {
        let cfg = &self.model.config;
        let store = &self.model.store;
        let distribution = predict_action(store, &state.q)?;
        let mut action = distribution.argmax();

        let start = pick_start(state, &self.kg, seed).ok();
        let mut reasoning = None;
        let mut top_items = Vec::new();
        if let Some(start) = start {
            let mut columns = state.belief_columns();
            if columns.is_empty() {
                columns.push(self.table.row(start));
            }
            let u = mine_preference_values(store, &columns, cfg.gamma, cfg.damping_normalize)?;
            let scorer = Scorer::new(store, &self.table, &distribution.probs, &u, &state.q)?;
            if action != Action::Chat {
                let alternatives: Vec<EntityId> = start_pool(state, &self.kg).into_iter().filter(|e| *e != start).collect();
                match reason_two_step(&self.kg, &scorer, action, start, &alternatives, &state.mentioned) {
                    Ok(r) => reasoning = Some(r),
                    Err(Error::NoPath) => action = Action::Chat,
                    Err(e) => return Err(e),
                }
            }
            top_items = rank_items(&self.kg, &scorer, start, &state.mentioned, cfg.top_k)?;
        } else {
            action = Action::Chat;
        }

        let step1 = reasoning.as_ref().map(|r| r.step1.entity);
        let step2 = reasoning.as_ref().and_then(|r| r.step2.map(|s| s.entity));
        let slots = self.templates.slots(&self.kg, action, step1, step2);
        let reply = match self.realize(action, &slots, user_text, seed) {
            Ok(text) => text,
            Err(Error::MissingSlot { .. }) => {
                action = Action::Chat;
                reasoning = None;
                self.realize(Action::Chat, &Slots::default(), user_text, seed)?
            }
            Err(e) => return Err(e),
        };
        state.last_action = Some(action);
        Ok(TurnOutcome {
            reply,
            action,
            distribution,
            start,
            reasoning,
            top_items,
        })
    }

    fn realize(&self, action: Action, slots: &Slots, user_text: &str, seed: u64) -> Result<String> {
        let req = GeneratorRequest {
            action,
            entities: [&slots.step1, &slots.step2].into_iter().flatten().cloned().collect(),
            context: user_text.to_string(),
        };
        self.adapter
            .realize_external(&req, || self.templates.realize(action, slots, seed))
    }

    /// One user turn: the round is the previous system reply followed by the
    /// user's text.
    pub fn respond(&self, state: &mut DialogueState, last_reply: Option<&str>, user_text: &str, seed: u64) -> Result<TurnOutcome> {
        let text = match last_reply {
            Some(r) if !r.is_empty() => format!("{r} {user_text}"),
            _ => user_text.to_string(),
        };
        let entities = link_entities(&text, &self.kg);
        self.observe(state, &text, &entities)?;
        self.decide(state, user_text, seed)
    }
}
