//! Utterance embedding, recurrent conversation context, and belief state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{rounds, Action, ConversationRecord, ReasoningLabel, Round};
use crate::error::{Error, Result};
use crate::graph_encoder::EmbeddingTable;
use crate::kg::{normalize_text, EntityId, KnowledgeGraph};
use crate::numerics::{gru_cell, GruNames, ParameterStore, Tape};

pub const GRU_PREFIX: &str = "gru";

pub fn gru_names() -> GruNames {
    GruNames::new(GRU_PREFIX)
}

/// Frozen hash-bucketed token table. Rows are regenerated on demand from
/// `(seed, bucket)`, so the table never needs to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceEmbedder {
    pub seed: u64,
    pub buckets: usize,
    pub dim: usize,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl UtteranceEmbedder {
    pub fn new(seed: u64, buckets: usize, dim: usize) -> Self {
        UtteranceEmbedder {
            seed,
            buckets: buckets.max(1),
            dim,
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token) % self.buckets as u64) as usize
    }

    pub fn row(&self, bucket: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(bucket as u64 + 1);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn tokens(text: &str) -> Vec<String> {
        normalize_text(text).split_whitespace().map(str::to_string).collect()
    }

    /// Mean of the token rows; the zero vector for text without tokens.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let tokens = Self::tokens(text);
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() {
            return out;
        }
        for t in &tokens {
            for (o, v) in out.iter_mut().zip(self.row(self.bucket(t))) {
                *o += v;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Per-session dialogue state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub q: Vec<f64>,
    pub belief: Vec<(EntityId, Vec<f64>)>,
    pub mentioned: Vec<EntityId>,
    /// Entities mentioned in the most recent round.
    pub last_round: Vec<EntityId>,
    pub last_action: Option<Action>,
    pub round: usize,
}

impl DialogueState {
    pub fn new(dim: usize) -> Self {
        DialogueState {
            q: vec![0.0; dim],
            belief: Vec::new(),
            mentioned: Vec::new(),
            last_round: Vec::new(),
            last_action: None,
            round: 0,
        }
    }

    /// `q <- GRU(q, x)` and advances the round counter.
    pub fn advance_context(&mut self, store: &ParameterStore, x: &[f64]) -> Result<()> {
        self.q = gru_step(store, &self.q, x)?;
        self.round += 1;
        Ok(())
    }

    /// Appends the current embedding of each entity, in mention order.
    pub fn update_belief(&mut self, entities: &[EntityId], table: &EmbeddingTable) -> Result<()> {
        if let Some(bad) = entities.iter().find(|e| e.0 >= table.len()) {
            return Err(Error::UnknownEntity(bad.0));
        }
        for &e in entities {
            self.belief.push((e, table.row(e).to_vec()));
            self.mentioned.push(e);
        }
        self.last_round = entities.to_vec();
        Ok(())
    }

    pub fn belief_columns(&self) -> Vec<&[f64]> {
        self.belief.iter().map(|(_, c)| c.as_slice()).collect()
    }
}

/// One GRU step evaluated outside of training.
pub fn gru_step(store: &ParameterStore, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let hv = tape.constant(h.to_vec());
    let xv = tape.constant(x.to_vec());
    let out = gru_cell(&mut tape, &gru_names(), hv, xv)?;
    Ok(tape.value(out).to_vec())
}

/// A conversation split into rounds with cached utterance embeddings and
/// supervision labels.
#[derive(Debug, Clone)]
pub struct EncodedConversation {
    pub record: ConversationRecord,
    pub rounds: Vec<Round>,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<ReasoningLabel>,
}

impl EncodedConversation {
    pub fn new(record: ConversationRecord, kg: &KnowledgeGraph, embedder: &UtteranceEmbedder) -> Self {
        let record = crate::corpus::derive_action_labels(record, kg);
        let rounds = rounds(&record);
        let inputs = rounds.iter().map(|r| embedder.embed(&r.text)).collect();
        let labels = crate::corpus::derive_reasoning_labels(&record, kg);
        EncodedConversation {
            record,
            rounds,
            inputs,
            labels,
        }
    }

    /// Action of the system turn answering round `k`, if any.
    pub fn action(&self, k: usize) -> Option<Action> {
        self.rounds[k].response.and_then(|i| self.record.turns[i].action)
    }

    pub fn label(&self, k: usize) -> Option<&ReasoningLabel> {
        self.labels.iter().find(|l| l.round == k)
    }

    /// Plain context vectors after each round.
    pub fn contexts(&self, store: &ParameterStore) -> Result<Vec<Vec<f64>>> {
        let mut q = vec![0.0; self.inputs.first().map_or(0, Vec::len)];
        let mut out = Vec::with_capacity(self.inputs.len());
        for x in &self.inputs {
            q = gru_step(store, &q, x)?;
            out.push(q.clone());
        }
        Ok(out)
    }

    /// Every entity mentioned up to and including round `k`, in order.
    pub fn belief_until(&self, k: usize) -> Vec<EntityId> {
        self.rounds[..=k].iter().flat_map(|r| r.entities.iter().copied()).collect()
    }
}

pub fn encode_conversations(
    records: Vec<ConversationRecord>,
    kg: &KnowledgeGraph,
    embedder: &UtteranceEmbedder,
) -> Vec<EncodedConversation> {
    records.into_iter().map(|r| EncodedConversation::new(r, kg, embedder)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn embedding_is_mean_of_token_rows() {
        let emb = UtteranceEmbedder::new(3, 101, 4);
        assert_eq!(emb.embed(""), vec![0.0; 4]);
        let a = emb.row(emb.bucket("a"));
        let b = emb.row(emb.bucket("b"));
        assert_eq!(emb.embed("a"), a);
        let ab = emb.embed("a b");
        for j in 0..4 {
            assert!((ab[j] - (a[j] + b[j]) / 2.0).abs() < 1e-12);
        }
        assert_eq!(emb.embed("a    b"), ab);
        assert_eq!(emb.embed("A, b!"), ab);
    }

    #[test]
    fn zero_gru_halves_context() {
        let d = 3;
        let mut store = ParameterStore::new();
        for n in gru_names().all() {
            let shape = if n.contains(".b_") { vec![d] } else { vec![d, d] };
            store.insert(&n, Tensor::zeros(&shape), true);
        }
        let mut st = DialogueState::new(d);
        st.q = vec![0.4, -0.2, 1.0];
        st.advance_context(&store, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(st.q, vec![0.2, -0.1, 0.5]);
        assert_eq!(st.round, 1);
    }

    #[test]
    fn belief_appends_duplicates_in_order() {
        let table = EmbeddingTable {
            dim: 1,
            values: vec![0.1, 0.2],
        };
        let mut st = DialogueState::new(1);
        st.update_belief(&[], &table).unwrap();
        assert!(st.belief.is_empty());
        st.update_belief(&[EntityId(1)], &table).unwrap();
        st.update_belief(&[EntityId(1), EntityId(0)], &table).unwrap();
        assert_eq!(st.mentioned, vec![EntityId(1), EntityId(1), EntityId(0)]);
        assert_eq!(st.belief[2], (EntityId(0), vec![0.1]));
        assert!(matches!(st.update_belief(&[EntityId(5)], &table), Err(Error::UnknownEntity(5))));
    }
}
