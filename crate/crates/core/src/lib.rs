//! Knowledge-graph conversational recommender: graph and dialogue encoders,
//! an action policy, preference mining, two-step path reasoning over the
//! graph, template realization, and the training loops that fit them.
//!
//! Everything runs on a small tape-based autodiff in [`numerics`].

pub mod config;
pub mod context;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod gradient_suite;
pub mod graph_encoder;
pub mod kg;
pub mod mi;
pub mod model;
pub mod numerics;
pub mod policy;
pub mod preference;
pub mod realizer;
pub mod reasoner;
pub mod synthetic;
pub mod trainer;

pub use config::{Config, NormMode};
pub use context::{DialogueState, EncodedConversation, UtteranceEmbedder};
pub use corpus::{Action, ConversationRecord, ReasoningLabel};
pub use engine::{Engine, TurnOutcome};
pub use error::{Error, Result};
pub use evaluator::Metrics;
pub use kg::{EntityId, EntityKind, KnowledgeGraph, RelationId};
pub use model::Model;
pub use realizer::{GeneratorAdapter, TemplateSet};
pub use reasoner::{ReasoningResult, ScoredEntity};
