//! Shared fixtures for the benchmarks.

use kecr_core::context::encode_conversations;
use kecr_core::synthetic;
use kecr_core::{Config, EncodedConversation, Engine, KnowledgeGraph, Model, TemplateSet};

pub fn random_graph(triples: usize) -> KnowledgeGraph {
    KnowledgeGraph::from_strs(&synthetic::random_kg(triples, 1), "", "bench")
        .expect("generated graph parses")
        .expand()
}

pub fn config(dim: usize) -> Config {
    Config {
        embed_dim: dim,
        lr: 0.01,
        weight_decay: 0.0,
        pretrain_epochs: 2,
        joint_epochs: 2,
        token_buckets: 1024,
        ..Config::default()
    }
}

pub fn toy(dim: usize) -> (KnowledgeGraph, Model, Vec<EncodedConversation>) {
    let (kg, records, _) = synthetic::toy_data(50, 7).load().expect("toy data loads");
    let model = Model::init(&kg, &config(dim));
    let convs = encode_conversations(records, &kg, &model.embedder);
    (kg, model, convs)
}

/// An untrained engine over the toy graph; inference cost does not depend on
/// training.
pub fn toy_engine(dim: usize) -> Engine {
    let (kg, model, _) = toy(dim);
    let templates = TemplateSet::from_json(synthetic::TOY_TEMPLATES).expect("toy templates parse");
    Engine::new(model, kg, templates).expect("engine builds")
}
