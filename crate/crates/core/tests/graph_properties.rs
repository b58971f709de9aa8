use std::collections::BTreeSet;

use kecr_core::config::{Config, NormMode};
use kecr_core::graph_encoder::{encode_entities, BASE};
use kecr_core::kg::{EntityId, KnowledgeGraph, RelationId};
use kecr_core::numerics::Tensor;
use kecr_core::synthetic::random_kg;
use kecr_core::model::Model;
use proptest::prelude::*;

const RELATIONS: [&str; 5] = ["Actor", "Director", "Time", "Genre", "Subject"];

fn triple_lines() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..12usize, 0..RELATIONS.len(), 0..10usize), 1..40)
}

fn render(lines: &[(usize, usize, usize)]) -> String {
    lines
        .iter()
        .map(|(h, r, t)| format!("item{h}\t{}\tattr{t}\n", RELATIONS[*r]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_is_closed_under_inverse(lines in triple_lines()) {
        let kg = KnowledgeGraph::from_strs(&render(&lines), "", "prop").unwrap().expand();
        for (h, r, t) in kg.triples() {
            let inv = kg.relation(r).unwrap().inverse_of.unwrap();
            prop_assert!(kg.contains(t, inv, h));
            prop_assert_eq!(kg.relation(inv).unwrap().inverse_of, Some(r));
        }
    }

    #[test]
    fn neighbor_index_matches_triples(lines in triple_lines()) {
        let kg = KnowledgeGraph::from_strs(&render(&lines), "", "prop").unwrap().expand();
        let mut from_index = BTreeSet::new();
        for v in 0..kg.entity_count() {
            for (t, r) in kg.neighbors(EntityId(v)).unwrap() {
                from_index.insert((EntityId(v), r, t));
            }
        }
        let from_triples: BTreeSet<(EntityId, RelationId, EntityId)> = kg.triples().collect();
        prop_assert_eq!(from_index, from_triples);
    }

    #[test]
    fn duplicate_lines_do_not_add_triples(lines in triple_lines()) {
        let once = KnowledgeGraph::from_strs(&render(&lines), "", "prop").unwrap();
        let mut doubled = lines.clone();
        doubled.extend(lines.iter().copied());
        let twice = KnowledgeGraph::from_strs(&render(&doubled), "", "prop").unwrap();
        let distinct: BTreeSet<_> = lines.iter().collect();
        prop_assert_eq!(once.triple_count(), distinct.len());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn byte_round_trip_is_exact(lines in triple_lines()) {
        let kg = KnowledgeGraph::from_strs(&render(&lines), "", "prop").unwrap().expand();
        let bytes = kg.to_bytes().unwrap();
        let back = KnowledgeGraph::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, kg);
    }

    /// Reordering the triple file renumbers entities but must not change any
    /// entity's embedding once base rows follow the entity.
    #[test]
    fn encoder_ignores_triple_order(lines in triple_lines(), seed in 0u64..1000, degree in any::<bool>()) {
        let cfg = Config {
            embed_dim: 3,
            rgcn_layers: 2,
            norm_mode: if degree { NormMode::Degree } else { NormMode::Constant },
            seed,
            ..Config::default()
        };
        let a = KnowledgeGraph::from_strs(&render(&lines), "", "prop").unwrap().expand();
        let mut reversed = lines.clone();
        reversed.reverse();
        let b = KnowledgeGraph::from_strs(&render(&reversed), "", "prop").unwrap().expand();
        let ma = Model::init(&a, &cfg);
        let mut mb = Model::init(&b, &cfg);
        let base_a = ma.store.get(BASE).unwrap();
        let d = cfg.embed_dim;
        let mut rows = vec![0.0; b.entity_count() * d];
        for v in 0..b.entity_count() {
            let src = a.find(b.name(EntityId(v))).unwrap();
            rows[v * d..(v + 1) * d].copy_from_slice(base_a.row(src.0));
        }
        *mb.store.get_mut(BASE).unwrap() = Tensor::new(vec![b.entity_count(), d], rows).unwrap();
        for name in ma.store.names().filter(|n| n.starts_with("graph.l")) {
            *mb.store.get_mut(name).unwrap() = ma.store.get(name).unwrap().clone();
        }
        let ta = encode_entities(&a, &ma.store, &cfg).unwrap();
        let tb = encode_entities(&b, &mb.store, &cfg).unwrap();
        for v in 0..a.entity_count() {
            let w = b.find(a.name(EntityId(v))).unwrap();
            for (x, y) in ta.row(EntityId(v)).iter().zip(tb.row(w)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn thousand_triple_graph_loads_identically_twice() {
    let text = random_kg(1000, 5);
    let a = KnowledgeGraph::from_strs(&text, "", "random").unwrap();
    assert_eq!(a.triple_count(), 1000);
    let b = KnowledgeGraph::from_strs(&text, "", "random").unwrap();
    assert_eq!(a.expand().to_bytes().unwrap(), b.expand().to_bytes().unwrap());
}
