use kecr_core::config::Config;
use kecr_core::corpus::Action;
use kecr_core::evaluator::{bleu, distinct_n, recall_at_k};
use kecr_core::kg::{EntityId, KnowledgeGraph};
use kecr_core::mi::{classifier, mi_loss};
use kecr_core::model::Model;
use kecr_core::numerics::tensor::softmax;
use kecr_core::numerics::{ParameterStore, Tape, Tensor};
use kecr_core::policy::{policy_loss, predict_action, action_probs};
use kecr_core::preference::{attention_weights, W3, W4};
use kecr_core::reasoner::{reason_two_step, Scorer};
use kecr_core::synthetic::TOY_TRIPLES;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

fn random_store(d: usize, seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    kecr_core::policy::init_params(&mut s, d, &mut rng);
    kecr_core::mi::init_params(&mut s, d, &mut rng);
    kecr_core::preference::init_params(&mut s, d, &mut rng);
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(x in prop::collection::vec(-50.0..50.0f64, 1..8), c in -100.0..100.0f64) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_loss_is_nonnegative(q in vec_of(4), seed in 0u64..500, gold in 0usize..3) {
        let store = random_store(4, seed);
        let mut tape = Tape::new(&store);
        let qv = tape.constant(q.clone());
        let probs = action_probs(&mut tape, qv).unwrap();
        let l = policy_loss(&mut tape, probs, Action::from_index(gold));
        prop_assert!(tape.scalar(l) >= 0.0);
        let dist = predict_action(&store, &q).unwrap();
        prop_assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_objective_is_never_positive(e in prop::collection::vec(vec_of(3), 2..6), q in vec_of(3), seed in 0u64..500, split in 1usize..5) {
        let store = random_store(3, seed);
        let mut tape = Tape::new(&store);
        let qv = tape.constant(q);
        let split = split.min(e.len() - 1);
        let g: Vec<_> = e.iter().map(|x| {
            let ev = tape.constant(x.clone());
            classifier(&mut tape, ev, qv).unwrap()
        }).collect();
        let l = mi_loss(&mut tape, &g[..split], &g[split..]).unwrap();
        prop_assert!(tape.scalar(l) <= 0.0);
    }

    #[test]
    fn attention_follows_column_permutation(cols in prop::collection::vec(vec_of(3), 1..6), seed in 0u64..500, rot in 0usize..6) {
        let store = random_store(3, seed);
        let weights = |cols: &[Vec<f64>]| {
            let mut tape = Tape::new(&store);
            let vars: Vec<_> = cols.iter().map(|c| tape.constant(c.clone())).collect();
            let a = attention_weights(&mut tape, &vars).unwrap();
            tape.value(a).to_vec()
        };
        let base = weights(&cols);
        let mut rotated = cols.clone();
        let r = rot % cols.len();
        rotated.rotate_left(r);
        let mut expected = base.clone();
        expected.rotate_left(r);
        for (a, b) in weights(&rotated).iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_never_drops_as_k_grows(ranked in Just((0..20).map(EntityId).collect::<Vec<_>>()).prop_shuffle(), gold in 0usize..25, k in 0usize..25) {
        prop_assert!(recall_at_k(&ranked, EntityId(gold), k) <= recall_at_k(&ranked, EntityId(gold), k + 1));
    }

    #[test]
    fn distinct_ignores_text_order(texts in prop::collection::vec("[a-c]{1,2}( [a-c]{1,2}){0,5}", 1..6), n in 1usize..4) {
        let mut reversed = texts.clone();
        reversed.reverse();
        let a = distinct_n(&texts, n);
        prop_assert_eq!(a, distinct_n(&reversed, n));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn bleu_of_a_sentence_against_itself_is_one(text in "[a-e]{1,3}( [a-e]{1,3}){0,8}") {
        prop_assert!((bleu(&text, &[text.as_str()]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reasoning_never_revisits(seed in 0u64..300, a in vec_of(3), q in vec_of(4)) {
        let kg = KnowledgeGraph::from_strs(TOY_TRIPLES, "", "toy").unwrap().expand();
        let cfg = Config { embed_dim: 4, seed, ..Config::default() };
        let model = Model::init(&kg, &cfg);
        let table = model.entity_table(&kg).unwrap();
        let u = table.row(EntityId(0)).to_vec();
        let sc = Scorer::new(&model.store, &table, &softmax(&a), &u, &q).unwrap();
        for v in 0..kg.entity_count() {
            for action in [Action::Recommend, Action::Query] {
                if let Ok(r) = reason_two_step(&kg, &sc, action, EntityId(v), &[], &[]) {
                    prop_assert!(r.step1.score > 0.0 && r.step1.score < 1.0);
                    if let Some(s2) = r.step2 {
                        prop_assert!(s2.entity != r.start && s2.entity != r.step1.entity);
                        prop_assert!(s2.score > 0.0 && s2.score < 1.0);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_attention_weights_are_uniform() {
    let mut s = ParameterStore::new();
    s.insert(W4, Tensor::zeros(&[2, 2]), true);
    s.insert(W3, Tensor::zeros(&[1, 2]), true);
    let mut tape = Tape::new(&s);
    let cols: Vec<_> = (0..4).map(|i| tape.constant(vec![i as f64, 1.0])).collect();
    let a = attention_weights(&mut tape, &cols).unwrap();
    assert!(tape.value(a).iter().all(|w| (w - 0.25).abs() < 1e-15));
}
