//! Finite-difference checks over every differentiable operation the model
//! uses. Each check draws fresh random parameters and inputs per instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, NormMode};
use crate::corpus::{Action, ReasoningLabel};
use crate::error::Result;
use crate::graph_encoder::{self, TapeEncoder};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::numerics::gradcheck::{check_input, check_params, GradCheckReport};
use crate::numerics::{gru_cell, linear, GruNames, ParameterStore, Tape, Tensor, Var};
use crate::{mi, policy, preference, reasoner};

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub report: GradCheckReport,
}

const TOY_TRIPLES: &str = "Annabelle\tGenre\tHorror Film\n\
Dead Silence\tGenre\tHorror Film\n\
Dead Silence\tDirector\tJames Wan\n\
Dead Silence\tTime\t2007\n";

fn toy_kg() -> Result<KnowledgeGraph> {
    Ok(KnowledgeGraph::from_strs(TOY_TRIPLES, "", "gradient-suite")?.expand())
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values kept away from zero so `relu` is differentiable at every probe.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect()
}

fn insert_random(store: &mut ParameterStore, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) {
    let n = shape.iter().product();
    store.insert(name, Tensor::new(shape.to_vec(), uniform(rng, n)).expect("shape matches"), true);
}

fn project(tape: &mut Tape, y: Var, c: &[f64]) -> Result<Var> {
    let c = tape.constant(c.to_vec());
    tape.dot(y, c)
}

fn check_linear(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (rows, cols) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let mut store = ParameterStore::new();
    insert_random(&mut store, rng, "w", &[rows, cols]);
    insert_random(&mut store, rng, "b", &[rows]);
    insert_random(&mut store, rng, "x", &[cols]);
    let c = uniform(rng, rows);
    let loss = |tape: &mut Tape| {
        let (w, b, x) = (tape.param("w")?, tape.param("b")?, tape.param("x")?);
        let y = linear(tape, w, x, Some(b))?;
        let y = tape.tanh(y);
        project(tape, y, &c)
    };
    check_params(&mut store, &["w", "b", "x"], 1, loss)
}

fn check_activation(rng: &mut ChaCha8Rng, which: &str) -> Result<GradCheckReport> {
    let n = rng.gen_range(1..6);
    let x = off_kink(rng, n);
    let c = uniform(rng, n);
    let store = ParameterStore::new();
    check_input(&store, &x, |tape, x| {
        let y = match which {
            "sigmoid" => tape.sigmoid(x),
            "tanh" => tape.tanh(x),
            "relu" => tape.relu(x),
            _ => tape.softmax(x),
        };
        project(tape, y, &c)
    })
}

fn check_gru(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (d_in, d) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let names = GruNames::new("gru");
    let mut store = ParameterStore::new();
    names.init(&mut store, d_in, d, rng);
    insert_random(&mut store, rng, "h0", &[d]);
    let xs = [uniform(rng, d_in), uniform(rng, d_in)];
    let c = uniform(rng, d);
    // Two unrolled steps so gradients also flow through the recurrence.
    let loss = |tape: &mut Tape| {
        let mut h = tape.param("h0")?;
        for x in &xs {
            let x = tape.constant(x.clone());
            h = gru_cell(tape, &names, h, x)?;
        }
        project(tape, h, &c)
    };
    let mut all = names.all();
    all.push("h0".into());
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    check_params(&mut store, &refs, 1, loss)
}

fn check_mi(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let d = rng.gen_range(1..5);
    let mut store = ParameterStore::new();
    mi::init_params(&mut store, d, rng);
    for name in ["e0", "e1", "e2", "q"] {
        insert_random(&mut store, rng, name, &[d]);
    }
    let loss = |tape: &mut Tape| {
        let q = tape.param("q")?;
        let mut g = Vec::new();
        for name in ["e0", "e1", "e2"] {
            let e = tape.param(name)?;
            g.push(mi::classifier(tape, e, q)?);
        }
        mi::mi_loss(tape, &g[..1], &g[1..])
    };
    let mut names = mi::param_names();
    names.extend(["e0", "e1", "q"].map(String::from));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&mut store, &refs, 1, loss)
}

fn check_policy(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let d = rng.gen_range(1..5);
    let mut store = ParameterStore::new();
    policy::init_params(&mut store, d, rng);
    insert_random(&mut store, rng, "q", &[d]);
    let gold = Action::ALL[rng.gen_range(0..3)];
    let loss = |tape: &mut Tape| {
        let q = tape.param("q")?;
        let probs = policy::action_probs(tape, q)?;
        Ok(policy::policy_loss(tape, probs, gold))
    };
    let mut names = policy::param_names();
    names.push("q".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&mut store, &refs, 1, loss)
}

fn entity_rows(store: &mut ParameterStore, rng: &mut ChaCha8Rng, kg: &KnowledgeGraph, d: usize) {
    insert_random(store, rng, "emb", &[kg.entity_count(), d]);
}

fn check_reasoning(rng: &mut ChaCha8Rng, kg: &KnowledgeGraph) -> Result<GradCheckReport> {
    let d = rng.gen_range(1..4);
    let mut store = ParameterStore::new();
    reasoner::init_params(&mut store, d, rng);
    entity_rows(&mut store, rng, kg, d);
    insert_random(&mut store, rng, "hc", &[3 + 2 * d]);
    let find = |n: &str| kg.find(n).expect("toy entity");
    let label = ReasoningLabel {
        round: 0,
        start: find("Horror Film"),
        first_target: find("Dead Silence"),
        second_target: Some(find("James Wan")),
    };
    let lambda = rng.gen_range(0.0..1.0);
    let loss = |tape: &mut Tape| {
        let w = tape.param(reasoner::W_PROJ)?;
        let hc = tape.param("hc")?;
        let proj = tape.matvec(w, hc)?;
        let emb = tape.param("emb")?;
        let mut embed = |tape: &mut Tape, v: EntityId| tape.row(emb, v.0);
        let (l1, l2) = reasoner::label_losses(tape, kg, proj, &label, &mut embed)?;
        reasoner::combine_losses(tape, l1, l2, lambda)
    };
    check_params(&mut store, &[reasoner::W_PROJ, "hc", "emb"], 1, loss)
}

/// Belief columns through preference mining, the policy distribution, the
/// context projection and one relevance score.
fn check_preference_chain(rng: &mut ChaCha8Rng, kg: &KnowledgeGraph) -> Result<GradCheckReport> {
    let d = rng.gen_range(1..4);
    let mut store = ParameterStore::new();
    policy::init_params(&mut store, d, rng);
    preference::init_params(&mut store, d, rng);
    reasoner::init_params(&mut store, d, rng);
    entity_rows(&mut store, rng, kg, d);
    insert_random(&mut store, rng, "q", &[d]);
    let columns = rng.gen_range(1..4);
    let gamma = rng.gen_range(0.5..1.0);
    let normalize = rng.gen_bool(0.5);
    let (from, to) = (rng.gen_range(0..kg.entity_count()), rng.gen_range(0..kg.entity_count()));
    let loss = |tape: &mut Tape| {
        let emb = tape.param("emb")?;
        let cols = (0..columns).map(|i| tape.row(emb, i)).collect::<Result<Vec<_>>>()?;
        let u = preference::mine_preference(tape, &cols, gamma, normalize)?;
        let q = tape.param("q")?;
        let a = policy::action_probs(tape, q)?;
        let proj = reasoner::context_projection(tape, a, u, q)?;
        let (ef, et) = (tape.row(emb, from)?, tape.row(emb, to)?);
        let s = reasoner::relevance(tape, proj, ef, et)?;
        Ok(tape.log_clamped(s, 1e-12))
    };
    let mut names = preference::param_names();
    names.extend(policy::param_names());
    names.extend(reasoner::param_names());
    names.extend(["emb", "q"].map(String::from));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&mut store, &refs, 1, loss)
}

fn check_graph_encoder(rng: &mut ChaCha8Rng, kg: &KnowledgeGraph) -> Result<GradCheckReport> {
    let cfg = Config {
        embed_dim: rng.gen_range(1..4),
        rgcn_layers: rng.gen_range(1..3),
        norm_mode: if rng.gen_bool(0.5) { NormMode::Degree } else { NormMode::Constant },
        ..Config::default()
    };
    let mut store = ParameterStore::new();
    graph_encoder::init_params(&mut store, kg, &cfg, rng);
    let targets: Vec<(EntityId, Vec<f64>)> = (0..2)
        .map(|_| (EntityId(rng.gen_range(0..kg.entity_count())), uniform(rng, cfg.embed_dim)))
        .collect();
    let loss = |tape: &mut Tape| {
        let mut enc = TapeEncoder::new(kg, tape.store(), &cfg)?;
        let mut parts = Vec::new();
        for (v, c) in &targets {
            let e = enc.embed(tape, kg, &cfg, *v)?;
            parts.push(project(tape, e, c)?);
        }
        let s = tape.stack(&parts);
        Ok(tape.sum(s))
    };
    let names = graph_encoder::param_names(kg, &cfg);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    check_params(&mut store, &refs, 1, loss)
}

pub const OPS: [&str; 11] = [
    "linear",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "gru_cell",
    "mi_loss",
    "policy_loss",
    "reasoning_loss",
    "preference_to_relevance",
    "graph_encoder",
];

/// Runs `instances` random checks of every operation in [`OPS`].
pub fn run(instances: usize, seed: u64) -> Result<Vec<OpReport>> {
    let kg = toy_kg()?;
    let mut out = Vec::new();
    for (i, &op) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut report = GradCheckReport::default();
        for _ in 0..instances {
            let r = match op {
                "linear" => check_linear(&mut rng)?,
                "gru_cell" => check_gru(&mut rng)?,
                "mi_loss" => check_mi(&mut rng)?,
                "policy_loss" => check_policy(&mut rng)?,
                "reasoning_loss" => check_reasoning(&mut rng, &kg)?,
                "preference_to_relevance" => check_preference_chain(&mut rng, &kg)?,
                "graph_encoder" => check_graph_encoder(&mut rng, &kg)?,
                act => check_activation(&mut rng, act)?,
            };
            report.merge(r);
        }
        out.push(OpReport { op, instances, report });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operation_matches_finite_differences() {
        for r in run(20, 11).unwrap() {
            assert!(r.report.checked > 0, "{}", r.op);
            assert!(r.report.max_rel_err < 1e-4, "{}: {}", r.op, r.report.max_rel_err);
        }
    }
}
