//! Relation-specific graph convolution over the knowledge graph.
//!
//! One layer computes, for every entity `v`,
//!
//! ```text
//! e_v' = sigmoid( sum_r W_r * (sum_{u in N_r(v)} e_u) / z_v^r  +  W_0 * e_v )
//! ```
//!
//! The plain and tape paths share the same accumulation order, so a row
//! computed incrementally is bit-identical to the full-table row.

use std::collections::HashMap;

use rand::Rng;

use crate::config::{Config, NormMode};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::numerics::tensor::{matvec, sigmoid};
use crate::numerics::{ParameterStore, Tape, Tensor, Var};

pub const BASE: &str = "graph.base";

pub fn self_name(layer: usize) -> String {
    format!("graph.l{layer}.self")
}

pub fn rel_name(layer: usize, rel: usize) -> String {
    format!("graph.l{layer}.rel{rel}")
}

/// Names of every graph-encoder parameter for `kg`.
pub fn param_names(kg: &KnowledgeGraph, cfg: &Config) -> Vec<String> {
    let mut out = vec![BASE.to_string()];
    for l in 0..cfg.rgcn_layers {
        out.push(self_name(l));
        out.extend((0..kg.relation_count()).map(|r| rel_name(l, r)));
    }
    out
}

/// Base embeddings are a lookup from a one-hot input (fan-in 1), so they are
/// drawn from `U(-1, 1)`; layer matrices use fan-in `d`.
pub fn init_params<R: Rng>(store: &mut ParameterStore, kg: &KnowledgeGraph, cfg: &Config, rng: &mut R) {
    let d = cfg.embed_dim;
    store.insert_uniform(BASE, &[kg.entity_count(), d], 1, rng);
    for l in 0..cfg.rgcn_layers {
        store.insert_uniform(&self_name(l), &[d, d], d, rng);
        for r in 0..kg.relation_count() {
            store.insert_uniform(&rel_name(l, r), &[d, d], d, rng);
        }
    }
}

fn check_params(kg: &KnowledgeGraph, store: &ParameterStore, cfg: &Config) -> Result<()> {
    let base = store.get(BASE)?;
    if base.shape != [kg.entity_count(), cfg.embed_dim] {
        return Err(Error::Config(format!(
            "{BASE} has shape {:?}, graph needs [{}, {}]",
            base.shape,
            kg.entity_count(),
            cfg.embed_dim
        )));
    }
    let used: std::collections::BTreeSet<usize> = kg.triples().map(|(_, r, _)| r.0).collect();
    for l in 0..cfg.rgcn_layers {
        store.get(&self_name(l))?;
        for &r in &used {
            if store.index_of(&rel_name(l, r)).is_none() {
                return Err(Error::Config(format!(
                    "relation `{}` is present in the graph but has no layer-{l} weights",
                    kg.relations()[r].name
                )));
            }
        }
    }
    Ok(())
}

fn norm_factor(mode: NormMode, degree: usize) -> f64 {
    match mode {
        NormMode::Constant => 1.0,
        NormMode::Degree => degree as f64,
    }
}

/// Final-layer embedding of every entity, row-major `|V| x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, e: EntityId) -> &[f64] {
        &self.values[e.0 * self.dim..(e.0 + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn layer_row<'a>(
    kg: &KnowledgeGraph,
    store: &ParameterStore,
    cfg: &Config,
    layer: usize,
    v: EntityId,
    prev: impl Fn(EntityId) -> &'a [f64],
) -> Result<Vec<f64>> {
    let d = cfg.embed_dim;
    let mut acc = matvec(&store.get(&self_name(layer))?.values, d, prev(v));
    for (r, tails) in kg.relation_groups(v) {
        let mut agg = prev(tails[0]).to_vec();
        for t in &tails[1..] {
            for (a, x) in agg.iter_mut().zip(prev(*t)) {
                *a += x;
            }
        }
        if cfg.norm_mode != NormMode::Constant {
            let k = 1.0 / norm_factor(cfg.norm_mode, tails.len());
            agg.iter_mut().for_each(|a| *a *= k);
        }
        let m = matvec(&store.get(&rel_name(layer, r.0))?.values, d, &agg);
        for (a, x) in acc.iter_mut().zip(&m) {
            *a += x;
        }
    }
    Ok(acc.into_iter().map(sigmoid).collect())
}

/// Full-table forward pass.
pub fn encode_entities(kg: &KnowledgeGraph, store: &ParameterStore, cfg: &Config) -> Result<EmbeddingTable> {
    check_params(kg, store, cfg)?;
    let d = cfg.embed_dim;
    let mut current = store.get(BASE)?.values.clone();
    for l in 0..cfg.rgcn_layers {
        let mut next = Vec::with_capacity(current.len());
        for v in 0..kg.entity_count() {
            let row = layer_row(kg, store, cfg, l, EntityId(v), |e| &current[e.0 * d..(e.0 + 1) * d])?;
            next.extend(row);
        }
        current = next;
    }
    Ok(EmbeddingTable { dim: d, values: current })
}

/// Embedding of a single entity, touching only its `L`-hop neighborhood.
pub fn encode_entity_incremental(kg: &KnowledgeGraph, store: &ParameterStore, cfg: &Config, v: EntityId) -> Result<Vec<f64>> {
    if v.0 >= kg.entity_count() {
        return Err(Error::UnknownEntity(v.0));
    }
    check_params(kg, store, cfg)?;
    let mut memo: HashMap<(usize, EntityId), Vec<f64>> = HashMap::new();
    incremental(kg, store, cfg, v, cfg.rgcn_layers, &mut memo)
}

fn incremental(
    kg: &KnowledgeGraph,
    store: &ParameterStore,
    cfg: &Config,
    v: EntityId,
    depth: usize,
    memo: &mut HashMap<(usize, EntityId), Vec<f64>>,
) -> Result<Vec<f64>> {
    if let Some(r) = memo.get(&(depth, v)) {
        return Ok(r.clone());
    }
    let row = if depth == 0 {
        store.get(BASE)?.row(v.0).to_vec()
    } else {
        let mut needed = vec![v];
        needed.extend(kg.relation_groups(v).iter().flat_map(|(_, t)| t.iter().copied()));
        let mut prev: HashMap<EntityId, Vec<f64>> = HashMap::new();
        for u in needed {
            if let std::collections::hash_map::Entry::Vacant(slot) = prev.entry(u) {
                slot.insert(incremental(kg, store, cfg, u, depth - 1, memo)?);
            }
        }
        layer_row(kg, store, cfg, depth - 1, v, |e| prev[&e].as_slice())?
    };
    memo.insert((depth, v), row.clone());
    Ok(row)
}

/// Differentiable encoder that materializes only the rows it is asked for.
pub struct TapeEncoder {
    memo: HashMap<(usize, EntityId), Var>,
}

impl TapeEncoder {
    pub fn new(kg: &KnowledgeGraph, store: &ParameterStore, cfg: &Config) -> Result<Self> {
        check_params(kg, store, cfg)?;
        Ok(TapeEncoder { memo: HashMap::new() })
    }

    pub fn embed(&mut self, tape: &mut Tape, kg: &KnowledgeGraph, cfg: &Config, v: EntityId) -> Result<Var> {
        self.embed_at(tape, kg, cfg, v, cfg.rgcn_layers)
    }

    fn embed_at(&mut self, tape: &mut Tape, kg: &KnowledgeGraph, cfg: &Config, v: EntityId, depth: usize) -> Result<Var> {
        if let Some(&var) = self.memo.get(&(depth, v)) {
            return Ok(var);
        }
        let var = if depth == 0 {
            let base = tape.param(BASE)?;
            tape.row(base, v.0)?
        } else {
            let l = depth - 1;
            let own = self.embed_at(tape, kg, cfg, v, l)?;
            let w0 = tape.param(&self_name(l))?;
            let mut acc = tape.matvec(w0, own)?;
            for (r, tails) in kg.relation_groups(v) {
                let rows = tails
                    .iter()
                    .map(|t| self.embed_at(tape, kg, cfg, *t, l))
                    .collect::<Result<Vec<_>>>()?;
                let mut agg = tape.sum_vecs(&rows)?;
                if cfg.norm_mode != NormMode::Constant {
                    agg = tape.scale(agg, 1.0 / norm_factor(cfg.norm_mode, tails.len()));
                }
                let w = tape.param(&rel_name(l, r.0))?;
                let m = tape.matvec(w, agg)?;
                acc = tape.add(acc, m)?;
            }
            tape.sigmoid(acc)
        };
        self.memo.insert((depth, v), var);
        Ok(var)
    }
}

/// Embedding table as a frozen tape constant lookup.
pub fn table_constant(tape: &mut Tape, table: &EmbeddingTable, v: EntityId) -> Var {
    tape.constant(table.row(v).to_vec())
}

/// Overwrites every parameter of the encoder with explicit tensors; used by
/// hand-checked examples.
pub fn set_params(store: &mut ParameterStore, base: Tensor, self_w: Tensor, rel_w: &[(usize, Tensor)]) {
    store.insert(BASE, base, true);
    store.insert(&self_name(0), self_w, true);
    for (r, w) in rel_w {
        store.insert(&rel_name(0, *r), w.clone(), true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize) -> Config {
        Config {
            embed_dim: d,
            ..Config::default()
        }
    }

    fn eye(d: usize) -> Tensor {
        let mut t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            t.values[i * d + i] = 1.0;
        }
        t
    }

    #[test]
    fn hand_example_sigmoid_two_two() {
        // N_actor(A) = {B, C}; identity weights; e_A=(1,0), e_B=(0,1), e_C=(1,1).
        let kg = KnowledgeGraph::from_strs("A\tActor\tB\nA\tActor\tC\n", "", "t").unwrap();
        let mut store = ParameterStore::new();
        let base = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let rels: Vec<(usize, Tensor)> = (0..kg.relation_count()).map(|r| (r, eye(2))).collect();
        set_params(&mut store, base, eye(2), &rels);
        let table = encode_entities(&kg, &store, &cfg(2)).unwrap();
        let a = table.row(EntityId(0));
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((a[0] - expected).abs() < 1e-12 && (a[1] - expected).abs() < 1e-12);
        assert!((expected - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn isolated_zero_node_and_zero_weights_give_half() {
        let kg = KnowledgeGraph::from_strs("A\tActor\tB\n", r#"{"entity":"Lone","kind":"item"}"#, "t").unwrap();
        let mut store = ParameterStore::new();
        init_params(&mut store, &kg, &cfg(3), &mut ChaCha8Rng::seed_from_u64(1));
        let lone = kg.find("Lone").unwrap();
        for j in 0..3 {
            store.get_mut(BASE).unwrap().values[lone.0 * 3 + j] = 0.0;
        }
        let row = encode_entity_incremental(&kg, &store, &cfg(3), lone).unwrap();
        assert_eq!(row, vec![0.5; 3]);

        for n in param_names(&kg, &cfg(3)).iter().filter(|n| *n != BASE) {
            let shape = store.get(n).unwrap().shape.clone();
            store.insert(n, Tensor::zeros(&shape), true);
        }
        let table = encode_entities(&kg, &store, &cfg(3)).unwrap();
        assert!(table.values.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn missing_relation_weights_are_a_config_error() {
        let kg = KnowledgeGraph::from_strs("A\tGenre\tB\n", "", "t").unwrap();
        let mut store = ParameterStore::new();
        let rels: Vec<(usize, Tensor)> = vec![(0, eye(2))];
        set_params(&mut store, Tensor::zeros(&[2, 2]), eye(2), &rels);
        assert!(matches!(encode_entities(&kg, &store, &cfg(2)), Err(Error::Config(_))));
    }

    #[test]
    fn incremental_reflects_parameter_updates() {
        let kg = KnowledgeGraph::from_strs("A\tActor\tB\n", "", "t").unwrap().expand();
        let c = cfg(4);
        let mut store = ParameterStore::new();
        init_params(&mut store, &kg, &c, &mut ChaCha8Rng::seed_from_u64(2));
        let before = encode_entity_incremental(&kg, &store, &c, EntityId(0)).unwrap();
        store.get_mut(&self_name(0)).unwrap().values[0] += 1.0;
        let after = encode_entity_incremental(&kg, &store, &c, EntityId(0)).unwrap();
        assert_ne!(before, after);
        assert_eq!(after, encode_entities(&kg, &store, &c).unwrap().row(EntityId(0)));
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let kg = KnowledgeGraph::from_strs("A\tActor\tB\nA\tGenre\tC\nD\tGenre\tC\n", "", "t").unwrap().expand();
        let c = Config {
            rgcn_layers: 2,
            norm_mode: NormMode::Degree,
            ..cfg(3)
        };
        let mut store = ParameterStore::new();
        init_params(&mut store, &kg, &c, &mut ChaCha8Rng::seed_from_u64(3));
        let table = encode_entities(&kg, &store, &c).unwrap();
        let mut tape = Tape::new(&store);
        let mut enc = TapeEncoder::new(&kg, &store, &c).unwrap();
        for v in 0..kg.entity_count() {
            let var = enc.embed(&mut tape, &kg, &c, EntityId(v)).unwrap();
            assert_eq!(tape.value(var), table.row(EntityId(v)));
        }
    }
}
