//! The full set of learned parameters plus the frozen utterance embedder,
//! and their JSON checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::context::{gru_names, UtteranceEmbedder};
use crate::error::{Error, Result};
use crate::graph_encoder::{self, EmbeddingTable};
use crate::kg::KnowledgeGraph;
use crate::numerics::{MomentState, ParameterStore, Tensor};
use crate::{mi, policy, preference, reasoner};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: Config,
    pub store: ParameterStore,
    pub embedder: UtteranceEmbedder,
}

impl Model {
    /// Seeded initialization of every component.
    pub fn init(kg: &KnowledgeGraph, config: &Config) -> Self {
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        graph_encoder::init_params(&mut store, kg, config, &mut rng);
        gru_names().init(&mut store, d, d, &mut rng);
        mi::init_params(&mut store, d, &mut rng);
        policy::init_params(&mut store, d, &mut rng);
        preference::init_params(&mut store, d, &mut rng);
        reasoner::init_params(&mut store, d, &mut rng);
        Model {
            config: config.clone(),
            store,
            embedder: UtteranceEmbedder::new(config.seed ^ 0x5eed_70c3_u64, config.token_buckets, d),
        }
    }

    pub fn entity_table(&self, kg: &KnowledgeGraph) -> Result<EmbeddingTable> {
        graph_encoder::encode_entities(kg, &self.store, &self.config)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .store
            .entries()
            .map(|e| {
                (
                    e.name.clone(),
                    StoredParam {
                        shape: e.value.shape.clone(),
                        values: e.value.values.clone(),
                        trainable: e.trainable,
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_echo: self.config.clone(),
            embedder: self.embedder,
            params,
            optimizer_state: self.store.moment_state(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        let mut store = ParameterStore::new();
        for (name, p) in ck.params {
            store.insert(&name, Tensor::new(p.shape, p.values)?, p.trainable);
        }
        store.restore_moments(&ck.optimizer_state)?;
        Ok(Model {
            config: ck.config_echo,
            store,
            embedder: ck.embedder,
        })
    }

    /// Serialized checkpoint bytes. Floats are written in shortest
    /// round-trip form, so reloading is bit-exact.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        if let Some(e) = self.store.entries().find(|e| !e.value.is_finite()) {
            return Err(Error::Training(format!("parameter `{}` is not finite", e.name)));
        }
        Ok(serde_json::to_vec(&self.to_checkpoint())?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_slice(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_echo: Config,
    pub embedder: UtteranceEmbedder,
    pub params: BTreeMap<String, StoredParam>,
    pub optimizer_state: BTreeMap<String, MomentState>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let kg = KnowledgeGraph::from_strs("A\tGenre\tB\nC\tActor\tB\n", "", "t").unwrap().expand();
        let cfg = Config {
            embed_dim: 5,
            ..Config::default()
        };
        let mut m = Model::init(&kg, &cfg);
        m.store.get_mut(policy::B1).unwrap().values[0] = 0.1 + 0.2;
        m.store.get_mut(policy::B1).unwrap().values[1] = 1e-300;
        m.store.adam_step(&cfg.adam());
        let bytes = m.to_json().unwrap();
        let back = Model::from_json(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), bytes);
    }

    #[test]
    fn init_is_seeded() {
        let kg = KnowledgeGraph::from_strs("A\tGenre\tB\n", "", "t").unwrap().expand();
        let cfg = Config {
            embed_dim: 3,
            seed: 7,
            ..Config::default()
        };
        assert_eq!(Model::init(&kg, &cfg), Model::init(&kg, &cfg));
        let other = Config { seed: 8, ..cfg.clone() };
        assert_ne!(Model::init(&kg, &cfg).store, Model::init(&kg, &other).store);
    }
}
