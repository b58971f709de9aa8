//! Knowledge graph storage: ingestion of triple and alias files, bidirectional
//! expansion with generic category entities, and neighbor indexing.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relations kept from the source graph, in id order.
pub const RETAINED_RELATIONS: [&str; 5] = ["Actor", "Director", "Time", "Genre", "Subject"];
pub const BELONG: &str = "Belong";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Item,
    Attribute,
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub inverse_of: Option<RelationId>,
}

#[derive(Debug, Deserialize)]
struct AliasLine {
    entity: String,
    kind: Option<EntityKind>,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<(usize, usize, usize)>,
    expanded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: BTreeSet<(usize, usize, usize)>,
    /// Per entity: outgoing `(relation, sorted tails)` in relation order.
    neighbor_index: Vec<Vec<(RelationId, Vec<EntityId>)>>,
    names: HashMap<String, EntityId>,
    lexicon: HashMap<String, EntityId>,
    max_alias_words: usize,
    expanded: bool,
}

/// Lowercases and replaces every non-alphanumeric character with a space,
/// collapsing runs of whitespace.
pub fn normalize_text(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeGraph {
    /// An empty graph with the five retained forward relations registered.
    pub fn new() -> Self {
        let relations = RETAINED_RELATIONS
            .iter()
            .map(|n| Relation {
                name: n.to_string(),
                inverse_of: None,
            })
            .collect();
        KnowledgeGraph {
            entities: Vec::new(),
            relations,
            triples: BTreeSet::new(),
            neighbor_index: Vec::new(),
            names: HashMap::new(),
            lexicon: HashMap::new(),
            max_alias_words: 0,
            expanded: false,
        }
    }

    /// Parses triple TSV text and alias JSON-lines text. `source` labels errors.
    pub fn from_strs(triples: &str, aliases: &str, source: &str) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        for (lineno, line) in triples.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    msg: format!("expected `head<TAB>relation<TAB>tail`, got {} field(s)", fields.len()),
                });
            }
            let (head, rel, tail) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            let r = RETAINED_RELATIONS
                .iter()
                .position(|n| *n == rel)
                .ok_or_else(|| Error::RejectedRelation(rel.to_string()))?;
            let h = g.intern(head, EntityKind::Item);
            let t = g.intern(tail, EntityKind::Attribute);
            if h == t {
                log::warn!("{source}:{}: dropping self-loop on `{head}`", lineno + 1);
                continue;
            }
            g.triples.insert((h.0, r, t.0));
        }

        let alias_source = format!("{source} (aliases)");
        for (lineno, line) in aliases.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: AliasLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: alias_source.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            let id = g.intern(&parsed.entity, parsed.kind.unwrap_or(EntityKind::Attribute));
            let entity = &mut g.entities[id.0];
            if let Some(kind) = parsed.kind {
                entity.kind = kind;
            }
            for a in parsed.aliases {
                if !entity.aliases.contains(&a) {
                    entity.aliases.push(a);
                }
            }
        }
        g.rebuild();
        Ok(g)
    }

    /// Loads forward triples and the alias lexicon from disk.
    pub fn load_triples(path: &Path, alias_path: &Path) -> Result<Self> {
        let triples = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let aliases = fs::read_to_string(alias_path).map_err(|e| Error::io(alias_path, e))?;
        Self::from_strs(&triples, &aliases, &path.display().to_string())
    }

    fn intern(&mut self, name: &str, kind: EntityKind) -> EntityId {
        if let Some(&id) = self.names.get(name) {
            return id;
        }
        let id = EntityId(self.entities.len());
        self.entities.push(Entity {
            name: name.to_string(),
            kind,
            aliases: Vec::new(),
        });
        self.names.insert(name.to_string(), id);
        id
    }

    fn rebuild(&mut self) {
        self.names = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), EntityId(i)))
            .collect();

        self.neighbor_index = vec![Vec::new(); self.entities.len()];
        for &(h, r, t) in &self.triples {
            let slot = &mut self.neighbor_index[h];
            match slot.last_mut() {
                Some((rel, tails)) if rel.0 == r => tails.push(EntityId(t)),
                _ => slot.push((RelationId(r), vec![EntityId(t)])),
            }
        }

        // Canonical names of items and attributes first, then explicit aliases;
        // the first entity to claim a surface form keeps it.
        self.lexicon.clear();
        for (i, e) in self.entities.iter().enumerate() {
            if e.kind != EntityKind::Category {
                let key = normalize_text(&e.name);
                if !key.is_empty() {
                    self.lexicon.entry(key).or_insert(EntityId(i));
                }
            }
        }
        for (i, e) in self.entities.iter().enumerate() {
            for a in &e.aliases {
                let key = normalize_text(a);
                if !key.is_empty() {
                    self.lexicon.entry(key).or_insert(EntityId(i));
                }
            }
        }
        self.max_alias_words = self
            .lexicon
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(0);
    }

    /// Adds inverse relations, the category entities, and `Belong` links from
    /// every attribute value to the category of the relation that reaches it.
    /// `Belong` gets an inverse too, so categories can start a reasoning path.
    pub fn expand(&self) -> KnowledgeGraph {
        if self.expanded {
            return self.clone();
        }
        let mut g = self.clone();
        for (i, name) in RETAINED_RELATIONS.iter().enumerate() {
            let inv = RelationId(g.relations.len());
            g.relations.push(Relation {
                name: format!("{name}^-1"),
                inverse_of: Some(RelationId(i)),
            });
            g.relations[i].inverse_of = Some(inv);
        }
        let belong = RelationId(g.relations.len());
        let belong_inv = RelationId(belong.0 + 1);
        g.relations.push(Relation {
            name: BELONG.to_string(),
            inverse_of: Some(belong_inv),
        });
        g.relations.push(Relation {
            name: format!("{BELONG}^-1"),
            inverse_of: Some(belong),
        });

        let categories: Vec<EntityId> = RETAINED_RELATIONS
            .iter()
            .map(|n| {
                let id = g.intern(n, EntityKind::Category);
                g.entities[id.0].kind = EntityKind::Category;
                id
            })
            .collect();

        let originals: Vec<(usize, usize, usize)> = self.triples.iter().copied().collect();
        for (h, r, t) in originals {
            let inv = g.relations[r].inverse_of.expect("forward relation has inverse").0;
            g.triples.insert((t, inv, h));
            let cat = categories[r].0;
            if t != cat {
                g.triples.insert((t, belong.0, cat));
                g.triples.insert((cat, belong_inv.0, t));
            }
        }
        g.expanded = true;
        g.rebuild();
        g
    }

    pub fn is_expanded(&self) -> bool {
        self.expanded
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn triples(&self) -> impl Iterator<Item = (EntityId, RelationId, EntityId)> + '_ {
        self.triples
            .iter()
            .map(|&(h, r, t)| (EntityId(h), RelationId(r), EntityId(t)))
    }

    pub fn contains(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.triples.contains(&(h.0, r.0, t.0))
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity> {
        self.entities.get(id.0).ok_or(Error::UnknownEntity(id.0))
    }

    pub fn name(&self, id: EntityId) -> &str {
        self.entities.get(id.0).map(|e| e.name.as_str()).unwrap_or("?")
    }

    pub fn kind(&self, id: EntityId) -> Option<EntityKind> {
        self.entities.get(id.0).map(|e| e.kind)
    }

    pub fn relation(&self, id: RelationId) -> Option<&Relation> {
        self.relations.get(id.0)
    }

    pub fn find(&self, name: &str) -> Option<EntityId> {
        self.names.get(name).copied()
    }

    pub fn lexicon(&self) -> &HashMap<String, EntityId> {
        &self.lexicon
    }

    /// Longest alias, in words.
    pub fn max_alias_words(&self) -> usize {
        self.max_alias_words
    }

    /// Category entities in id order.
    pub fn categories(&self) -> Vec<EntityId> {
        (0..self.entities.len())
            .map(EntityId)
            .filter(|&e| self.entities[e.0].kind == EntityKind::Category)
            .collect()
    }

    /// Tails of `v` under relation `r`, sorted by id.
    pub fn neighbors_by(&self, v: EntityId, r: RelationId) -> &[EntityId] {
        self.neighbor_index
            .get(v.0)
            .and_then(|rels| rels.iter().find(|(rel, _)| *rel == r))
            .map(|(_, tails)| tails.as_slice())
            .unwrap_or(&[])
    }

    /// All `(neighbor, relation)` pairs of `v`, ordered by relation id then entity id.
    pub fn neighbors(&self, v: EntityId) -> Result<Vec<(EntityId, RelationId)>> {
        let rels = self.neighbor_index.get(v.0).ok_or(Error::UnknownEntity(v.0))?;
        Ok(rels
            .iter()
            .flat_map(|(r, tails)| tails.iter().map(move |t| (*t, *r)))
            .collect())
    }

    /// Distinct neighbor entities of `v`, sorted by id.
    pub fn neighbor_entities(&self, v: EntityId) -> Result<Vec<EntityId>> {
        let mut out: Vec<EntityId> = self.neighbors(v)?.into_iter().map(|(e, _)| e).collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub(crate) fn relation_groups(&self, v: EntityId) -> &[(RelationId, Vec<EntityId>)] {
        self.neighbor_index.get(v.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_adjacent(&self, a: EntityId, b: EntityId) -> bool {
        self.relation_groups(a)
            .iter()
            .any(|(_, tails)| tails.binary_search(&b).is_ok())
    }

    /// First relation (by id) linking `a` to `b`.
    pub fn relation_between(&self, a: EntityId, b: EntityId) -> Option<RelationId> {
        self.relation_groups(a)
            .iter()
            .find(|(_, tails)| tails.binary_search(&b).is_ok())
            .map(|(r, _)| *r)
    }

    /// The category reached from `v` through `Belong`, if any.
    pub fn category_of(&self, v: EntityId) -> Option<EntityId> {
        let belong = self.relations.iter().position(|r| r.name == BELONG)?;
        self.neighbors_by(v, RelationId(belong)).first().copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let stored = Stored {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triples: self.triples.iter().copied().collect(),
            expanded: self.expanded,
        };
        Ok(bincode::serialize(&stored)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let stored: Stored = bincode::deserialize(bytes)?;
        let mut g = KnowledgeGraph {
            entities: stored.entities,
            relations: stored.relations,
            triples: stored.triples.into_iter().collect(),
            neighbor_index: Vec::new(),
            names: HashMap::new(),
            lexicon: HashMap::new(),
            max_alias_words: 0,
            expanded: stored.expanded,
        };
        g.rebuild();
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(tsv: &str) -> KnowledgeGraph {
        KnowledgeGraph::from_strs(tsv, "", "test").unwrap()
    }

    #[test]
    fn single_line_parses() {
        let g = graph("Annabelle\tGenre\tHorror Film\n");
        let a = g.find("Annabelle").unwrap();
        let h = g.find("Horror Film").unwrap();
        assert_eq!(g.triple_count(), 1);
        assert!(g.contains(a, RelationId(3), h));
        assert_eq!(g.kind(a), Some(EntityKind::Item));
        assert_eq!(g.kind(h), Some(EntityKind::Attribute));
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let g = graph("");
        assert_eq!(g.entity_count(), 0);
        assert_eq!(g.triple_count(), 0);
    }

    #[test]
    fn duplicates_are_merged() {
        let g = graph("A\tGenre\tB\nA\tGenre\tB\n");
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KnowledgeGraph::from_strs("A\tGenre\tB\nbroken line\n", "", "t.tsv").unwrap_err();
        assert!(err.to_string().starts_with("t.tsv:2:"), "{err}");
    }

    #[test]
    fn unknown_relation_is_rejected() {
        let err = KnowledgeGraph::from_strs("A\tProducer\tB\n", "", "t.tsv").unwrap_err();
        assert!(matches!(err, Error::RejectedRelation(ref r) if r == "Producer"));
    }

    #[test]
    fn ids_follow_first_appearance() {
        let g = graph("X\tActor\tY\nZ\tActor\tX\n");
        assert_eq!(g.find("X"), Some(EntityId(0)));
        assert_eq!(g.find("Y"), Some(EntityId(1)));
        assert_eq!(g.find("Z"), Some(EntityId(2)));
    }

    #[test]
    fn expansion_of_one_triple() {
        let g = graph("A\tGenre\tB\n").expand();
        let (a, b) = (g.find("A").unwrap(), g.find("B").unwrap());
        let cat = g.find("Genre").unwrap();
        assert_eq!(g.relation_count(), 12);
        assert_eq!(g.categories().len(), 5);
        // forward, inverse, Belong, and Belong^-1.
        assert_eq!(g.triple_count(), 4);
        let genre_inv = RelationId(8);
        let belong = RelationId(10);
        assert!(g.contains(b, genre_inv, a));
        assert!(g.contains(b, belong, cat));
        assert_eq!(g.neighbors(b).unwrap(), vec![(a, genre_inv), (cat, belong)]);
        assert_eq!(g.neighbors(cat).unwrap(), vec![(b, RelationId(11))]);
        assert_eq!(g.category_of(b), Some(cat));
    }

    #[test]
    fn expanding_empty_graph_creates_isolated_categories() {
        let g = graph("").expand();
        assert_eq!(g.triple_count(), 0);
        assert_eq!(g.entity_count(), 5);
        for c in g.categories() {
            assert!(g.neighbors(c).unwrap().is_empty());
        }
    }

    #[test]
    fn neighbor_order_and_errors() {
        let g = graph("A\tActor\tB\nA\tDirector\tC\n");
        let (b, c) = (g.find("B").unwrap(), g.find("C").unwrap());
        let a = g.find("A").unwrap();
        assert_eq!(g.neighbors(a).unwrap(), vec![(b, RelationId(0)), (c, RelationId(1))]);
        assert!(g.neighbors(b).unwrap().is_empty());
        assert!(matches!(g.neighbors(EntityId(99)), Err(Error::UnknownEntity(99))));
    }

    #[test]
    fn aliases_and_kinds_from_lexicon_file() {
        let aliases = r#"{"entity": "Horror Film", "kind": "attribute", "aliases": ["horror", "scary movies"]}
{"entity": "Solo", "kind": "item", "aliases": []}"#;
        let g = KnowledgeGraph::from_strs("Annabelle\tGenre\tHorror Film\n", aliases, "t").unwrap();
        let h = g.find("Horror Film").unwrap();
        assert_eq!(g.lexicon().get("horror"), Some(&h));
        assert_eq!(g.lexicon().get("scary movies"), Some(&h));
        assert_eq!(g.lexicon().get("horror film"), Some(&h));
        assert_eq!(g.kind(g.find("Solo").unwrap()), Some(EntityKind::Item));
    }

    #[test]
    fn bytes_round_trip() {
        let g = graph("A\tGenre\tB\nC\tActor\tD\n").expand();
        let back = KnowledgeGraph::from_bytes(&g.to_bytes().unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  I love HORROR-movies!! "), "i love horror movies");
        assert_eq!(normalize_text(""), "");
    }
}
