//! Surface realization of a reasoning result through slot templates, with an
//! optional HTTP text generator that falls back to the templates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Action;
use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph};

pub const SLOT_STEP1: &str = "{STEP1}";
pub const SLOT_STEP2: &str = "{STEP2}";
pub const SLOT_REL: &str = "{REL}";
const SLOTS: [&str; 3] = [SLOT_STEP1, SLOT_STEP2, SLOT_REL];

fn default_phrases() -> BTreeMap<String, String> {
    [
        ("Actor", "starring"),
        ("Director", "directed by"),
        ("Time", "released in"),
        ("Genre", "a film in the genre"),
        ("Subject", "about"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    #[serde(default)]
    query: Vec<String>,
    #[serde(default)]
    recommend: Vec<String>,
    #[serde(default)]
    chat: Vec<String>,
    #[serde(default)]
    relations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: BTreeMap<Action, Vec<String>>,
    /// Relation name to the phrase that joins an item and its attribute.
    pub relation_phrases: BTreeMap<String, String>,
}

/// Slot values for one realization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots {
    pub step1: Option<String>,
    pub step2: Option<String>,
    pub rel: Option<String>,
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: TemplateFile = serde_json::from_str(text)?;
        let mut relation_phrases = default_phrases();
        relation_phrases.extend(f.relations);
        let templates: BTreeMap<Action, Vec<String>> =
            [(Action::Query, f.query), (Action::Recommend, f.recommend), (Action::Chat, f.chat)].into_iter().collect();
        if let Some((a, _)) = templates.iter().find(|(_, t)| t.is_empty()) {
            return Err(Error::Config(format!("template set has no `{a}` templates")));
        }
        Ok(TemplateSet {
            templates,
            relation_phrases,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Slot values for `action`: on recommend, `{REL}` joins step 1 to step 2;
    /// on query, `{REL}` is the lowercase name of step 1's category (or of
    /// step 1 itself when it is a category).
    pub fn slots(&self, kg: &KnowledgeGraph, action: Action, step1: Option<EntityId>, step2: Option<EntityId>) -> Slots {
        let name = |e: EntityId| kg.name(e).to_string();
        let rel = match (action, step1, step2) {
            (Action::Recommend, Some(a), Some(b)) => kg.relation_between(a, b).and_then(|r| {
                let rel = kg.relation(r)?;
                let base = match rel.inverse_of {
                    Some(inv) if rel.name.ends_with("^-1") => kg.relation(inv)?.name.clone(),
                    _ => rel.name.clone(),
                };
                Some(self.relation_phrases.get(&base).cloned().unwrap_or_else(|| base.to_lowercase()))
            }),
            (Action::Query, Some(a), _) => {
                let cat = if kg.kind(a) == Some(EntityKind::Category) {
                    Some(a)
                } else {
                    kg.category_of(a)
                };
                cat.map(|c| kg.name(c).to_lowercase())
            }
            _ => None,
        };
        Slots {
            step1: step1.map(name),
            step2: step2.map(name),
            rel,
        }
    }

    /// Fills a template chosen by `seed` among those whose slots are all
    /// available.
    pub fn realize(&self, action: Action, slots: &Slots, seed: u64) -> Result<String> {
        let all = &self.templates[&action];
        let provided = [&slots.step1, &slots.step2, &slots.rel];
        let usable: Vec<&String> = all
            .iter()
            .filter(|t| SLOTS.iter().zip(provided).all(|(s, v)| !t.contains(s) || v.is_some()))
            .collect();
        if usable.is_empty() {
            let slot = SLOTS
                .iter()
                .zip(provided)
                .find(|(s, v)| v.is_none() && all.iter().any(|t| t.contains(*s)))
                .map_or(SLOT_STEP1, |(s, _)| *s);
            return Err(Error::MissingSlot {
                action: action.as_str(),
                slot,
            });
        }
        let t = usable[(seed % usable.len() as u64) as usize];
        let mut out = t.clone();
        for (s, v) in SLOTS.iter().zip(provided) {
            if let Some(v) = v {
                out = out.replace(s, v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub action: Action,
    pub entities: Vec<String>,
    pub context: String,
}

#[derive(Debug, Deserialize)]
struct GeneratorResponse {
    text: String,
}

/// Client for an external text generator that speaks
/// `POST {"action","entities","context"}` -> `{"text"}`.
#[derive(Debug)]
pub struct GeneratorAdapter {
    pub endpoint: String,
    pub timeout: Duration,
    pub enabled: bool,
    failures: AtomicU64,
}

impl GeneratorAdapter {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        GeneratorAdapter {
            endpoint: endpoint.to_string(),
            timeout,
            enabled: true,
            failures: AtomicU64::new(0),
        }
    }

    pub fn disabled() -> Self {
        GeneratorAdapter {
            enabled: false,
            ..Self::new("", Duration::from_secs(1))
        }
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn request(&self, req: &GeneratorRequest) -> Result<String> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent
            .post(&self.endpoint)
            .send_json(req)
            .map_err(|e| Error::Generator(e.to_string()))?;
        let body: GeneratorResponse = resp.into_json().map_err(|e| Error::Generator(e.to_string()))?;
        Ok(body.text)
    }

    /// Generated text, or `fallback` when the adapter is disabled or the
    /// request fails.
    pub fn realize_external(&self, req: &GeneratorRequest, fallback: impl FnOnce() -> Result<String>) -> Result<String> {
        if !self.enabled {
            return fallback();
        }
        match self.request(req) {
            Ok(text) => Ok(text),
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                log::warn!("generator at {} failed, using templates: {e}", self.endpoint);
                fallback()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEMPLATES: &str = r#"{
        "recommend": ["{STEP1} might be suitable for you! It is {REL} {STEP2}.", "How about {STEP1}?", "You may enjoy {STEP1}, {REL} {STEP2}."],
        "query": ["What kind of {REL} do you like?", "Any {REL} in mind?", "Tell me more about what you like."],
        "chat": ["You're welcome, enjoy the movie!", "Glad I could help.", "Bye!"]
    }"#;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::from_strs("Dead Silence\tDirector\tJames Wan\nDead Silence\tGenre\tHorror Film\n", "", "t")
            .unwrap()
            .expand()
    }

    #[test]
    fn recommend_names_item_and_relation() {
        let kg = toy();
        let ts = TemplateSet::from_json(TEMPLATES).unwrap();
        let slots = ts.slots(&kg, Action::Recommend, kg.find("Dead Silence"), kg.find("James Wan"));
        assert_eq!(
            ts.realize(Action::Recommend, &slots, 0).unwrap(),
            "Dead Silence might be suitable for you! It is directed by James Wan."
        );
    }

    #[test]
    fn query_names_the_generic_type() {
        let kg = toy();
        let ts = TemplateSet::from_json(TEMPLATES).unwrap();
        let genre = kg.find("Genre");
        assert_eq!(
            ts.realize(Action::Query, &ts.slots(&kg, Action::Query, genre, None), 0).unwrap(),
            "What kind of genre do you like?"
        );
        let horror = kg.find("Horror Film");
        assert_eq!(
            ts.realize(Action::Query, &ts.slots(&kg, Action::Query, horror, None), 0).unwrap(),
            "What kind of genre do you like?"
        );
    }

    #[test]
    fn missing_slots_restrict_choice_or_fail() {
        let kg = toy();
        let ts = TemplateSet::from_json(TEMPLATES).unwrap();
        let only_item = ts.slots(&kg, Action::Recommend, kg.find("Dead Silence"), None);
        for seed in 0..6 {
            assert_eq!(ts.realize(Action::Recommend, &only_item, seed).unwrap(), "How about Dead Silence?");
        }
        let strict = TemplateSet::from_json(
            r#"{"recommend": ["{STEP1} by {STEP2}"], "query": ["{REL}?"], "chat": ["ok"]}"#,
        )
        .unwrap();
        assert!(matches!(
            strict.realize(Action::Recommend, &only_item, 0),
            Err(Error::MissingSlot { slot: "{STEP2}", .. })
        ));
        let chat = ts.realize(Action::Chat, &Slots::default(), 4).unwrap();
        assert!(SLOTS.iter().all(|s| !chat.contains(s)));
    }

    #[test]
    fn disabled_adapter_uses_fallback() {
        let ad = GeneratorAdapter::disabled();
        let req = GeneratorRequest {
            action: Action::Chat,
            entities: vec![],
            context: "hi".into(),
        };
        assert_eq!(ad.realize_external(&req, || Ok("fallback".into())).unwrap(), "fallback");
        assert_eq!(ad.failures(), 0);
    }
}
