//! Conversation ingestion, entity linking, and supervision labels.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{normalize_text, EntityId, EntityKind, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Wizard,
}

/// Dialogue action. The declaration order doubles as the argmax tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Query,
    Recommend,
    Chat,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Query, Action::Recommend, Action::Chat];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Query => "query",
            Action::Recommend => "recommend",
            Action::Chat => "chat",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub entities: Vec<EntityId>,
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Supervision for one reasoning step pair, attached to the round whose
/// system response it explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningLabel {
    pub round: usize,
    pub start: EntityId,
    pub first_target: EntityId,
    pub second_target: Option<EntityId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadDiagnostics {
    pub conversations: usize,
    pub dropped_mentions: usize,
    pub merged_turns: usize,
    pub skipped_empty: usize,
}

/// One conversation round: the previous system turn (if any) followed by the
/// user turn, plus the index of the system turn that answers it.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub index: usize,
    pub text: String,
    pub entities: Vec<EntityId>,
    pub response: Option<usize>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
    entities: Option<Vec<String>>,
    action: Option<Action>,
}

#[derive(Deserialize)]
struct RawConversation {
    id: String,
    turns: Vec<RawTurn>,
}

/// Longest-match-first alias scan over the normalized text. Every occurrence
/// is reported, in textual order.
pub fn link_entities(text: &str, kg: &KnowledgeGraph) -> Vec<EntityId> {
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Vec::new();
    }
    let tokens: Vec<&str> = norm.split(' ').collect();
    let lexicon = kg.lexicon();
    let longest = kg.max_alias_words();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let max_len = longest.min(tokens.len() - i);
        let hit = (1..=max_len)
            .rev()
            .find_map(|len| lexicon.get(&tokens[i..i + len].join(" ")).map(|id| (*id, len)));
        match hit {
            Some((id, len)) => {
                out.push(id);
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Parses corpus JSON lines. Turns without an `entities` field are linked
/// from their text.
pub fn parse_corpus(text: &str, kg: &KnowledgeGraph, source: &str) -> Result<(Vec<ConversationRecord>, LoadDiagnostics)> {
    let mut diag = LoadDiagnostics::default();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawConversation = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let turns: Vec<Turn> = raw
            .turns
            .into_iter()
            .map(|t| {
                let entities = match t.entities {
                    Some(names) => names
                        .iter()
                        .filter_map(|n| {
                            let id = kg.find(n);
                            if id.is_none() {
                                diag.dropped_mentions += 1;
                            }
                            id
                        })
                        .collect(),
                    None => link_entities(&t.text, kg),
                };
                Turn {
                    speaker: t.speaker,
                    text: t.text,
                    entities,
                    action: t.action,
                }
            })
            .collect();
        if turns.is_empty() {
            diag.skipped_empty += 1;
            continue;
        }
        let (turns, merged) = repair_turns(turns);
        diag.merged_turns += merged;
        out.push(ConversationRecord { id: raw.id, turns });
    }
    diag.conversations = out.len();
    if diag.dropped_mentions > 0 {
        log::warn!("{source}: dropped {} unresolvable entity mention(s)", diag.dropped_mentions);
    }
    Ok((out, diag))
}

pub fn load_corpus(path: &Path, kg: &KnowledgeGraph) -> Result<(Vec<ConversationRecord>, LoadDiagnostics)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, kg, &path.display().to_string())
}

/// Merges consecutive same-speaker turns and makes the sequence start with the
/// seeker (an empty seeker turn is inserted when the system speaks first).
fn repair_turns(turns: Vec<Turn>) -> (Vec<Turn>, usize) {
    let mut out: Vec<Turn> = Vec::with_capacity(turns.len());
    let mut merged = 0;
    for t in turns {
        match out.last_mut() {
            Some(prev) if prev.speaker == t.speaker => {
                if !t.text.is_empty() {
                    if !prev.text.is_empty() {
                        prev.text.push(' ');
                    }
                    prev.text.push_str(&t.text);
                }
                prev.entities.extend(t.entities);
                prev.action = prev.action.or(t.action);
                merged += 1;
            }
            _ => out.push(t),
        }
    }
    if out.first().map(|t| t.speaker) == Some(Speaker::Wizard) {
        out.insert(
            0,
            Turn {
                speaker: Speaker::Seeker,
                text: String::new(),
                entities: Vec::new(),
                action: None,
            },
        );
    }
    (out, merged)
}

/// Fills in missing wizard action labels; explicit labels are kept.
pub fn derive_action_labels(mut rec: ConversationRecord, kg: &KnowledgeGraph) -> ConversationRecord {
    for t in &mut rec.turns {
        if t.speaker != Speaker::Wizard || t.action.is_some() {
            continue;
        }
        let kinds: Vec<EntityKind> = t.entities.iter().filter_map(|e| kg.kind(*e)).collect();
        t.action = Some(if kinds.contains(&EntityKind::Item) {
            Action::Recommend
        } else if !kinds.is_empty() || t.text.trim_end().ends_with('?') {
            Action::Query
        } else {
            Action::Chat
        });
    }
    rec
}

/// Splits an alternating conversation into rounds.
pub fn rounds(rec: &ConversationRecord) -> Vec<Round> {
    let mut out = Vec::new();
    for (k, i) in (0..rec.turns.len()).step_by(2).enumerate() {
        let seeker = &rec.turns[i];
        let mut text = String::new();
        let mut entities = Vec::new();
        if i > 0 {
            let prev = &rec.turns[i - 1];
            text.push_str(&prev.text);
            entities.extend_from_slice(&prev.entities);
        }
        if !seeker.text.is_empty() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&seeker.text);
        }
        entities.extend_from_slice(&seeker.entities);
        let response = (i + 1 < rec.turns.len()).then_some(i + 1);
        out.push(Round {
            index: k,
            text,
            entities,
            response,
        });
    }
    out
}

fn dedup_keep_first(ids: impl Iterator<Item = EntityId>) -> Vec<EntityId> {
    let mut seen = HashSet::new();
    ids.filter(|e| seen.insert(*e)).collect()
}

/// Candidate starting points before the system turn of `round`: the latest
/// round's mentions (most recent first), else all earlier mentions, else the
/// category entities.
pub fn start_candidates(all_rounds: &[Round], round: usize, kg: &KnowledgeGraph) -> Vec<EntityId> {
    let latest = dedup_keep_first(all_rounds[round].entities.iter().rev().copied());
    if !latest.is_empty() {
        return latest;
    }
    let earlier = dedup_keep_first(all_rounds[..round].iter().rev().flat_map(|r| r.entities.iter().rev().copied()));
    if !earlier.is_empty() {
        return earlier;
    }
    kg.categories()
}

fn wants(action: Action, kind: Option<EntityKind>) -> bool {
    match action {
        Action::Recommend => kind == Some(EntityKind::Item),
        Action::Query => matches!(kind, Some(EntityKind::Attribute | EntityKind::Category)),
        Action::Chat => false,
    }
}

/// Extracts reasoning supervision from the system turns labelled query or
/// recommend. Turns without a derivable path are skipped.
pub fn derive_reasoning_labels(rec: &ConversationRecord, kg: &KnowledgeGraph) -> Vec<ReasoningLabel> {
    let all_rounds = rounds(rec);
    let mut out = Vec::new();
    for r in &all_rounds {
        let Some(resp) = r.response else { continue };
        let turn = &rec.turns[resp];
        let action = match turn.action {
            Some(a @ (Action::Query | Action::Recommend)) => a,
            _ => continue,
        };
        let targets = dedup_keep_first(turn.entities.iter().copied());
        if targets.is_empty() {
            continue;
        }
        let starts = start_candidates(&all_rounds, r.index, kg);
        if let Some(label) = label_for_turn(kg, r.index, action, &starts, &targets) {
            debug_assert!(kg.is_adjacent(label.start, label.first_target));
            out.push(label);
        }
    }
    out
}

fn label_for_turn(
    kg: &KnowledgeGraph,
    round: usize,
    action: Action,
    starts: &[EntityId],
    targets: &[EntityId],
) -> Option<ReasoningLabel> {
    let preferred: Vec<EntityId> = targets.iter().copied().filter(|t| wants(action, kg.kind(*t))).collect();

    let direct = [preferred.as_slice(), targets].into_iter().find_map(|pool| {
        pool.iter()
            .find_map(|&t| starts.iter().find(|&&s| s != t && kg.is_adjacent(s, t)).map(|&s| (s, t)))
    });

    if let Some((start, first)) = direct {
        let second = targets
            .iter()
            .copied()
            .find(|&t| t != start && t != first && kg.is_adjacent(first, t));
        return Some(ReasoningLabel {
            round,
            start,
            first_target: first,
            second_target: second,
        });
    }

    // Two hops: start -> bridge -> target, bridge preferably mentioned too.
    for &t in &preferred {
        for &s in starts {
            let Ok(from_start) = kg.neighbor_entities(s) else { continue };
            let bridges: Vec<EntityId> = from_start
                .into_iter()
                .filter(|b| *b != t && kg.is_adjacent(*b, t))
                .collect();
            if bridges.is_empty() {
                continue;
            }
            let bridge = targets
                .iter()
                .copied()
                .find(|m| bridges.contains(m))
                .unwrap_or(bridges[0]);
            return Some(ReasoningLabel {
                round,
                start: s,
                first_target: bridge,
                second_target: Some(t),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY_ALIASES: &str = r#"{"entity": "Horror Film", "kind": "attribute", "aliases": ["horror"]}
{"entity": "Annabelle", "kind": "item", "aliases": ["annabelle"]}"#;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::from_strs(
            "Annabelle\tGenre\tHorror Film\nDead Silence\tGenre\tHorror Film\nDead Silence\tDirector\tJames Wan\n",
            TOY_ALIASES,
            "toy",
        )
        .unwrap()
        .expand()
    }

    fn id(kg: &KnowledgeGraph, n: &str) -> EntityId {
        kg.find(n).unwrap()
    }

    #[test]
    fn linking_follows_text_order() {
        let kg = toy();
        assert_eq!(
            link_entities("I love horror movies similar to Annabelle", &kg),
            vec![id(&kg, "Horror Film"), id(&kg, "Annabelle")]
        );
        assert!(link_entities("", &kg).is_empty());
        let a = id(&kg, "Annabelle");
        assert_eq!(link_entities("annabelle annabelle", &kg), vec![a, a]);
    }

    #[test]
    fn longest_alias_wins() {
        let kg = toy();
        let found = link_entities("It is a horror film by James Wan.", &kg);
        assert_eq!(found, vec![id(&kg, "Horror Film"), id(&kg, "James Wan")]);
    }

    #[test]
    fn action_labels() {
        let kg = toy();
        let line = r#"{"id":"c","turns":[{"speaker":"seeker","text":"hi"},{"speaker":"wizard","text":"Dead Silence might be suitable for you!"},{"speaker":"seeker","text":"thanks"},{"speaker":"wizard","text":"What kind of movies do you like?"},{"speaker":"seeker","text":"ok"},{"speaker":"wizard","text":"You're welcome, bye!"},{"speaker":"seeker","text":"x"},{"speaker":"wizard","text":"hello","action":"chat","entities":["Dead Silence"]}]}"#;
        let (recs, _) = parse_corpus(line, &kg, "t").unwrap();
        let rec = derive_action_labels(recs[0].clone(), &kg);
        let actions: Vec<Option<Action>> = rec.turns.iter().filter(|t| t.speaker == Speaker::Wizard).map(|t| t.action).collect();
        assert_eq!(
            actions,
            vec![Some(Action::Recommend), Some(Action::Query), Some(Action::Chat), Some(Action::Chat)]
        );
    }

    #[test]
    fn consecutive_turns_are_merged() {
        let kg = toy();
        let line = r#"{"id":"c","turns":[{"speaker":"wizard","text":"hello"},{"speaker":"seeker","text":"I like"},{"speaker":"seeker","text":"horror"}]}"#;
        let (recs, diag) = parse_corpus(line, &kg, "t").unwrap();
        let t = &recs[0].turns;
        assert_eq!(diag.merged_turns, 1);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].speaker, Speaker::Seeker);
        assert_eq!(t[2].text, "I like horror");
        assert_eq!(t[2].entities, vec![id(&kg, "Horror Film")]);
    }

    #[test]
    fn unknown_entity_names_are_dropped() {
        let kg = toy();
        let line = r#"{"id":"c","turns":[{"speaker":"seeker","text":"x","entities":["Annabelle","Nope"]}]}"#;
        let (recs, diag) = parse_corpus(line, &kg, "t").unwrap();
        assert_eq!(diag.dropped_mentions, 1);
        assert_eq!(recs[0].turns[0].entities, vec![id(&kg, "Annabelle")]);
    }

    #[test]
    fn malformed_json_has_line_number() {
        let kg = toy();
        let err = parse_corpus("\n{oops", &kg, "c.jsonl").unwrap_err().to_string();
        assert!(err.starts_with("c.jsonl:2:"), "{err}");
    }

    #[test]
    fn chain_label() {
        // A -Genre-> B <-Genre- C: A and C are items, B an attribute.
        let kg = KnowledgeGraph::from_strs("A\tGenre\tB\nC\tGenre\tB\n", "", "t").unwrap().expand();
        let (a, b, c) = (id(&kg, "A"), id(&kg, "B"), id(&kg, "C"));
        let rec = ConversationRecord {
            id: "x".into(),
            turns: vec![
                Turn { speaker: Speaker::Seeker, text: "A".into(), entities: vec![a], action: None },
                Turn { speaker: Speaker::Wizard, text: "B C".into(), entities: vec![b, c], action: None },
            ],
        };
        let rec = derive_action_labels(rec, &kg);
        let labels = derive_reasoning_labels(&rec, &kg);
        assert_eq!(
            labels,
            vec![ReasoningLabel { round: 0, start: a, first_target: b, second_target: Some(c) }]
        );
    }

    #[test]
    fn unreachable_recommendation_is_skipped() {
        let kg = KnowledgeGraph::from_strs("A\tGenre\tB\nC\tActor\tD\n", "", "t").unwrap().expand();
        let (a, c) = (id(&kg, "A"), id(&kg, "C"));
        let rec = ConversationRecord {
            id: "x".into(),
            turns: vec![
                Turn { speaker: Speaker::Seeker, text: "A".into(), entities: vec![a], action: None },
                Turn { speaker: Speaker::Wizard, text: "C".into(), entities: vec![c], action: None },
            ],
        };
        let rec = derive_action_labels(rec, &kg);
        assert!(derive_reasoning_labels(&rec, &kg).is_empty());
    }

    #[test]
    fn rounds_pair_previous_reply_with_user_turn() {
        let kg = toy();
        let line = r#"{"id":"c","turns":[{"speaker":"seeker","text":"Hi"},{"speaker":"wizard","text":"What kind of movies do you like?"},{"speaker":"seeker","text":"horror like Annabelle"}]}"#;
        let (recs, _) = parse_corpus(line, &kg, "t").unwrap();
        let rs = rounds(&recs[0]);
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].text, "Hi");
        assert_eq!(rs[0].response, Some(1));
        assert_eq!(rs[1].text, "What kind of movies do you like? horror like Annabelle");
        assert_eq!(rs[1].response, None);
        assert_eq!(rs[1].entities.len(), 2);
    }

    #[test]
    fn action_serialization() {
        assert_eq!(serde_json::to_string(&Action::Recommend).unwrap(), "\"recommend\"");
        assert_eq!(Action::from_index(2), Action::Chat);
    }
}
