//! Seeded generators for synthetic graphs and corpora with known structure,
//! used by tests, benchmarks, and the demo data.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{parse_corpus, ConversationRecord, LoadDiagnostics};
use crate::error::Result;
use crate::kg::{KnowledgeGraph, RETAINED_RELATIONS};

/// Raw files of a generated dataset, in the on-disk formats.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticData {
    pub triples: String,
    pub aliases: String,
    pub corpus: String,
}

impl SyntheticData {
    /// Loads and expands the graph, then links the corpus against it.
    pub fn load(&self) -> Result<(KnowledgeGraph, Vec<ConversationRecord>, LoadDiagnostics)> {
        let kg = KnowledgeGraph::from_strs(&self.triples, &self.aliases, "synthetic")?.expand();
        let (convs, diag) = parse_corpus(&self.corpus, &kg, "synthetic")?;
        Ok((kg, convs, diag))
    }
}

struct Conversation {
    id: String,
    turns: Vec<serde_json::Value>,
}

impl Conversation {
    fn new(id: String) -> Self {
        Conversation { id, turns: Vec::new() }
    }

    fn seeker(&mut self, text: String, entities: &[&str]) {
        self.turns.push(json!({"speaker": "seeker", "text": text, "entities": entities}));
    }

    fn wizard(&mut self, text: String, entities: &[&str], action: &str) {
        self.turns
            .push(json!({"speaker": "wizard", "text": text, "entities": entities, "action": action}));
    }

    fn line(&self) -> String {
        json!({"id": self.id, "turns": self.turns}).to_string()
    }
}

fn alias_line(name: &str, kind: &str) -> String {
    json!({"entity": name, "kind": kind, "aliases": [name.to_lowercase()]}).to_string()
}

fn filler<R: Rng>(rng: &mut R, pool: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| pool.choose(rng).unwrap().to_string()).collect()
}

const FILLER: [&str; 24] = [
    "i", "really", "think", "maybe", "something", "would", "like", "watch", "tonight", "movie", "please", "want", "some",
    "good", "nice", "fun", "the", "a", "and", "so", "just", "for", "me", "now",
];

/// Random item/attribute graph with exactly `n_triples` distinct forward
/// triples and no self-loops.
pub fn random_kg(n_triples: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (n_triples / 4).max(2);
    let attrs = (n_triples / 6).max(2);
    let mut seen = BTreeSet::new();
    let mut out = String::new();
    while seen.len() < n_triples {
        let h = rng.gen_range(0..items);
        let r = RETAINED_RELATIONS[rng.gen_range(0..RETAINED_RELATIONS.len())];
        let t = rng.gen_range(0..attrs);
        if seen.insert((h, r, t)) {
            out.push_str(&format!("item{h}\t{r}\tattr{r}{t}\n"));
        }
    }
    out
}

/// Corpus where every entity has its own distinctive token: 45 item and
/// attribute entities (50 with the categories), `n_convs` conversations of
/// ten rounds, each seeker turn naming one or two entities among one or two
/// words from a small filler pool; system turns only acknowledge.
pub fn planted_mi(n_convs: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<String> = (0..15).map(|i| format!("film{i:02}")).collect();
    let genres: Vec<String> = (0..10).map(|i| format!("genre{i:02}")).collect();
    let actors: Vec<String> = (0..20).map(|i| format!("actor{i:02}")).collect();
    let mut triples = String::new();
    for (i, item) in items.iter().enumerate() {
        triples.push_str(&format!("{item}\tGenre\t{}\n", genres[i % genres.len()]));
        triples.push_str(&format!("{item}\tActor\t{}\n", actors[i]));
        triples.push_str(&format!("{item}\tActor\t{}\n", actors[(i + 15) % actors.len()]));
    }
    let mut aliases = String::new();
    for i in &items {
        aliases.push_str(&alias_line(i, "item"));
        aliases.push('\n');
    }
    for a in genres.iter().chain(&actors) {
        aliases.push_str(&alias_line(a, "attribute"));
        aliases.push('\n');
    }
    let universe: Vec<&String> = items.iter().chain(&genres).chain(&actors).collect();
    let mut corpus = String::new();
    for c in 0..n_convs {
        let mut conv = Conversation::new(format!("mi-{c}"));
        for _ in 0..10 {
            let k = rng.gen_range(1..=2);
            let picked: Vec<&str> = universe.choose_multiple(&mut rng, k).map(|s| s.as_str()).collect();
            let mut words = filler(&mut rng, &FILLER[..8], 1, 2);
            for p in &picked {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, p.to_string());
            }
            conv.seeker(words.join(" "), &picked);
            conv.wizard("ok".to_string(), &[], "chat");
        }
        corpus.push_str(&conv.line());
        corpus.push('\n');
    }
    SyntheticData {
        triples,
        aliases,
        corpus,
    }
}

pub const POLICY_TOKENS: [(&str, &str); 3] = [("alpha", "query"), ("beta", "recommend"), ("gamma", "chat")];

/// Corpus where the system action after each seeker turn is fixed by one
/// planted token in that turn. No entities are mentioned.
pub fn planted_policy(n_convs: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replies = [
        ("query", ["what do you like", "which one do you prefer", "tell me your taste"]),
        ("recommend", ["try this one", "you could watch that", "here is my pick"]),
        ("chat", ["have fun", "bye now", "thanks for chatting"]),
    ];
    let mut corpus = String::new();
    for c in 0..n_convs {
        let mut conv = Conversation::new(format!("policy-{c}"));
        for _ in 0..rng.gen_range(2..=4) {
            let (token, action) = *POLICY_TOKENS.choose(&mut rng).unwrap();
            let mut words = filler(&mut rng, &FILLER, 3, 6);
            let at = rng.gen_range(0..=words.len());
            words.insert(at, token.to_string());
            conv.seeker(words.join(" "), &[]);
            let pool = replies.iter().find(|(a, _)| *a == action).unwrap().1;
            conv.wizard(pool.choose(&mut rng).unwrap().to_string(), &[], action);
        }
        corpus.push_str(&conv.line());
        corpus.push('\n');
    }
    SyntheticData {
        triples: "film\tGenre\tdrama\n".into(),
        aliases: String::new(),
        corpus,
    }
}

/// 295 entities before expansion (225 items, 10 genres, 60 actors; 300 with
/// the categories). Every item has one genre and two actors, and every
/// (genre, actor) pair belongs to at most one item. A conversation names a
/// genre and an actor in random order over two seeker turns, and the system
/// recommends the unique item carrying both, explaining it by the attribute
/// named first.
pub fn planted_reasoner(n_convs: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genres: Vec<String> = (0..10).map(|i| format!("genre{i:02}")).collect();
    let actors: Vec<String> = (0..60).map(|i| format!("actor{i:02}")).collect();
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut items: Vec<(String, usize, [usize; 2])> = Vec::new();
    while items.len() < 225 {
        let g = rng.gen_range(0..genres.len());
        let a1 = rng.gen_range(0..actors.len());
        let a2 = rng.gen_range(0..actors.len());
        if a1 == a2 || used.contains(&(g, a1)) || used.contains(&(g, a2)) {
            continue;
        }
        used.insert((g, a1));
        used.insert((g, a2));
        items.push((format!("film{:03}", items.len()), g, [a1, a2]));
    }
    let mut triples = String::new();
    let mut aliases = String::new();
    for (name, g, a) in &items {
        triples.push_str(&format!("{name}\tGenre\t{}\n", genres[*g]));
        triples.push_str(&format!("{name}\tActor\t{}\n", actors[a[0]]));
        triples.push_str(&format!("{name}\tActor\t{}\n", actors[a[1]]));
        aliases.push_str(&alias_line(name, "item"));
        aliases.push('\n');
    }
    for a in genres.iter().chain(&actors) {
        aliases.push_str(&alias_line(a, "attribute"));
        aliases.push('\n');
    }
    let mut corpus = String::new();
    for c in 0..n_convs {
        let (name, g, a) = &items[rng.gen_range(0..items.len())];
        let actor = &actors[a[rng.gen_range(0..2)]];
        let genre = &genres[*g];
        let mut attrs = [genre.as_str(), actor.as_str()];
        attrs.shuffle(&mut rng);
        let mut conv = Conversation::new(format!("reason-{c}"));
        conv.seeker(format!("hello i am looking for {} {}", attrs[0], FILLER.choose(&mut rng).unwrap()), &[attrs[0]]);
        conv.wizard("anything else you like".into(), &[], "query");
        conv.seeker(format!("also {} {}", attrs[1], FILLER.choose(&mut rng).unwrap()), &[attrs[1]]);
        conv.wizard(format!("you should watch {name} with {}", attrs[0]), &[name, attrs[0]], "recommend");
        corpus.push_str(&conv.line());
        corpus.push('\n');
    }
    SyntheticData {
        triples,
        aliases,
        corpus,
    }
}

pub const TOY_TRIPLES: &str = "Annabelle\tGenre\tHorror Film\n\
Dead Silence\tGenre\tHorror Film\n\
Dead Silence\tDirector\tJames Wan\n\
Dead Silence\tTime\t2007\n";

pub const TOY_ALIASES: &str = r#"{"entity": "Annabelle", "kind": "item", "aliases": ["annabelle"]}
{"entity": "Dead Silence", "kind": "item", "aliases": ["dead silence"]}
{"entity": "Horror Film", "kind": "attribute", "aliases": ["horror", "horror film", "horror films", "horror movie", "horror movies", "scary movies"]}
{"entity": "James Wan", "kind": "attribute", "aliases": ["james wan", "wan"]}
{"entity": "2007", "kind": "attribute", "aliases": ["2007"]}
"#;

/// Templated dialogues over the five-entity toy graph: the seeker asks for a
/// movie, says they like horror films similar to Annabelle, and is
/// recommended Dead Silence by James Wan.
pub fn toy_corpus(n_convs: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let greetings = [
        "Hi, I am looking for a movie recommendation.",
        "Hello! Can you suggest a movie?",
        "Hi there, I want to watch a film tonight.",
        "Hey, any movie ideas?",
    ];
    let queries = [
        "What kind of movies do you like?",
        "What genre are you in the mood for?",
        "Sure! What sort of films do you enjoy?",
    ];
    let likes = [
        "I love horror movies similar to Annabelle.",
        "I like horror films like Annabelle.",
        "Something scary, I enjoyed Annabelle, horror is my thing.",
        "Horror movies, maybe like Annabelle.",
    ];
    let recs = [
        "Dead Silence might be suitable for you! It is directed by James Wan.",
        "You should try Dead Silence, a horror film directed by James Wan.",
        "How about Dead Silence? James Wan directed it.",
    ];
    let thanks = ["Thanks, I will watch it!", "Great, thank you.", "Sounds good, thanks!"];
    let byes = ["You're welcome, enjoy the movie!", "Glad I could help, bye!", "Have a good time!"];
    let mut corpus = String::new();
    for c in 0..n_convs {
        let mut conv = Conversation::new(format!("toy-{c}"));
        // Some conversations open directly with the preference.
        if c % 2 == 0 {
            conv.seeker(greetings.choose(&mut rng).unwrap().to_string(), &[]);
            conv.wizard(queries.choose(&mut rng).unwrap().to_string(), &[], "query");
        }
        conv.seeker(likes.choose(&mut rng).unwrap().to_string(), &["Horror Film", "Annabelle"]);
        conv.wizard(recs.choose(&mut rng).unwrap().to_string(), &["Dead Silence", "James Wan"], "recommend");
        conv.seeker(thanks.choose(&mut rng).unwrap().to_string(), &[]);
        conv.wizard(byes.choose(&mut rng).unwrap().to_string(), &[], "chat");
        corpus.push_str(&conv.line());
        corpus.push('\n');
    }
    corpus
}

pub fn toy_data(n_convs: usize, seed: u64) -> SyntheticData {
    SyntheticData {
        triples: TOY_TRIPLES.into(),
        aliases: TOY_ALIASES.into(),
        corpus: toy_corpus(n_convs, seed),
    }
}

pub const TOY_TEMPLATES: &str = r#"{
  "recommend": [
    "{STEP1} might be suitable for you! It is {REL} {STEP2}.",
    "You could watch {STEP1}, {REL} {STEP2}.",
    "I think you will enjoy {STEP1}. It is {REL} {STEP2}.",
    "How about {STEP1}?"
  ],
  "query": [
    "What kind of {REL} do you like?",
    "Which {REL} are you in the mood for?",
    "Is there a {REL} you enjoy?",
    "What kind of movies do you like?"
  ],
  "chat": [
    "You're welcome, enjoy the movie!",
    "Glad I could help.",
    "Have a good time!"
  ],
  "relations": {
    "Actor": "starring",
    "Director": "directed by",
    "Time": "released in",
    "Genre": "a",
    "Subject": "about"
  }
}
"#;
