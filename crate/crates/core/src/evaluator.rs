//! Ranking and generation metrics, and replay of held-out conversations.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::context::EncodedConversation;
use crate::corpus::Action;
use crate::engine::Engine;
use crate::error::Result;
use crate::kg::{EntityId, EntityKind};

pub const BLEU_EPS: f64 = 1e-9;
pub const MAX_ORDER: usize = 4;

/// 1 when `gold` is among the first `k` entries.
pub fn recall_at_k(ranked: &[EntityId], gold: EntityId, k: usize) -> f64 {
    if ranked.iter().take(k).any(|e| *e == gold) {
        1.0
    } else {
        0.0
    }
}

fn ngrams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.iter().map(|s| s.to_string()).collect()).collect()
}

/// Unique n-grams over total n-grams across all texts; 0 when there are none.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for t in texts {
        let toks: Vec<&str> = t.as_ref().split_whitespace().collect();
        for g in ngrams(&toks, n) {
            total += 1;
            unique.insert(g);
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

fn bleu_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Default)]
struct BleuCounts {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    cand_len: usize,
    ref_len: usize,
}

fn count(counts: &mut BleuCounts, candidate: &str, references: &[&str]) {
    let cand = bleu_tokens(candidate);
    if cand.is_empty() {
        return;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| bleu_tokens(r)).collect();
    for n in 1..=MAX_ORDER {
        let c: Vec<&str> = cand.iter().map(String::as_str).collect();
        let mut cand_counts: HashMap<Vec<String>, usize> = HashMap::new();
        for g in ngrams(&c, n) {
            *cand_counts.entry(g).or_default() += 1;
        }
        let mut max_ref: HashMap<Vec<String>, usize> = HashMap::new();
        for r in &refs {
            let rt: Vec<&str> = r.iter().map(String::as_str).collect();
            let mut rc: HashMap<Vec<String>, usize> = HashMap::new();
            for g in ngrams(&rt, n) {
                *rc.entry(g).or_default() += 1;
            }
            for (g, k) in rc {
                let slot = max_ref.entry(g).or_default();
                *slot = (*slot).max(k);
            }
        }
        counts.totals[n - 1] += cand_counts.values().sum::<usize>();
        counts.matches[n - 1] += cand_counts
            .iter()
            .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum::<usize>();
    }
    counts.cand_len += cand.len();
    // Closest reference length, shorter on ties.
    counts.ref_len += refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(cand.len()), l))
        .unwrap_or(0);
}

fn score(counts: &BleuCounts) -> f64 {
    if counts.cand_len == 0 {
        return 0.0;
    }
    let orders: Vec<f64> = (0..MAX_ORDER)
        .filter(|&i| counts.totals[i] > 0)
        .map(|i| (counts.matches[i] as f64).max(BLEU_EPS) / counts.totals[i] as f64)
        .collect();
    let log_mean = orders.iter().map(|p| p.ln()).sum::<f64>() / orders.len() as f64;
    let (c, r) = (counts.cand_len as f64, counts.ref_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_mean.exp()
}

/// BLEU of one candidate with uniform weights over the n-gram orders
/// (up to 4) that the candidate has, brevity penalty against the closest
/// reference length, and zero matches smoothed to `1e-9`.
pub fn bleu(candidate: &str, references: &[&str]) -> f64 {
    let mut c = BleuCounts::default();
    count(&mut c, candidate, references);
    score(&c)
}

/// Corpus BLEU: counts and lengths are pooled before the precisions are taken.
pub fn corpus_bleu(pairs: &[(String, Vec<String>)]) -> f64 {
    let mut c = BleuCounts::default();
    for (cand, refs) in pairs {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        count(&mut c, cand, &refs);
    }
    score(&c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "recall@1")]
    pub recall_1: f64,
    #[serde(rename = "recall@10")]
    pub recall_10: f64,
    #[serde(rename = "dist-2")]
    pub dist_2: f64,
    #[serde(rename = "dist-3")]
    pub dist_3: f64,
    #[serde(rename = "dist-4")]
    pub dist_4: f64,
    pub bleu: f64,
}

/// Outcome of replaying held-out conversations turn by turn against the
/// gold history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub metrics: Metrics,
    pub recommend_rounds: usize,
    pub action_accuracy: f64,
    pub generated: Vec<String>,
}

pub fn replay(engine: &Engine, convs: &[EncodedConversation]) -> Result<Replay> {
    let mut hits1 = Vec::new();
    let mut hits10 = Vec::new();
    let mut generated = Vec::new();
    let mut pairs = Vec::new();
    let mut correct = 0usize;
    let mut decided = 0usize;
    for conv in convs {
        let mut state = engine.new_state();
        for r in &conv.rounds {
            engine.observe(&mut state, &r.text, &r.entities)?;
            let Some(resp) = r.response else { continue };
            let gold = &conv.record.turns[resp];
            let seeker_text = conv.record.turns[resp - 1].text.clone();
            let out = engine.decide(&mut state, &seeker_text, r.index as u64)?;
            if let Some(a) = gold.action {
                decided += 1;
                correct += usize::from(a == out.action);
            }
            if gold.action == Some(Action::Recommend) {
                if let Some(&item) = gold.entities.iter().find(|e| engine.kg.kind(**e) == Some(EntityKind::Item)) {
                    let ranked: Vec<EntityId> = out.top_items.iter().map(|s| s.entity).collect();
                    hits1.push(recall_at_k(&ranked, item, 1));
                    hits10.push(recall_at_k(&ranked, item, 10));
                }
            }
            pairs.push((out.reply.clone(), vec![gold.text.clone()]));
            generated.push(out.reply);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Replay {
        metrics: Metrics {
            recall_1: mean(&hits1),
            recall_10: mean(&hits10),
            dist_2: distinct_n(&generated, 2),
            dist_3: distinct_n(&generated, 3),
            dist_4: distinct_n(&generated, 4),
            bleu: corpus_bleu(&pairs),
        },
        recommend_rounds: hits1.len(),
        action_accuracy: if decided == 0 { 0.0 } else { correct as f64 / decided as f64 },
        generated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_cases() {
        let ranked: Vec<EntityId> = (0..20).map(EntityId).collect();
        assert_eq!(recall_at_k(&ranked, EntityId(0), 1), 1.0);
        assert_eq!(recall_at_k(&ranked, EntityId(10), 10), 0.0);
        assert_eq!(recall_at_k(&ranked, EntityId(10), 11), 1.0);
        assert_eq!(recall_at_k(&[], EntityId(0), 5), 0.0);
    }

    #[test]
    fn distinct_hand_cases() {
        assert!((distinct_n(&["a b a b"], 2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(distinct_n(&["x", "x", "x", "x"], 1), 0.25);
        assert_eq!(distinct_n(&["x"], 2), 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(distinct_n(&empty, 1), 0.0);
    }

    #[test]
    fn bleu_hand_cases() {
        assert!((bleu("the cat sat on the mat", &["the cat sat on the mat"]) - 1.0).abs() < 1e-12);
        // p1 = p2 = p3 = 1, no 4-grams; brevity penalty exp(1 - 4/3).
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu("the cat sat", &["the cat sat down"]) - expected).abs() < 1e-12);
        assert!((expected - 0.716531).abs() < 1e-6);
        assert!(bleu("alpha beta", &["gamma delta"]) <= 1e-6);
        assert_eq!(bleu("", &["x"]), 0.0);
    }
}
