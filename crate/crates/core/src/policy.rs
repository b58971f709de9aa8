//! Three-way dialogue action classifier:
//! `a = softmax(W1 relu(W2 q + b2) + b1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Action;
use crate::error::Result;
use crate::numerics::{linear, ParameterStore, Tape, Var};

pub const W1: &str = "policy.w1";
pub const B1: &str = "policy.b1";
pub const W2: &str = "policy.w2";
pub const B2: &str = "policy.b2";
pub const LOG_EPS: f64 = 1e-12;

pub fn param_names() -> Vec<String> {
    [W1, B1, W2, B2].iter().map(|s| s.to_string()).collect()
}

/// Hidden width equals the context width `d`.
pub fn init_params<R: Rng>(store: &mut ParameterStore, d: usize, rng: &mut R) {
    store.insert_uniform(W2, &[d, d], d, rng);
    store.insert_uniform(B2, &[d], d, rng);
    store.insert_uniform(W1, &[3, d], d, rng);
    store.insert_uniform(B1, &[3], d, rng);
}

/// Probabilities over (query, recommend, chat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: [f64; 3],
}

impl ActionDistribution {
    /// Highest-probability action; ties go to the earlier of
    /// query < recommend < chat.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for i in 1..3 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Action::from_index(best)
    }

    pub fn prob(&self, a: Action) -> f64 {
        self.probs[a.index()]
    }
}

pub fn action_probs(tape: &mut Tape, q: Var) -> Result<Var> {
    let w2 = tape.param(W2)?;
    let b2 = tape.param(B2)?;
    let w1 = tape.param(W1)?;
    let b1 = tape.param(B1)?;
    let pre = linear(tape, w2, q, Some(b2))?;
    let hidden = tape.relu(pre);
    let logits = linear(tape, w1, hidden, Some(b1))?;
    Ok(tape.softmax(logits))
}

pub fn predict_action(store: &ParameterStore, q: &[f64]) -> Result<ActionDistribution> {
    let mut tape = Tape::new(store);
    let qv = tape.constant(q.to_vec());
    let p = action_probs(&mut tape, qv)?;
    let v = tape.value(p);
    Ok(ActionDistribution {
        probs: [v[0], v[1], v[2]],
    })
}

/// `-log a[gold]`, clamped.
pub fn policy_loss(tape: &mut Tape, probs: Var, gold: Action) -> Var {
    let p = tape.element(probs, gold.index());
    let lp = tape.log_clamped(p, LOG_EPS);
    tape.scale(lp, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn zero_store(d: usize) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(W2, Tensor::zeros(&[d, d]), true);
        s.insert(B2, Tensor::zeros(&[d]), true);
        s.insert(W1, Tensor::zeros(&[3, d]), true);
        s.insert(B1, Tensor::zeros(&[3]), true);
        s
    }

    #[test]
    fn zero_params_are_uniform_and_break_ties_to_query() {
        let dist = predict_action(&zero_store(4), &[0.3, -1.0, 2.0, 0.0]).unwrap();
        for p in dist.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(dist.argmax(), Action::Query);
    }

    #[test]
    fn strong_query_bias() {
        let mut s = zero_store(2);
        s.insert(B1, Tensor::vector(vec![10.0, 0.0, 0.0]), true);
        let dist = predict_action(&s, &[1.0, 1.0]).unwrap();
        let z = 10f64.exp() + 2.0;
        assert!((dist.probs[0] - 10f64.exp() / z).abs() < 1e-12);
        assert!((dist.probs[0] - 0.99990).abs() < 1e-5);
        assert!((dist.probs[1] - 0.00005).abs() < 1e-5);
        assert_eq!(dist.argmax(), Action::Query);

        let mut shifted = s.clone();
        shifted.insert(B1, Tensor::vector(vec![17.0, 7.0, 7.0]), true);
        let d2 = predict_action(&shifted, &[1.0, 1.0]).unwrap();
        for i in 0..3 {
            assert!((d2.probs[i] - dist.probs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_of_uniform_prediction_is_log_three() {
        let s = zero_store(2);
        let mut tape = Tape::new(&s);
        let q = tape.constant(vec![0.5, 0.5]);
        let p = action_probs(&mut tape, q).unwrap();
        for a in Action::ALL {
            let l = policy_loss(&mut tape, p, a);
            assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-12);
        }
        let certain = tape.constant(vec![0.0, 1.0, 0.0]);
        let l = policy_loss(&mut tape, certain, Action::Recommend);
        assert_eq!(tape.scalar(l), 0.0);
    }
}
