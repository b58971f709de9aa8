//! Fusion of the belief state into one preference vector: self-attention
//! over the mentioned entities averaged with a geometrically damped
//! recency mean.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Tape, Var};

pub const W3: &str = "pref.w3";
pub const W4: &str = "pref.w4";

pub fn param_names() -> Vec<String> {
    vec![W3.to_string(), W4.to_string()]
}

/// Attention hidden width equals `d`.
pub fn init_params<R: Rng>(store: &mut ParameterStore, d: usize, rng: &mut R) {
    store.insert_uniform(W4, &[d, d], d, rng);
    store.insert_uniform(W3, &[1, d], d, rng);
}

/// Weights `gamma^(E-i)` for `i = 1..E`, optionally normalized to sum to 1.
pub fn damping_weights(gamma: f64, e: usize, normalize: bool) -> Vec<f64> {
    let raw: Vec<f64> = (1..=e).map(|i| gamma.powi((e - i) as i32)).collect();
    if !normalize {
        return raw;
    }
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Attention weights `softmax(W3 tanh(W4 D))`, one per column.
pub fn attention_weights(tape: &mut Tape, columns: &[Var]) -> Result<Var> {
    if columns.is_empty() {
        return Err(Error::EmptyBelief);
    }
    let w3 = tape.param(W3)?;
    let w4 = tape.param(W4)?;
    let mut scores = Vec::with_capacity(columns.len());
    for &c in columns {
        let h = tape.matvec(w4, c)?;
        let h = tape.tanh(h);
        scores.push(tape.matvec(w3, h)?);
    }
    let s = tape.stack(&scores);
    Ok(tape.softmax(s))
}

fn weighted_sum(tape: &mut Tape, columns: &[Var], weights: Var) -> Result<Var> {
    let parts: Vec<Var> = columns
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let w = tape.element(weights, i);
            tape.scale_by(c, w)
        })
        .collect();
    tape.sum_vecs(&parts)
}

pub fn attend_context(tape: &mut Tape, columns: &[Var]) -> Result<Var> {
    let alpha = attention_weights(tape, columns)?;
    weighted_sum(tape, columns, alpha)
}

pub fn damp_time(tape: &mut Tape, columns: &[Var], gamma: f64, normalize: bool) -> Result<Var> {
    if columns.is_empty() {
        return Err(Error::EmptyBelief);
    }
    let w = damping_weights(gamma, columns.len(), normalize);
    let wv = tape.constant(w);
    weighted_sum(tape, columns, wv)
}

/// `u = (u_cont + u_time) / 2`.
pub fn mine_preference(tape: &mut Tape, columns: &[Var], gamma: f64, normalize: bool) -> Result<Var> {
    let cont = attend_context(tape, columns)?;
    let time = damp_time(tape, columns, gamma, normalize)?;
    let sum = tape.add(cont, time)?;
    Ok(tape.scale(sum, 0.5))
}

/// [`mine_preference`] on plain belief columns.
pub fn mine_preference_values(store: &ParameterStore, columns: &[&[f64]], gamma: f64, normalize: bool) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let cols: Vec<Var> = columns.iter().map(|c| tape.constant(c.to_vec())).collect();
    let u = mine_preference(&mut tape, &cols, gamma, normalize)?;
    Ok(tape.value(u).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn zero_store(d: usize) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(W4, Tensor::zeros(&[d, d]), true);
        s.insert(W3, Tensor::zeros(&[1, d]), true);
        s
    }

    #[test]
    fn damping_hand_case() {
        let w = damping_weights(0.5, 3, true);
        let expected = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = zero_store(2);
        let mut tape = Tape::new(&s);
        let cols = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]].map(|c| tape.constant(c));
        let u = damp_time(&mut tape, &cols, 0.5, true).unwrap();
        let v = tape.value(u);
        assert!((v[0] - 5.0 / 7.0).abs() < 1e-12 && (v[1] - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_one_is_plain_mean() {
        let s = zero_store(2);
        let mut tape = Tape::new(&s);
        let cols = [vec![1.0, 0.0], vec![0.0, 3.0]].map(|c| tape.constant(c));
        let u = damp_time(&mut tape, &cols, 1.0, true).unwrap();
        assert_eq!(tape.value(u), &[0.5, 1.5]);
    }

    #[test]
    fn single_column_passes_through() {
        let mut s = zero_store(2);
        s.insert(W4, Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.1]).unwrap(), true);
        s.insert(W3, Tensor::matrix(1, 2, vec![1.5, -0.7]).unwrap(), true);
        let u = mine_preference_values(&s, &[&[0.25, 0.75]], 0.95, true).unwrap();
        assert!((u[0] - 0.25).abs() < 1e-15 && (u[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn full_fusion_hand_case() {
        // Zero attention parameters: uniform weights, u_cont = (2/3, 2/3).
        // gamma = 0.5: u_time = (5/7, 6/7). Mean: (29/42, 32/42).
        let s = zero_store(2);
        let u = mine_preference_values(&s, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], 0.5, true).unwrap();
        assert!((u[0] - 29.0 / 42.0).abs() < 1e-12);
        assert!((u[1] - 32.0 / 42.0).abs() < 1e-12);
    }

    #[test]
    fn empty_belief_is_an_error() {
        let s = zero_store(2);
        assert!(matches!(mine_preference_values(&s, &[], 0.9, true), Err(Error::EmptyBelief)));
    }
}
