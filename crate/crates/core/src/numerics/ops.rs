//! Differentiable building blocks composed from tape primitives.

use rand::Rng;

use super::store::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// `W x + b`.
pub fn linear(tape: &mut Tape, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matvec(w, x)?;
    match b {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

/// Parameter names of one GRU cell.
#[derive(Debug, Clone)]
pub struct GruNames {
    prefix: String,
}

impl GruNames {
    pub fn new(prefix: &str) -> Self {
        GruNames {
            prefix: prefix.to_string(),
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Registers update/reset/candidate weights for input width `d_in` and
    /// hidden width `d`.
    pub fn init<R: Rng>(&self, store: &mut ParameterStore, d_in: usize, d: usize, rng: &mut R) {
        for gate in ["z", "r", "h"] {
            store.insert_uniform(&self.name(&format!("w_{gate}")), &[d, d_in], d_in, rng);
            store.insert_uniform(&self.name(&format!("u_{gate}")), &[d, d], d, rng);
            store.insert_uniform(&self.name(&format!("b_{gate}")), &[d], d, rng);
        }
    }

    pub fn all(&self) -> Vec<String> {
        ["z", "r", "h"]
            .iter()
            .flat_map(|g| [format!("w_{g}"), format!("u_{g}"), format!("b_{g}")])
            .map(|p| self.name(&p))
            .collect()
    }
}

/// One GRU step:
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = z * h + (1 - z) * h~
/// ```
pub fn gru_cell(tape: &mut Tape, names: &GruNames, h_prev: Var, x: Var) -> Result<Var> {
    let gate = |tape: &mut Tape, g: &str, h: Var| -> Result<Var> {
        let w = tape.param(&names.name(&format!("w_{g}")))?;
        let u = tape.param(&names.name(&format!("u_{g}")))?;
        let b = tape.param(&names.name(&format!("b_{g}")))?;
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };
    let z_pre = gate(tape, "z", h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, "r", h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let h_pre = gate(tape, "h", rh)?;
    let cand = tape.tanh(h_pre);
    let keep = tape.mul(z, h_prev)?;
    let one_minus_z = tape.one_minus(z);
    let fresh = tape.mul(one_minus_z, cand)?;
    tape.add(keep, fresh)
}

/// Elementwise activations on plain slices, for callers without a tape.
pub mod eval {
    pub use crate::numerics::tensor::{sigmoid, softmax};

    pub fn relu(x: f64) -> f64 {
        x.max(0.0)
    }

    pub fn tanh(x: f64) -> f64 {
        x.tanh()
    }
}
