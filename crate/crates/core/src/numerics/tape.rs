//! Reverse-mode differentiation over a recorded tape of vector operations.
//!
//! Every node holds a flat `f64` buffer and a shape. Parameter nodes read
//! their values straight from the borrowed [`ParameterStore`], so large tables
//! are never copied onto the tape.

use std::collections::HashMap;

use super::store::ParameterStore;
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatVec(Var, Var),
    Row(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Log(Var, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    SumVecs(Vec<Var>),
    Element(Var, usize),
    ScaleBy(Var, Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Bce(Var, Vec<f64>, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Vec<usize>,
    needs_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParameterStore) {
        for &(idx, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                store.accumulate(idx, g);
            }
        }
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, shape: Vec<usize>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            shape,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.store.entry_at(i).value.values,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn len_of(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        let shape = vec![values.len()];
        self.push(Op::Leaf, values, shape, false)
    }

    /// A constant leaf that still receives a gradient (useful for probing inputs).
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        let shape = vec![values.len()];
        self.push(Op::Leaf, values, shape, true)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.values.clone(), t.shape.clone(), false)
    }

    /// The tape node of a named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let shape = self.store.entry_at(idx).value.shape.clone();
        let v = self.push(Op::Param(idx), Vec::new(), shape, true);
        self.params.insert(idx, v);
        Ok(v)
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `W x` for a matrix `W` of shape `[m, n]` and a vector `x` of length `n`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(w) {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Shape {
                    op: "matvec",
                    left: s.to_vec(),
                    right: self.shape(x).to_vec(),
                })
            }
        };
        if self.len_of(x) != cols {
            return Err(Error::Shape {
                op: "matvec",
                left: vec![rows, cols],
                right: self.shape(x).to_vec(),
            });
        }
        let out = tensor::matvec(self.value(w), cols, self.value(x));
        let ng = self.ng(w) || self.ng(x);
        Ok(self.push(Op::MatVec(w, x), out, vec![rows], ng))
    }

    /// Row `i` of a matrix node.
    pub fn row(&mut self, table: Var, i: usize) -> Result<Var> {
        let (rows, cols) = match self.shape(table) {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Shape {
                    op: "row",
                    left: s.to_vec(),
                    right: vec![i],
                })
            }
        };
        if i >= rows {
            return Err(Error::Shape {
                op: "row",
                left: vec![rows, cols],
                right: vec![i],
            });
        }
        let out = self.value(table)[i * cols..(i + 1) * cols].to_vec();
        let ng = self.ng(table);
        Ok(self.push(Op::Row(table, i), out, vec![cols], ng))
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, name: &'static str) -> Result<Var> {
        self.same_len(name, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, out, shape, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y, "mul")
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(op, out, shape, ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(Op::Scale(a, k), a, |x| x * k)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(Op::OneMinus(a), a, |x| 1.0 - x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(Op::Sigmoid(a), a, tensor::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(Op::Tanh(a), a, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(Op::Relu(a), a, |x| x.max(0.0))
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Var {
        self.map(Op::Log(a, eps), a, |x| x.max(eps).ln())
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = tensor::softmax(self.value(a));
        let ng = self.ng(a);
        self.push(Op::Softmax(a), out, vec![self.len_of(a)], ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        let n = out.len();
        self.push(Op::Concat(parts.to_vec()), out, vec![n], ng)
    }

    /// Packs scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let out: Vec<f64> = scalars.iter().map(|s| self.value(*s)[0]).collect();
        let ng = scalars.iter().any(|p| self.ng(*p));
        let n = out.len();
        self.push(Op::Stack(scalars.to_vec()), out, vec![n], ng)
    }

    /// Elementwise sum of equally sized vectors, accumulated left to right.
    pub fn sum_vecs(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Shape {
            op: "sum_vecs",
            left: vec![],
            right: vec![],
        })?;
        let mut out = self.value(first).to_vec();
        for p in &parts[1..] {
            self.same_len("sum_vecs", first, *p)?;
            for (o, v) in out.iter_mut().zip(self.value(*p)) {
                *o += v;
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        let shape = self.shape(first).to_vec();
        Ok(self.push(Op::SumVecs(parts.to_vec()), out, shape, ng))
    }

    pub fn element(&mut self, a: Var, i: usize) -> Var {
        let out = vec![self.value(a)[i]];
        let ng = self.ng(a);
        self.push(Op::Element(a, i), out, vec![1], ng)
    }

    /// Vector `a` times scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s)[0];
        let out = self.value(a).iter().map(|x| x * k).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(s);
        self.push(Op::ScaleBy(a, s), out, shape, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = vec![self.value(a).iter().sum()];
        let ng = self.ng(a);
        self.push(Op::Sum(a), out, vec![1], ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.len_of(a).max(1) as f64;
        let out = vec![self.value(a).iter().sum::<f64>() / n];
        let ng = self.ng(a);
        self.push(Op::Mean(a), out, vec![1], ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let out = vec![tensor::dot(self.value(a), self.value(b))];
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Dot(a, b), out, vec![1], ng))
    }

    /// Summed binary cross-entropy of probabilities `p` against 0/1 `targets`,
    /// with both logs clamped at `eps`.
    pub fn bce_sum(&mut self, p: Var, targets: Vec<f64>, eps: f64) -> Result<Var> {
        if self.len_of(p) != targets.len() {
            return Err(Error::Shape {
                op: "bce_sum",
                left: self.shape(p).to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = self
            .value(p)
            .iter()
            .zip(&targets)
            .map(|(&pi, &y)| -(y * pi.max(eps).ln() + (1.0 - y) * (1.0 - pi).max(eps).ln()))
            .sum();
        let ng = self.ng(p);
        Ok(self.push(Op::Bce(p, targets, eps), vec![loss], vec![1], ng))
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0; self.len_of(loss)]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            let out = self.value(Var(idx));
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatVec(w, x) => {
                    let cols = self.shape(*w)[1];
                    if self.ng(*w) {
                        let xv = self.value(*x);
                        let gw = slot(&mut grads, *w, self.len_of(*w));
                        for (i, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                for (gw_ij, xj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                                    *gw_ij += gi * xj;
                                }
                            }
                        }
                    }
                    if self.ng(*x) {
                        let wv = self.value(*w);
                        let gx = slot(&mut grads, *x, cols);
                        for (i, gi) in g.iter().enumerate() {
                            for (gxj, wij) in gx.iter_mut().zip(&wv[i * cols..(i + 1) * cols]) {
                                *gxj += gi * wij;
                            }
                        }
                    }
                }
                Op::Row(t, r) => {
                    let cols = g.len();
                    let gt = slot(&mut grads, *t, self.len_of(*t));
                    for (a, b) in gt[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &g, self.ng(*a));
                    add_into(&mut grads, *b, &g, self.ng(*b));
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, &g, self.ng(*a));
                    if self.ng(*b) {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        add_into(&mut grads, *b, &neg, true);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let d: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                        add_into(&mut grads, *a, &d, true);
                    }
                    if self.ng(*b) {
                        let d: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                        add_into(&mut grads, *b, &d, true);
                    }
                }
                Op::Scale(a, k) => {
                    let d: Vec<f64> = g.iter().map(|x| x * k).collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::OneMinus(a) => {
                    let d: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g.iter().zip(out).map(|(gi, s)| gi * s * (1.0 - s)).collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g.iter().zip(out).map(|(gi, t)| gi * (1.0 - t * t)).collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Relu(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Log(a, eps) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(gi, x)| if *x > *eps { gi / x } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Softmax(a) => {
                    let gs = tensor::dot(&g, out);
                    let d: Vec<f64> = g.iter().zip(out).map(|(gi, s)| s * (gi - gs)).collect();
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.len_of(*p);
                        if self.ng(*p) {
                            add_into(&mut grads, *p, &g[off..off + len], true);
                        }
                        off += len;
                    }
                }
                Op::Stack(parts) => {
                    for (p, gi) in parts.iter().zip(&g) {
                        if self.ng(*p) {
                            add_into(&mut grads, *p, &[*gi], true);
                        }
                    }
                }
                Op::SumVecs(parts) => {
                    for p in parts {
                        add_into(&mut grads, *p, &g, self.ng(*p));
                    }
                }
                Op::Element(a, i) => {
                    let ga = slot(&mut grads, *a, self.len_of(*a));
                    ga[*i] += g[0];
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s)[0];
                    if self.ng(*a) {
                        let d: Vec<f64> = g.iter().map(|x| x * k).collect();
                        add_into(&mut grads, *a, &d, true);
                    }
                    if self.ng(*s) {
                        let d = tensor::dot(&g, self.value(*a));
                        add_into(&mut grads, *s, &[d], true);
                    }
                }
                Op::Sum(a) => {
                    let d = vec![g[0]; self.len_of(*a)];
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Mean(a) => {
                    let n = self.len_of(*a);
                    let d = vec![g[0] / n.max(1) as f64; n];
                    add_into(&mut grads, *a, &d, true);
                }
                Op::Dot(a, b) => {
                    if self.ng(*a) {
                        let d: Vec<f64> = self.value(*b).iter().map(|x| x * g[0]).collect();
                        add_into(&mut grads, *a, &d, true);
                    }
                    if self.ng(*b) {
                        let d: Vec<f64> = self.value(*a).iter().map(|x| x * g[0]).collect();
                        add_into(&mut grads, *b, &d, true);
                    }
                }
                Op::Bce(p, targets, eps) => {
                    let d: Vec<f64> = self
                        .value(*p)
                        .iter()
                        .zip(targets)
                        .map(|(&pi, &y)| {
                            let pos = if pi > *eps { -y / pi } else { 0.0 };
                            let neg = if 1.0 - pi > *eps { (1.0 - y) / (1.0 - pi) } else { 0.0 };
                            g[0] * (pos + neg)
                        })
                        .collect();
                    add_into(&mut grads, *p, &d, true);
                }
            }
            grads[idx] = Some(g);
        }

        let mut params: Vec<(usize, Var)> = self.params.iter().map(|(i, v)| (*i, *v)).collect();
        params.sort_unstable();
        Gradients { grads, params }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64], needed: bool) {
    if !needed {
        return;
    }
    let g = slot(grads, v, d.len());
    for (a, b) in g.iter_mut().zip(d) {
        *a += b;
    }
}
