//! Minimal reverse-mode autodiff over flat `f64` vectors.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    /// `y = W x`, `W` row-major `rows × cols`.
    MatVec {
        w: Var,
        x: Var,
        cols: usize,
    },
    /// `y = Mᵀ x`, `M` row-major `rows × cols`.
    MatTVec {
        m: Var,
        x: Var,
        cols: usize,
    },
    Add(Var, Var),
    /// Adds the single element of the second operand to every element.
    AddScalar(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    /// `Σ_t w_t · item_t`.
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::MatVec { w, x, .. } => self.ng(*w) || self.ng(*x),
            Op::MatTVec { m, x, .. } => self.ng(*m) || self.ng(*x),
            Op::Add(a, b) | Op::AddScalar(a, b) | Op::Mul(a, b) => self.ng(*a) || self.ng(*b),
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) | Op::Softmax(a) | Op::Slice(a, _) => self.ng(*a),
            Op::Concat(vs) => vs.iter().any(|v| self.ng(*v)),
            Op::WeightedSum { weights, items } => self.ng(*weights) || items.iter().any(|v| self.ng(*v)),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// A parameter block; gradients flow back to `offset..offset + len` of
    /// the flat parameter vector.
    pub fn param(&mut self, params: &[f64], block: Range<usize>) -> Var {
        let start = block.start;
        self.push(params[block].to_vec(), Op::Param(start))
    }

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (wv, xv) = (self.value(w), self.value(x));
        debug_assert_eq!(wv.len(), rows * cols);
        debug_assert_eq!(xv.len(), cols);
        let y = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(y, Op::MatVec { w, x, cols })
    }

    pub fn mat_t_vec(&mut self, m: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (mv, xv) = (self.value(m), self.value(x));
        debug_assert_eq!(mv.len(), rows * cols);
        debug_assert_eq!(xv.len(), rows);
        let mut y = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                y[c] += mv[r * cols + c] * xv[r];
            }
        }
        self.push(y, Op::MatTVec { m, x, cols })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).iter().zip(self.value(b)).map(|(p, q)| p + q).collect();
        self.push(y, Op::Add(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s)[0];
        let y = self.value(a).iter().map(|p| p + sv).collect();
        self.push(y, Op::AddScalar(a, s))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).iter().zip(self.value(b)).map(|(p, q)| p * q).collect();
        self.push(y, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|&v| sigmoid(v)).collect();
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|v| v.max(0.0)).collect();
        self.push(y, Op::Relu(a))
    }

    pub fn concat(&mut self, vs: &[Var]) -> Var {
        let y = vs.iter().flat_map(|v| self.value(*v).iter().copied()).collect();
        self.push(y, Op::Concat(vs.to_vec()))
    }

    pub fn slice(&mut self, a: Var, r: Range<usize>) -> Var {
        let y = self.value(a)[r.clone()].to_vec();
        self.push(y, Op::Slice(a, r.start))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        self.push(e.into_iter().map(|x| x / z).collect(), Op::Softmax(a))
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights);
        let mut y = vec![0.0; self.value(items[0]).len()];
        for (t, it) in items.iter().enumerate() {
            for (o, v) in y.iter_mut().zip(self.value(*it)) {
                *o += w[t] * v;
            }
        }
        self.push(
            y,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Propagates `seed` (the gradient of the objective w.r.t. `out`) back
    /// to the parameters, accumulating into `grad`.
    pub fn backward(&self, out: Var, seed: &[f64], grad: &mut [f64]) {
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); out.0 + 1];
        g[out.0] = seed.to_vec();
        for k in (0..=out.0).rev() {
            let node = &self.nodes[k];
            if !node.needs_grad || g[k].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut g[k]);
            let nodes = &self.nodes;
            let acc = |v: Var, f: &dyn Fn(usize) -> f64, g: &mut Vec<Vec<f64>>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                let n = nodes[v.0].value.len();
                let slot = &mut g[v.0];
                if slot.is_empty() {
                    *slot = vec![0.0; n];
                }
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += f(i);
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(offset) => {
                    for (d, v) in grad[*offset..*offset + gy.len()].iter_mut().zip(&gy) {
                        *d += v;
                    }
                }
                &Op::MatVec { w, x, cols } => {
                    let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
                    acc(w, &|i| gy[i / cols] * xv[i % cols], &mut g);
                    acc(
                        x,
                        &|c| gy.iter().enumerate().map(|(r, gr)| wv[r * cols + c] * gr).sum(),
                        &mut g,
                    );
                }
                &Op::MatTVec { m, x, cols } => {
                    let (mv, xv) = (&nodes[m.0].value, &nodes[x.0].value);
                    acc(m, &|i| xv[i / cols] * gy[i % cols], &mut g);
                    acc(x, &|r| (0..cols).map(|c| mv[r * cols + c] * gy[c]).sum(), &mut g);
                }
                &Op::Add(a, b) => {
                    acc(a, &|i| gy[i], &mut g);
                    acc(b, &|i| gy[i], &mut g);
                }
                &Op::AddScalar(a, s) => {
                    acc(a, &|i| gy[i], &mut g);
                    let total: f64 = gy.iter().sum();
                    acc(s, &|_| total, &mut g);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(a, &|i| gy[i] * bv[i], &mut g);
                    acc(b, &|i| gy[i] * av[i], &mut g);
                }
                &Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(a, &|i| gy[i] * y[i] * (1.0 - y[i]), &mut g);
                }
                &Op::Tanh(a) => {
                    let y = &node.value;
                    acc(a, &|i| gy[i] * (1.0 - y[i] * y[i]), &mut g);
                }
                &Op::Relu(a) => {
                    let x = &nodes[a.0].value;
                    acc(a, &|i| if x[i] > 0.0 { gy[i] } else { 0.0 }, &mut g);
                }
                Op::Concat(vs) => {
                    let mut off = 0;
                    for v in vs {
                        let n = nodes[v.0].value.len();
                        let o = off;
                        acc(*v, &|i| gy[o + i], &mut g);
                        off += n;
                    }
                }
                &Op::Slice(a, start) => {
                    let n = gy.len();
                    acc(
                        a,
                        &|i| {
                            if i >= start && i < start + n {
                                gy[i - start]
                            } else {
                                0.0
                            }
                        },
                        &mut g,
                    );
                }
                &Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = y.iter().zip(&gy).map(|(p, q)| p * q).sum();
                    acc(a, &|i| y[i] * (gy[i] - dot), &mut g);
                }
                Op::WeightedSum { weights, items } => {
                    let w = &nodes[weights.0].value;
                    acc(
                        *weights,
                        &|t| nodes[items[t].0].value.iter().zip(&gy).map(|(p, q)| p * q).sum(),
                        &mut g,
                    );
                    for (t, it) in items.iter().enumerate() {
                        let wt = w[t];
                        acc(*it, &|i| wt * gy[i], &mut g);
                    }
                }
            }
        }
    }
}
