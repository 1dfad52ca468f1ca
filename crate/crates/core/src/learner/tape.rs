//! A small reverse-mode differentiation tape over dense row-major batches.
//!
//! Every node holds a `rows x cols` matrix; rows are batch elements. Values
//! are computed eagerly when an operation is recorded, so intermediate
//! results can be read back before the graph is complete (the actor-critic
//! loss needs the baseline's value to form its advantages).

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    /// `base + gate * delta`, gate is `rows x 1`.
    Reveal { gate: Var, delta: Array2<f64> },
    /// Hard threshold forward, identity backward.
    StraightThrough(Var),
    /// Per-row `-max(log softmax(x)[label], ln floor)`.
    SoftmaxNll { logits: Var, labels: Vec<usize>, probs: Array2<f64>, floored: Vec<bool> },
    /// `sum(w .* x)` as a `1 x 1` node.
    WeightedSum(Var, Array2<f64>),
    /// Elementwise `a * z - softplus(z)`.
    BernoulliLogProb(Var, Array2<f64>),
    /// Elementwise `softplus(z) - z * sigmoid(z)`.
    BernoulliEntropy(Var),
    /// Elementwise `(x - target)^2`.
    SquaredError(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let v = self.value(x).dot(self.value(w));
        self.push(v, Op::MatMul(x, w))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddRow(x, bias))
    }

    /// `x . w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|z| z.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut offset = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.nrows(), rows, "concat row mismatch");
            out.slice_mut(ndarray::s![.., offset..offset + x.ncols()]).assign(x);
            offset += x.ncols();
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn column(&mut self, x: Var, col: usize) -> Var {
        let v = self.value(x).column(col).to_owned().insert_axis(Axis(1));
        self.push(v, Op::Column(x, col))
    }

    /// `base + gate * (revealed - base)` row by row, with `gate` a `rows x 1` node.
    pub fn reveal(&mut self, gate: Var, base: &Array2<f64>, revealed: &Array2<f64>) -> Var {
        let delta = revealed - base;
        let g = self.value(gate);
        assert_eq!(g.ncols(), 1, "reveal gate must be a column");
        let v = base + &(&delta * g);
        self.push(v, Op::Reveal { gate, delta })
    }

    pub fn straight_through(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|p| if p > 0.5 { 1.0 } else { 0.0 });
        self.push(v, Op::StraightThrough(x))
    }

    /// Per-row categorical negative log-likelihood (`rows x 1`), with the
    /// probability of the label floored at `floor`.
    pub fn softmax_nll(&mut self, logits: Var, labels: &[usize], floor: f64) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), labels.len());
        let probs = softmax_rows(z);
        let log_floor = floor.ln();
        let mut out = Array2::zeros((z.nrows(), 1));
        let mut floored = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            let logp = row[y] - lse;
            floored.push(logp < log_floor);
            out[[i, 0]] = -logp.max(log_floor);
        }
        self.push(
            out,
            Op::SoftmaxNll {
                logits,
                labels: labels.to_vec(),
                probs,
                floored,
            },
        )
    }

    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Var {
        let s = (self.value(x) * &weights).sum();
        self.push(Array2::from_elem((1, 1), s), Op::WeightedSum(x, weights))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dim();
        self.weighted_sum(x, Array2::from_elem((r, c), 1.0 / (r * c) as f64))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let dim = self.value(x).dim();
        self.weighted_sum(x, Array2::ones(dim))
    }

    pub fn bernoulli_log_prob(&mut self, logits: Var, actions: Array2<f64>) -> Var {
        let z = self.value(logits);
        let v = ndarray::Zip::from(z)
            .and(&actions)
            .map_collect(|&z, &a| a * z - softplus(z));
        self.push(v, Op::BernoulliLogProb(logits, actions))
    }

    pub fn bernoulli_entropy(&mut self, logits: Var) -> Var {
        let v = self.value(logits).mapv(|z| softplus(z) - z * sigmoid(z));
        self.push(v, Op::BernoulliEntropy(logits))
    }

    pub fn squared_error(&mut self, x: Var, target: Array2<f64>) -> Var {
        let d = self.value(x) - &target;
        let v = d.mapv(|e| e * e);
        self.push(v, Op::SquaredError(x, target))
    }

    /// Gradients of the `1 x 1` node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(x, w) => {
                    let gx = g.dot(&self.value(*w).t());
                    let gw = self.value(*x).t().dot(&g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::Relu(x) => {
                    let gx = ndarray::Zip::from(&g)
                        .and(self.value(*x))
                        .map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = ndarray::Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &s| g * s * (1.0 - s));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads, *p, gp);
                        offset += w;
                    }
                }
                Op::Column(x, col) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.column_mut(*col).assign(&g.column(0));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reveal { gate, delta } => {
                    let gg = (&g * delta).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *gate, gg);
                }
                Op::StraightThrough(x) => accumulate(&mut grads, *x, g),
                Op::SoftmaxNll {
                    logits,
                    labels,
                    probs,
                    floored,
                } => {
                    let mut gz = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let scale = if floored[r] { 0.0 } else { g[[r, 0]] };
                        gz[[r, y]] -= 1.0;
                        gz.row_mut(r).mapv_inplace(|v| v * scale);
                    }
                    accumulate(&mut grads, *logits, gz);
                }
                Op::WeightedSum(x, w) => accumulate(&mut grads, *x, w * g[[0, 0]]),
                Op::BernoulliLogProb(z, a) => {
                    let gz = ndarray::Zip::from(&g)
                        .and(self.value(*z))
                        .and(a)
                        .map_collect(|&g, &z, &a| g * (a - sigmoid(z)));
                    accumulate(&mut grads, *z, gz);
                }
                Op::BernoulliEntropy(z) => {
                    // d/dz [softplus(z) - z s(z)] = -z s(z) (1 - s(z))
                    let gz = ndarray::Zip::from(&g)
                        .and(self.value(*z))
                        .map_collect(|&g, &z| {
                            let s = sigmoid(z);
                            -g * z * s * (1.0 - s)
                        });
                    accumulate(&mut grads, *z, gz);
                }
                Op::SquaredError(x, target) => {
                    let gx = ndarray::Zip::from(&g)
                        .and(self.value(*x))
                        .and(target)
                        .map_collect(|&g, &x, &t| 2.0 * g * (x - t));
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Gradients of leaves after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros shaped like `like` if the leaf was unused.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn linear_layer_gradient_is_exact() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0], [3.0, -1.0]]);
        let w = tape.leaf(array![[0.5], [-2.0]]);
        let b = tape.leaf(array![[0.25]]);
        let y = tape.affine(x, w, b);
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert_eq!(g.get(w).unwrap(), &array![[4.0], [1.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[2.0]]);
        assert_eq!(g.get(x).unwrap(), &array![[0.5, -2.0], [0.5, -2.0]]);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        for &z0 in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            for a in [0.0, 1.0] {
                let f = |z: f64| a * z - softplus(z) + 0.3 * (softplus(z) - z * sigmoid(z));
                let mut tape = Tape::new();
                let z = tape.leaf(array![[z0]]);
                let lp = tape.bernoulli_log_prob(z, array![[a]]);
                let h = tape.bernoulli_entropy(z);
                let h = tape.scale(h, 0.3);
                let s = tape.add(lp, h);
                let s = tape.sum(s);
                let g = tape.backward(s);
                assert!((g.get(z).unwrap()[[0, 0]] - numeric(f, z0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_nll_gradient() {
        let logits = array![[0.2, -1.0, 0.5], [1.5, 0.0, -0.5]];
        let labels = [2usize, 0];
        let loss = |z: &Array2<f64>| {
            let p = softmax_rows(z);
            -(p[[0, 2]].ln() + p[[1, 0]].ln()) / 2.0
        };
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let l = tape.softmax_nll(z, &labels, 1e-12);
        let m = tape.mean(l);
        assert!((tape.scalar(m) - loss(&logits)).abs() < 1e-12);
        let g = tape.backward(m);
        for r in 0..2 {
            for c in 0..3 {
                let mut hi = logits.clone();
                hi[[r, c]] += 1e-6;
                let mut lo = logits.clone();
                lo[[r, c]] -= 1e-6;
                let fd = (loss(&hi) - loss(&lo)) / 2e-6;
                assert!((g.get(z).unwrap()[[r, c]] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[0.3], [0.8]]);
        let h = tape.straight_through(x);
        assert_eq!(tape.value(h), &array![[0.0], [1.0]]);
        let s = tape.weighted_sum(h, array![[2.0], [3.0]]);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap(), &array![[2.0], [3.0]]);
    }

    #[test]
    fn reveal_and_concat() {
        let mut tape = Tape::new();
        let gate = tape.leaf(array![[1.0], [0.0]]);
        let base = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let shown = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let cell = tape.reveal(gate, &base, &shown);
        assert_eq!(tape.value(cell), &array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let both = tape.concat(&[cell, gate]);
        let col = tape.column(both, 0);
        let s = tape.weighted_sum(both, array![[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]]);
        let s2 = tape.sum(col);
        let total = tape.add(s, s2);
        let g = tape.backward(total);
        // d/dgate = delta . w + direct 4 (+ column 0 contribution through delta)
        assert_eq!(g.get(gate).unwrap(), &array![[1.0 + 1.0 - 3.0 + 4.0], [2.0 - 3.0 + 4.0]]);
    }
}
