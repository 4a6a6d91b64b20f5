//! Minimal reverse-mode automatic differentiation over 2-D arrays.
//!
//! Sequences are stored batch-major: a batch of `B` sequences of length `L`
//! with `h` features is a `(B * L) x h` matrix, and ops that must not mix
//! sequences (shifts, attention, pooling) take the block length `L`.

use ndarray::{s, Array2, Axis};

use crate::scalar::Real;

/// Handle to a node on the tape.
pub type Var = usize;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Sigmoid(Var),
    Silu(Var),
    Square(Var),
    /// Per-row inverse standard deviations are kept for the backward pass.
    LayerNorm { a: Var, inv_std: Vec<T> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        block: usize,
        probs: Vec<Array2<T>>,
    },
    Shift { a: Var, block: usize, offset: isize },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    RepeatRows { a: Var, times: usize },
    TileRows { a: Var, times: usize },
    BlockMean { a: Var, block: usize },
    SumAll(Var),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients returned by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads[v].take()
    }
}

fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out[i] = a[i + offset]` inside each block of `block` rows, zero outside.
fn shift_rows<T: Real>(a: &Array2<T>, block: usize, offset: isize) -> Array2<T> {
    let mut out = Array2::zeros(a.raw_dim());
    let nb = a.nrows() / block;
    let k = offset.unsigned_abs().min(block);
    for b in 0..nb {
        let base = b * block;
        if offset >= 0 {
            out.slice_mut(s![base..base + block - k, ..])
                .assign(&a.slice(s![base + k..base + block, ..]));
        } else {
            out.slice_mut(s![base + k..base + block, ..])
                .assign(&a.slice(s![base..base + block - k, ..]));
        }
    }
    out
}

fn softmax_rows<T: Real>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.mapv_inplace(|v| v / total);
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        self.nodes.len() - 1
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `a + row` with a `1 x m` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(silu);
        self.push(v, Op::Silu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// Normalizes every row to zero mean and unit variance, without gain or bias.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = T::of_usize(m.ncols());
        let eps = T::of(1e-5);
        let mut out = m.clone();
        let mut inv_std = Vec::with_capacity(m.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|x| x - mean);
            let var = row.iter().map(|x| *x * *x).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|x| x * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { a, inv_std }, &[a])
    }

    /// Multi-head scaled dot-product attention applied independently to
    /// every block of `block` rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, block: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qm.dim();
        assert_eq!(width % heads, 0);
        assert_eq!(rows % block, 0);
        let dk = width / heads;
        let scale = T::one() / T::of_usize(dk).sqrt();
        let mut out = Array2::zeros((rows, width));
        let mut probs = Vec::with_capacity(rows / block * heads);
        for b in 0..rows / block {
            let r = b * block..(b + 1) * block;
            for h in 0..heads {
                let c = h * dk..(h + 1) * dk;
                let qb = qm.slice(s![r.clone(), c.clone()]);
                let kb = km.slice(s![r.clone(), c.clone()]);
                let vb = vm.slice(s![r.clone(), c.clone()]);
                let mut p = qb.dot(&kb.t()) * scale;
                softmax_rows(&mut p);
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, block, probs }, &[q, k, v])
    }

    /// `out[i] = a[i + offset]` within blocks of `block` rows, zero where that leaves the block.
    pub fn shift(&mut self, a: Var, block: usize, offset: isize) -> Var {
        let v = shift_rows(self.value(a), block, offset);
        self.push(v, Op::Shift { a, block, offset }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("matching row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<T> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("element count");
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let m = self.value(a);
        let mut v = Array2::zeros((m.nrows() * times, m.ncols()));
        for (i, row) in m.rows().into_iter().enumerate() {
            for j in 0..times {
                v.row_mut(i * times + j).assign(&row);
            }
        }
        self.push(v, Op::RepeatRows { a, times }, &[a])
    }

    /// The whole matrix stacked `times` times.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let m = self.value(a);
        let views = vec![m.view(); times];
        let v = ndarray::concatenate(Axis(0), &views).expect("same width");
        self.push(v, Op::TileRows { a, times }, &[a])
    }

    /// Mean over each block of `block` rows.
    pub fn block_mean(&mut self, a: Var, block: usize) -> Var {
        let m = self.value(a);
        let nb = m.nrows() / block;
        let mut v = Array2::zeros((nb, m.ncols()));
        let inv = T::one() / T::of_usize(block);
        for b in 0..nb {
            let mean = m.slice(s![b * block..(b + 1) * block, ..]).sum_axis(Axis(0)) * inv;
            v.row_mut(b).assign(&mean);
        }
        self.push(v, Op::BlockMean { a, block }, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    /// Gradients of the scalar node `root` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Array2::ones(self.nodes[root].value.raw_dim()));
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |v: Var, d: Array2<T>| {
                if !self.nodes[v].needs_grad {
                    return;
                }
                match &mut grads[v] {
                    Some(existing) => *existing += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[*b].needs_grad {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.nodes[*b].needs_grad {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::AddScalar(a) => acc(*a, g),
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Sigmoid(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * y * (T::one() - y));
                    acc(*a, d);
                }
                Op::Silu(a) => {
                    let d = ndarray::Zip::from(&g).and(self.value(*a)).map_collect(|&g, &x| {
                        let s = sigmoid(x);
                        g * s * (T::one() + x * (T::one() - s))
                    });
                    acc(*a, d);
                }
                Op::Square(a) => {
                    let two = T::one() + T::one();
                    acc(*a, g * self.value(*a) * two);
                }
                Op::LayerNorm { a, inv_std } => {
                    let y = &node.value;
                    let n = T::of_usize(y.ncols());
                    let mut d = Array2::zeros(y.raw_dim());
                    for (r, inv) in inv_std.iter().enumerate() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let g_mean = gr.sum() / n;
                        let gy_mean = gr.iter().zip(yr.iter()).map(|(a, b)| *a * *b).sum::<T>() / n;
                        for ((dv, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *dv = *inv * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    acc(*a, d);
                }
                Op::Attention { q, k, v, heads, block, probs } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, width) = qm.dim();
                    let dk = width / heads;
                    let scale = T::one() / T::of_usize(dk).sqrt();
                    let mut dq = Array2::zeros((rows, width));
                    let mut dkm = Array2::zeros((rows, width));
                    let mut dv = Array2::zeros((rows, width));
                    for b in 0..rows / block {
                        let r = b * block..(b + 1) * block;
                        for h in 0..*heads {
                            let c = h * dk..(h + 1) * dk;
                            let p = &probs[b * heads + h];
                            let go = g.slice(s![r.clone(), c.clone()]);
                            let qb = qm.slice(s![r.clone(), c.clone()]);
                            let kb = km.slice(s![r.clone(), c.clone()]);
                            let vb = vm.slice(s![r.clone(), c.clone()]);
                            dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                            let dp = go.dot(&vb.t());
                            let mut ds = &dp * p;
                            let rowsum = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
                            ds = (&dp - &rowsum) * p * scale;
                            dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kb));
                            dkm.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qb));
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dkm);
                    acc(*v, dv);
                }
                Op::Shift { a, block, offset } => acc(*a, shift_rows(&g, *block, -offset)),
                Op::SliceCols { a, start } => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Reshape(a) => {
                    let flat: Vec<T> = g.iter().copied().collect();
                    let d = Array2::from_shape_vec(self.value(*a).raw_dim(), flat).expect("element count");
                    acc(*a, d);
                }
                Op::RepeatRows { a, times } => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    for i in 0..src.nrows() {
                        let sum = g.slice(s![i * times..(i + 1) * times, ..]).sum_axis(Axis(0));
                        d.row_mut(i).assign(&sum);
                    }
                    acc(*a, d);
                }
                Op::TileRows { a, times } => {
                    let n = self.value(*a).nrows();
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for t in 0..*times {
                        d += &g.slice(s![t * n..(t + 1) * n, ..]);
                    }
                    acc(*a, d);
                }
                Op::BlockMean { a, block } => {
                    let inv = T::one() / T::of_usize(*block);
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (b, row) in g.rows().into_iter().enumerate() {
                        let spread = &row * inv;
                        for i in 0..*block {
                            d.row_mut(b * block + i).assign(&spread);
                        }
                    }
                    acc(*a, d);
                }
                Op::SumAll(a) => {
                    let d = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(*a, d);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    /// Central differences of `f` against the tape gradient of every entry of
    /// every input.
    fn check(inputs: Vec<Array2<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |xs: &[Array2<f64>]| {
            let mut t = Tape::new();
            let v: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
            let o = f(&mut t, &v);
            t.scalar(o)
        };
        let h = 1e-6;
        for (n, x) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[n]).cloned().unwrap_or_else(|| Array2::zeros(x.raw_dim()));
            for idx in 0..x.len() {
                let (r, c) = (idx / x.ncols(), idx % x.ncols());
                let mut plus = inputs.clone();
                plus[n][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[n][[r, c]] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "input {n} [{r},{c}]: {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn elementwise_and_linear_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(4, 3, &mut rng);
        let b = random(3, 2, &mut rng);
        let row = random(1, 2, &mut rng);
        let c = random(4, 2, &mut rng);
        check(vec![a, b, row, c], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let m = t.add_row(m, v[2]);
            let s = t.silu(m);
            let g = t.sigmoid(v[3]);
            let p = t.mul(s, g);
            let e = t.exp(p);
            let d = t.sub(e, v[3]);
            let q = t.square(d);
            let q = t.scale(q, 0.3);
            let q = t.add_scalar(q, 1.0);
            t.sum_all(q)
        });
    }

    #[test]
    fn attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(6, 4, &mut rng);
        let k = random(6, 4, &mut rng);
        let v = random(6, 4, &mut rng);
        let w = random(6, 4, &mut rng);
        check(vec![q, k, v, w], |t, x| {
            let a = t.attention(x[0], x[1], x[2], 2, 3);
            let m = t.mul(a, x[3]);
            t.sum_all(m)
        });
    }

    #[test]
    fn layer_norm_gradient_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(5, 6, &mut rng).mapv(|v| 3.0 * v + 1.0);
        let w = random(5, 6, &mut rng);
        check(vec![x.clone(), w], |t, v| {
            let n = t.layer_norm(v[0]);
            let m = t.mul(n, v[1]);
            t.sum_all(m)
        });
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let n = tape.layer_norm(a);
        for row in tape.value(n).rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn structural_ops_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(6, 2, &mut rng);
        let b = random(2, 3, &mut rng);
        let pe = random(3, 2, &mut rng);
        let w = random(6, 7, &mut rng);
        check(vec![a, b, pe, w], |t, x| {
            let up = t.shift(x[0], 3, 1);
            let down = t.shift(x[0], 3, -1);
            let rep = t.repeat_rows(x[1], 3);
            let rep = t.slice_cols(rep, 1, 3);
            let tiled = t.tile_rows(x[2], 2);
            let cat = t.concat_cols(&[up, down, rep, tiled]);
            let cat = t.slice_cols(cat, 0, 7);
            let m = t.mul(cat, x[3]);
            let r = t.reshape(m, 3, 14);
            let pooled = t.block_mean(r, 3);
            let sq = t.square(pooled);
            t.sum_all(sq)
        });
    }

    #[test]
    fn shift_stays_inside_blocks() {
        let a = Array2::from_shape_fn((6, 1), |(i, _)| i as f64 + 1.0);
        let up = shift_rows(&a, 3, 1);
        assert_eq!(up.column(0).to_vec(), vec![2.0, 3.0, 0.0, 5.0, 6.0, 0.0]);
        let down = shift_rows(&a, 3, -1);
        assert_eq!(down.column(0).to_vec(), vec![0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Array2::ones((2, 2)));
        let p = t.param(Array2::ones((2, 2)));
        let m = t.mul(c, p);
        let s = t.sum_all(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &Array2::<f64>::ones((2, 2)));
    }
}
