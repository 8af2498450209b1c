use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    ConcatCols(Vec<Var>),
    LeakyRelu(Var, T),
    PadCols(Var),
    SelectCol(Var, usize),
    Sum(Var),
    SoftmaxRows(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only tape. Node ids are creation order, so inputs always precede
/// their consumers and a reverse sweep is a valid topological order.
#[derive(Debug)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = ad[i * k + p];
                if s == T::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bval) in orow.iter_mut().zip(brow) {
                    *o += s * bval;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(m, n, out)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                "add",
                format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// Left-folded sum of equally shaped nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    /// `a + 1·row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dim(
                "add_row",
                format!("cannot broadcast {:?} over {:?}", rv.shape(), av.shape()),
            ));
        }
        let n = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv.data()[i % n])
            .collect();
        let value = Tensor::new(av.rows(), n, data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                "mul",
                format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(av.rows(), av.cols(), data).expect("shape preserved");
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    /// Multiplies `a` by the value of the `1 x 1` node `s`; differentiable in both.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.value(s).item().map_err(|_| {
            Error::dim(
                "scale_by",
                format!("scale factor must be 1x1, got {:?}", self.value(s).shape()),
            )
        })?;
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Op::ScaleBy(a, s), value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row counts differ: {m} vs {:?}", v.shape()),
                ));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::new(m, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| if x >= T::zero() { x } else { slope * x })
            .collect();
        let value = Tensor::new(av.rows(), av.cols(), data).expect("shape preserved");
        let rg = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), value, rg)
    }

    /// Appends zero columns up to `width`.
    pub fn pad_cols(&mut self, a: Var, width: usize) -> Result<Var> {
        let av = self.value(a);
        let w = av.cols();
        if width < w {
            return Err(Error::dim(
                "pad_cols",
                format!("target width {width} is narrower than input {:?}", av.shape()),
            ));
        }
        if width == w {
            return Ok(a);
        }
        let m = av.rows();
        let mut data = vec![T::zero(); m * width];
        for r in 0..m {
            data[r * width..r * width + w].copy_from_slice(av.row_slice(r));
        }
        let value = Tensor::new(m, width, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::PadCols(a), value, rg))
    }

    /// Column `j` of a single-row node, as a `1 x 1` node.
    pub fn select_col(&mut self, a: Var, j: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 || j >= av.cols() {
            return Err(Error::dim(
                "select_col",
                format!("column {j} of {:?}", av.shape()),
            ));
        }
        let value = Tensor::scalar(av.data()[j]);
        let rg = self.rg(a);
        Ok(self.push(Op::SelectCol(a, j), value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), value, rg)
    }

    /// Row-wise softmax, stabilised by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), value, rg)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} labels for logits {:?}", labels.len(), lv.shape()),
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= lv.cols()) {
            return Err(Error::Validation(format!(
                "label {l} at row {i} is out of range for {} classes",
                lv.cols()
            )));
        }
        let probs = softmax(lv);
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = lv.row_slice(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += lse - row[l];
        }
        let loss = total / T::of(labels.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Forward: one-hot of each row's argmax (lowest index on ties).
    /// Backward: identity, so the gradient reaches the soft input unchanged.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let sv = self.value(soft);
        let mut value = Tensor::zeros(sv.rows(), sv.cols());
        let cols = sv.cols();
        for (r, j) in sv.argmax_rows().into_iter().enumerate() {
            value.data_mut()[r * cols + j] = T::one();
        }
        let rg = self.rg(soft);
        self.push(Op::StraightThrough(soft), value, rg)
    }

    /// Reverse accumulation from the scalar `loss`. Gradients add onto any
    /// left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut local: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        local[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..n).rev() {
            let Some(g) = local[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut local);
            match &mut self.grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, local: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, contrib: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut local[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let gd = g.data();
                if self.rg(*a) {
                    // dA = dC · Bᵀ, as row updates against a transposed copy of B.
                    let bd = bv.data();
                    let mut bt = vec![T::zero(); n * k];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bd[p * n + j];
                        }
                    }
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let drow = &mut da[i * k..(i + 1) * k];
                        for j in 0..n {
                            let s = gd[i * n + j];
                            if s == T::zero() {
                                continue;
                            }
                            for (d, &b) in drow.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                                *d += s * b;
                            }
                        }
                    }
                    send(*a, Tensor::new(m, k, da).expect("matmul grad shape"));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let ad = av.data();
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = ad[i * k + p];
                            if s == T::zero() {
                                continue;
                            }
                            for (o, &x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += s * x;
                            }
                        }
                    }
                    send(*b, Tensor::new(k, n, db).expect("matmul grad shape"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                let n = g.cols();
                let mut acc = vec![T::zero(); n];
                for r in 0..g.rows() {
                    for (o, &x) in acc.iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                send(*row, Tensor::row(&acc));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                send(*a, Tensor::new(g.rows(), g.cols(), ga).expect("shape"));
                send(*b, Tensor::new(g.rows(), g.cols(), gb).expect("shape"));
            }
            Op::Scale(a, c) => {
                let data = g.data().iter().map(|&x| x * *c).collect();
                send(*a, Tensor::new(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).data()[0];
                let av = self.value(*a);
                let data = g.data().iter().map(|&x| x * c).collect();
                send(*a, Tensor::new(g.rows(), g.cols(), data).expect("shape"));
                let ds: T = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).sum();
                send(*s, Tensor::scalar(ds));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(m * w);
                        for r in 0..m {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        send(p, Tensor::new(m, w, data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&d, &x)| if x >= T::zero() { d } else { d * *slope })
                    .collect();
                send(*a, Tensor::new(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::PadCols(a) => {
                let w = self.value(*a).cols();
                let m = g.rows();
                let mut data = Vec::with_capacity(m * w);
                for r in 0..m {
                    data.extend_from_slice(&g.row_slice(r)[..w]);
                }
                send(*a, Tensor::new(m, w, data).expect("shape"));
            }
            Op::SelectCol(a, j) => {
                let mut t = Tensor::zeros(1, self.value(*a).cols());
                t.data_mut()[*j] = g.data()[0];
                send(*a, t);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                send(*a, Tensor::filled(av.rows(), av.cols(), g.data()[0]));
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let c = p.cols();
                let mut data = Vec::with_capacity(p.len());
                for r in 0..p.rows() {
                    let (pr, gr) = (p.row_slice(r), g.row_slice(r));
                    let dot: T = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                    data.extend(pr.iter().zip(gr).map(|(&pi, &gi)| pi * (gi - dot)));
                }
                send(*a, Tensor::new(p.rows(), c, data).expect("shape"));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let scale = g.data()[0] / T::of(labels.len() as f64);
                let c = probs.cols();
                let mut data: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    data[r * c + l] -= scale;
                }
                send(*logits, Tensor::new(probs.rows(), c, data).expect("shape"));
            }
            Op::StraightThrough(a) => send(*a, g.clone()),
        }
    }
}

pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut data = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = data.len();
        data.extend(row.iter().map(|&v| (v - max).exp()));
        let z: T = data[start..].iter().copied().sum();
        for v in &mut data[start..] {
            *v /= z;
        }
    }
    Tensor::new(x.rows(), c, data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(t(&[&[3.0], &[4.0]]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0]);

        let a = g.param(t(&[&[1.0, 2.0]]));
        let d = g.matmul(a, b).unwrap();
        assert_eq!(g.value(d).data(), &[11.0]);
        let s = g.sum(d);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_ops() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[1.0, 2.0]]));
        let z = g.constant(t(&[&[0.0, 0.0]]));
        let s = g.add(a, z).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 2.0]);

        let x = g.constant(t(&[&[2.0, 4.0]]));
        let h = g.scale(x, 0.5);
        assert_eq!(g.value(h).data(), &[1.0, 2.0]);

        let p = g.constant(Tensor::zeros(3, 2));
        let q = g.constant(Tensor::zeros(3, 3));
        let cat = g.concat_cols(&[p, q]).unwrap();
        assert_eq!(g.value(cat).shape(), [3, 5]);

        let r = g.constant(Tensor::zeros(2, 3));
        assert!(g.concat_cols(&[p, r]).is_err());
        assert!(g.add(p, q).is_err());
    }

    #[test]
    fn leaky_relu_cases() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[5.0, -1.0, 0.0]]));
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data(), &[5.0, -0.01, 0.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.01, 1.0]);
    }

    #[test]
    fn pad_cols_cases() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, 2.0]]));
        let p = g.pad_cols(x, 4).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(g.pad_cols(x, 2).unwrap(), x);
        assert!(matches!(g.pad_cols(x, 1), Err(Error::Dimension { .. })));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let confident = g.constant(t(&[&[10.0, -10.0]]));
        let l = g.softmax_cross_entropy(confident, &[0]).unwrap();
        assert!(g.value(l).data()[0] < 1e-4);

        let uniform = g.param(t(&[&[0.0, 0.0]]));
        let l = g.softmax_cross_entropy(uniform, &[0]).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        g.backward(l).unwrap();
        assert_eq!(g.grad(uniform).unwrap().data(), &[-0.5, 0.5]);

        assert!(matches!(
            g.softmax_cross_entropy(uniform, &[2]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn backward_simple_and_accumulating() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, 2.0, 3.0]]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[&[3.0]]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(1, 2));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn reset_then_backward_is_bitwise_repeatable() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[0.3, -1.7], &[2.2, 0.4]]));
        let w = g.param(t(&[&[0.5, -0.25, 1.0], &[1.5, 0.75, -2.0]]));
        let h = g.matmul(x, w).unwrap();
        let h = g.leaky_relu(h, 0.01);
        let l = g.softmax_cross_entropy(h, &[2, 0]).unwrap();
        g.backward(l).unwrap();
        let first = (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone());
        g.zero_grad();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &first.0);
        assert_eq!(g.grad(w).unwrap(), &first.1);
    }

    #[test]
    fn straight_through_is_one_hot_with_identity_gradient() {
        let mut g = Graph::new();
        let soft = g.param(t(&[&[0.2, 0.5, 0.3]]));
        let hard = g.straight_through(soft);
        assert_eq!(g.value(hard).data(), &[0.0, 1.0, 0.0]);
        let w = g.constant(t(&[&[1.0, 2.0, 3.0]]));
        let prod = g.mul(hard, w).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        assert_eq!(g.grad(soft).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0, 3.0], &[-50.0, 0.0, 700.0]]));
        let p = g.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = g.value(p).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(t(&[&[1.0]]));
        let p = g.param(t(&[&[2.0]]));
        let m = g.mul(c, p).unwrap();
        g.backward(m).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap().data(), &[1.0]);
    }
}
