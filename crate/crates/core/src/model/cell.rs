use rand::distributions::Open01;
use rand::{Rng, RngCore};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::genotype::{CellShape, Genotype, OpKind};
use crate::nn::{linear_init, BoundLinear, LinearLayer};
use crate::scalar::Scalar;

use super::{ArchMode, Bound, Trainable};

/// Input width of the layer on edge `source -> *`.
fn edge_in_width(source: usize, cell_in: usize, node_width: usize) -> usize {
    if source == 0 {
        cell_in
    } else {
        node_width
    }
}

/// A searched cell with one layer per genotype edge.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedCell<T = f64> {
    pub genotype: Genotype,
    /// In canonical edge order.
    pub layers: Vec<LinearLayer<T>>,
    pub node_width: usize,
}

impl<T: Scalar> FixedCell<T> {
    pub fn new<R: Rng + ?Sized>(genotype: Genotype, cell_in: usize, node_width: usize, slope: T, rng: &mut R) -> Self {
        let layers = genotype
            .edges()
            .map(|(_, e)| linear_init(edge_in_width(e.source, cell_in, node_width), e.op.width(), Some(slope), rng))
            .collect();
        FixedCell {
            genotype,
            layers,
            node_width,
        }
    }
}

/// Node 0 is `x`; node `k` is the sum over its incoming edges of the edge
/// layer's output zero-padded to `node_width`. Returns the last node.
pub fn cell_forward_fixed<T: Scalar>(
    g: &mut Graph<T>,
    genotype: &Genotype,
    layers: &[BoundLinear<T>],
    x: Var,
    node_width: usize,
) -> Result<Var> {
    let shape = genotype.shape();
    if layers.len() != shape.edge_count() {
        return Err(Error::dim(
            "cell",
            format!("{} layers for {} edges", layers.len(), shape.edge_count()),
        ));
    }
    let mut nodes = vec![x];
    for dst in 1..=shape.groups() {
        let mut terms = Vec::with_capacity(dst);
        for e in genotype.node(dst) {
            let layer = &layers[shape.edge_index(dst, e.source)];
            let out = layer.forward(g, nodes[e.source])?;
            terms.push(g.pad_cols(out, node_width)?);
        }
        nodes.push(g.add_all(&terms)?);
    }
    Ok(*nodes.last().expect("at least one computation node"))
}

/// Architecture logits, one row of three op scores per cell edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams<T = f64> {
    pub logits: Tensor<T>,
    pub temperature: T,
}

impl<T: Scalar> ArchParams<T> {
    pub fn zeros(shape: CellShape) -> Self {
        ArchParams {
            logits: Tensor::zeros(shape.edge_count(), 3),
            temperature: T::one(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.logits.rows()
    }

    /// Logits that pin every edge to `genotype`'s op by `margin`.
    pub fn saturated(genotype: &Genotype, margin: T) -> Self {
        let ops = genotype.ops();
        let mut logits = Tensor::zeros(ops.len(), 3);
        for (e, op) in ops.iter().enumerate() {
            logits.data_mut()[e * 3 + op.index()] = margin;
        }
        ArchParams {
            logits,
            temperature: T::one(),
        }
    }
}

/// Source of the Gumbel perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Gumbel,
    /// No perturbation; sampling reduces to `softmax(logits / tau)`. Test hook.
    Zero,
}

/// Three standard Gumbel draws `-ln(-ln u)`, `u ~ U(0, 1)`.
pub fn gumbel_noise<T: Scalar>(rng: &mut dyn RngCore, mode: NoiseMode) -> [T; 3] {
    match mode {
        NoiseMode::Zero => [T::zero(); 3],
        NoiseMode::Gumbel => std::array::from_fn(|_| {
            let u: f64 = rng.sample(Open01);
            T::of(-(-u.ln()).ln())
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample<T> {
    /// Index of the selected op.
    pub hard: usize,
    /// `softmax((logits + noise) / tau)`.
    pub soft: [T; 3],
}

impl<T: Scalar> GumbelSample<T> {
    pub fn one_hot(&self) -> [T; 3] {
        std::array::from_fn(|i| if i == self.hard { T::one() } else { T::zero() })
    }
}

fn perturbed_softmax<T: Scalar>(row: &[T], noise: &[T; 3], temperature: T) -> [T; 3] {
    let inv = T::one() / temperature;
    let z: [T; 3] = std::array::from_fn(|i| (row[i] + noise[i]) * inv);
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: [T; 3] = std::array::from_fn(|i| (z[i] - max).exp());
    let sum = e[0] + e[1] + e[2];
    std::array::from_fn(|i| e[i] / sum)
}

fn argmax3<T: Scalar>(v: &[T; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Gumbel-softmax draw for one edge.
pub fn gumbel_sample<T: Scalar>(arch: &ArchParams<T>, edge: usize, rng: &mut dyn RngCore, mode: NoiseMode) -> GumbelSample<T> {
    assert!(arch.temperature > T::zero(), "temperature must be positive");
    let noise = gumbel_noise(rng, mode);
    let soft = perturbed_softmax(arch.logits.row_slice(edge), &noise, arch.temperature);
    GumbelSample {
        hard: argmax3(&soft),
        soft,
    }
}

/// Per-edge argmax of the logits; exact ties go to the narrower op.
pub fn derive_genotype<T: Scalar>(arch: &ArchParams<T>, shape: CellShape) -> Genotype {
    let ops: Vec<OpKind> = arch
        .logits
        .argmax_rows()
        .into_iter()
        .map(|i| OpKind::ALL[i])
        .collect();
    Genotype::from_ops(shape, &ops).expect("one logits row per edge")
}

/// Every candidate op on every edge, plus the logits that choose among them.
#[derive(Clone, Debug, PartialEq)]
pub struct Supernet<T = f64> {
    pub shape: CellShape,
    /// `candidates[edge][op]`, edges in canonical order.
    pub candidates: Vec<[LinearLayer<T>; 3]>,
    pub arch: ArchParams<T>,
    pub node_width: usize,
}

impl<T: Scalar> Supernet<T> {
    pub fn new<R: Rng + ?Sized>(shape: CellShape, cell_in: usize, node_width: usize, slope: T, rng: &mut R) -> Self {
        let candidates = shape
            .edge_slots()
            .into_iter()
            .map(|(_, src)| {
                let w = edge_in_width(src, cell_in, node_width);
                OpKind::ALL.map(|op| linear_init(w, op.width(), Some(slope), rng))
            })
            .collect();
        Supernet {
            shape,
            candidates,
            arch: ArchParams::zeros(shape),
            node_width,
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len() * 3
    }

    /// Cell forward with one op per edge. When sampling, the op comes from a
    /// Gumbel-softmax draw and every candidate output is weighted by the
    /// straight-through one-hot, so the forward value is exactly the chosen
    /// op's output while the logits receive the soft-path gradient.
    pub(crate) fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        trainable: Trainable,
        mut mode: ArchMode<'_>,
        bound: &mut Bound<T>,
    ) -> Result<Var> {
        let shape = self.shape;
        let argmax = self.arch.logits.argmax_rows();
        let inv_tau = T::one() / self.arch.temperature;
        let mut nodes = vec![x];
        for dst in 1..=shape.groups() {
            let mut terms = Vec::with_capacity(dst);
            for src in 0..dst {
                let e = shape.edge_index(dst, src);
                let (chosen, weights) = match &mut mode {
                    ArchMode::Argmax => (argmax[e], None),
                    ArchMode::Sample { rng, noise } => {
                        let row = Tensor::row(self.arch.logits.row_slice(e));
                        let row = if trainable.arch { g.param(row) } else { g.constant(row) };
                        bound.arch.push(row);
                        let eps = g.constant(Tensor::row(&gumbel_noise::<T>(&mut **rng, *noise)));
                        let perturbed = g.add(row, eps)?;
                        let scaled = g.scale(perturbed, inv_tau);
                        let soft = g.softmax_rows(scaled);
                        let hard = g.straight_through(soft);
                        let chosen = g.value(hard).argmax_rows()[0];
                        (chosen, Some(hard))
                    }
                };
                bound.sampled.push(chosen);
                let bound_ops: [BoundLinear<T>; 3] = std::array::from_fn(|o| {
                    self.candidates[e][o].bind(g, trainable.cell && o == chosen)
                });
                bound.cell.extend_from_slice(&bound_ops);

                let term = match weights {
                    Some(hard) if trainable.arch => {
                        let mut weighted = Vec::with_capacity(3);
                        for (o, op) in bound_ops.iter().enumerate() {
                            let out = op.forward(g, nodes[src])?;
                            let out = g.pad_cols(out, self.node_width)?;
                            let w = g.select_col(hard, o)?;
                            weighted.push(g.scale_by(out, w)?);
                        }
                        g.add_all(&weighted)?
                    }
                    _ => {
                        let out = bound_ops[chosen].forward(g, nodes[src])?;
                        g.pad_cols(out, self.node_width)?
                    }
                };
                terms.push(term);
            }
            nodes.push(g.add_all(&terms)?);
        }
        Ok(*nodes.last().expect("at least one computation node"))
    }
}
