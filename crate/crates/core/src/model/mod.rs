//! The two-modality early-fusion classifier with a pluggable mixing component.
//!
//! ```text
//!  a ─┬─ private_a ────────────────────────┐
//!     └─ shared_a ──┐                      ├─ fusion (→50) ─ classifier (→2)
//!                   ├─ mixing ─────────────┤
//!  b ─┬─ shared_b ──┘                      │
//!     └─ private_b ────────────────────────┘
//! ```
//!
//! Each encoder is two linear+LeakyReLU layers (`dim → encoder_hidden →
//! out`). The mixing component consumes the concatenated shared outputs and is
//! either a single linear+LeakyReLU layer (the 50/100-wide baselines), a fixed
//! searched cell, or a supernet holding every candidate operation.
//!
//! Parameter count of the `baseline_50` model, with `H = encoder_hidden`,
//! `E = encoder_out`, `P = private_out`, `F = fusion_out`, `C = num_classes`:
//!
//! ```text
//!   2·(da + db)·H + 4·H        (first encoder layers, four encoders)
//! + 2·(H·P + P) + 2·(H·E + E)  (second encoder layers)
//! + 2E·50 + 50                 (mixing)
//! + (2P + 50)·F + F            (fusion)
//! + F·C + C                    (classifier)
//! ```

mod cell;
mod checkpoint;

pub use cell::{
    cell_forward_fixed, derive_genotype, gumbel_noise, gumbel_sample, ArchParams, FixedCell,
    GumbelSample, NoiseMode, Supernet,
};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::genotype::{CellShape, Genotype};
use crate::nn::{linear_init, BoundLinear, LinearLayer};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixingSpec {
    #[serde(rename = "baseline_50")]
    Baseline50,
    #[serde(rename = "baseline_100")]
    Baseline100,
    #[serde(rename = "fixed_cell")]
    FixedCell(Genotype),
    #[serde(rename = "supernet")]
    Supernet(CellShape),
}

impl MixingSpec {
    pub fn label(&self) -> String {
        match self {
            MixingSpec::Baseline50 => "JAE-Mixing-50".into(),
            MixingSpec::Baseline100 => "JAE-Mixing-100".into(),
            MixingSpec::FixedCell(g) => format!("cell {g}"),
            MixingSpec::Supernet(shape) => format!("supernet ({shape:?})"),
        }
    }
}

fn default_hidden() -> usize {
    128
}
fn default_out() -> usize {
    64
}
fn default_fusion() -> usize {
    50
}
fn default_classes() -> usize {
    2
}
fn default_node_width() -> usize {
    100
}
fn default_slope() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modality_a_dim: usize,
    pub modality_b_dim: usize,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: usize,
    /// Output width of the shared encoders (and of the private ones unless
    /// `private_out` is set).
    #[serde(default = "default_out")]
    pub encoder_out: usize,
    #[serde(default)]
    pub private_out: Option<usize>,
    #[serde(default = "default_fusion")]
    pub fusion_out: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_node_width")]
    pub node_width: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    pub mixing: MixingSpec,
}

impl ModelConfig {
    pub fn new(modality_a_dim: usize, modality_b_dim: usize, mixing: MixingSpec) -> Self {
        ModelConfig {
            modality_a_dim,
            modality_b_dim,
            encoder_hidden: default_hidden(),
            encoder_out: default_out(),
            private_out: None,
            fusion_out: default_fusion(),
            num_classes: default_classes(),
            node_width: default_node_width(),
            leaky_slope: default_slope(),
            mixing,
        }
    }

    pub fn with_mixing(&self, mixing: MixingSpec) -> Self {
        ModelConfig {
            mixing,
            ..self.clone()
        }
    }

    pub fn private_width(&self) -> usize {
        self.private_out.unwrap_or(self.encoder_out)
    }

    /// Width of the mixing component's input.
    pub fn cell_input_width(&self) -> usize {
        2 * self.encoder_out
    }

    pub fn mixing_out_width(&self) -> usize {
        match self.mixing {
            MixingSpec::Baseline50 => 50,
            MixingSpec::Baseline100 => 100,
            MixingSpec::FixedCell(_) | MixingSpec::Supernet(_) => self.node_width,
        }
    }

    pub fn fusion_in_width(&self) -> usize {
        2 * self.private_width() + self.mixing_out_width()
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("modality_a_dim", self.modality_a_dim),
            ("modality_b_dim", self.modality_b_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_out", self.encoder_out),
            ("private_out", self.private_width()),
            ("fusion_out", self.fusion_out),
            ("node_width", self.node_width),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope)));
        }
        if matches!(self.mixing, MixingSpec::FixedCell(_) | MixingSpec::Supernet(_)) && self.node_width < 100 {
            return Err(Error::Config(format!(
                "node_width {} is narrower than the widest cell operation (100)",
                self.node_width
            )));
        }
        if let MixingSpec::FixedCell(g) = &self.mixing {
            g.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mixing<T = f64> {
    Baseline(LinearLayer<T>),
    Cell(FixedCell<T>),
    Supernet(Supernet<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct JaeModel<T = f64> {
    pub config: ModelConfig,
    pub private_a: Vec<LinearLayer<T>>,
    pub shared_a: Vec<LinearLayer<T>>,
    pub private_b: Vec<LinearLayer<T>>,
    pub shared_b: Vec<LinearLayer<T>>,
    pub mixing: Mixing<T>,
    pub fusion: LinearLayer<T>,
    pub classifier: LinearLayer<T>,
}

/// Which parameter groups are bound as trainable leaves for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub skeleton: bool,
    pub cell: bool,
    pub arch: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        skeleton: false,
        cell: false,
        arch: false,
    };
    pub const WEIGHTS: Trainable = Trainable {
        skeleton: true,
        cell: true,
        arch: false,
    };
    pub const ARCH: Trainable = Trainable {
        skeleton: false,
        cell: false,
        arch: true,
    };
    pub const ALL: Trainable = Trainable {
        skeleton: true,
        cell: true,
        arch: true,
    };
}

/// How a supernet picks its operations.
pub enum ArchMode<'a> {
    /// Gumbel-softmax hard sampling with straight-through gradients.
    Sample {
        rng: &'a mut dyn RngCore,
        noise: NoiseMode,
    },
    /// Per-edge argmax of the logits (the derived genotype); no sampling.
    Argmax,
}

/// Graph handles of one forward pass, grouped by optimiser.
#[derive(Debug, Default)]
pub struct Bound<T> {
    pub skeleton: Vec<BoundLinear<T>>,
    pub cell: Vec<BoundLinear<T>>,
    /// One `1 x 3` logits row per edge (supernet only).
    pub arch: Vec<Var>,
    /// Op index used on each edge (supernet only).
    pub sampled: Vec<usize>,
}

fn layer_grads<T: Scalar>(layers: &[BoundLinear<T>], g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
    layers.iter().flat_map(|l| l.grads(g)).collect()
}

impl<T: Scalar> Bound<T> {
    pub fn skeleton_grads(&self, g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        layer_grads(&self.skeleton, g)
    }

    pub fn cell_grads(&self, g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        layer_grads(&self.cell, g)
    }

    /// Gradient of the full `edges x 3` logits matrix.
    pub fn arch_grad(&self, g: &Graph<T>) -> Option<Tensor<T>> {
        if self.arch.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(self.arch.len() * 3);
        for &row in &self.arch {
            match g.grad(row) {
                Some(t) => data.extend_from_slice(t.data()),
                None => data.extend_from_slice(&[T::zero(); 3]),
            }
        }
        Some(Tensor::new(self.arch.len(), 3, data).expect("edges x 3"))
    }
}

pub struct Forward<T> {
    pub logits: Var,
    pub bound: Bound<T>,
}

fn encoder<T: Scalar, R: Rng + ?Sized>(
    input: usize,
    hidden: usize,
    out: usize,
    slope: T,
    rng: &mut R,
) -> Vec<LinearLayer<T>> {
    vec![
        linear_init(input, hidden, Some(slope), rng),
        linear_init(hidden, out, Some(slope), rng),
    ]
}

/// Initialises every layer from `rng` in a fixed order.
pub fn build_model<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<JaeModel<T>> {
    cfg.validate()?;
    let slope = T::of(cfg.leaky_slope);
    let (h, e, p) = (cfg.encoder_hidden, cfg.encoder_out, cfg.private_width());
    let private_a = encoder(cfg.modality_a_dim, h, p, slope, rng);
    let shared_a = encoder(cfg.modality_a_dim, h, e, slope, rng);
    let private_b = encoder(cfg.modality_b_dim, h, p, slope, rng);
    let shared_b = encoder(cfg.modality_b_dim, h, e, slope, rng);
    let cell_in = cfg.cell_input_width();
    let mixing = match &cfg.mixing {
        MixingSpec::Baseline50 => Mixing::Baseline(linear_init(cell_in, 50, Some(slope), rng)),
        MixingSpec::Baseline100 => Mixing::Baseline(linear_init(cell_in, 100, Some(slope), rng)),
        MixingSpec::FixedCell(genotype) => {
            Mixing::Cell(FixedCell::new(genotype.clone(), cell_in, cfg.node_width, slope, rng))
        }
        MixingSpec::Supernet(shape) => Mixing::Supernet(Supernet::new(*shape, cell_in, cfg.node_width, slope, rng)),
    };
    let fusion = linear_init(cfg.fusion_in_width(), cfg.fusion_out, Some(slope), rng);
    let classifier = linear_init(cfg.fusion_out, cfg.num_classes, None, rng);
    Ok(JaeModel {
        config: cfg.clone(),
        private_a,
        shared_a,
        private_b,
        shared_b,
        mixing,
        fusion,
        classifier,
    })
}

impl<T: Scalar> JaeModel<T> {
    /// Skeleton layers in binding order.
    fn skeleton_layers(&self) -> Vec<&LinearLayer<T>> {
        let mut v: Vec<&LinearLayer<T>> = Vec::new();
        v.extend(&self.private_a);
        v.extend(&self.shared_a);
        v.extend(&self.private_b);
        v.extend(&self.shared_b);
        if let Mixing::Baseline(l) = &self.mixing {
            v.push(l);
        }
        v.push(&self.fusion);
        v.push(&self.classifier);
        v
    }

    fn skeleton_layers_mut(&mut self) -> Vec<&mut LinearLayer<T>> {
        let mut v: Vec<&mut LinearLayer<T>> = Vec::new();
        v.extend(&mut self.private_a);
        v.extend(&mut self.shared_a);
        v.extend(&mut self.private_b);
        v.extend(&mut self.shared_b);
        if let Mixing::Baseline(l) = &mut self.mixing {
            v.push(l);
        }
        v.push(&mut self.fusion);
        v.push(&mut self.classifier);
        v
    }

    fn cell_layers_mut(&mut self) -> Vec<&mut LinearLayer<T>> {
        match &mut self.mixing {
            Mixing::Baseline(_) => Vec::new(),
            Mixing::Cell(c) => c.layers.iter_mut().collect(),
            Mixing::Supernet(s) => s.candidates.iter_mut().flatten().collect(),
        }
    }

    /// Encoders, fusion, classifier and a baseline mixing layer, `[weight, bias]`
    /// per layer in the same order as [`Bound::skeleton_grads`].
    pub fn skeleton_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.skeleton_layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    /// Searchable cell weights, matching [`Bound::cell_grads`].
    pub fn cell_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.cell_layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    pub fn arch(&self) -> Option<&ArchParams<T>> {
        match &self.mixing {
            Mixing::Supernet(s) => Some(&s.arch),
            _ => None,
        }
    }

    pub fn arch_mut(&mut self) -> Option<&mut ArchParams<T>> {
        match &mut self.mixing {
            Mixing::Supernet(s) => Some(&mut s.arch),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        let skeleton: usize = self.skeleton_layers().iter().map(|l| l.param_count()).sum();
        let cell: usize = match &self.mixing {
            Mixing::Baseline(_) => 0,
            Mixing::Cell(c) => c.layers.iter().map(|l| l.param_count()).sum(),
            Mixing::Supernet(s) => s.candidates.iter().flatten().map(|l| l.param_count()).sum(),
        };
        skeleton + cell
    }

    /// Raw class logits for a batch. `a` and `b` must already be on `g`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        a: Var,
        b: Var,
        trainable: Trainable,
        mode: ArchMode<'_>,
    ) -> Result<Forward<T>> {
        let (wa, wb) = (g.value(a).cols(), g.value(b).cols());
        if wa != self.config.modality_a_dim || wb != self.config.modality_b_dim {
            return Err(Error::dim(
                "forward",
                format!(
                    "batch widths ({wa}, {wb}) do not match model widths ({}, {})",
                    self.config.modality_a_dim, self.config.modality_b_dim
                ),
            ));
        }
        if g.value(a).rows() != g.value(b).rows() {
            return Err(Error::dim("forward", "modality batches have different row counts"));
        }
        let mut bound = Bound {
            skeleton: self
                .skeleton_layers()
                .into_iter()
                .map(|l| l.bind(g, trainable.skeleton))
                .collect(),
            ..Bound::default()
        };
        let sk = bound.skeleton.clone();
        let run = |g: &mut Graph<T>, layers: &[BoundLinear<T>], x: Var| -> Result<Var> {
            layers.iter().try_fold(x, |h, l| l.forward(g, h))
        };
        let pa = run(g, &sk[0..2], a)?;
        let sa = run(g, &sk[2..4], a)?;
        let pb = run(g, &sk[4..6], b)?;
        let sb = run(g, &sk[6..8], b)?;
        let cell_in = g.concat_cols(&[sa, sb])?;
        let mixed = match &self.mixing {
            Mixing::Baseline(_) => sk[8].forward(g, cell_in)?,
            Mixing::Cell(cell) => {
                bound.cell = cell.layers.iter().map(|l| l.bind(g, trainable.cell)).collect();
                cell_forward_fixed(g, &cell.genotype, &bound.cell, cell_in, cell.node_width)?
            }
            Mixing::Supernet(net) => net.forward(g, cell_in, trainable, mode, &mut bound)?,
        };
        let n = sk.len();
        let fused_in = g.concat_cols(&[pa, pb, mixed])?;
        let fused = sk[n - 2].forward(g, fused_in)?;
        let logits = sk[n - 1].forward(g, fused)?;
        Ok(Forward { logits, bound })
    }

    /// Logits for a batch without recording gradients.
    pub fn logits(&self, a: &Tensor<T>, b: &Tensor<T>, mode: ArchMode<'_>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let out = self.forward(&mut g, va, vb, Trainable::NONE, mode)?;
        Ok(g.value(out.logits).clone())
    }

    /// Predicted class per row.
    pub fn predict(&self, a: &Tensor<T>, b: &Tensor<T>, mode: ArchMode<'_>) -> Result<Vec<usize>> {
        Ok(self.logits(a, b, mode)?.argmax_rows())
    }

    /// Every parameter tensor with a stable dotted name.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        fn push<'a, T: Scalar>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, layers: Vec<&'a LinearLayer<T>>) {
            for (i, l) in layers.into_iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &l.weight));
                out.push((format!("{prefix}.{i}.bias"), &l.bias));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "private_a", self.private_a.iter().collect());
        push(&mut out, "shared_a", self.shared_a.iter().collect());
        push(&mut out, "private_b", self.private_b.iter().collect());
        push(&mut out, "shared_b", self.shared_b.iter().collect());
        match &self.mixing {
            Mixing::Baseline(l) => push(&mut out, "mixing", vec![l]),
            Mixing::Cell(c) => push(&mut out, "cell", c.layers.iter().collect()),
            Mixing::Supernet(s) => push(&mut out, "supernet", s.candidates.iter().flatten().collect()),
        }
        push(&mut out, "fusion", vec![&self.fusion]);
        push(&mut out, "classifier", vec![&self.classifier]);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        fn push<'a, T: Scalar>(out: &mut Vec<(String, &'a mut Tensor<T>)>, prefix: &str, layers: Vec<&'a mut LinearLayer<T>>) {
            for (i, l) in layers.into_iter().enumerate() {
                let [w, b] = l.params_mut();
                out.push((format!("{prefix}.{i}.weight"), w));
                out.push((format!("{prefix}.{i}.bias"), b));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "private_a", self.private_a.iter_mut().collect());
        push(&mut out, "shared_a", self.shared_a.iter_mut().collect());
        push(&mut out, "private_b", self.private_b.iter_mut().collect());
        push(&mut out, "shared_b", self.shared_b.iter_mut().collect());
        match &mut self.mixing {
            Mixing::Baseline(l) => push(&mut out, "mixing", vec![l]),
            Mixing::Cell(c) => push(&mut out, "cell", c.layers.iter_mut().collect()),
            Mixing::Supernet(s) => push(&mut out, "supernet", s.candidates.iter_mut().flatten().collect()),
        }
        push(&mut out, "fusion", vec![&mut self.fusion]);
        push(&mut out, "classifier", vec![&mut self.classifier]);
        out
    }

    /// Fixed-cell model using the supernet's derived genotype and the trained
    /// weights of the chosen candidates.
    pub fn discretize(&self) -> Option<JaeModel<T>> {
        let Mixing::Supernet(net) = &self.mixing else { return None };
        let genotype = derive_genotype(&net.arch, net.shape);
        let layers = genotype
            .ops()
            .iter()
            .enumerate()
            .map(|(e, op)| net.candidates[e][op.index()].clone())
            .collect();
        Some(JaeModel {
            config: self.config.with_mixing(MixingSpec::FixedCell(genotype.clone())),
            mixing: Mixing::Cell(FixedCell {
                genotype,
                layers,
                node_width: net.node_width,
            }),
            ..self.clone()
        })
    }
}
