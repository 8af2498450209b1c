//! Linear layers, initialisation, SGD/ADAM and the cosine learning-rate schedule.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense layer `x·W + b`, optionally followed by LeakyReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// LeakyReLU slope; `None` emits raw pre-activations (classifier head).
    pub activation_slope: Option<T>,
}

/// A layer whose parameters live on a particular graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear<T> {
    pub weight: Var,
    pub bias: Var,
    pub activation_slope: Option<T>,
}

/// Kaiming-uniform weights in `±sqrt(6 / in_width)`, zero bias.
pub fn linear_init<T: Scalar, R: Rng + ?Sized>(
    in_width: usize,
    out_width: usize,
    activation_slope: Option<T>,
    rng: &mut R,
) -> LinearLayer<T> {
    assert!(in_width >= 1 && out_width >= 1, "layer widths must be positive");
    let bound = (6.0 / in_width as f64).sqrt();
    let data = (0..in_width * out_width)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    LinearLayer {
        weight: Tensor::new(in_width, out_width, data).expect("sized by construction"),
        bias: Tensor::zeros(1, out_width),
        activation_slope,
    }
}

impl<T: Scalar> LinearLayer<T> {
    pub fn in_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Registers the parameters on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundLinear<T> {
        let (weight, bias) = if trainable {
            (g.param(self.weight.clone()), g.param(self.bias.clone()))
        } else {
            (g.constant(self.weight.clone()), g.constant(self.bias.clone()))
        };
        BoundLinear {
            weight,
            bias,
            activation_slope: self.activation_slope,
        }
    }

    /// Binds trainable parameters and applies the layer to `x`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.bind(g, true).forward(g, x)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor<T>; 2] {
        [&self.weight, &self.bias]
    }
}

impl<T: Scalar> BoundLinear<T> {
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (xw, ww) = (g.value(x).cols(), g.value(self.weight).rows());
        if xw != ww {
            return Err(Error::dim(
                "linear",
                format!("input width {xw} does not match layer input width {ww}"),
            ));
        }
        let h = g.matmul(x, self.weight)?;
        let h = g.add_row(h, self.bias)?;
        Ok(match self.activation_slope {
            Some(slope) => g.leaky_relu(h, slope),
            None => h,
        })
    }

    /// Gradients of `[weight, bias]`; `None` when the layer was frozen or unused.
    pub fn grads(&self, g: &Graph<T>) -> [Option<Tensor<T>>; 2] {
        [g.grad(self.weight).cloned(), g.grad(self.bias).cloned()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    #[serde(alias = "cosine")]
    Cos,
    Constant,
}

/// Cell-weight optimiser settings. Serialised keys keep the AutoDL-style
/// names (`LR`, `eta_min`, `decay`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub scheduler: Scheduler,
    #[serde(rename = "LR")]
    pub base_lr: f64,
    pub eta_min: f64,
    pub epochs: usize,
    #[serde(default = "default_optim")]
    pub optim: String,
    #[serde(rename = "decay")]
    pub weight_decay: f64,
    pub momentum: f64,
    #[serde(serialize_with = "flag_as_int", deserialize_with = "flag_from_int_or_bool")]
    pub nesterov: bool,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    pub batch_size: usize,
}

fn default_optim() -> String {
    "SGD".into()
}

fn default_criterion() -> String {
    "Softmax".into()
}

fn flag_as_int<S: Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn flag_from_int_or_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        B(bool),
        I(i64),
    }
    match Flag::deserialize(d)? {
        Flag::B(b) => Ok(b),
        Flag::I(0) => Ok(false),
        Flag::I(1) => Ok(true),
        Flag::I(other) => Err(serde::de::Error::custom(format!(
            "nesterov must be 0 or 1, got {other}"
        ))),
    }
}

impl Default for SgdConfig {
    /// The cell-search settings: cosine schedule from 0.0005 towards 0.001
    /// over 100 epochs, decay 1e-6, Nesterov momentum 0.9, batches of 32.
    fn default() -> Self {
        SgdConfig {
            scheduler: Scheduler::Cos,
            base_lr: 0.0005,
            eta_min: 0.001,
            epochs: 100,
            optim: default_optim(),
            weight_decay: 0.000001,
            momentum: 0.9,
            nesterov: true,
            criterion: default_criterion(),
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    /// Checks the invariants and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("LR must be positive, got {}", self.base_lr)));
        }
        if !(self.eta_min >= 0.0 && self.eta_min.is_finite()) {
            return Err(Error::Config(format!("eta_min must be >= 0, got {}", self.eta_min)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !self.optim.eq_ignore_ascii_case("sgd") {
            return Err(Error::Config(format!("optim must be SGD, got {:?}", self.optim)));
        }
        if !self.criterion.eq_ignore_ascii_case("softmax") {
            return Err(Error::Config(format!(
                "criterion must be Softmax (softmax cross-entropy), got {:?}",
                self.criterion
            )));
        }
        let mut warnings = Vec::new();
        if self.scheduler == Scheduler::Cos && self.eta_min > self.base_lr {
            warnings.push(format!(
                "eta_min ({}) exceeds LR ({}): the cosine schedule will increase the learning rate over training",
                self.eta_min, self.base_lr
            ));
        }
        Ok(warnings)
    }
}

/// `eta_min + (LR - eta_min)(1 + cos(pi·epoch/epochs)) / 2`, or `LR` for a
/// constant schedule. Applied once per epoch.
pub fn cosine_lr(epoch: usize, cfg: &SgdConfig) -> f64 {
    debug_assert!(epoch <= cfg.epochs);
    match cfg.scheduler {
        Scheduler::Constant => cfg.base_lr,
        Scheduler::Cos => {
            let phase = std::f64::consts::PI * epoch as f64 / cfg.epochs as f64;
            cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + phase.cos())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("adam epsilon must be > 0 and decay >= 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter optimiser buffers, created lazily on first update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T = f64> {
    /// Momentum (SGD) or first moment (ADAM).
    pub first: Vec<Option<Tensor<T>>>,
    /// Second moment; ADAM only.
    pub second: Vec<Option<Tensor<T>>>,
    /// Updates applied to each parameter.
    pub steps: Vec<u64>,
    /// Calls to the step function.
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState {
            first: Vec::new(),
            second: Vec::new(),
            steps: Vec::new(),
            step: 0,
        }
    }

    fn ensure(&mut self, n: usize) -> Result<()> {
        if self.first.is_empty() {
            self.first = vec![None; n];
            self.second = vec![None; n];
            self.steps = vec![0; n];
        }
        if self.first.len() != n {
            return Err(Error::Contract(format!(
                "optimizer state tracks {} parameters, step received {n}",
                self.first.len()
            )));
        }
        Ok(())
    }
}

fn check_shapes<T: Scalar>(params: &[&mut Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "parameter {i} has shape {:?} but gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
    }
    Ok(())
}

/// SGD with L2 decay and (Nesterov) momentum. Parameters whose gradient is
/// `None` are skipped entirely, buffers included.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    check_shapes(params, grads)?;
    state.ensure(params.len())?;
    let (lr, mu, wd) = (T::of(lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let v = state.first[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        for ((pj, &gj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = gj + wd * *pj;
            *vj = mu * *vj + d;
            let update = if cfg.nesterov { mu * *vj + d } else { *vj };
            *pj -= lr * update;
        }
        state.steps[i] += 1;
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected ADAM with classic (L2, added to the gradient) weight decay.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    check_shapes(params, grads)?;
    state.ensure(params.len())?;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps, wd) = (T::of(cfg.lr), T::of(cfg.epsilon), T::of(cfg.weight_decay));
    let one = T::one();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let m = state.first[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        let v = state.second[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        for (((pj, &gj), mj), vj) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let d = gj + wd * *pj;
            *mj = b1 * *mj + (one - b1) * d;
            *vj = b2 * *vj + (one - b2) * d * d;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> Tensor<f64> {
        Tensor::scalar(x)
    }

    #[test]
    fn init_bounds_zero_bias_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer: LinearLayer<f64> = linear_init(4, 50, Some(0.01), &mut rng);
        let bound = (6.0f64 / 4.0).sqrt();
        assert!((bound - 1.2247).abs() < 1e-4);
        assert!(layer.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        let again: LinearLayer<f64> = linear_init(4, 50, Some(0.01), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(layer, again);
    }

    #[test]
    fn linear_forward_cases() {
        let layer = LinearLayer {
            weight: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            bias: Tensor::row(&[0.0, 0.0]),
            activation_slope: Some(0.01),
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[2.0, 3.0], [0.5, 7.0], [1.0, 1.0]]).unwrap());
        let y = layer.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let shifted = LinearLayer {
            bias: Tensor::row(&[-2.0, 3.0]),
            ..layer.clone()
        };
        let z = g.constant(Tensor::zeros(1, 2));
        let y = shifted.forward(&mut g, z).unwrap();
        assert_eq!(g.value(y).data(), &[-0.02, 3.0]);

        let wide = LinearLayer::<f64> {
            weight: Tensor::zeros(2, 5),
            bias: Tensor::zeros(1, 5),
            activation_slope: None,
        };
        let y = wide.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), [3, 5]);

        let bad = g.constant(Tensor::zeros(3, 4));
        assert!(matches!(layer.forward(&mut g, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let cfg = SgdConfig::default();
        assert_eq!(cosine_lr(0, &cfg), 0.0005);
        assert_eq!(cosine_lr(100, &cfg), 0.001);
        assert!((cosine_lr(50, &cfg) - 0.00075).abs() < 1e-15);
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("eta_min"));

        let descending = SgdConfig {
            base_lr: 0.1,
            eta_min: 0.0,
            ..SgdConfig::default()
        };
        assert!(descending.validate().unwrap().is_empty());
        let constant = SgdConfig {
            scheduler: Scheduler::Constant,
            ..SgdConfig::default()
        };
        assert_eq!(cosine_lr(73, &constant), 0.0005);
    }

    #[test]
    fn sgd_config_rejects_invalid() {
        for bad in [
            SgdConfig { base_lr: 0.0, ..Default::default() },
            SgdConfig { epochs: 0, ..Default::default() },
            SgdConfig { momentum: 1.0, ..Default::default() },
            SgdConfig { weight_decay: -1.0, ..Default::default() },
            SgdConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sgd_config_uses_autodl_keys() {
        let text = r#"
            scheduler = "cos"
            LR = 0.0005
            eta_min = 0.001
            epochs = 100
            optim = "SGD"
            decay = 0.000001
            momentum = 0.9
            nesterov = 1
            criterion = "Softmax"
            batch_size = 32
        "#;
        let cfg: SgdConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg, SgdConfig::default());
        let back = toml::to_string(&cfg).unwrap();
        assert!(back.contains("LR = 0.0005"), "{back}");
        assert!(back.contains("nesterov = 1"), "{back}");
    }

    #[test]
    fn vanilla_sgd_step() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            nesterov: false,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new();
        sgd_step(&mut [&mut p], &[Some(scalar(0.5))], &mut st, 0.1, &cfg).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn nesterov_first_step() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new();
        sgd_step(&mut [&mut p], &[Some(scalar(1.0))], &mut st, 1.0, &cfg).unwrap();
        assert_eq!(st.first[0].as_ref().unwrap().data(), &[1.0]);
        assert!((p.data()[0] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let sgd = SgdConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = Tensor::row(&[0.3, -4.0]);
        let mut st = OptimizerState::new();
        sgd_step(&mut [&mut p], &[Some(Tensor::zeros(1, 2))], &mut st, 0.5, &sgd).unwrap();
        assert_eq!(p.data(), &[0.3, -4.0]);

        let mut st = OptimizerState::new();
        adam_step(&mut [&mut p], &[Some(Tensor::zeros(1, 2))], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[0.3, -4.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new();
        adam_step(&mut [&mut p], &[Some(scalar(1.0))], &mut st, &AdamConfig::default()).unwrap();
        assert!((p.data()[0] + 0.001).abs() < 1e-10, "{}", p.data()[0]);
    }

    #[test]
    fn none_gradients_are_skipped() {
        let mut p = scalar(2.0);
        let mut st = OptimizerState::new();
        sgd_step(&mut [&mut p], &[None], &mut st, 1.0, &SgdConfig::default()).unwrap();
        assert_eq!(p.data(), &[2.0]);
        assert!(st.first[0].is_none());
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut p = Tensor::<f64>::zeros(2, 2);
        let mut st = OptimizerState::new();
        let err = sgd_step(&mut [&mut p], &[Some(Tensor::zeros(1, 2))], &mut st, 1.0, &SgdConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
        let err = adam_step(&mut [&mut p], &[], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn decay_shrinks_params_with_zero_gradient() {
        let cfg = SgdConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = Tensor::row(&[3.0, -2.0]);
        let mut st = OptimizerState::new();
        let mut prev: f64 = p.data().iter().map(|x| x * x).sum();
        for _ in 0..20 {
            sgd_step(&mut [&mut p], &[Some(Tensor::zeros(1, 2))], &mut st, 0.1, &cfg).unwrap();
            let norm: f64 = p.data().iter().map(|x| x * x).sum();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(p.data()[0].abs() < 3.0 && p.data()[1].abs() < 2.0);
    }

    #[test]
    fn optimizers_are_deterministic() {
        let run = || {
            let mut p = Tensor::row(&[0.1, 0.2, 0.3]);
            let mut q = Tensor::row(&[0.1, 0.2, 0.3]);
            let (mut s1, mut s2) = (OptimizerState::new(), OptimizerState::new());
            for k in 0..10 {
                let g = Tensor::row(&[k as f64 * 0.1, -0.3, 0.7]);
                sgd_step(&mut [&mut p], &[Some(g.clone())], &mut s1, 0.05, &SgdConfig::default()).unwrap();
                adam_step(&mut [&mut q], &[Some(g)], &mut s2, &AdamConfig::default()).unwrap();
            }
            (p, q)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn f32_layers_and_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer: LinearLayer<f32> = linear_init(3, 2, None, &mut rng);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::filled(4, 3, 1.0f32));
        let bound = layer.bind(&mut g, true);
        let y = bound.forward(&mut g, x).unwrap();
        let l = g.softmax_cross_entropy(y, &[0, 1, 0, 1]).unwrap();
        g.backward(l).unwrap();
        let grads = bound.grads(&g).to_vec();
        let before = layer.weight.clone();
        let mut st = OptimizerState::new();
        adam_step(&mut layer.params_mut(), &grads, &mut st, &AdamConfig::default()).unwrap();
        assert_ne!(before, layer.weight);
    }
}
