//! GDAS search: alternating weight and architecture updates with
//! Gumbel-softmax sampled cells and an annealed temperature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::evalharness::{derive_seed, with_jobs, ConfusionCounts};
use crate::genotype::Genotype;
use crate::model::{build_model, derive_genotype, ArchMode, JaeModel, MixingSpec, ModelConfig, NoiseMode, Trainable};
use crate::nn::{adam_step, cosine_lr, sgd_step, AdamConfig, OptimizerState, SgdConfig};
use crate::scalar::Scalar;

fn default_adam_arch() -> AdamConfig {
    AdamConfig {
        lr: 3e-4,
        beta1: 0.5,
        beta2: 0.999,
        epsilon: 1e-8,
        weight_decay: 1e-3,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Cell weights. Its `epochs` must match `epochs` below.
    pub sgd: SgdConfig,
    /// Encoders, fusion and classifier.
    pub adam_skeleton: AdamConfig,
    /// Architecture logits.
    pub adam_arch: AdamConfig,
    pub tau_start: f64,
    pub tau_end: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Replace Gumbel draws by zeros (deterministic soft sampling).
    pub frozen_noise: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            sgd: SgdConfig::default(),
            adam_skeleton: AdamConfig::default(),
            adam_arch: default_adam_arch(),
            tau_start: 10.0,
            tau_end: 0.1,
            epochs: 100,
            seed: 0,
            frozen_noise: false,
        }
    }
}

impl SearchConfig {
    /// Same settings with `epochs` changed in both places.
    pub fn with_epochs(&self, epochs: usize) -> Self {
        let mut c = self.clone();
        c.epochs = epochs;
        c.sgd.epochs = epochs;
        c
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.sgd.validate()?;
        self.adam_skeleton.validate()?;
        self.adam_arch.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("search epochs must be >= 1".into()));
        }
        if self.sgd.epochs != self.epochs {
            return Err(Error::Config(format!(
                "sgd epochs ({}) and search epochs ({}) disagree",
                self.sgd.epochs, self.epochs
            )));
        }
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end && self.tau_start.is_finite()) {
            return Err(Error::Config(format!(
                "need tau_start >= tau_end > 0, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        Ok(warnings)
    }

    fn noise(&self) -> NoiseMode {
        if self.frozen_noise {
            NoiseMode::Zero
        } else {
            NoiseMode::Gumbel
        }
    }
}

/// Linear from `tau_start` at epoch 0 to `tau_end` at the last epoch.
pub fn temperature(epoch: usize, cfg: &SearchConfig) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    if cfg.epochs <= 1 {
        return cfg.tau_start;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.tau_start - (cfg.tau_start - cfg.tau_end) * t
}

#[derive(Clone, Debug)]
pub struct SearchResult<T = f64> {
    pub final_genotype: Genotype,
    /// Class-averaged accuracy of the sampled networks on the train batches.
    pub search_curve: Vec<f64>,
    /// Same on the validation batches (architecture steps).
    pub eval_curve: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// Logits after each epoch, row-major `edges x 3`.
    pub arch_logits_history: Vec<Vec<f64>>,
    pub model: JaeModel<T>,
    pub wall_time: Duration,
}

fn check_split(name: &str, ds: &Dataset, mcfg: &ModelConfig) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Validation(format!("{name} split is empty")));
    }
    if ds.widths() != (mcfg.modality_a_dim, mcfg.modality_b_dim) {
        return Err(Error::Validation(format!(
            "{name} split widths {:?} do not match model ({}, {})",
            ds.widths(),
            mcfg.modality_a_dim,
            mcfg.modality_b_dim
        )));
    }
    Ok(())
}

/// Runs the search and returns the argmax genotype of the final logits.
///
/// Each epoch first sweeps the training split, updating cell weights by SGD
/// (cosine rate for the epoch) and skeleton weights by ADAM, then sweeps the
/// validation split updating only the logits. Every batch draws a fresh
/// architecture.
pub fn gdas_search<T: Scalar>(
    train: &Dataset,
    val: &Dataset,
    mcfg: &ModelConfig,
    scfg: &SearchConfig,
) -> Result<SearchResult<T>> {
    let started = Instant::now();
    scfg.validate()?;
    let MixingSpec::Supernet(shape) = mcfg.mixing else {
        return Err(Error::Config("search needs a supernet mixing component".into()));
    };
    check_split("train", train, mcfg)?;
    check_split("validation", val, mcfg)?;

    let seed = scfg.seed;
    let mut model: JaeModel<T> = build_model(mcfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)))?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut arch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let noise = scfg.noise();
    let (mut sgd_state, mut skel_state, mut arch_state) =
        (OptimizerState::new(), OptimizerState::new(), OptimizerState::new());
    let mut train_ids: Vec<usize> = (0..train.len()).collect();
    let mut val_ids: Vec<usize> = (0..val.len()).collect();
    let batch = scfg.sgd.batch_size;

    let mut out = SearchResult {
        final_genotype: Genotype::uniform(shape, crate::genotype::OpKind::L25),
        search_curve: Vec::with_capacity(scfg.epochs),
        eval_curve: Vec::with_capacity(scfg.epochs),
        temperatures: Vec::with_capacity(scfg.epochs),
        learning_rates: Vec::with_capacity(scfg.epochs),
        arch_logits_history: Vec::with_capacity(scfg.epochs),
        model: model.clone(),
        wall_time: Duration::ZERO,
    };

    for epoch in 0..scfg.epochs {
        let tau = temperature(epoch, scfg);
        let lr = cosine_lr(epoch, &scfg.sgd);
        model.arch_mut().expect("supernet").temperature = T::of(tau);

        let mut search_counts = ConfusionCounts::default();
        train_ids.shuffle(&mut order_rng);
        for ids in train_ids.chunks(batch) {
            let (a, b, y) = train.batch::<T>(ids)?;
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a), g.constant(b));
            let mode = ArchMode::Sample { rng: &mut arch_rng, noise };
            let fwd = model.forward(&mut g, va, vb, Trainable::WEIGHTS, mode)?;
            search_counts.merge(&ConfusionCounts::from_predictions(&y, &g.value(fwd.logits).argmax_rows())?);
            let loss = g.softmax_cross_entropy(fwd.logits, &y)?;
            g.backward(loss)?;
            sgd_step(&mut model.cell_params_mut(), &fwd.bound.cell_grads(&g), &mut sgd_state, lr, &scfg.sgd)?;
            adam_step(
                &mut model.skeleton_params_mut(),
                &fwd.bound.skeleton_grads(&g),
                &mut skel_state,
                &scfg.adam_skeleton,
            )?;
        }

        let mut eval_counts = ConfusionCounts::default();
        val_ids.shuffle(&mut order_rng);
        for ids in val_ids.chunks(batch) {
            let (a, b, y) = val.batch::<T>(ids)?;
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a), g.constant(b));
            let mode = ArchMode::Sample { rng: &mut arch_rng, noise };
            let fwd = model.forward(&mut g, va, vb, Trainable::ARCH, mode)?;
            eval_counts.merge(&ConfusionCounts::from_predictions(&y, &g.value(fwd.logits).argmax_rows())?);
            let loss = g.softmax_cross_entropy(fwd.logits, &y)?;
            g.backward(loss)?;
            let grad = fwd.bound.arch_grad(&g);
            let arch = model.arch_mut().expect("supernet");
            adam_step(&mut [&mut arch.logits], &[grad], &mut arch_state, &scfg.adam_arch)?;
        }

        let logits = &model.arch().expect("supernet").logits;
        if !logits.is_finite() {
            return Err(Error::Validation(format!("architecture logits diverged at epoch {epoch}")));
        }
        let (s, e) = (
            search_counts.class_averaged_accuracy()?,
            eval_counts.class_averaged_accuracy()?,
        );
        info!(
            "seed {seed} epoch {epoch}: tau {tau:.3} lr {lr:.6} search {s:.4} eval {e:.4} genotype {}",
            derive_genotype(model.arch().expect("supernet"), shape)
        );
        out.search_curve.push(s);
        out.eval_curve.push(e);
        out.temperatures.push(tau);
        out.learning_rates.push(lr);
        out.arch_logits_history.push(logits.data().iter().map(|v| v.as_f64()).collect());
    }
    out.final_genotype = derive_genotype(model.arch().expect("supernet"), shape);
    out.model = model;
    out.wall_time = started.elapsed();
    Ok(out)
}

/// Independent searches for several seeds, returned in seed order.
pub fn search_seeds<T: Scalar>(
    train: &Dataset,
    val: &Dataset,
    mcfg: &ModelConfig,
    scfg: &SearchConfig,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<SearchResult<T>>> {
    with_jobs(jobs, || {
        seeds
            .par_iter()
            .map(|&seed| gdas_search(train, val, mcfg, &SearchConfig { seed, ..scfg.clone() }))
            .collect::<Result<Vec<_>>>()
    })?
}

pub const CURVES_HEADER: &str = "epoch,search_accuracy,eval_accuracy,temperature,lr";

pub fn curves_csv<T>(result: &SearchResult<T>) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for i in 0..result.search_curve.len() {
        writeln!(
            out,
            "{i},{},{},{},{}",
            result.search_curve[i], result.eval_curve[i], result.temperatures[i], result.learning_rates[i]
        )
        .expect("string write");
    }
    out
}

pub fn emit_curves<T>(result: &SearchResult<T>, path: &Path) -> Result<()> {
    fs::write(path, curves_csv(result)).map_err(|e| Error::io(path, e))
}

/// One parsed row of a curves file.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub search_accuracy: f64,
    pub eval_accuracy: f64,
    pub temperature: f64,
    pub lr: f64,
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    if lines.next() != Some(CURVES_HEADER) {
        return Err(bad(1, format!("header must be `{CURVES_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i + 2, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, format!("{s:?}: {e}")));
        rows.push(CurveRow {
            epoch: f[0].parse().map_err(|e| bad(i + 2, format!("{:?}: {e}", f[0])))?,
            search_accuracy: num(f[1])?,
            eval_accuracy: num(f[2])?,
            temperature: num(f[3])?,
            lr: num(f[4])?,
        });
    }
    Ok(rows)
}

/// Logits history as a tensor per epoch, for callers that want to inspect it.
pub fn logits_at<T: Scalar>(result: &SearchResult<T>, epoch: usize) -> Option<Tensor<f64>> {
    let v = result.arch_logits_history.get(epoch)?;
    Tensor::new(v.len() / 3, 3, v.clone()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SynthSpec};
    use crate::genotype::CellShape;

    fn tiny() -> (Dataset, Dataset, ModelConfig) {
        let train = synth_generate(&SynthSpec::new(20, 28, (3, 2), 3.0, 1)).unwrap();
        let val = synth_generate(&SynthSpec::new(8, 8, (3, 2), 3.0, 2)).unwrap();
        let mut mcfg = ModelConfig::new(3, 2, MixingSpec::Supernet(CellShape::Desk));
        mcfg.encoder_hidden = 8;
        mcfg.encoder_out = 4;
        (train, val, mcfg)
    }

    #[test]
    fn temperature_endpoints() {
        let cfg = SearchConfig::default();
        assert_eq!(temperature(0, &cfg), 10.0);
        assert!((temperature(99, &cfg) - 0.1).abs() < 1e-12);
        let mid = 0.5 * (temperature(49, &cfg) + temperature(50, &cfg));
        assert!((mid - 5.05).abs() < 1e-12);
    }

    #[test]
    fn config_invariants() {
        let mut cfg = SearchConfig::default();
        cfg.tau_end = 20.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.epochs = 5;
        assert!(cfg.validate().is_err());
        assert!(SearchConfig::default().with_epochs(5).validate().is_ok());
    }

    #[test]
    fn search_is_deterministic_and_consistent() {
        let (train, val, mcfg) = tiny();
        let scfg = SearchConfig {
            adam_arch: AdamConfig { lr: 0.05, ..default_adam_arch() },
            ..SearchConfig::default().with_epochs(4)
        };
        let r1 = gdas_search::<f64>(&train, &val, &mcfg, &scfg).unwrap();
        let r2 = gdas_search::<f64>(&train, &val, &mcfg, &scfg).unwrap();
        assert_eq!(r1.final_genotype, r2.final_genotype);
        assert_eq!(curves_csv(&r1), curves_csv(&r2));
        assert_eq!(r1.search_curve.len(), 4);
        assert!(r1.search_curve.iter().chain(&r1.eval_curve).all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r1.final_genotype, derive_genotype(r1.model.arch().unwrap(), CellShape::Desk));
        // Logits moved away from their zero start.
        assert!(r1.arch_logits_history.last().unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn frozen_noise_constant_temperature_repeats_trajectory() {
        let (train, val, mcfg) = tiny();
        let scfg = SearchConfig {
            tau_start: 1.0,
            tau_end: 1.0,
            frozen_noise: true,
            ..SearchConfig::default().with_epochs(3)
        };
        let r1 = gdas_search::<f64>(&train, &val, &mcfg, &scfg).unwrap();
        let r2 = gdas_search::<f64>(&train, &val, &mcfg, &scfg).unwrap();
        assert_eq!(r1.arch_logits_history, r2.arch_logits_history);
    }

    #[test]
    fn rejects_non_supernet_and_bad_widths() {
        let (train, val, mcfg) = tiny();
        let scfg = SearchConfig::default().with_epochs(1);
        assert!(gdas_search::<f64>(&train, &val, &mcfg.with_mixing(MixingSpec::Baseline50), &scfg).is_err());
        let wrong = synth_generate(&SynthSpec::new(4, 4, (5, 2), 1.0, 0)).unwrap();
        assert!(matches!(
            gdas_search::<f64>(&wrong, &val, &mcfg, &scfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn curves_round_trip_through_file() {
        let (train, val, mcfg) = tiny();
        let r = gdas_search::<f64>(&train, &val, &mcfg, &SearchConfig::default().with_epochs(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        emit_curves(&r, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), CURVES_HEADER);
        let rows = read_curves(&path).unwrap();
        assert_eq!(rows[1].search_accuracy, r.search_curve[1]);
        assert_eq!(rows[1].lr, r.learning_rates[1]);
    }
}
