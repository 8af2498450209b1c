//! Splits, class-averaged accuracy, N x 2 cross-validation, fixed-architecture
//! training and the exhaustive oracle over a small search space.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataio::{Dataset, Label};
use crate::error::{Error, Result};
use crate::genotype::{Genotype, SearchSpace, CellShape};
use crate::model::{build_model, ArchMode, JaeModel, MixingSpec, ModelConfig, Trainable};
use crate::nn::{adam_step, cosine_lr, sgd_step, AdamConfig, OptimizerState, SgdConfig};
use crate::scalar::Scalar;

/// Independent sub-seed for stream `stream` of a run seeded with `base`
/// (splitmix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f` on a pool of `jobs` workers (the global pool when `None`).
pub(crate) fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

/// Record ids of the three splits plus the materialised datasets.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn floor_count(n: usize, fraction: f64) -> usize {
    // Guard against 0.1 * 700 = 69.999... style rounding.
    (n as f64 * fraction + 1e-9).floor() as usize
}

/// Shares `total` across classes in proportion to `sizes`: floors first,
/// then one extra each to the largest fractional parts (lowest class first
/// on ties).
fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|&x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| {
        let (fi, fj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        fj.partial_cmp(&fi).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Train/validation/test partition. Validation and test sizes are floors of
/// their fractions of the whole dataset; the remainder goes to train. With
/// stratification each split keeps the class proportions as closely as
/// integer counts allow.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = ds.len();
    let (n_val, n_test) = (floor_count(n, spec.val_fraction), floor_count(n, spec.test_fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train_ids, mut val_ids, mut test_ids) = (Vec::new(), Vec::new(), Vec::new());
    if spec.stratified {
        let groups: Vec<Vec<usize>> = Label::ALL.iter().map(|&l| ds.class_ids(l)).collect();
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let val_q = apportion(n_val, &sizes);
        let test_q = apportion(n_test, &sizes);
        for (c, mut ids) in groups.into_iter().enumerate() {
            ids.shuffle(&mut rng);
            let (v, t) = (val_q[c], test_q[c]);
            if v == 0 || t == 0 || v + t >= ids.len() {
                return Err(Error::Validation(format!(
                    "class {} ({} records) cannot appear in every split",
                    Label::ALL[c],
                    ids.len()
                )));
            }
            val_ids.extend_from_slice(&ids[..v]);
            test_ids.extend_from_slice(&ids[v..v + t]);
            train_ids.extend_from_slice(&ids[v + t..]);
        }
    } else {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        val_ids.extend_from_slice(&ids[..n_val]);
        test_ids.extend_from_slice(&ids[n_val..n_val + n_test]);
        train_ids.extend_from_slice(&ids[n_val + n_test..]);
    }
    for ids in [&mut train_ids, &mut val_ids, &mut test_ids] {
        ids.sort_unstable();
    }
    let name = ds.name();
    Ok(Splits {
        train: ds.subset(&train_ids, format!("{name}/train"))?,
        val: ds.subset(&val_ids, format!("{name}/val"))?,
        test: ds.subset(&test_ids, format!("{name}/test"))?,
        train_ids,
        val_ids,
        test_ids,
    })
}

/// Per-class totals and hits, indexed by [`Label::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub total: [u64; 2],
    pub correct: [u64; 2],
}

impl ConfusionCounts {
    pub fn new(total: [u64; 2], correct: [u64; 2]) -> Result<Self> {
        if correct[0] > total[0] || correct[1] > total[1] {
            return Err(Error::Validation(format!("correct {correct:?} exceeds totals {total:?}")));
        }
        Ok(ConfusionCounts { total, correct })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Contract(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            if y > 1 {
                return Err(Error::Validation(format!("label index {y} is not a class")));
            }
            c.total[y] += 1;
            c.correct[y] += u64::from(y == p);
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for c in 0..2 {
            self.total[c] += other.total[c];
            self.correct[c] += other.correct[c];
        }
    }

    /// Mean over classes of `correct / total`, exactly.
    pub fn class_averaged_accuracy_exact(&self) -> Result<Ratio<u128>> {
        if let Some(c) = (0..2).find(|&c| self.total[c] == 0) {
            return Err(Error::UndefinedMetric(format!(
                "class {} has no instances",
                Label::ALL[c]
            )));
        }
        let sum: Ratio<u128> = (0..2)
            .map(|c| Ratio::new(u128::from(self.correct[c]), u128::from(self.total[c])))
            .sum();
        Ok(sum / 2)
    }

    pub fn class_averaged_accuracy(&self) -> Result<f64> {
        let r = self.class_averaged_accuracy_exact()?;
        Ok(*r.numer() as f64 / *r.denom() as f64)
    }

    pub fn plain_accuracy(&self) -> f64 {
        (self.correct[0] + self.correct[1]) as f64 / (self.total[0] + self.total[1]).max(1) as f64
    }
}

/// Free-function form of [`ConfusionCounts::class_averaged_accuracy`].
pub fn class_averaged_accuracy(counts: &ConfusionCounts) -> Result<f64> {
    counts.class_averaged_accuracy()
}

/// Optimiser settings for fixed-architecture training: SGD on cell layers
/// (epochs and batch size also come from here), ADAM on everything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn with_epochs(&self, epochs: usize) -> Self {
        let mut c = self.clone();
        c.sgd.epochs = epochs;
        c
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        self.adam.validate()?;
        self.sgd.validate()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: JaeModel<T>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

const EVAL_CHUNK: usize = 512;

/// Confusion counts of a non-supernet model (or a supernet at its argmax
/// genotype) over the given records.
pub fn evaluate<T: Scalar>(model: &JaeModel<T>, ds: &Dataset, ids: &[usize]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for chunk in ids.chunks(EVAL_CHUNK) {
        let (a, b, y) = ds.batch::<T>(chunk)?;
        let pred = model.predict(&a, &b, ArchMode::Argmax)?;
        counts.merge(&ConfusionCounts::from_predictions(&y, &pred)?);
    }
    Ok(counts)
}

pub fn evaluate_all<T: Scalar>(model: &JaeModel<T>, ds: &Dataset) -> Result<ConfusionCounts> {
    let ids: Vec<usize> = (0..ds.len()).collect();
    evaluate(model, ds, &ids)
}

/// Trains a baseline or fixed-cell model from scratch. Deterministic in
/// `seed`: initialisation and batch order use separate derived streams.
pub fn train_fixed<T: Scalar>(
    train: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    if matches!(mcfg.mixing, MixingSpec::Supernet(_)) {
        return Err(Error::Config("train_fixed needs a baseline or fixed-cell mixing component".into()));
    }
    tcfg.validate()?;
    if train.widths() != (mcfg.modality_a_dim, mcfg.modality_b_dim) {
        return Err(Error::Validation(format!(
            "dataset widths {:?} do not match model ({}, {})",
            train.widths(),
            mcfg.modality_a_dim,
            mcfg.modality_b_dim
        )));
    }
    let mut model: JaeModel<T> = build_model(mcfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)))?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (mut sgd_state, mut adam_state) = (OptimizerState::new(), OptimizerState::new());
    let mut ids: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tcfg.sgd.epochs);
    for epoch in 0..tcfg.sgd.epochs {
        let lr = cosine_lr(epoch, &tcfg.sgd);
        ids.shuffle(&mut order_rng);
        let mut total = 0.0;
        for batch in ids.chunks(tcfg.sgd.batch_size) {
            let (a, b, y) = train.batch::<T>(batch)?;
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a), g.constant(b));
            let fwd = model.forward(&mut g, va, vb, Trainable::WEIGHTS, ArchMode::Argmax)?;
            let loss = g.softmax_cross_entropy(fwd.logits, &y)?;
            g.backward(loss)?;
            total += g.value(loss).item()?.as_f64() * batch.len() as f64;
            let cell_grads = fwd.bound.cell_grads(&g);
            if !cell_grads.is_empty() {
                sgd_step(&mut model.cell_params_mut(), &cell_grads, &mut sgd_state, lr, &tcfg.sgd)?;
            }
            adam_step(
                &mut model.skeleton_params_mut(),
                &fwd.bound.skeleton_grads(&g),
                &mut adam_state,
                &tcfg.adam,
            )?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Validation(format!("training diverged at epoch {epoch}")));
        }
        debug!("train_fixed epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Sample statistics over the 2N per-fit accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub accuracies: Vec<f64>,
    pub sample_mean: f64,
    pub sample_std: f64,
}

impl CVResult {
    /// Mean and (n - 1)-denominator standard deviation of `values`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Validation("sample statistics need at least 2 values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok(CVResult {
            sample_mean: mean,
            sample_std: var.sqrt(),
            accuracies: values,
        })
    }

    /// `mean±std`, 4 decimals.
    pub fn formatted(&self) -> String {
        format_mean_std(self.sample_mean, self.sample_std)
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4}±{std:.4}")
}

/// One train-on-one-half, test-on-the-other fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub repetition: usize,
    /// 0 trains on the first half, 1 on the second.
    pub fold: usize,
    pub seed: u64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
}

impl FitRecord {
    pub fn fold_id(&self) -> usize {
        2 * self.repetition + self.fold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fits: Vec<FitRecord>,
    pub result: CVResult,
}

/// Stratified halves for one repetition. Odd class counts put the extra
/// record in the first half.
pub fn cv_halves(ds: &Dataset, seed: u64) -> Result<[Vec<usize>; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halves = [Vec::new(), Vec::new()];
    for label in Label::ALL {
        let mut ids = ds.class_ids(label);
        if ids.len() < 2 {
            return Err(Error::Validation(format!(
                "class {label} has {} record(s); both halves need one",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        let cut = ids.len().div_ceil(2);
        halves[0].extend_from_slice(&ids[..cut]);
        halves[1].extend_from_slice(&ids[cut..]);
    }
    for h in &mut halves {
        h.sort_unstable();
    }
    Ok(halves)
}

/// N repetitions of stratified 2-fold CV: 2N fits, each scored by
/// class-averaged accuracy on the held-out half. Fits run on `jobs` workers
/// and are reported in (repetition, fold) order.
pub fn n_by_2_cv<T: Scalar>(
    ds: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    n: usize,
    seed: u64,
    jobs: Option<usize>,
) -> Result<CvReport> {
    if n == 0 {
        return Err(Error::Config("N must be >= 1".into()));
    }
    tcfg.validate()?;
    let halves: Vec<[Vec<usize>; 2]> = (0..n)
        .map(|r| cv_halves(ds, derive_seed(seed, 2 * r as u64)))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..n).flat_map(|r| [(r, 0), (r, 1)]).collect();
    let run = |&(r, fold): &(usize, usize)| -> Result<FitRecord> {
        let (train_ids, test_ids) = (&halves[r][fold], &halves[r][1 - fold]);
        let fit_seed = derive_seed(seed, 2 * r as u64 + 1).wrapping_add(fold as u64);
        let train = ds.subset(train_ids, format!("{}/cv{r}.{fold}", ds.name()))?;
        let out = train_fixed::<T>(&train, mcfg, tcfg, fit_seed)?;
        let counts = evaluate(&out.model, ds, test_ids)?;
        let accuracy = counts.class_averaged_accuracy()?;
        info!("cv repetition {r} fold {fold}: {accuracy:.4}");
        Ok(FitRecord {
            repetition: r,
            fold,
            seed: fit_seed,
            counts,
            accuracy,
        })
    };
    let fits: Vec<FitRecord> = with_jobs(jobs, || tasks.par_iter().map(run).collect::<Result<Vec<_>>>())??;
    let result = CVResult::from_values(fits.iter().map(|f| f.accuracy).collect())?;
    Ok(CvReport { fits, result })
}

pub fn write_cv_csv(report: &CvReport, path: &Path) -> Result<()> {
    let mut out = String::from("seed,fold,accuracy\n");
    for f in &report.fits {
        writeln!(out, "{},{},{}", f.seed, f.fold_id(), f.accuracy).expect("string write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub rank: usize,
    pub genotype: Genotype,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub budget_epochs: usize,
    /// Independent initialisations averaged per genotype.
    pub repeats: usize,
    pub allow_full: bool,
    pub split: SplitSpec,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            budget_epochs: 10,
            repeats: 1,
            allow_full: false,
            split: SplitSpec::default(),
        }
    }
}

/// Every genotype of a space, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRanking {
    pub entries: Vec<OracleEntry>,
    pub budget_epochs: usize,
    pub repeats: usize,
    pub seed: u64,
    pub train_size: usize,
    pub holdout_size: usize,
}

impl OracleRanking {
    /// Competition rank (1 + number of strictly better genotypes).
    pub fn rank_of(&self, genotype: &Genotype) -> Option<usize> {
        self.entries.iter().find(|e| &e.genotype == genotype).map(|e| e.rank)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("rank,seed,genotype,accuracy\n");
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.rank, self.seed, e.genotype, e.accuracy).expect("string write");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Trains every genotype of `space` under the same reduced budget and the
/// same split, scoring class-averaged accuracy on validation + test. Sorted
/// by descending accuracy, ties by canonical string.
pub fn exhaustive_oracle<T: Scalar>(
    ds: &Dataset,
    space: &SearchSpace,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    opts: &OracleOptions,
    seed: u64,
    jobs: Option<usize>,
) -> Result<OracleRanking> {
    if space.shape == CellShape::Full && !opts.allow_full {
        return Err(Error::Config(format!(
            "refusing to train all {} genotypes of the full space; set allow_full (`--allow-full`) to insist",
            space.cardinality()
        )));
    }
    if opts.budget_epochs == 0 || opts.repeats == 0 {
        return Err(Error::Config("oracle budget and repeats must be >= 1".into()));
    }
    let tcfg = tcfg.with_epochs(opts.budget_epochs);
    tcfg.validate()?;
    let splits = split(ds, &SplitSpec { seed, ..opts.split.clone() })?;
    let mut holdout: Vec<usize> = splits.val_ids.iter().chain(&splits.test_ids).copied().collect();
    holdout.sort_unstable();
    let genotypes: Vec<Genotype> = space.enumerate_all().collect();
    let score = |genotype: &Genotype| -> Result<f64> {
        let cfg = mcfg.with_mixing(MixingSpec::FixedCell(genotype.clone()));
        let mut sum = 0.0;
        for rep in 0..opts.repeats {
            let out = train_fixed::<T>(&splits.train, &cfg, &tcfg, derive_seed(seed, 1000 + rep as u64))?;
            sum += evaluate(&out.model, ds, &holdout)?.class_averaged_accuracy()?;
        }
        debug!("oracle {genotype}: {:.4}", sum / opts.repeats as f64);
        Ok(sum / opts.repeats as f64)
    };
    let scores: Vec<f64> = with_jobs(jobs, || genotypes.par_iter().map(score).collect::<Result<Vec<_>>>())??;
    let mut scored: Vec<(Genotype, f64, String)> = genotypes
        .into_iter()
        .zip(scores)
        .map(|(g, s)| {
            let key = g.to_string();
            (g, s, key)
        })
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.2.cmp(&y.2)));
    let mut entries = Vec::with_capacity(scored.len());
    let mut rank = 1;
    for (i, (genotype, accuracy, _)) in scored.into_iter().enumerate() {
        if i > 0 && accuracy < entries.last().map_or(accuracy, |e: &OracleEntry| e.accuracy) {
            rank = i + 1;
        }
        entries.push(OracleEntry { rank, genotype, accuracy });
    }
    Ok(OracleRanking {
        entries,
        budget_epochs: opts.budget_epochs,
        repeats: opts.repeats,
        seed,
        train_size: splits.train_ids.len(),
        holdout_size: holdout.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SynthSpec};

    #[test]
    fn split_sizes_follow_floor_rule() {
        let ds = synth_generate(&SynthSpec::new(146, 554, (2, 2), 1.0, 0)).unwrap();
        let s = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (560, 70, 70));
        let mut all: Vec<usize> = s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..700).collect::<Vec<_>>());
        assert_eq!(s.val.counts().flawed, 15);
        let again = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(again.val_ids, s.val_ids);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = synth_generate(&SynthSpec::new(3, 50, (2, 2), 1.0, 0)).unwrap();
        assert!(matches!(split(&ds, &SplitSpec::default()), Err(Error::Validation(_))));
        let bad = SplitSpec {
            train_fraction: 0.7,
            ..SplitSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn metric_examples() {
        let c = ConfusionCounts::new([10, 30], [9, 15]).unwrap();
        assert_eq!(c.class_averaged_accuracy_exact().unwrap(), Ratio::new(7, 10));
        let dup = ConfusionCounts::new([10, 60], [9, 30]).unwrap();
        assert_eq!(dup.class_averaged_accuracy_exact().unwrap(), Ratio::new(7, 10));
        assert_eq!(ConfusionCounts::new([4, 4], [4, 4]).unwrap().class_averaged_accuracy().unwrap(), 1.0);
        assert!(matches!(
            ConfusionCounts::new([0, 4], [0, 1]).unwrap().class_averaged_accuracy(),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(ConfusionCounts::new([1, 1], [2, 0]).is_err());
    }

    #[test]
    fn sample_statistics() {
        let r = CVResult::from_values([0.9, 1.0].repeat(5)).unwrap();
        assert!((r.sample_mean - 0.95).abs() < 1e-12);
        assert!((r.sample_std - 0.052704627669472995).abs() < 1e-12);
        assert_eq!(format_mean_std(0.97031, 0.02199), "0.9703±0.0220");
        assert_eq!(CVResult::from_values(vec![0.5; 4]).unwrap().sample_std, 0.0);
    }

    #[test]
    fn cv_halves_are_stratified_partitions() {
        let ds = synth_generate(&SynthSpec::new(11, 20, (2, 2), 1.0, 0)).unwrap();
        let [h0, h1] = cv_halves(&ds, 5).unwrap();
        assert_eq!(h0.len() + h1.len(), 31);
        assert!(h0.iter().all(|i| !h1.contains(i)));
        let flawed = |h: &[usize]| h.iter().filter(|&&i| ds.records()[i].label == Label::Flawed).count();
        assert_eq!((flawed(&h0), flawed(&h1)), (6, 5));
    }

    #[test]
    fn train_fixed_descends_and_is_deterministic() {
        let ds = synth_generate(&SynthSpec::new(40, 60, (4, 3), 8.0, 2)).unwrap();
        let mut mcfg = ModelConfig::new(4, 3, MixingSpec::Baseline50);
        mcfg.encoder_hidden = 16;
        mcfg.encoder_out = 8;
        let tcfg = TrainConfig::default().with_epochs(15);
        let a = train_fixed::<f64>(&ds, &mcfg, &tcfg, 9).unwrap();
        let b = train_fixed::<f64>(&ds, &mcfg, &tcfg, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.epoch_losses.last().unwrap() <= a.epoch_losses.first().unwrap());
        let acc = evaluate_all(&a.model, &ds).unwrap().class_averaged_accuracy().unwrap();
        assert!(acc >= 0.99, "{acc}");
        assert!(train_fixed::<f64>(&ds, &mcfg.with_mixing(MixingSpec::Supernet(CellShape::Desk)), &tcfg, 0).is_err());
    }

    #[test]
    fn oracle_refuses_full_space() {
        let ds = synth_generate(&SynthSpec::new(40, 60, (4, 3), 8.0, 2)).unwrap();
        let mcfg = ModelConfig::new(4, 3, MixingSpec::Baseline50);
        let err = exhaustive_oracle::<f64>(
            &ds,
            &SearchSpace::full(),
            &mcfg,
            &TrainConfig::default(),
            &OracleOptions::default(),
            0,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
