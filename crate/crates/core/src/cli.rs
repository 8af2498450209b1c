//! Command-line surface: search, eval, oracle, genotype tools, synth, report.
//!
//! Every command writes its primary outputs into `--out` and is
//! deterministic given the config and seed. Run manifests carry the fully
//! resolved config so a run can be repeated from the manifest alone.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataio::{load_delimited, save_delimited, summarize, synth_generate, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::evalharness::{
    format_mean_std, n_by_2_cv, split, write_cv_csv, exhaustive_oracle, CVResult, OracleOptions, SplitSpec,
    TrainConfig,
};
use crate::genotype::{CellShape, Genotype, GenotypeError, SearchSpace};
use crate::model::{Checkpoint, MixingSpec, ModelConfig};
use crate::nn::{AdamConfig, SgdConfig};
use crate::scalar::Scalar;
use crate::search::{curves_csv, gdas_search, read_curves, SearchConfig, CurveRow};

pub const GENOTYPE_FILE: &str = "genotype.txt";
pub const CURVES_FILE: &str = "curves.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RANKING_FILE: &str = "ranking.csv";
pub const CV_FILE: &str = "cv.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const REPORT_FILE: &str = "report.svg";
pub const CHECKPOINT_FILE: &str = "supernet.json";

#[derive(Parser, Debug)]
#[command(name = "jaenas", version, about = "Cell search for a two-modality early-fusion classifier")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for independent fits (default: available processors).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Mixing50,
    Mixing100,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Desk,
    Full,
}

impl From<SpaceArg> for CellShape {
    fn from(s: SpaceArg) -> CellShape {
        match s {
            SpaceArg::Desk => CellShape::Desk,
            SpaceArg::Full => CellShape::Full,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// GDAS cell search on the train/validation splits.
    Search(RunArgs),
    /// 5x2 cross-validation of a genotype or a baseline mixing layer.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Genotype string to evaluate.
        #[arg(long, conflicts_with_all = ["baseline", "genotype_file"])]
        genotype: Option<String>,
        /// File holding a genotype string (e.g. a search's genotype.txt).
        #[arg(long, conflicts_with = "baseline")]
        genotype_file: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Train every genotype of a search space under a reduced budget.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "desk")]
        space: SpaceArg,
        /// Required to enumerate the full 59049-genotype space.
        #[arg(long)]
        allow_full: bool,
        /// Report the oracle rank of this genotype.
        #[arg(long)]
        compare: Option<String>,
    },
    /// Genotype string tools.
    #[command(subcommand)]
    Genotype(GenotypeCmd),
    /// Write a synthetic dataset as delimited text.
    Synth {
        /// TOML synthetic dataset spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Chart and summary table for a run directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum GenotypeCmd {
    /// Validate a genotype string and describe it.
    Parse { genotype: String },
    /// Print the canonical form.
    Canon { genotype: String },
    /// Stream every genotype of a space, one per line.
    Enumerate {
        #[arg(long, value_enum, default_value = "desk")]
        space: SpaceArg,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Where the records come from: a delimited file or a synthetic spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl Default for DataSource {
    fn default() -> Self {
        let mut spec = SynthSpec::new(146, 554, (32, 32), 3.0, 0);
        spec.name = "synthetic-146-554".into();
        DataSource {
            path: None,
            synth: Some(spec),
        }
    }
}

/// Skeleton sizes; modality widths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub private_out: Option<usize>,
    pub fusion_out: usize,
    pub node_width: usize,
    pub leaky_slope: f64,
    /// Cell shape searched by `search`.
    pub shape: CellShape,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, MixingSpec::Baseline50);
        ModelSection {
            encoder_hidden: m.encoder_hidden,
            encoder_out: m.encoder_out,
            private_out: m.private_out,
            fusion_out: m.fusion_out,
            node_width: m.node_width,
            leaky_slope: m.leaky_slope,
            shape: CellShape::Desk,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, widths: (usize, usize), mixing: MixingSpec) -> ModelConfig {
        ModelConfig {
            encoder_hidden: self.encoder_hidden,
            encoder_out: self.encoder_out,
            private_out: self.private_out,
            fusion_out: self.fusion_out,
            node_width: self.node_width,
            leaky_slope: self.leaky_slope,
            ..ModelConfig::new(widths.0, widths.1, mixing)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub adam_arch: AdamConfig,
    pub tau_start: f64,
    pub tau_end: f64,
    pub frozen_noise: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSection {
            adam_arch: d.adam_arch,
            tau_start: d.tau_start,
            tau_end: d.tau_end,
            frozen_noise: d.frozen_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Repetitions of 2-fold CV.
    pub n: usize,
    /// Training epochs per fit; the `sgd` block's epochs when absent.
    pub epochs: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n: 5, epochs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub budget_epochs: usize,
    pub repeats: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            budget_epochs: 10,
            repeats: 1,
        }
    }
}

/// The TOML run document. The `sgd` block uses the AutoDL-style key names (`scheduler`, `LR`, `eta_min`, `epochs`, `optim`, `decay`,
/// `momentum`, `nesterov`, `criterion`, `batch_size`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub data: DataSource,
    pub model: ModelSection,
    pub sgd: SgdConfig,
    /// Skeleton optimiser (encoders, fusion, classifier, baseline mixing).
    pub adam: AdamConfig,
    pub search: SearchSection,
    pub split: SplitSpec,
    pub eval: EvalSection,
    pub oracle: OracleSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (or defaults) with the command-line seed applied.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => {
                let mut cfg = RunConfig::load(p)?;
                // Relative data paths are relative to the config file.
                if let (Some(data), Some(dir)) = (cfg.data.path.as_mut(), p.parent()) {
                    if data.is_relative() {
                        *data = dir.join(&*data);
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section before any work starts; returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = self.sgd.validate()?;
        self.adam.validate()?;
        self.search_config().validate()?;
        self.split.validate()?;
        match (&self.data.path, &self.data.synth) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => return Err(Error::Config("data needs exactly one of `path` or `synth`".into())),
        }
        if self.eval.n == 0 || self.eval.epochs == Some(0) {
            return Err(Error::Config("eval n and epochs must be >= 1".into()));
        }
        if self.oracle.budget_epochs == 0 || self.oracle.repeats == 0 {
            return Err(Error::Config("oracle budget_epochs and repeats must be >= 1".into()));
        }
        self.model
            .model_config((1, 1), MixingSpec::Supernet(self.model.shape))
            .validate()?;
        warnings.dedup();
        Ok(warnings)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            sgd: self.sgd.clone(),
            adam_skeleton: self.adam.clone(),
            adam_arch: self.search.adam_arch.clone(),
            tau_start: self.search.tau_start,
            tau_end: self.search.tau_end,
            epochs: self.sgd.epochs,
            seed: self.seed,
            frozen_noise: self.search.frozen_noise,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = TrainConfig {
            sgd: self.sgd.clone(),
            adam: self.adam.clone(),
        };
        match self.eval.epochs {
            Some(e) => t.with_epochs(e),
            None => t,
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match (&self.data.path, &self.data.synth) {
            (Some(p), _) => load_delimited(p),
            (None, Some(spec)) => synth_generate(spec),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn jobs(args: &RunArgs) -> Option<usize> {
    Some(args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn data_summary(ds: &Dataset) -> serde_json::Value {
    let c = summarize(ds);
    json!({
        "name": ds.name(),
        "records": ds.len(),
        "widths": [ds.widths().0, ds.widths().1],
        "flawed": c.flawed,
        "not_flawed": c.not_flawed,
    })
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value, started: Instant) -> Result<()> {
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "results": extra,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), &(text + "\n"))
}

fn log_warnings(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

fn search_impl<T: Scalar>(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<(Genotype, serde_json::Value)> {
    let splits = split(ds, &SplitSpec { seed: cfg.seed, ..cfg.split.clone() })?;
    let mcfg = cfg.model.model_config(ds.widths(), MixingSpec::Supernet(cfg.model.shape));
    let result = gdas_search::<T>(&splits.train, &splits.val, &mcfg, &cfg.search_config())?;
    write_file(&out.join(GENOTYPE_FILE), &format!("{}\n", result.final_genotype))?;
    write_file(&out.join(CURVES_FILE), &curves_csv(&result))?;
    Checkpoint::from_model(&result.model).save(&out.join(CHECKPOINT_FILE))?;
    let extra = json!({
        "genotype": result.final_genotype.to_string(),
        "final_search_accuracy": result.search_curve.last(),
        "final_eval_accuracy": result.eval_curve.last(),
        "train_records": splits.train.len(),
        "val_records": splits.val.len(),
        "search_wall_time_seconds": result.wall_time.as_secs_f64(),
    });
    Ok((result.final_genotype, extra))
}

/// GDAS search; writes genotype.txt, curves.csv, supernet.json and the manifest.
pub fn cmd_search(args: &RunArgs, stdout: &mut dyn Write) -> Result<Genotype> {
    let started = Instant::now();
    let cfg = RunConfig::resolve(args)?;
    log_warnings(&cfg.validate()?);
    let ds = cfg.dataset()?;
    ensure_dir(&args.out)?;
    let (genotype, mut extra) = match cfg.precision {
        Precision::F64 => search_impl::<f64>(&cfg, &ds, &args.out)?,
        Precision::F32 => search_impl::<f32>(&cfg, &ds, &args.out)?,
    };
    extra["data"] = data_summary(&ds);
    write_manifest(&args.out, "search", &cfg, extra, started)?;
    writeln!(stdout, "{genotype}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(genotype)
}

fn eval_mixing(genotype: &Option<String>, genotype_file: &Option<PathBuf>, baseline: Option<Baseline>) -> Result<MixingSpec> {
    match (genotype, genotype_file, baseline) {
        (Some(s), None, None) => Ok(MixingSpec::FixedCell(Genotype::parse(s.trim())?)),
        (None, Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(MixingSpec::FixedCell(Genotype::parse(text.trim())?))
        }
        (None, None, Some(Baseline::Mixing50)) => Ok(MixingSpec::Baseline50),
        (None, None, Some(Baseline::Mixing100)) => Ok(MixingSpec::Baseline100),
        _ => Err(Error::Config(
            "eval needs exactly one of --genotype, --genotype-file or --baseline".into(),
        )),
    }
}

/// Summary table shared by `eval` and `report`.
fn cv_summary_rows(label: &str, result: &CVResult) -> String {
    format!("model\tclass_averaged_accuracy\n{label}\t{}\n", result.formatted())
}

/// N x 2 CV on the whole dataset; writes cv.csv, summary.txt and the manifest.
pub fn cmd_eval(
    args: &RunArgs,
    genotype: &Option<String>,
    genotype_file: &Option<PathBuf>,
    baseline: Option<Baseline>,
    stdout: &mut dyn Write,
) -> Result<CVResult> {
    let started = Instant::now();
    let mixing = eval_mixing(genotype, genotype_file, baseline)?;
    let cfg = RunConfig::resolve(args)?;
    log_warnings(&cfg.validate()?);
    let ds = cfg.dataset()?;
    let mcfg = cfg.model.model_config(ds.widths(), mixing.clone());
    mcfg.validate()?;
    ensure_dir(&args.out)?;
    let tcfg = cfg.train_config();
    let report = match cfg.precision {
        Precision::F64 => n_by_2_cv::<f64>(&ds, &mcfg, &tcfg, cfg.eval.n, cfg.seed, jobs(args))?,
        Precision::F32 => n_by_2_cv::<f32>(&ds, &mcfg, &tcfg, cfg.eval.n, cfg.seed, jobs(args))?,
    };
    write_cv_csv(&report, &args.out.join(CV_FILE))?;
    let label = mixing.label();
    write_file(&args.out.join(SUMMARY_FILE), &cv_summary_rows(&label, &report.result))?;
    let extra = json!({
        "model": label,
        "mixing": mixing,
        "accuracies": report.result.accuracies,
        "sample_mean": report.result.sample_mean,
        "sample_std": report.result.sample_std,
        "formatted": report.result.formatted(),
        "data": data_summary(&ds),
    });
    write_manifest(&args.out, "eval", &cfg, extra, started)?;
    writeln!(stdout, "{label}: {}", report.result.formatted()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(report.result)
}

/// Exhaustive oracle; writes ranking.csv and the manifest, prints the top 5.
pub fn cmd_oracle(
    args: &RunArgs,
    space: SpaceArg,
    allow_full: bool,
    compare: &Option<String>,
    stdout: &mut dyn Write,
) -> Result<Option<usize>> {
    let started = Instant::now();
    let compare = compare.as_deref().map(|s| Genotype::parse(s.trim())).transpose()?;
    let cfg = RunConfig::resolve(args)?;
    log_warnings(&cfg.validate()?);
    let space = SearchSpace { shape: space.into() };
    if let Some(g) = &compare {
        if g.shape() != space.shape {
            return Err(Error::Config(format!("--compare genotype {g} is not in the {:?} space", space.shape)));
        }
    }
    let ds = cfg.dataset()?;
    let mcfg = cfg.model.model_config(ds.widths(), MixingSpec::Baseline50);
    let opts = OracleOptions {
        budget_epochs: cfg.oracle.budget_epochs,
        repeats: cfg.oracle.repeats,
        allow_full,
        split: cfg.split.clone(),
    };
    let tcfg = TrainConfig {
        sgd: cfg.sgd.clone(),
        adam: cfg.adam.clone(),
    };
    ensure_dir(&args.out)?;
    let ranking = match cfg.precision {
        Precision::F64 => exhaustive_oracle::<f64>(&ds, &space, &mcfg, &tcfg, &opts, cfg.seed, jobs(args))?,
        Precision::F32 => exhaustive_oracle::<f32>(&ds, &space, &mcfg, &tcfg, &opts, cfg.seed, jobs(args))?,
    };
    ranking.write_csv(&args.out.join(RANKING_FILE))?;
    let io = |e| Error::io("<stdout>", e);
    for e in ranking.entries.iter().take(5) {
        writeln!(stdout, "{:>4}  {:.4}  {}", e.rank, e.accuracy, e.genotype).map_err(io)?;
    }
    let rank = compare.as_ref().and_then(|g| ranking.rank_of(g));
    if let (Some(g), Some(r)) = (&compare, rank) {
        writeln!(stdout, "rank of {g}: {r} of {}", ranking.entries.len()).map_err(io)?;
    }
    let extra = json!({
        "space": format!("{:?}", space.shape).to_lowercase(),
        "genotypes": ranking.entries.len(),
        "budget_epochs": ranking.budget_epochs,
        "repeats": ranking.repeats,
        "train_records": ranking.train_size,
        "holdout_records": ranking.holdout_size,
        "top": ranking.entries.iter().take(5).map(|e| json!({"rank": e.rank, "genotype": e.genotype.to_string(), "accuracy": e.accuracy})).collect::<Vec<_>>(),
        "compare": compare.as_ref().map(|g| json!({"genotype": g.to_string(), "rank": rank})),
        "data": data_summary(&ds),
    });
    write_manifest(&args.out, "oracle", &cfg, extra, started)?;
    Ok(rank)
}

/// Parse error rendered with a caret under the offending byte.
pub fn render_genotype_error(input: &str, err: &GenotypeError) -> String {
    match err {
        GenotypeError::Parse { offset, .. } => {
            format!("error: {err}\n  {input}\n  {}^", " ".repeat(input[..(*offset).min(input.len())].chars().count()))
        }
        GenotypeError::Invalid { .. } => format!("error: {err}"),
    }
}

pub fn cmd_genotype(cmd: &GenotypeCmd, stdout: &mut dyn Write) -> Result<()> {
    let io = |e| Error::io("<stdout>", e);
    match cmd {
        GenotypeCmd::Parse { genotype } => {
            let g = Genotype::parse(genotype)?;
            writeln!(stdout, "valid").map_err(io)?;
            writeln!(stdout, "canonical: {g}").map_err(io)?;
            writeln!(stdout, "shape: {:?}", g.shape()).map_err(io)?;
            writeln!(stdout, "computation nodes: {}", g.nodes().len()).map_err(io)?;
            writeln!(stdout, "edges: {}", g.ops().len()).map_err(io)?;
            writeln!(stdout, "index: {}", g.index()).map_err(io)?;
        }
        GenotypeCmd::Canon { genotype } => {
            writeln!(stdout, "{}", Genotype::parse(genotype)?).map_err(io)?;
        }
        GenotypeCmd::Enumerate { space } => {
            let space = SearchSpace { shape: (*space).into() };
            let mut buf = std::io::BufWriter::new(stdout);
            for g in space.enumerate_all() {
                writeln!(buf, "{g}").map_err(io)?;
            }
            buf.flush().map_err(io)?;
        }
    }
    Ok(())
}

pub fn cmd_synth(config: &Path, seed: Option<u64>, out: &Path, stdout: &mut dyn Write) -> Result<Dataset> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = synth_generate(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_delimited(&ds, out)?;
    let c = summarize(&ds);
    writeln!(stdout, "{}: {} records ({c}), widths {:?}", ds.name(), ds.len(), ds.widths())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(ds)
}

fn svg_polyline(rows: &[CurveRow], pick: impl Fn(&CurveRow) -> f64, x0: f64, y0: f64, w: f64, h: f64) -> String {
    let span = (rows.len().max(2) - 1) as f64;
    let mut pts = String::new();
    for (i, r) in rows.iter().enumerate() {
        let x = x0 + w * i as f64 / span;
        let y = y0 + h * (1.0 - pick(r).clamp(0.0, 1.0));
        if i > 0 {
            pts.push(' ');
        }
        write!(pts, "{x:.2},{y:.2}").expect("string write");
    }
    pts
}

/// Standalone two-series line chart of accuracy against epoch.
pub fn render_svg(rows: &[CurveRow]) -> String {
    let (width, height) = (640.0, 400.0);
    let (x0, y0, w, h) = (60.0, 30.0, 540.0, 310.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">cell search convergence</text>"#, x0 + w / 2.0);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y0 + h * (1.0 - v);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, x0 + w);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0);
    }
    let last = rows.len().saturating_sub(1);
    for (i, label) in [(0, "0".to_string()), (last, last.to_string())] {
        let x = x0 + if last == 0 { 0.0 } else { w * i as f64 / last as f64 };
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, y0 + h + 16.0);
    }
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"##, y0 + h, x0 + w, y0 + h);
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"##, y0 + h);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, x0 + w / 2.0, height - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">class-averaged accuracy</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0
    );
    for (name, colour, dy, pick) in [
        ("search", "#1f77b4", 0.0, (|r: &CurveRow| r.search_accuracy) as fn(&CurveRow) -> f64),
        ("eval", "#d62728", 16.0, |r: &CurveRow| r.eval_accuracy),
    ] {
        let pts = svg_polyline(rows, pick, x0, y0, w, h);
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-series="{name}" fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>"#
        );
        let ly = y0 + h - 40.0 + dy;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, x0 + w - 90.0, x0 + w - 70.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, x0 + w - 64.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn read_cv_accuracies(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("seed,fold,accuracy") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "header must be `seed,fold,accuracy`".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.rsplit(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                reason: format!("bad row {l:?}"),
            })
        })
        .collect()
}

/// report.svg and summary.txt from a run directory holding curves.csv (and
/// optionally an eval's cv.csv).
pub fn cmd_report(dir: &Path, stdout: &mut dyn Write) -> Result<()> {
    let curves = dir.join(CURVES_FILE);
    if !curves.exists() {
        return Err(Error::Validation(format!("{} not found", curves.display())));
    }
    let rows = read_curves(&curves)?;
    if rows.is_empty() {
        return Err(Error::Validation(format!("{} has no epochs", curves.display())));
    }
    write_file(&dir.join(REPORT_FILE), &render_svg(&rows))?;
    let last = rows.last().expect("nonempty");
    let best = |pick: fn(&CurveRow) -> f64| rows.iter().map(pick).fold(f64::NEG_INFINITY, f64::max);
    let mut summary = String::from("metric\tvalue\n");
    let _ = writeln!(summary, "epochs\t{}", rows.len());
    let _ = writeln!(summary, "final_search_accuracy\t{:.4}", last.search_accuracy);
    let _ = writeln!(summary, "final_eval_accuracy\t{:.4}", last.eval_accuracy);
    let _ = writeln!(summary, "best_search_accuracy\t{:.4}", best(|r| r.search_accuracy));
    let _ = writeln!(summary, "best_eval_accuracy\t{:.4}", best(|r| r.eval_accuracy));
    let genotype = dir.join(GENOTYPE_FILE);
    if let Ok(text) = fs::read_to_string(&genotype) {
        let _ = writeln!(summary, "genotype\t{}", text.trim());
    }
    let cv = dir.join(CV_FILE);
    if cv.exists() {
        let r = CVResult::from_values(read_cv_accuracies(&cv)?)?;
        let _ = writeln!(summary, "cv_class_averaged_accuracy\t{}", format_mean_std(r.sample_mean, r.sample_std));
    }
    write_file(&dir.join(SUMMARY_FILE), &summary)?;
    stdout.write_all(summary.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Search(args) => cmd_search(args, stdout).map(|_| ()),
        Command::Eval {
            run,
            genotype,
            genotype_file,
            baseline,
        } => cmd_eval(run, genotype, genotype_file, *baseline, stdout).map(|_| ()),
        Command::Oracle {
            run,
            space,
            allow_full,
            compare,
        } => cmd_oracle(run, *space, *allow_full, compare, stdout).map(|_| ()),
        Command::Genotype(cmd) => cmd_genotype(cmd, stdout),
        Command::Synth { config, seed, out } => cmd_synth(config, *seed, out, stdout).map(|_| ()),
        Command::Report { dir } => cmd_report(dir, stdout),
    }
}

/// Human-readable diagnostic for a failed command.
pub fn describe_error(cli: &Cli, err: &Error) -> String {
    if let Error::Genotype(g) = err {
        let input = match &cli.command {
            Command::Genotype(GenotypeCmd::Parse { genotype } | GenotypeCmd::Canon { genotype }) => Some(genotype.as_str()),
            Command::Eval { genotype: Some(s), .. } => Some(s.as_str()),
            Command::Oracle { compare: Some(s), .. } => Some(s.as_str()),
            _ => None,
        };
        if let Some(input) = input {
            return render_genotype_error(input, g);
        }
    }
    format!("error: {err}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let warnings = cfg.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("eta_min")));
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("[sgd]"));
        assert!(text.contains("LR = 0.0005"));
        assert!(text.contains("nesterov = 1"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sgd_block_uses_autodl_keys() {
        let cfg: RunConfig = toml::from_str(
            "[sgd]\nscheduler = \"cos\"\nLR = 0.0005\neta_min = 0.001\nepochs = 100\noptim = \"SGD\"\n\
             decay = 0.000001\nmomentum = 0.9\nnesterov = 1\ncriterion = \"Softmax\"\nbatch_size = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.sgd, SgdConfig::default());
        assert!(toml::from_str::<RunConfig>("[sgd]\nlearning_rate = 1.0\n").is_err());
    }

    #[test]
    fn data_source_must_be_unique() {
        let mut cfg = RunConfig::default();
        cfg.data.path = Some("x.csv".into());
        assert!(cfg.validate().is_err());
        cfg.data.synth = None;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn caret_points_at_offset() {
        let input = "|25~0 + |25~0|25~1|";
        let err = Genotype::parse(input).unwrap_err();
        let GenotypeError::Parse { offset, .. } = err else { panic!() };
        let text = render_genotype_error(input, &err);
        let caret_line = text.lines().last().unwrap();
        assert_eq!(caret_line.find('^').unwrap(), 2 + offset);
    }

    #[test]
    fn svg_has_two_series() {
        let rows: Vec<CurveRow> = (0..5)
            .map(|i| CurveRow {
                epoch: i,
                search_accuracy: 0.5 + 0.1 * i as f64,
                eval_accuracy: 0.4 + 0.1 * i as f64,
                temperature: 1.0,
                lr: 0.1,
            })
            .collect();
        let svg = render_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(render_svg(&rows), svg);
    }
}
