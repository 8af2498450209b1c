//! Two-modality datasets: in-memory model, delimited-text ingestion and a
//! seeded synthetic generator.
//!
//! File layout is a header `label,a_0,...,a_{p-1},b_0,...,b_{q-1}` followed
//! by one record per row. Labels are `flawed`/`not_flawed` or `1`/`0`.
//! Floats are written in shortest round-trip form so save/load is exact.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotFlawed,
    Flawed,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NotFlawed, Label::Flawed];

    /// Class index used by the classifier: not_flawed 0, flawed 1.
    pub fn index(self) -> usize {
        match self {
            Label::NotFlawed => 0,
            Label::Flawed => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::NotFlawed),
            1 => Some(Label::Flawed),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::NotFlawed => "not_flawed",
            Label::Flawed => "flawed",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "flawed" | "1" => Ok(Label::Flawed),
            "not_flawed" | "0" => Ok(Label::NotFlawed),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub modality_a: Vec<f64>,
    pub modality_b: Vec<f64>,
    pub label: Label,
}

/// Immutable once built. Both classes are always present.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    modality_a_width: usize,
    modality_b_width: usize,
    name: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub flawed: usize,
    pub not_flawed: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.flawed + self.not_flawed
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Flawed => self.flawed,
            Label::NotFlawed => self.not_flawed,
        }
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "flawed {} / not_flawed {}", self.flawed, self.not_flawed)
    }
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<Record>) -> Result<Self> {
        let name = name.into();
        let Some(first) = records.first() else {
            return Err(Error::Validation(format!("dataset {name:?} is empty")));
        };
        let (p, q) = (first.modality_a.len(), first.modality_b.len());
        if p == 0 || q == 0 {
            return Err(Error::Validation("modality widths must be >= 1".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.modality_a.len() != p || r.modality_b.len() != q {
                return Err(Error::Validation(format!(
                    "record {i} has widths ({}, {}), dataset has ({p}, {q})",
                    r.modality_a.len(),
                    r.modality_b.len()
                )));
            }
            if !r.modality_a.iter().chain(&r.modality_b).all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("record {i} has a non-finite value")));
            }
        }
        let ds = Dataset {
            records,
            modality_a_width: p,
            modality_b_width: q,
            name,
        };
        let c = ds.counts();
        if c.flawed == 0 || c.not_flawed == 0 {
            return Err(Error::Validation(format!(
                "dataset {:?} lacks a class ({c})",
                ds.name
            )));
        }
        Ok(ds)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn widths(&self) -> (usize, usize) {
        (self.modality_a_width, self.modality_b_width)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for r in &self.records {
            match r.label {
                Label::Flawed => c.flawed += 1,
                Label::NotFlawed => c.not_flawed += 1,
            }
        }
        c
    }

    /// Record ids of one class, in dataset order.
    pub fn class_ids(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.records[i].label == label).collect()
    }

    /// New dataset from the given record ids (order preserved).
    pub fn subset(&self, ids: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let mut records = Vec::with_capacity(ids.len());
        for &i in ids {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| Error::Validation(format!("record id {i} out of range")))?;
            records.push(r.clone());
        }
        Dataset::new(name, records)
    }

    /// Modality matrices and class indices for the selected records.
    pub fn batch<T: Scalar>(&self, ids: &[usize]) -> Result<(Tensor<T>, Tensor<T>, Vec<usize>)> {
        let mut a = Vec::with_capacity(ids.len() * self.modality_a_width);
        let mut b = Vec::with_capacity(ids.len() * self.modality_b_width);
        let mut y = Vec::with_capacity(ids.len());
        for &i in ids {
            let r = &self.records[i];
            a.extend(r.modality_a.iter().map(|&v| T::of(v)));
            b.extend(r.modality_b.iter().map(|&v| T::of(v)));
            y.push(r.label.index());
        }
        Ok((
            Tensor::new(ids.len(), self.modality_a_width, a)?,
            Tensor::new(ids.len(), self.modality_b_width, b)?,
            y,
        ))
    }
}

/// Per-class counts, as in a dataset summary table.
pub fn summarize(ds: &Dataset) -> ClassCounts {
    ds.counts()
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn header_widths(path: &Path, header: &csv::StringRecord) -> Result<(usize, usize)> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.first() != Some(&"label") {
        return Err(parse_err(path, 1, "first column must be `label`"));
    }
    let p = fields[1..].iter().take_while(|f| f.starts_with("a_")).count();
    let q = fields.len() - 1 - p;
    if p == 0 {
        return Err(parse_err(path, 1, "no `a_` columns"));
    }
    if q == 0 {
        return Err(parse_err(path, 1, "no `b_` columns"));
    }
    for (j, f) in fields[1..=p].iter().enumerate() {
        if *f != format!("a_{j}") {
            return Err(parse_err(path, 1, format!("expected column a_{j}, found {f:?}")));
        }
    }
    for (j, f) in fields[1 + p..].iter().enumerate() {
        if *f != format!("b_{j}") {
            return Err(parse_err(path, 1, format!("expected column b_{j}, found {f:?}")));
        }
    }
    Ok((p, q))
}

/// Reads a delimited dataset; the dataset name is the file stem.
pub fn load_delimited(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let (p, q) = header_widths(path, &header)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |pos| pos.line() as usize);
        if row.len() != 1 + p + q {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", 1 + p + q, row.len()),
            ));
        }
        let label: Label = row[0].parse().map_err(|e: String| parse_err(path, line, e))?;
        let mut values = Vec::with_capacity(p + q);
        for (j, field) in row.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {}: not a number: {field:?}", header[j].trim())))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {}: non-finite value {field:?}", header[j].trim())));
            }
            values.push(v);
        }
        let modality_b = values.split_off(p);
        records.push(Record {
            modality_a: values,
            modality_b,
            label,
        });
    }
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Dataset::new(name, records).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn save_delimited(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let (p, q) = ds.widths();
    let mut header = vec!["label".to_string()];
    header.extend((0..p).map(|j| format!("a_{j}")));
    header.extend((0..q).map(|j| format!("b_{j}")));
    let csv_err = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for r in &ds.records {
        let mut row = vec![r.label.to_string()];
        // `{}` on f64 is the shortest string that parses back to the same bits.
        row.extend(r.modality_a.iter().chain(&r.modality_b).map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Recipe for a seeded synthetic dataset.
///
/// Without `bottleneck_width` the classes are Gaussian clusters whose means
/// sit `separation` apart along one direction, identical in both modalities.
///
/// With `bottleneck_width = k` both modalities are pure noise and the class
/// is the cross-modal distance `s = sum_{j<k} |a_j - b_j|` thresholded at its
/// expected value: large `s` is flawed. Draws within `separation / 2`
/// standard deviations of the threshold are rejected, so `separation` is the
/// empty margin between classes. Neither modality alone predicts the label,
/// and an exact fit needs about `2k` rectifier units after the modalities
/// meet. Whether that actually separates narrow from wide cells depends on
/// data size and training budget; at small budgets it often does not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_flawed: usize,
    pub n_not_flawed: usize,
    pub modality_a_width: usize,
    pub modality_b_width: usize,
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub bottleneck_width: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_name() -> String {
    "synthetic".into()
}

fn default_noise() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n_flawed: usize, n_not_flawed: usize, widths: (usize, usize), separation: f64, seed: u64) -> Self {
        SynthSpec {
            name: default_name(),
            n_flawed,
            n_not_flawed,
            modality_a_width: widths.0,
            modality_b_width: widths.1,
            separation,
            noise: default_noise(),
            bottleneck_width: None,
            seed,
        }
    }

    /// Cross-modal distance dataset where narrow mixing cells lose information.
    pub fn bottleneck(n_flawed: usize, n_not_flawed: usize, width: usize, k: usize, seed: u64) -> Self {
        SynthSpec {
            name: "bottleneck".into(),
            bottleneck_width: Some(k),
            separation: 0.25,
            ..SynthSpec::new(n_flawed, n_not_flawed, (width, width), 0.0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_flawed == 0 || self.n_not_flawed == 0 {
            return Err(Error::Config("synthetic class counts must be >= 1".into()));
        }
        if self.modality_a_width == 0 || self.modality_b_width == 0 {
            return Err(Error::Config("synthetic modality widths must be >= 1".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be >= 0, got {}", self.separation)));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be > 0, got {}", self.noise)));
        }
        if let Some(k) = self.bottleneck_width {
            let limit = self.modality_a_width.min(self.modality_b_width);
            if k == 0 || k > limit {
                return Err(Error::Config(format!(
                    "bottleneck_width must be in 1..={limit}, got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Generates the dataset described by `spec`. Records are shuffled, so class
/// order carries no information.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (p, q) = (spec.modality_a_width, spec.modality_b_width);
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        let mut g = |n: usize| -> Vec<f64> { (0..n).map(|_| spec.noise * rng.sample::<f64, _>(StandardNormal)).collect() };
        let a = g(p);
        (a, g(q))
    };
    let mut records = Vec::with_capacity(spec.n_flawed + spec.n_not_flawed);
    match spec.bottleneck_width {
        None => {
            let mut labels: Vec<Label> = std::iter::repeat_n(Label::Flawed, spec.n_flawed)
                .chain(std::iter::repeat_n(Label::NotFlawed, spec.n_not_flawed))
                .collect();
            labels.shuffle(&mut rng);
            // Means at +-separation/2 along the unit diagonal of both modalities.
            let shift = 0.5 * spec.separation / ((p + q) as f64).sqrt();
            for label in labels {
                let y = if label == Label::Flawed { 1.0 } else { -1.0 };
                let (mut a, mut b) = draw(&mut rng);
                for v in a.iter_mut().chain(b.iter_mut()) {
                    *v += y * shift;
                }
                records.push(Record {
                    modality_a: a,
                    modality_b: b,
                    label,
                });
            }
        }
        Some(k) => {
            // a_j - b_j ~ N(0, 2 noise^2), so |a_j - b_j| has mean
            // 2 noise / sqrt(pi) and variance 2 noise^2 (1 - 2/pi).
            let kf = k as f64;
            let centre = kf * 2.0 * spec.noise / std::f64::consts::PI.sqrt();
            let spread = (kf * 2.0 * (1.0 - 2.0 / std::f64::consts::PI)).sqrt() * spec.noise;
            let half_gap = 0.5 * spec.separation * spread;
            let (mut need_f, mut need_n) = (spec.n_flawed, spec.n_not_flawed);
            while need_f + need_n > 0 {
                let (a, b) = draw(&mut rng);
                let score: f64 = (0..k).map(|j| (a[j] - b[j]).abs()).sum();
                let label = if score > centre + half_gap && need_f > 0 {
                    need_f -= 1;
                    Label::Flawed
                } else if score < centre - half_gap && need_n > 0 {
                    need_n -= 1;
                    Label::NotFlawed
                } else {
                    continue;
                };
                records.push(Record {
                    modality_a: a,
                    modality_b: b,
                    label,
                });
            }
            records.shuffle(&mut rng);
        }
    }
    Dataset::new(spec.name.clone(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "tiny.csv", "label,a_0,a_1,b_0\nflawed,1,2,3\n0,4.5,-1,0\n");
        let ds = load_delimited(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.widths(), (2, 1));
        assert_eq!(ds.records()[1].modality_a, vec![4.5, -1.0]);
        assert_eq!(ds.records()[1].label, Label::NotFlawed);
        assert_eq!(ds.name(), "tiny");
    }

    #[test]
    fn nan_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "bad.csv", "label,a_0,b_0\nflawed,1,2\nnot_flawed,NaN,2\n");
        match load_delimited(&path) {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("non-finite"), "{reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_unknown_label_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("label,a_0,b_0\nflawed,1\n", 2),
            ("label,a_0,b_0\nflawed,1,2\nmaybe,1,2\n", 3),
            ("label,a_0,a_2,b_0\nflawed,1,2,3\n", 1),
            ("label,a_0\nflawed,1\n", 1),
            ("y,a_0,b_0\nflawed,1,2\n", 1),
        ];
        for (i, (text, want)) in cases.iter().enumerate() {
            let path = write(dir.path(), &format!("c{i}.csv"), text);
            match load_delimited(&path) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, *want, "case {i}"),
                other => panic!("case {i}: {other:?}"),
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let mut spec = SynthSpec::new(7, 9, (3, 2), 1.3, 5);
        spec.name = "rt".into();
        let ds = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        save_delimited(&ds, &path).unwrap();
        assert_eq!(load_delimited(&path).unwrap(), ds);
    }

    #[test]
    fn synth_counts_and_determinism() {
        let spec = SynthSpec::new(146, 554, (6, 4), 2.0, 3);
        let ds = synth_generate(&spec).unwrap();
        let c = summarize(&ds);
        assert_eq!((c.flawed, c.not_flawed), (146, 554));
        assert_eq!(c.total(), ds.len());
        assert_eq!(synth_generate(&spec).unwrap(), ds);
        let other = synth_generate(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(other, ds);
    }

    #[test]
    fn bottleneck_label_is_the_thresholded_distance() {
        let spec = SynthSpec::bottleneck(300, 200, 8, 4, 1);
        let ds = synth_generate(&spec).unwrap();
        assert_eq!(summarize(&ds), ClassCounts { flawed: 300, not_flawed: 200 });
        let centre = 4.0 * 2.0 / std::f64::consts::PI.sqrt();
        for r in ds.records() {
            let s: f64 = (0..4).map(|j| (r.modality_a[j] - r.modality_b[j]).abs()).sum();
            assert_eq!(s > centre, r.label == Label::Flawed);
        }
        // Each modality alone has class-independent means.
        let mean = |label: Label| -> f64 {
            let ids = ds.class_ids(label);
            ids.iter().map(|&i| ds.records()[i].modality_a[0]).sum::<f64>() / ids.len() as f64
        };
        assert!((mean(Label::Flawed) - mean(Label::NotFlawed)).abs() < 0.25);
    }

    #[test]
    fn one_class_is_rejected() {
        let r = Record {
            modality_a: vec![1.0],
            modality_b: vec![1.0],
            label: Label::Flawed,
        };
        assert!(Dataset::new("x", vec![r.clone(), r]).is_err());
        assert!(Dataset::new("x", vec![]).is_err());
    }
}
