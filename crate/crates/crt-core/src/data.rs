//! Dataset plumbing: synthetic generators with controllable time-domain and
//! frequency-domain class signal, the UCI HAR inertial-signals text layout,
//! split management, and a compact binary interchange format.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};
use crate::numerics::randn;
use crate::spectral::{fft, ifft, ComplexSeq};
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Each sample is (channels, length).
    pub samples: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub split_tags: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map_or(0, |s| s.shape()[0])
    }

    pub fn series_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.shape()[1])
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split_tags[i] == split).collect()
    }

    fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.samples.len() {
                return Err(CrtError::Data(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.samples.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
                return Err(CrtError::Data(format!(
                    "label {bad} outside 0..{}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Classes differ only in the carrier bin of a sinusoid mixture.
    FreqSeparable,
    /// Classes differ in a transient motif; magnitude spectra are identical
    /// across classes by construction.
    ShapeSeparable,
    /// 4 classes = (carrier bin) x (motif); either factor alone resolves
    /// exactly one bit of the label.
    CrossDomain,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub task: SynthTask,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len % 2 != 0 || self.len < 32 {
            return Err(CrtError::Config(format!("length {} must be even and >= 32", self.len)));
        }
        if self.num_classes < 2 || self.n < self.num_classes * 10 {
            return Err(CrtError::Config(format!(
                "need n >= 10 per class, got n={} for {} classes",
                self.n, self.num_classes
            )));
        }
        if self.channels == 0 || self.noise_sigma < 0.0 {
            return Err(CrtError::Config("channels >= 1, noise_sigma >= 0".into()));
        }
        if self.task == SynthTask::CrossDomain && self.num_classes != 4 {
            return Err(CrtError::Config("cross_domain is a 2x2 factor task: 4 classes".into()));
        }
        let max_bin = carrier_bin(self.num_classes - 1);
        if self.task != SynthTask::ShapeSeparable && max_bin >= self.len / 2 {
            return Err(CrtError::Config(format!(
                "carrier bin {max_bin} exceeds half-spectrum of length {}",
                self.len
            )));
        }
        Ok(())
    }
}

/// Class carrier bins, spaced so neighbours never blur: 4, 7, 10, ...
pub fn carrier_bin(class: usize) -> usize {
    4 + 3 * class
}

fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1))
}

/// Base transient: derivative of a Gaussian centred mid-series, with DC and
/// Nyquist components removed so phase rotations preserve magnitude exactly.
fn base_motif(l: usize) -> Result<Vec<f64>> {
    let c = l as f64 / 2.0;
    let s = 3.0;
    let raw: Vec<f64> = (0..l)
        .map(|t| {
            let u = (t as f64 - c) / s;
            -u * (-0.5 * u * u).exp()
        })
        .collect();
    let mut spec = fft(&raw)?;
    spec.re[0] = 0.0;
    spec.im[0] = 0.0;
    spec.re[l / 2] = 0.0;
    spec.im[l / 2] = 0.0;
    Ok(ifft(&spec)?.re)
}

/// Rotates every positive-frequency component by `alpha`, mirroring the
/// negatives, so the result is real with an unchanged magnitude spectrum.
fn phase_rotate(motif: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let l = motif.len();
    let spec = fft(motif)?;
    let (ca, sa) = (alpha.cos(), alpha.sin());
    let mut out = ComplexSeq::zeros(l);
    for k in 1..l / 2 {
        out.re[k] = spec.re[k] * ca - spec.im[k] * sa;
        out.im[k] = spec.re[k] * sa + spec.im[k] * ca;
        out.re[l - k] = out.re[k];
        out.im[l - k] = -out.im[k];
    }
    Ok(ifft(&out)?.re)
}

/// The class motifs for a task: equal-magnitude phase rotations of the base
/// transient, spaced over half a turn.
pub fn class_motifs(l: usize, num_classes: usize) -> Result<Vec<Vec<f64>>> {
    let base = base_motif(l)?;
    (0..num_classes)
        .map(|c| phase_rotate(&base, std::f64::consts::PI * c as f64 / num_classes as f64))
        .collect()
}

fn circular_shift(x: &[f64], by: usize) -> Vec<f64> {
    let l = x.len();
    (0..l).map(|t| x[(t + l - by % l) % l]).collect()
}

/// Deterministic synthetic dataset; labels are round-robin so classes stay
/// balanced. Channels repeat the class signal with per-channel gain.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let l = spec.len;
    let motifs = match spec.task {
        SynthTask::FreqSeparable => Vec::new(),
        SynthTask::ShapeSeparable => class_motifs(l, spec.num_classes)?,
        SynthTask::CrossDomain => class_motifs(l, 2)?,
    };
    let mut samples = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % spec.num_classes;
        let mut rng = sample_rng(spec.seed, i);
        let amp = 0.9 + 0.2 * rng.gen::<f64>();
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let offset = rng.gen_range(0..l);
        let base: Vec<f64> = match spec.task {
            SynthTask::FreqSeparable => {
                let k = carrier_bin(label) as f64;
                let k2 = 2.0;
                (0..l)
                    .map(|t| {
                        let w = 2.0 * std::f64::consts::PI * t as f64 / l as f64;
                        amp * (k * w + phi).sin() + 0.3 * (k2 * w + 0.7 * phi).sin()
                    })
                    .collect()
            }
            SynthTask::ShapeSeparable => {
                circular_shift(&motifs[label], offset).iter().map(|&v| amp * v).collect()
            }
            SynthTask::CrossDomain => {
                // motif stays at a fixed location: the factor structure
                // (shape invisible to magnitude, carrier notched away from
                // the shape oracle) is shift-independent, and a fixed site
                // keeps the task learnable at small label budgets
                let freq_bit = label / 2;
                let shape_bit = label % 2;
                let k = carrier_bin(freq_bit) as f64;
                let motif = &motifs[shape_bit];
                (0..l)
                    .map(|t| {
                        let w = 2.0 * std::f64::consts::PI * t as f64 / l as f64;
                        0.7 * amp * (k * w + phi).sin() + 2.0 * motif[t]
                    })
                    .collect()
            }
        };
        let mut sample = Tensor::zeros(vec![spec.channels, l]);
        for c in 0..spec.channels {
            let gain = if c == 0 { 1.0 } else { 0.8 + 0.4 * rng.gen::<f64>() };
            for t in 0..l {
                sample.data_mut()[c * l + t] = gain * base[t] + spec.noise_sigma * randn(&mut rng);
            }
        }
        samples.push(sample);
        labels.push(label);
    }
    let n = samples.len();
    let ds = Dataset {
        samples,
        labels: Some(labels),
        num_classes: spec.num_classes,
        split_tags: vec![Split::Train; n],
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    MinMax,
    ZScore,
    None,
}

/// Per-sample per-channel normalization; constant channels become zeros
/// instead of dividing by nothing.
pub fn normalize(ds: &mut Dataset, mode: NormMode) {
    if mode == NormMode::None {
        return;
    }
    for sample in &mut ds.samples {
        let (d, l) = (sample.shape()[0], sample.shape()[1]);
        for c in 0..d {
            let row = &mut sample.data_mut()[c * l..(c + 1) * l];
            match mode {
                NormMode::MinMax => {
                    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let span = hi - lo;
                    if span < 1e-12 {
                        row.fill(0.0);
                    } else {
                        row.iter_mut().for_each(|v| *v = (*v - lo) / span);
                    }
                }
                NormMode::ZScore => {
                    let mean = row.iter().sum::<f64>() / l as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64;
                    let sd = var.sqrt();
                    if sd < 1e-12 {
                        row.fill(0.0);
                    } else {
                        row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
                    }
                }
                NormMode::None => unreachable!(),
            }
        }
    }
}

/// Retags every sample with a seeded permutation split. Test and validation
/// sizes round to the nearest sample; train absorbs the remainder.
pub fn split(ds: &mut Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<()> {
    let (ft, fv, fs) = fractions;
    if (ft + fv + fs - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fs < 0.0 {
        return Err(CrtError::Config(format!("split fractions {fractions:?} must sum to 1")));
    }
    let n = ds.len();
    let n_val = (fv * n as f64).round() as usize;
    let n_test = (fs * n as f64).round() as usize;
    if n_val + n_test >= n || (fv > 0.0 && n_val == 0) || (fs > 0.0 && n_test == 0) {
        return Err(CrtError::Config(format!("split of {n} samples leaves an empty part")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for (rank, &idx) in order.iter().enumerate() {
        ds.split_tags[idx] = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(())
}

/// Seeded class-stratified subset of the training split: the label budget
/// for fine-tuning. Rounds per class, never returns an empty class bucket.
pub fn stratified_fraction(ds: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CrtError::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| CrtError::Data("stratified sampling needs labels".into()))?;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for i in ds.indices_of(Split::Train) {
        buckets[labels[i]].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for bucket in &mut buckets {
        if bucket.is_empty() {
            continue;
        }
        for i in (1..bucket.len()).rev() {
            let j = rng.gen_range(0..=i);
            bucket.swap(i, j);
        }
        let k = ((fraction * bucket.len() as f64).round() as usize).clamp(1, bucket.len());
        out.extend_from_slice(&bucket[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

const HAR_SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];
const HAR_LEN: usize = 128;
const HAR_CLASSES: usize = 6;

fn parse_float_rows(path: &Path, row_len: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path)
        .map_err(|e| CrtError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| CrtError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("non-numeric token {tok:?}"),
            })?;
            row.push(v);
        }
        if let Some(want) = row_len {
            if row.len() != want {
                return Err(CrtError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: format!("expected {want} values, found {}", row.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn load_har_split(root: &Path, split: &str) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let dir = root.join(split).join("Inertial Signals");
    let mut channels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(9);
    let mut n_rows = None;
    for name in HAR_SIGNALS {
        let path = dir.join(format!("{name}_{split}.txt"));
        let rows = parse_float_rows(&path, Some(HAR_LEN))?;
        if let Some(n) = n_rows {
            if rows.len() != n {
                return Err(CrtError::Data(format!(
                    "{}: {} rows, other signals have {n}",
                    path.display(),
                    rows.len()
                )));
            }
        }
        n_rows = Some(rows.len());
        channels.push(rows);
    }
    let n = n_rows.unwrap_or(0);
    let label_path = root.join(split).join(format!("y_{split}.txt"));
    let label_rows = parse_float_rows(&label_path, Some(1))?;
    if label_rows.len() != n {
        return Err(CrtError::Data(format!(
            "{}: {} labels for {n} samples",
            label_path.display(),
            label_rows.len()
        )));
    }
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = Tensor::zeros(vec![9, HAR_LEN]);
        for (c, rows) in channels.iter().enumerate() {
            t.data_mut()[c * HAR_LEN..(c + 1) * HAR_LEN].copy_from_slice(&rows[i]);
        }
        samples.push(t);
        let y = label_rows[i][0];
        if y < 1.0 || y > HAR_CLASSES as f64 || y.fract() != 0.0 {
            return Err(CrtError::Parse {
                path: label_path.display().to_string(),
                line: i + 1,
                reason: format!("label {y} outside 1..=6"),
            });
        }
        labels.push(y as usize - 1);
    }
    Ok((samples, labels))
}

/// Loads the UCI HAR inertial-signals layout: 9 fixed-order signal files per
/// split plus labels. The provided train/test partition is preserved and a
/// seeded validation set (10% of the total) is carved out of train. Values
/// are min-max normalized per channel.
pub fn load_ucihar(root: &Path, seed: u64) -> Result<Dataset> {
    let (train_x, train_y) = load_har_split(root, "train")?;
    let (test_x, test_y) = load_har_split(root, "test")?;
    let n_train = train_x.len();
    let total = n_train + test_x.len();
    if total == 0 {
        return Err(CrtError::Data("empty archive".into()));
    }
    let mut samples = train_x;
    samples.extend(test_x);
    let mut labels = train_y;
    labels.extend(test_y);
    let mut tags = vec![Split::Train; n_train];
    tags.extend(vec![Split::Test; total - n_train]);

    let n_val = ((total as f64) * 0.1).round() as usize;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for &i in order.iter().take(n_val.min(n_train.saturating_sub(1))) {
        tags[i] = Split::Val;
    }
    let mut ds = Dataset { samples, labels: Some(labels), num_classes: HAR_CLASSES, split_tags: tags };
    ds.validate()?;
    normalize(&mut ds, NormMode::MinMax);
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    length: usize,
    channels: usize,
    num_classes: usize,
    has_labels: bool,
}

/// Writes header JSON, a little-endian f32 value blob, and a label CSV.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = DatasetHeader {
        n: ds.len(),
        length: ds.series_len(),
        channels: ds.channels(),
        num_classes: ds.num_classes,
        has_labels: ds.labels.is_some(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&header)?)?;
    let mut blob = Vec::with_capacity(ds.len() * ds.channels() * ds.series_len() * 4);
    for s in &ds.samples {
        for &v in s.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::File::create(dir.join("values.bin"))?.write_all(&blob)?;
    if let Some(labels) = &ds.labels {
        let csv: String = labels.iter().map(|y| format!("{y}\n")).collect();
        fs::write(dir.join("labels.csv"), csv)?;
    }
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let header: DatasetHeader =
        serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    let mut blob = Vec::new();
    fs::File::open(dir.join("values.bin"))?.read_to_end(&mut blob)?;
    let want = header.n * header.channels * header.length * 4;
    if blob.len() != want {
        return Err(CrtError::Data(format!(
            "values.bin holds {} bytes, header implies {want}",
            blob.len()
        )));
    }
    let per = header.channels * header.length;
    let mut samples = Vec::with_capacity(header.n);
    for i in 0..header.n {
        let mut t = Tensor::zeros(vec![header.channels, header.length]);
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            let at = (i * per + j) * 4;
            *v = f32::from_le_bytes(blob[at..at + 4].try_into().unwrap()) as f64;
        }
        samples.push(t);
    }
    let labels = if header.has_labels {
        let text = fs::read_to_string(dir.join("labels.csv"))?;
        let path = dir.join("labels.csv").display().to_string();
        let mut out = Vec::with_capacity(header.n);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(line.trim().parse::<usize>().map_err(|_| CrtError::Parse {
                path: path.clone(),
                line: lineno + 1,
                reason: format!("non-integer label {line:?}"),
            })?);
        }
        if out.len() != header.n {
            return Err(CrtError::Data(format!("{} labels for {} samples", out.len(), header.n)));
        }
        Some(out)
    } else {
        None
    };
    let ds = Dataset {
        samples,
        labels,
        num_classes: header.num_classes,
        split_tags: vec![Split::Train; header.n],
    };
    ds.validate()?;
    Ok(ds)
}

/// Reference classifiers for the synthetic tasks. They are the analytic
/// ceilings the generators are tested against: a spectral peak comparator
/// resolves carrier frequency and a matched filter resolves motif shape.
pub mod oracle {
    use super::*;

    /// Predicts the class whose carrier bin carries the most energy
    /// (channel 0).
    pub fn spectral_peak(ds: &Dataset, num_classes: usize) -> Result<Vec<usize>> {
        let mut preds = Vec::with_capacity(ds.len());
        for s in &ds.samples {
            let spec = fft(s.row(0))?;
            let best = (0..num_classes)
                .map(|c| {
                    let k = carrier_bin(c);
                    (spec.re[k].powi(2) + spec.im[k].powi(2), c)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or(0);
            preds.push(best);
        }
        Ok(preds)
    }

    fn best_shift_correlation(x: &[f64], template: &[f64]) -> f64 {
        let l = x.len();
        let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_t = template.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_x < 1e-12 || norm_t < 1e-12 {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for s in 0..l {
            let dot: f64 = (0..l).map(|t| x[t] * template[(t + l - s) % l]).sum();
            best = best.max(dot / (norm_x * norm_t));
        }
        best
    }

    /// Predicts the motif whose circularly shifted template correlates best
    /// (channel 0). `notch_bins` zeroes known carrier bins first so the
    /// motif factor can be read through a carrier.
    pub fn matched_filter(
        ds: &Dataset,
        motifs: &[Vec<f64>],
        notch_bins: &[usize],
    ) -> Result<Vec<usize>> {
        let mut preds = Vec::with_capacity(ds.len());
        for s in &ds.samples {
            let x = if notch_bins.is_empty() {
                s.row(0).to_vec()
            } else {
                let l = s.shape()[1];
                let mut spec = fft(s.row(0))?;
                for &k in notch_bins {
                    spec.re[k] = 0.0;
                    spec.im[k] = 0.0;
                    if k != 0 && k != l / 2 {
                        spec.re[l - k] = 0.0;
                        spec.im[l - k] = 0.0;
                    }
                }
                ifft(&spec)?.re
            };
            let best = motifs
                .iter()
                .enumerate()
                .map(|(c, m)| (best_shift_correlation(&x, m), c))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or(0);
            preds.push(best);
        }
        Ok(preds)
    }

    pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
        let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        hits as f64 / preds.len().max(1) as f64
    }
}

pub use oracle::{matched_filter, spectral_peak};
