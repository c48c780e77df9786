//! Command surface: dataset generation, pretraining, fine-tuning, evaluation,
//! seed sweeps, single-switch ablation runs, inspection demos, and a numerics
//! audit. Every command that writes artifacts also writes exactly one
//! `manifest.json` into its output directory, recording the resolved
//! configuration, seeds, and SHA-256 hashes of its inputs, so a run can be
//! replayed from the manifest alone. Figure-style outputs are CSV; summaries
//! go to stdout as one-line JSON; progress goes to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{
    export_dataset, gen_synthetic, import_dataset, normalize, split, Dataset, NormMode, Split,
    SynthSpec, SynthTask,
};
use crate::error::{CrtError, Result};
use crate::metrics::EvalReport;
use crate::model::{fold_reconstruction, AblationMode, CrtModel, ModelConfig};
use crate::numerics::audit_ops;
use crate::sequencing::{
    apply_drop, assemble, make_patches, sample_drop_plan, Domain, DropMode, DropSampling,
};
use crate::spectral::{ecg_like, phase_magnitude_demo};
use crate::trainer::{
    end_to_end_gradcheck, evaluate, finetune, prepare_patch_sets, pretrain, TrainConfig,
};

const DEFAULT_PATCH_LEN: usize = 16;
const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);
/// Relative-error gates for the `gradcheck` command.
const OP_TOLERANCE: f64 = 1e-4;
const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(
    name = "crt",
    version,
    about = "Cross-domain reconstruction pretraining for time series",
    after_help = "Kernel threads are capped by the CRT_NUM_THREADS environment variable."
)]
struct Cli {
    /// Flat JSON config file; flags override file values, file overrides defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base random seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Recorded in the manifest. Runs are bitwise deterministic for a fixed
    /// seed and thread count either way; set CRT_NUM_THREADS=1 to also pin
    /// reduction order.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic labeled dataset and export it
    Gen(GenArgs),
    /// Pretrain by cross-domain patch reconstruction
    Pretrain(PretrainArgs),
    /// Train the classifier head from a pretrained checkpoint on a labeled fraction
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned checkpoint on one split
    Eval(EvalArgs),
    /// Pretrain+finetune+eval over a seed grid; report mean and sample std-dev
    Sweep(SweepArgs),
    /// One full run with a single ablation switch flipped
    Ablate(AblateArgs),
    /// Inspection demos; all output is CSV
    Demo {
        #[command(subcommand)]
        what: DemoCmd,
    },
    /// Finite-difference audit of every differentiable op plus a full micro model
    Gradcheck,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Which synthetic task to generate
    #[arg(long, value_enum, default_value = "cross-domain")]
    task: TaskArg,
    /// Number of samples
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Series length
    #[arg(long, default_value_t = 128)]
    len: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Additive Gaussian noise level
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Per-sample normalization applied before export
    #[arg(long, value_enum, default_value = "min-max")]
    norm: NormArg,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Directory written by `crt gen`
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Pretrained checkpoint to start from
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Fine-tuned checkpoint
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Optional directory for report.json/report.csv; stdout always gets the JSON
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated training seeds
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Which single switch to flip relative to the full method
    #[arg(long, value_enum)]
    mode: AblateModeArg,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum DemoCmd {
    /// Restore a spiky periodic signal from phase alone and magnitude alone
    PhaseMagnitude(DemoPhaseArgs),
    /// Drop patches at a fixed ratio and emit original/dropped-input/reconstructed CSVs
    Reconstruct(DemoReconArgs),
}

#[derive(Args, Debug)]
struct DemoPhaseArgs {
    #[arg(long, default_value_t = 512)]
    len: usize,
    /// Spike period of the generated signal
    #[arg(long, default_value_t = 64)]
    period: usize,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DemoReconArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Pretrained checkpoint that will fill the dropped patches
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dropping ratio for the demonstration
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    /// How many samples to render
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TaskArg {
    FreqSeparable,
    ShapeSeparable,
    CrossDomain,
}

impl From<TaskArg> for SynthTask {
    fn from(t: TaskArg) -> SynthTask {
        match t {
            TaskArg::FreqSeparable => SynthTask::FreqSeparable,
            TaskArg::ShapeSeparable => SynthTask::ShapeSeparable,
            TaskArg::CrossDomain => SynthTask::CrossDomain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum NormArg {
    MinMax,
    ZScore,
    None,
}

impl From<NormArg> for NormMode {
    fn from(n: NormArg) -> NormMode {
        match n {
            NormArg::MinMax => NormMode::MinMax,
            NormArg::ZScore => NormMode::ZScore,
            NormArg::None => NormMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    /// Small model sized for a single CPU core
    Desk,
    /// Published-scale model; far outside a single-core budget
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropModeArg {
    /// Remove patches from the encoder input (shorter sequence)
    Drop,
    /// Keep positions but zero their values
    Mask,
}

impl From<DropModeArg> for DropMode {
    fn from(m: DropModeArg) -> DropMode {
        match m {
            DropModeArg::Drop => DropMode::Drop,
            DropModeArg::Mask => DropMode::Mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingArg {
    /// round(r * count) drops per block
    ExactCount,
    /// Per-unit Bernoulli(r)
    Bernoulli,
}

impl From<SamplingArg> for DropSampling {
    fn from(s: SamplingArg) -> DropSampling {
        match s {
            SamplingArg::ExactCount => DropSampling::ExactCount,
            SamplingArg::Bernoulli => DropSampling::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateModeArg {
    /// Zero dropped patches instead of removing them
    Mask,
    /// Encode and reconstruct time+magnitude only
    NoPhase,
    /// Time domain only
    Time,
    /// Frequency domains only
    Freq,
    /// Encode time, reconstruct frequency
    T2f,
    /// Encode frequency, reconstruct time
    F2t,
    /// Disable the dropping-ratio curriculum (constant ceiling ratio)
    NoCl,
    /// Disable the instance-discrimination loss term
    NoIdc,
}

/// Every training-pipeline tunable, each optional so that layers can be
/// merged: defaults, then the `--config` file, then command-line flags.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Model size preset the other model flags override
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Patch length shared by the time and frequency blocks
    #[arg(long)]
    pub patch_len: Option<usize>,
    /// Transformer width
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub cnn_width: Option<usize>,
    #[arg(long)]
    pub cnn_blocks: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<f64>,
    #[arg(long)]
    pub epochs_pretrain: Option<usize>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_pretrain: Option<f64>,
    #[arg(long)]
    pub lr_finetune: Option<f64>,
    /// Fraction of training labels fine-tuning may use
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub drop_mode: Option<DropModeArg>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// Curriculum floor ratio
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Curriculum ceiling ratio
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Epochs to ramp from floor to ceiling
    #[arg(long)]
    pub curriculum_epochs: Option<usize>,
    /// Enable or disable the dropping-ratio curriculum
    #[arg(long)]
    pub curriculum: Option<bool>,
    /// Enable or disable the instance-discrimination loss term
    #[arg(long)]
    pub idc: Option<bool>,
    /// Weight on the instance-discrimination term
    #[arg(long)]
    pub beta: Option<f64>,
    /// Clip gradients to this global norm (5.0 if the flag carries no value)
    #[arg(long, num_args = 0..=1, default_missing_value = "5.0")]
    pub grad_clip: Option<f64>,
    /// Train,val,test fractions
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,VAL,TEST")]
    pub split_fractions: Option<Vec<f64>>,
    /// Seed for the data split (independent of the training seed)
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Base training seed; the --seed flag wins over this
    #[arg(skip)]
    pub seed: Option<u64>,
}

impl Overrides {
    /// Field-wise layering; values in `self` win over `base`.
    fn over(self, base: Overrides) -> Overrides {
        Overrides {
            preset: self.preset.or(base.preset),
            patch_len: self.patch_len.or(base.patch_len),
            dim: self.dim.or(base.dim),
            heads: self.heads.or(base.heads),
            encoder_layers: self.encoder_layers.or(base.encoder_layers),
            decoder_layers: self.decoder_layers.or(base.decoder_layers),
            cnn_width: self.cnn_width.or(base.cnn_width),
            cnn_blocks: self.cnn_blocks.or(base.cnn_blocks),
            mlp_ratio: self.mlp_ratio.or(base.mlp_ratio),
            epochs_pretrain: self.epochs_pretrain.or(base.epochs_pretrain),
            epochs_finetune: self.epochs_finetune.or(base.epochs_finetune),
            batch_size: self.batch_size.or(base.batch_size),
            lr_pretrain: self.lr_pretrain.or(base.lr_pretrain),
            lr_finetune: self.lr_finetune.or(base.lr_finetune),
            label_fraction: self.label_fraction.or(base.label_fraction),
            drop_mode: self.drop_mode.or(base.drop_mode),
            sampling: self.sampling.or(base.sampling),
            r_min: self.r_min.or(base.r_min),
            r_max: self.r_max.or(base.r_max),
            curriculum_epochs: self.curriculum_epochs.or(base.curriculum_epochs),
            curriculum: self.curriculum.or(base.curriculum),
            idc: self.idc.or(base.idc),
            beta: self.beta.or(base.beta),
            grad_clip: self.grad_clip.or(base.grad_clip),
            split_fractions: self.split_fractions.or(base.split_fractions),
            split_seed: self.split_seed.or(base.split_seed),
            seed: self.seed.or(base.seed),
        }
    }

    /// Flag > file > default layering for one command invocation.
    fn layered(self, config_path: Option<&Path>, seed_flag: Option<u64>) -> Result<Overrides> {
        let mut merged = match config_path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let from_file: Overrides = serde_json::from_str(&text)?;
                self.over(from_file)
            }
            None => self,
        };
        if seed_flag.is_some() {
            merged.seed = seed_flag;
        }
        Ok(merged)
    }
}

/// Fully-resolved run configuration; this is what the manifest records.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
}

fn resolve(ov: &Overrides, ds: &Dataset) -> Result<Resolved> {
    let patch_len = ov.patch_len.unwrap_or(DEFAULT_PATCH_LEN);
    let l = ds.series_len();
    if l == 0 {
        return Err(CrtError::Data("dataset is empty".into()));
    }
    if patch_len == 0 || l % patch_len != 0 || (l / 2) % patch_len != 0 {
        return Err(CrtError::Config(format!(
            "patch_len {patch_len} must divide both the series length {l} and the half-spectrum length {}",
            l / 2
        )));
    }
    let n_max = 2 * l / patch_len;
    let classes = ds.num_classes.max(2);
    let mut model = match ov.preset.unwrap_or(PresetArg::Desk) {
        PresetArg::Desk => ModelConfig::desk(patch_len, ds.channels(), n_max, classes),
        PresetArg::Paper => ModelConfig::paper(patch_len, ds.channels(), n_max, classes),
    };
    if let Some(v) = ov.dim {
        model.dim = v;
    }
    if let Some(v) = ov.heads {
        model.heads = v;
    }
    if let Some(v) = ov.encoder_layers {
        model.encoder_layers = v;
    }
    if let Some(v) = ov.decoder_layers {
        model.decoder_layers = v;
    }
    if let Some(v) = ov.cnn_width {
        model.cnn_width = v;
    }
    if let Some(v) = ov.cnn_blocks {
        model.cnn_blocks = v;
    }
    if let Some(v) = ov.mlp_ratio {
        model.mlp_ratio = v;
    }
    model.validate()?;

    let mut train = TrainConfig { seed: ov.seed.unwrap_or(0), ..TrainConfig::default() };
    if let Some(v) = ov.epochs_pretrain {
        train.epochs_pretrain = v;
    }
    if let Some(v) = ov.epochs_finetune {
        train.epochs_finetune = v;
    }
    if let Some(v) = ov.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = ov.lr_pretrain {
        train.lr_pretrain = v;
    }
    if let Some(v) = ov.lr_finetune {
        train.lr_finetune = v;
    }
    if let Some(v) = ov.label_fraction {
        train.label_fraction = v;
    }
    if let Some(v) = ov.drop_mode {
        train.drop_mode = v.into();
    }
    if let Some(v) = ov.sampling {
        train.sampling = v.into();
    }
    if let Some(v) = ov.r_min {
        train.curriculum.r_min = v;
    }
    if let Some(v) = ov.r_max {
        train.curriculum.r_max = v;
    }
    if let Some(v) = ov.curriculum_epochs {
        train.curriculum.n_epoch = v;
    }
    if let Some(v) = ov.curriculum {
        train.curriculum_enabled = v;
    }
    if let Some(v) = ov.idc {
        train.loss.idc_enabled = v;
    }
    if let Some(v) = ov.beta {
        train.loss.beta = v;
    }
    if let Some(v) = ov.grad_clip {
        train.grad_clip = Some(v);
    }
    train.validate()?;

    let split_fractions = match &ov.split_fractions {
        None => DEFAULT_SPLIT,
        Some(v) if v.len() == 3 => (v[0], v[1], v[2]),
        Some(v) => {
            return Err(CrtError::Config(format!(
                "--split-fractions needs exactly 3 values, got {}",
                v.len()
            )))
        }
    };
    Ok(Resolved { model, train, split_fractions, split_seed: ov.split_seed.unwrap_or(0) })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Hashes a --data directory (its three well-known files) or a single file.
fn hash_input(path: &Path, into: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        for name in ["dataset.json", "values.bin", "labels.csv"] {
            let f = path.join(name);
            if f.exists() {
                into.insert(f.display().to_string(), sha256_hex(&f)?);
            }
        }
    } else {
        into.insert(path.display().to_string(), sha256_hex(path)?);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub deterministic: bool,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub input_hashes: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

/// Captures start time and argv up front; `finish` writes `manifest.json`.
struct RunScope {
    command: String,
    deterministic: bool,
    started_unix: u64,
}

impl RunScope {
    fn begin(command: &str, deterministic: bool) -> Self {
        RunScope {
            command: command.to_string(),
            deterministic,
            started_unix: unix_now(),
        }
    }

    fn finish(
        self,
        dir: &Path,
        config: serde_json::Value,
        seeds: &[u64],
        inputs: &[&Path],
        outputs: &[String],
    ) -> Result<()> {
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            hash_input(p, &mut input_hashes)?;
        }
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            deterministic: self.deterministic,
            config,
            seeds: seeds.to_vec(),
            input_hashes,
            started_unix: self.started_unix,
            finished_unix: unix_now(),
            outputs: outputs.to_vec(),
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn load_split_data(dir: &Path, rc: &Resolved) -> Result<Dataset> {
    let mut ds = import_dataset(dir)?;
    split(&mut ds, rc.split_fractions, rc.split_seed)?;
    Ok(ds)
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Artifacts of one pretrain stage inside `dir`.
fn run_pretrain_stage(dir: &Path, ds: &Dataset, rc: &Resolved) -> Result<(CrtModel, f64, f64)> {
    fs::create_dir_all(dir)?;
    let sets = prepare_patch_sets(ds, rc.model.patch_len)?;
    let mut model = CrtModel::init(rc.model, rc.train.seed)?;
    let mut csv = fs::File::create(dir.join("loss.csv"))?;
    writeln!(csv, "{}", crate::trainer::EpochLog::csv_header())?;
    let total = rc.train.epochs_pretrain;
    let mut rows = Vec::new();
    let log = pretrain(&mut model, ds, &sets, &rc.train, |l| {
        rows.push(l.csv_row());
        eprintln!(
            "pretrain epoch {}/{} recon {:.4} idc {:.4} total {:.4} ratio {:.3}",
            l.epoch + 1,
            total,
            l.recon,
            l.idc,
            l.total,
            l.ratio
        );
    })?;
    for row in &rows {
        writeln!(csv, "{row}")?;
    }
    checkpoint::save(&dir.join("checkpoint.ckpt"), &model, total, rc.train.seed)?;
    let first = log.first().map(|l| l.recon).unwrap_or(0.0);
    let last = log.last().map(|l| l.recon).unwrap_or(0.0);
    Ok((model, first, last))
}

/// Artifacts of one finetune stage inside `dir`; consumes the model in place.
fn run_finetune_stage(
    dir: &Path,
    ds: &Dataset,
    rc: &Resolved,
    model: &mut CrtModel,
) -> Result<crate::trainer::FinetuneReport> {
    fs::create_dir_all(dir)?;
    let sets = prepare_patch_sets(ds, model.cfg.patch_len)?;
    let mut csv = fs::File::create(dir.join("finetune.csv"))?;
    writeln!(csv, "epoch,train_loss,val_accuracy")?;
    let mut rows = Vec::new();
    let report = finetune(model, ds, &sets, &rc.train, |e, loss, acc| {
        rows.push(format!("{e},{loss:.17e},{acc}"));
        eprintln!("finetune epoch {}/{} loss {:.4} val {:.3}", e + 1, rc.train.epochs_finetune, loss, acc);
    })?;
    for row in &rows {
        writeln!(csv, "{row}")?;
    }
    checkpoint::save(&dir.join("finetuned.ckpt"), model, rc.train.epochs_finetune, rc.train.seed)?;
    Ok(report)
}

fn run_eval_stage(ds: &Dataset, model: &CrtModel, rc: &Resolved, split: Split) -> Result<EvalReport> {
    let sets = prepare_patch_sets(ds, model.cfg.patch_len)?;
    evaluate(model, ds, &sets, split, rc.train.batch_size)
}

fn cmd_gen(args: &GenArgs, seed: u64, scope: RunScope) -> Result<()> {
    let spec = SynthSpec {
        n: args.n,
        len: args.len,
        channels: args.channels,
        num_classes: args.classes,
        task: args.task.into(),
        noise_sigma: args.noise,
        seed,
    };
    let mut ds = gen_synthetic(&spec)?;
    normalize(&mut ds, args.norm.into());
    export_dataset(&ds, &args.out)?;
    let outputs: Vec<String> = ["dataset.json", "values.bin", "labels.csv"]
        .iter()
        .map(|f| args.out.join(f).display().to_string())
        .collect();
    let config = serde_json::json!({ "spec": to_value(&spec)?, "norm": to_value(&args.norm)? });
    scope.finish(&args.out, config, &[seed], &[], &outputs)?;
    println!(
        "{}",
        serde_json::json!({
            "samples": ds.len(),
            "length": ds.series_len(),
            "channels": ds.channels(),
            "classes": ds.num_classes,
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_pretrain(args: &PretrainArgs, ov: Overrides, scope: RunScope) -> Result<()> {
    let probe = import_dataset(&args.data)?;
    let rc = resolve(&ov, &probe)?;
    let ds = {
        let mut d = probe;
        split(&mut d, rc.split_fractions, rc.split_seed)?;
        d
    };
    let (_, first, last) = run_pretrain_stage(&args.out, &ds, &rc)?;
    let outputs = vec![
        args.out.join("checkpoint.ckpt").display().to_string(),
        args.out.join("loss.csv").display().to_string(),
    ];
    scope.finish(&args.out, to_value(&rc)?, &[rc.train.seed], &[&args.data], &outputs)?;
    println!(
        "{}",
        serde_json::json!({
            "epochs": rc.train.epochs_pretrain,
            "first_recon": first,
            "last_recon": last,
            "checkpoint": args.out.join("checkpoint.ckpt").display().to_string(),
        })
    );
    Ok(())
}

fn cmd_finetune(args: &FinetuneArgs, ov: Overrides, scope: RunScope) -> Result<()> {
    let (mut model, meta) = checkpoint::load(&args.checkpoint)?;
    let mut ov = ov;
    // The checkpoint fixes the model; only training knobs may vary here.
    ov.patch_len = Some(model.cfg.patch_len);
    let probe = import_dataset(&args.data)?;
    let mut rc = resolve(&ov, &probe)?;
    rc.model = model.cfg;
    if rc.train.seed == meta.seed && ov.seed.is_none() {
        // keep the pretrain seed unless the caller chose another
        rc.train.seed = meta.seed;
    }
    let ds = {
        let mut d = probe;
        split(&mut d, rc.split_fractions, rc.split_seed)?;
        d
    };
    let report = run_finetune_stage(&args.out, &ds, &rc, &mut model)?;
    let outputs = vec![
        args.out.join("finetuned.ckpt").display().to_string(),
        args.out.join("finetune.csv").display().to_string(),
    ];
    scope.finish(
        &args.out,
        to_value(&rc)?,
        &[rc.train.seed],
        &[&args.data, &args.checkpoint],
        &outputs,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "best_epoch": report.best_epoch,
            "best_val_accuracy": report.best_val_accuracy,
            "checkpoint": args.out.join("finetuned.ckpt").display().to_string(),
        })
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs, ov: Overrides, scope: RunScope) -> Result<()> {
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let mut ov = ov;
    ov.patch_len = Some(model.cfg.patch_len);
    let probe = import_dataset(&args.data)?;
    let mut rc = resolve(&ov, &probe)?;
    rc.model = model.cfg;
    let ds = {
        let mut d = probe;
        split(&mut d, rc.split_fractions, rc.split_seed)?;
        d
    };
    let report = run_eval_stage(&ds, &model, &rc, args.split.into())?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        fs::write(
            out.join("report.csv"),
            format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row()),
        )?;
        let outputs = vec![
            out.join("report.json").display().to_string(),
            out.join("report.csv").display().to_string(),
        ];
        scope.finish(
            out,
            to_value(&rc)?,
            &[rc.train.seed],
            &[&args.data, &args.checkpoint],
            &outputs,
        )?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// mean and sample standard deviation (n-1 denominator; 0 for a single run)
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One pretrain+finetune+eval pipeline in `dir` under seed `seed`.
fn run_member(dir: &Path, data: &Path, rc_base: &Resolved, seed: u64) -> Result<EvalReport> {
    let mut rc = rc_base.clone();
    rc.train.seed = seed;
    let ds = load_split_data(data, &rc)?;
    let (mut model, _, _) = run_pretrain_stage(dir, &ds, &rc)?;
    run_finetune_stage(dir, &ds, &rc, &mut model)?;
    let report = run_eval_stage(&ds, &model, &rc, Split::Test)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn cmd_sweep(args: &SweepArgs, ov: Overrides, scope: RunScope) -> Result<()> {
    if args.seeds.is_empty() {
        return Err(CrtError::Config("--seeds must name at least one seed".into()));
    }
    let probe = import_dataset(&args.data)?;
    let rc = resolve(&ov, &probe)?;
    drop(probe);
    let mut reports = Vec::new();
    let mut csv = String::from("seed,");
    csv.push_str(EvalReport::csv_header());
    csv.push('\n');
    for &s in &args.seeds {
        let dir = args.out.join(format!("seed-{s}"));
        eprintln!("=== seed {s} -> {} ===", dir.display());
        let member = RunScope::begin(&format!("sweep seed {s}"), scope.deterministic);
        let report = run_member(&dir, &args.data, &rc, s)?;
        let mut member_rc = rc.clone();
        member_rc.train.seed = s;
        let member_outputs = ["checkpoint.ckpt", "loss.csv", "finetuned.ckpt", "finetune.csv", "report.json"]
            .iter()
            .map(|f| dir.join(f).display().to_string())
            .collect::<Vec<_>>();
        member.finish(&dir, to_value(&member_rc)?, &[s], &[&args.data], &member_outputs)?;
        csv.push_str(&format!("{s},{}\n", report.csv_row()));
        reports.push(report);
    }
    let acc = mean_std(&reports.iter().map(|r| r.accuracy_overall).collect::<Vec<_>>());
    let f1 = mean_std(&reports.iter().map(|r| r.f1_macro).collect::<Vec<_>>());
    let auc = mean_std(&reports.iter().map(|r| r.roc_auc_mean).collect::<Vec<_>>());
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("sweep.csv"), &csv)?;
    let summary = serde_json::json!({
        "seeds": args.seeds,
        "accuracy": {"mean": acc.0, "std": acc.1},
        "f1_macro": {"mean": f1.0, "std": f1.1},
        "roc_auc": {"mean": auc.0, "std": auc.1},
    });
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let outputs = vec![
        args.out.join("sweep.csv").display().to_string(),
        args.out.join("summary.json").display().to_string(),
    ];
    scope.finish(&args.out, to_value(&rc)?, &args.seeds, &[&args.data], &outputs)?;
    eprintln!(
        "accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}, AUC {:.4} ± {:.4} over {} seeds",
        acc.0,
        acc.1,
        f1.0,
        f1.1,
        auc.0,
        auc.1,
        args.seeds.len()
    );
    println!("{summary}");
    Ok(())
}

/// Maps one ablation switch onto the resolved configuration.
fn apply_ablation(rc: &mut Resolved, mode: AblateModeArg) {
    match mode {
        AblateModeArg::Mask => rc.train.drop_mode = DropMode::Mask,
        AblateModeArg::NoPhase => rc.model.ablation = AblationMode::NoPhase,
        AblateModeArg::Time => rc.model.ablation = AblationMode::TimeOnly,
        AblateModeArg::Freq => rc.model.ablation = AblationMode::FreqOnly,
        AblateModeArg::T2f => rc.model.ablation = AblationMode::T2f,
        AblateModeArg::F2t => rc.model.ablation = AblationMode::F2t,
        AblateModeArg::NoCl => rc.train.curriculum_enabled = false,
        AblateModeArg::NoIdc => rc.train.loss.idc_enabled = false,
    }
}

fn cmd_ablate(args: &AblateArgs, ov: Overrides, scope: RunScope) -> Result<()> {
    let probe = import_dataset(&args.data)?;
    let mut rc = resolve(&ov, &probe)?;
    apply_ablation(&mut rc, args.mode);
    drop(probe);
    let report = run_member(&args.out, &args.data, &rc, rc.train.seed)?;
    let config = serde_json::json!({ "mode": to_value(&args.mode)?, "resolved": to_value(&rc)? });
    let outputs = ["checkpoint.ckpt", "loss.csv", "finetuned.ckpt", "finetune.csv", "report.json"]
        .iter()
        .map(|f| args.out.join(f).display().to_string())
        .collect::<Vec<_>>();
    scope.finish(&args.out, config, &[rc.train.seed], &[&args.data], &outputs)?;
    println!(
        "{}",
        serde_json::json!({
            "mode": to_value(&args.mode)?,
            "accuracy": report.accuracy_overall,
            "f1_macro": report.f1_macro,
            "roc_auc": report.roc_auc_mean,
        })
    );
    Ok(())
}

fn cmd_demo_phase_magnitude(args: &DemoPhaseArgs, scope: RunScope) -> Result<()> {
    let signal = ecg_like(args.len, args.period)?;
    let demo = phase_magnitude_demo(&signal)?;
    fs::create_dir_all(&args.out)?;
    let mut csv = String::from("index,original,phase_only,magnitude_only\n");
    for i in 0..demo.original.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            i, demo.original[i], demo.phase_only[i], demo.magnitude_only[i]
        ));
    }
    let path = args.out.join("phase_magnitude.csv");
    fs::write(&path, csv)?;
    let config = serde_json::json!({ "len": args.len, "period": args.period });
    scope.finish(&args.out, config, &[], &[], &[path.display().to_string()])?;
    println!(
        "{}",
        serde_json::json!({ "d_phase": demo.d_phase, "d_mag": demo.d_mag, "csv": path.display().to_string() })
    );
    Ok(())
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Time => "time",
        Domain::Magnitude => "magnitude",
        Domain::Phase => "phase",
    }
}

fn cmd_demo_reconstruct(args: &DemoReconArgs, ov: Overrides, seed: u64, scope: RunScope) -> Result<()> {
    if !(args.ratio > 0.0 && args.ratio < 1.0) {
        return Err(CrtError::Config(format!("--ratio {} outside (0, 1)", args.ratio)));
    }
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let ds = import_dataset(&args.data)?;
    let count = args.count.min(ds.len());
    if count == 0 {
        return Err(CrtError::Data("no samples to render".into()));
    }
    fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..count {
        let seq = assemble(&ds.samples[i])?;
        let ps = make_patches(&seq, model.cfg.patch_len)?;
        let plan = sample_drop_plan(
            &ps,
            args.ratio,
            seed.wrapping_add(i as u64),
            DropMode::Drop,
            DropSampling::ExactCount,
        )?;
        let visible = apply_drop(&ps, &plan)?;

        let mut g = crate::numerics::Graph::new();
        let bp = model.bind(&mut g, false)?;
        let emb = model.embed_patches(&mut g, &bp, &[&visible])?;
        let enc = model.encode(&mut g, &bp, &emb)?;
        let dec = model.decode_reconstruct(&mut g, &bp, &enc, &[plan.clone()], &[&ps])?;
        let folded = fold_reconstruction(
            &g.value(dec.rows),
            &dec.coverage,
            1,
            seq.channels(),
            model.cfg.patch_len,
            ps.total,
        )?;
        let recon = &folded[0];

        let p = model.cfg.patch_len;
        let covered: Vec<bool> = {
            let mut v = vec![false; ps.total];
            for &(_, pos, _) in &dec.coverage {
                v[pos] = true;
            }
            v
        };
        let dropped: Vec<bool> = {
            let mut v = vec![false; ps.total];
            for &pos in &plan.dropped {
                v[pos] = true;
            }
            v
        };
        let mut csv = String::from("channel,index,domain,original,dropped_input,reconstructed\n");
        let width = seq.total_len();
        let mut mse_sum = 0.0;
        let mut mse_n = 0usize;
        for c in 0..seq.channels() {
            for idx in 0..width {
                let patch = idx / p;
                let orig = seq.values.data()[c * width + idx];
                let rec = recon.data()[c * width + idx];
                let input_cell =
                    if dropped[patch] { String::new() } else { format!("{orig}") };
                let recon_cell = if covered[patch] { format!("{rec}") } else { String::new() };
                if covered[patch] && dropped[patch] {
                    mse_sum += (rec - orig) * (rec - orig);
                    mse_n += 1;
                }
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c,
                    idx,
                    domain_name(ps.domain_of(patch)),
                    orig,
                    input_cell,
                    recon_cell
                ));
            }
        }
        let path = args.out.join(format!("sample-{i}.csv"));
        fs::write(&path, csv)?;
        outputs.push(path.display().to_string());
        summaries.push(serde_json::json!({
            "sample": i,
            "csv": outputs.last().unwrap(),
            "mse_on_dropped": if mse_n > 0 { mse_sum / mse_n as f64 } else { f64::NAN },
        }));
    }
    let config = serde_json::json!({ "ratio": args.ratio, "count": count, "overrides": to_value(&ov)? });
    scope.finish(
        &args.out,
        config,
        &[seed],
        &[&args.data, &args.checkpoint],
        &outputs,
    )?;
    println!("{}", serde_json::json!({ "samples": summaries }));
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let t0 = std::time::Instant::now();
    let ops = audit_ops(seed)?;
    let mut failures = Vec::new();
    for (name, err) in &ops {
        let ok = *err <= OP_TOLERANCE;
        eprintln!("op {name:<18} max rel err {err:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failures.push(format!("{name} ({err:.3e})"));
        }
    }
    let e2e = end_to_end_gradcheck(seed)?;
    let e2e_ok = e2e <= END_TO_END_TOLERANCE;
    eprintln!(
        "end-to-end micro model  max rel err {e2e:.3e} {}",
        if e2e_ok { "ok" } else { "FAIL" }
    );
    if !e2e_ok {
        failures.push(format!("end_to_end ({e2e:.3e})"));
    }
    let (worst_op, worst_err) =
        ops.iter().fold(("", 0.0), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    println!(
        "{}",
        serde_json::json!({
            "ops_checked": ops.len(),
            "worst_op": worst_op,
            "worst_op_err": worst_err,
            "op_tolerance": OP_TOLERANCE,
            "end_to_end_err": e2e,
            "end_to_end_tolerance": END_TO_END_TOLERANCE,
            "elapsed_s": t0.elapsed().as_secs_f64(),
            "pass": failures.is_empty(),
        })
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CrtError::Audit(format!("gradient audit failed: {}", failures.join(", "))))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    let seed_flag = cli.seed;
    match cli.cmd {
        Cmd::Gen(args) => {
            let scope = RunScope::begin("gen", cli.deterministic);
            cmd_gen(&args, seed_flag.unwrap_or(0), scope)
        }
        Cmd::Pretrain(args) => {
            let scope = RunScope::begin("pretrain", cli.deterministic);
            let ov = args.overrides.clone().layered(config_path, seed_flag)?;
            cmd_pretrain(&args, ov, scope)
        }
        Cmd::Finetune(args) => {
            let scope = RunScope::begin("finetune", cli.deterministic);
            let ov = args.overrides.clone().layered(config_path, seed_flag)?;
            cmd_finetune(&args, ov, scope)
        }
        Cmd::Eval(args) => {
            let scope = RunScope::begin("eval", cli.deterministic);
            let ov = args.overrides.clone().layered(config_path, seed_flag)?;
            cmd_eval(&args, ov, scope)
        }
        Cmd::Sweep(args) => {
            let scope = RunScope::begin("sweep", cli.deterministic);
            let ov = args.overrides.clone().layered(config_path, seed_flag)?;
            cmd_sweep(&args, ov, scope)
        }
        Cmd::Ablate(args) => {
            let scope = RunScope::begin("ablate", cli.deterministic);
            let ov = args.overrides.clone().layered(config_path, seed_flag)?;
            cmd_ablate(&args, ov, scope)
        }
        Cmd::Demo { what } => match what {
            DemoCmd::PhaseMagnitude(args) => {
                let scope = RunScope::begin("demo phase-magnitude", cli.deterministic);
                cmd_demo_phase_magnitude(&args, scope)
            }
            DemoCmd::Reconstruct(args) => {
                let scope = RunScope::begin("demo reconstruct", cli.deterministic);
                let ov = Overrides::default().layered(config_path, seed_flag)?;
                let seed = ov.seed.unwrap_or(0);
                cmd_demo_reconstruct(&args, ov, seed, scope)
            }
        },
        Cmd::Gradcheck => cmd_gradcheck(seed_flag.unwrap_or(0)),
    }
}

/// CLI entry point; returns the process exit code (0 ok, 1 runtime failure,
/// 2 usage/config error). Runtime failures print one JSON object to stderr.
pub fn run() -> i32 {
    crate::numerics::kernels::init_parallelism();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version to stdout (exit 0) and usage errors to
            // stderr (exit 2) by itself
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": err.kind(), "message": err.to_string() } })
            );
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::STANDARD_CLIP_NORM;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: Overrides =
            serde_json::from_str(r#"{"dim": 32, "batch_size": 8, "seed": 7}"#).unwrap();
        let flags = Overrides { dim: Some(48), ..Overrides::default() };
        let merged = flags.over(file);
        assert_eq!(merged.dim, Some(48), "flag wins");
        assert_eq!(merged.batch_size, Some(8), "file fills the gap");
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.lr_pretrain, None, "defaults stay unresolved");
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let bad = serde_json::from_str::<Overrides>(r#"{"learning_rate": 0.1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn seed_flag_overrides_file_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 11, "dim": 16}"#).unwrap();
        let merged =
            Overrides::default().layered(Some(&path), Some(99)).unwrap();
        assert_eq!(merged.seed, Some(99));
        assert_eq!(merged.dim, Some(16));
        let merged = Overrides::default().layered(Some(&path), None).unwrap();
        assert_eq!(merged.seed, Some(11));
    }

    #[test]
    fn resolve_builds_the_toy_shape() {
        let ds = tiny_ds(64, 1);
        let rc = resolve(&Overrides::default(), &ds).unwrap();
        assert_eq!(rc.model.patch_len, 16);
        assert_eq!(rc.model.n_max, 8, "2*64/16");
        assert_eq!(rc.model.dim, 64);
        assert_eq!(rc.split_fractions, DEFAULT_SPLIT);
        assert!(rc.train.grad_clip.is_none(), "clipping is off by default");
    }

    #[test]
    fn resolve_rejects_nondividing_patch_len() {
        let ds = tiny_ds(64, 1);
        let ov = Overrides { patch_len: Some(24), ..Overrides::default() };
        assert!(matches!(resolve(&ov, &ds), Err(CrtError::Config(_))));
    }

    #[test]
    fn ablation_switches_map_to_the_right_knob() {
        let ds = tiny_ds(64, 1);
        let base = resolve(&Overrides::default(), &ds).unwrap();
        let modes = [
            AblateModeArg::Mask,
            AblateModeArg::NoPhase,
            AblateModeArg::Time,
            AblateModeArg::Freq,
            AblateModeArg::T2f,
            AblateModeArg::F2t,
            AblateModeArg::NoCl,
            AblateModeArg::NoIdc,
        ];
        for mode in modes {
            let mut rc = base.clone();
            apply_ablation(&mut rc, mode);
            match mode {
                AblateModeArg::Mask => assert_eq!(rc.train.drop_mode, DropMode::Mask),
                AblateModeArg::NoPhase => assert_eq!(rc.model.ablation, AblationMode::NoPhase),
                AblateModeArg::Time => assert_eq!(rc.model.ablation, AblationMode::TimeOnly),
                AblateModeArg::Freq => assert_eq!(rc.model.ablation, AblationMode::FreqOnly),
                AblateModeArg::T2f => assert_eq!(rc.model.ablation, AblationMode::T2f),
                AblateModeArg::F2t => assert_eq!(rc.model.ablation, AblationMode::F2t),
                AblateModeArg::NoCl => assert!(!rc.train.curriculum_enabled),
                AblateModeArg::NoIdc => assert!(!rc.train.loss.idc_enabled),
            }
        }
    }

    #[test]
    fn mean_std_uses_sample_denominator() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12, "sample std of 1,2,3 is 1");
        let (m, s) = mean_std(&[4.0]);
        assert_eq!((m, s), (4.0, 0.0));
    }

    #[test]
    fn grad_clip_flag_without_value_uses_the_standard_norm() {
        let cli = Cli::try_parse_from([
            "crt", "pretrain", "--data", "d", "--out", "o", "--grad-clip",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Pretrain(a) => assert_eq!(a.overrides.grad_clip, Some(STANDARD_CLIP_NORM)),
            _ => panic!("expected pretrain"),
        }
        let cli = Cli::try_parse_from([
            "crt", "pretrain", "--data", "d", "--out", "o", "--grad-clip", "2.5",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Pretrain(a) => assert_eq!(a.overrides.grad_clip, Some(2.5)),
            _ => panic!("expected pretrain"),
        }
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let err = Cli::try_parse_from(["crt", "pretrain", "--frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    fn tiny_ds(len: usize, channels: usize) -> Dataset {
        let spec = SynthSpec {
            n: 24,
            len,
            channels,
            num_classes: 2,
            task: SynthTask::FreqSeparable,
            noise_sigma: 0.0,
            seed: 1,
        };
        gen_synthetic(&spec).unwrap()
    }
}
