//! Command-line front end. Exit codes: 0 success, 1 configuration,
//! 2 data or I/O, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalkit::{self, MetricsReport};
use crate::model::{DoGSettings, ModelConfig, SkipMode};
use crate::pipeline::image::{load_binary, load_rgb, save_binary, write_atomic};
use crate::pipeline::{
    infer, leave_one_out_split, load_pairs, synth, train, AugmentConfig, Checkpoint, DatasetIndex,
    InferConfig, TrainConfig,
};

/// Default output directory when `--out-dir` is not given.
pub const OUT_DIR_ENV: &str = "AMSDB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "amsdb", version, about = "Document image binarisation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural corpus with ground truth and a manifest.
    Synth(SynthArgs),
    /// Leave-one-year-out split of a manifest.
    Split(SplitArgs),
    /// Train a model and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Binarise images with a trained checkpoint.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Binarise images with a classical thresholding method.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory [default: $AMSDB_OUT_DIR or ./amsdb-out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("amsdb-out"))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Year tags assigned round-robin.
    #[arg(long, value_delimiter = ',', default_value = "synthetic")]
    pub years: Vec<String>,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 0.04)]
    pub noise: f32,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub held_out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipArg {
    Plain,
    Dog,
    DogResidual,
}

impl From<SkipArg> for SkipMode {
    fn from(s: SkipArg) -> Self {
        match s {
            SkipArg::Plain => SkipMode::Plain,
            SkipArg::Dog => SkipMode::DoG,
            SkipArg::DogResidual => SkipMode::DoGResidual,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Encoder stage widths.
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    pub dims: Vec<usize>,
    /// Selective-scan blocks per stage.
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub state_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub expand: usize,
    #[arg(long, value_enum, default_value_t = SkipArg::DogResidual)]
    pub skip_mode: SkipArg,
    /// Bands per DoG bank.
    #[arg(long, default_value_t = 3)]
    pub dog_scales: usize,
    #[arg(long, default_value_t = 0.8)]
    pub dog_sigma0: f64,
    /// Do not feed the input image to the full- and half-resolution decoder blocks.
    #[arg(long)]
    pub no_image_guidance: bool,
    #[arg(long, default_value_t = 64)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f32,
    #[arg(long, default_value_t = 50)]
    pub val_every: usize,
    /// Disable flips, rotations and crop jitter.
    #[arg(long)]
    pub no_augment: bool,
    /// Crop jitter in pixels around each grid origin.
    #[arg(long, default_value_t = 16)]
    pub crop_jitter: usize,
    /// Checkpoint file name inside the output directory.
    #[arg(long, default_value = "model.amsdb")]
    pub checkpoint: String,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub stride: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Image files or directories of images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Otsu,
    Sauvola,
    Bradley,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Odd window side [default: 25 for sauvola, width/8 for bradley].
    #[arg(long)]
    pub window: Option<usize>,
    /// Sauvola sensitivity.
    #[arg(long, default_value_t = evalkit::threshold::SAUVOLA_K)]
    pub k: f64,
    /// Sauvola dynamic range of the standard deviation.
    #[arg(long, default_value_t = evalkit::threshold::SAUVOLA_R)]
    pub r: f64,
    /// Bradley percentage below the local mean.
    #[arg(long, default_value_t = evalkit::threshold::BRADLEY_T_PERCENT)]
    pub t_percent: f64,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Baseline(a) => cmd_baseline(&a),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Data(format!("report encoding failed: {e}")))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let dir = a.out.resolve();
    let cfg = synth::SynthConfig {
        width: a.width,
        height: a.height,
        noise_std: a.noise,
        ..synth::SynthConfig::default()
    };
    if a.width == 0 || a.height == 0 || a.count == 0 || a.years.is_empty() {
        return Err(Error::Config("count, width, height and years must be non-empty".into()));
    }
    let (manifest, idx) = synth::write_corpus(&dir, a.count, a.seed, &a.years, &cfg)?;
    println!("wrote {} pages, manifest {}", idx.len(), manifest.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let index = DatasetIndex::load(&a.manifest)?;
    let (train_idx, test_idx) = leave_one_out_split(&index, &a.held_out)?;
    let dir = a.out.resolve();
    train_idx.save(dir.join("train.manifest"))?;
    test_idx.save(dir.join("test.manifest"))?;
    println!(
        "train: {} records ({}), test: {} records ({})",
        train_idx.len(),
        train_idx.years().join(","),
        test_idx.len(),
        a.held_out
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    manifest: &'a Path,
    checkpoint: &'a Path,
    model: &'a ModelConfig,
    training: &'a TrainConfig,
    parameters: usize,
    final_loss: Option<f32>,
    final_val_fm: Option<f64>,
}

impl TrainArgs {
    pub fn configs(&self) -> (ModelConfig, TrainConfig) {
        let mut model = ModelConfig::desk(self.dims.clone(), self.depths.clone(), self.skip_mode.into());
        model.state_dim = self.state_dim;
        model.expand = self.expand;
        model.image_guidance = !self.no_image_guidance;
        model.dog = vec![
            DoGSettings {
                scales: self.dog_scales,
                sigma0: self.dog_sigma0
            };
            self.dims.len()
        ];
        let augment = if self.no_augment {
            AugmentConfig::none()
        } else {
            AugmentConfig {
                crop_jitter: self.crop_jitter,
                ..AugmentConfig::default()
            }
        };
        let training = TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            stride: self.stride,
            augment,
            val_fraction: self.val_fraction,
            val_every: self.val_every,
            ..TrainConfig::default()
        };
        (model, training)
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (model_cfg, cfg) = a.configs();
    model_cfg.validate()?;
    cfg.validate(&model_cfg)?;
    let index = DatasetIndex::load(&a.manifest)?;
    if index.is_empty() {
        return Err(Error::Data(format!("manifest {} has no records", a.manifest.display())));
    }
    let pairs = load_pairs(&index)?;
    let out = train(&model_cfg, &cfg, &pairs, |row| {
        if let Some(fm) = row.val_fm {
            eprintln!("step {:5}  loss {:.5}  val_fm {:.2}", row.step, row.loss, fm);
        }
    })?;

    let dir = a.out.resolve();
    let ckpt_path = dir.join(&a.checkpoint);
    Checkpoint::from_model(&out.model, cfg.seed, cfg.steps as u64, Some(&out.optimizer)).save(&ckpt_path)?;
    let mut csv = String::from("step,loss,val_fm\n");
    for row in &out.log {
        let fm = row.val_fm.map(|v| format!("{v:.6}")).unwrap_or_default();
        csv.push_str(&format!("{},{:.8},{fm}\n", row.step, row.loss));
    }
    write_atomic(dir.join("train_log.csv"), csv.as_bytes())?;
    let last_val = out.log.iter().rev().find_map(|r| r.val_fm);
    let report = TrainReport {
        manifest: &a.manifest,
        checkpoint: &ckpt_path,
        model: &model_cfg,
        training: &cfg,
        parameters: out.model.num_params(),
        final_loss: out.log.last().map(|r| r.loss),
        final_val_fm: last_val,
    };
    write_atomic(dir.join("train_report.json"), to_json(&report)?.as_bytes())?;
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

const IMAGE_EXTS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Files given directly plus image files inside given directories, sorted
/// per directory.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && is_image(f))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize)]
struct OutputsReport<'a, C: Serialize> {
    config: C,
    outputs: &'a [String],
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let cfg = InferConfig {
        stride: a.stride,
        batch_size: a.batch_size,
        ..InferConfig::default()
    };
    if cfg.stride == 0 || cfg.stride > cfg.patch_size {
        return Err(Error::Config(format!("stride must be in 1..={}", cfg.patch_size)));
    }
    let dir = a.out.resolve();
    let mut written = Vec::new();
    for path in expand_inputs(&a.inputs)? {
        let image = load_rgb(&path)?;
        let pred = infer(&model, &image, &cfg)?;
        let s = stem(&path);
        for ext in ["png", "pgm"] {
            let out = dir.join(format!("{s}.{ext}"));
            save_binary(&pred.binary, &out)?;
            written.push(out.display().to_string());
        }
        println!("{} -> {}", path.display(), dir.join(format!("{s}.png")).display());
    }
    #[derive(Serialize)]
    struct InferEcho<'a> {
        checkpoint: &'a Path,
        model: &'a ModelConfig,
        inference: &'a InferConfig,
    }
    let report = OutputsReport {
        config: InferEcho {
            checkpoint: &a.checkpoint,
            model: &model.config,
            inference: &cfg,
        },
        outputs: &written,
    };
    write_atomic(dir.join("infer_report.json"), to_json(&report)?.as_bytes())
}

/// Stem → file, preferring `.png` when several formats share a stem.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map: BTreeMap<String, PathBuf> = BTreeMap::new();
    for f in expand_inputs(&[dir.to_path_buf()])? {
        let is_png = f.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        match map.get(&stem(&f)) {
            Some(prev) if prev.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) => {}
            Some(_) if !is_png => {}
            _ => {
                map.insert(stem(&f), f);
            }
        }
    }
    Ok(map)
}

#[derive(Serialize)]
struct EvalRow {
    image: String,
    #[serde(flatten)]
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: BTreeMap<&'static str, String>,
    images: &'a [EvalRow],
    mean: &'a MetricsReport,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    for d in [&a.pred, &a.gt] {
        if !d.is_dir() {
            return Err(Error::Data(format!("{} is not a directory", d.display())));
        }
    }
    let preds = index_dir(&a.pred)?;
    let gts = index_dir(&a.gt)?;
    let unpaired: Vec<String> = preds
        .iter()
        .filter(|(s, _)| !gts.contains_key(*s))
        .chain(gts.iter().filter(|(s, _)| !preds.contains_key(*s)))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::Data(format!("unpaired files: {}", unpaired.join(", "))));
    }
    if preds.is_empty() {
        return Err(Error::Data(format!("no images found in {}", a.pred.display())));
    }
    let mut rows = Vec::with_capacity(preds.len());
    for (s, p) in &preds {
        let pred = load_binary(p)?;
        let gt = load_binary(&gts[s])?;
        let metrics = evalkit::evaluate(&pred, &gt).map_err(|e| match e {
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{s}: {m}")),
            other => other,
        })?;
        rows.push(EvalRow { image: s.clone(), metrics });
    }
    let mean = MetricsReport::mean(&rows.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>())
        .expect("at least one row");

    let config: BTreeMap<&'static str, String> = [
        ("pred", a.pred.display().to_string()),
        ("gt", a.gt.display().to_string()),
        ("psnr_cap", evalkit::PSNR_CAP.to_string()),
    ]
    .into_iter()
    .collect();
    let mut text = String::new();
    for (k, v) in &config {
        text.push_str(&format!("# {k}={v}\n"));
    }
    for r in &rows {
        text.push_str(&format!("image={} {}\n", r.image, r.metrics.to_kv()));
    }
    text.push_str(&format!("image=MEAN {}\n", mean.to_kv()));

    let dir = a.out.resolve();
    write_atomic(dir.join("eval_report.txt"), text.as_bytes())?;
    let json = to_json(&EvalReport {
        config,
        images: &rows,
        mean: &mean,
    })?;
    write_atomic(dir.join("eval_report.json"), json.as_bytes())?;
    print!("{}", text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    if let Some(w) = a.window {
        if w < 3 || w % 2 == 0 {
            return Err(Error::Param(format!("window must be odd and ≥ 3, got {w}")));
        }
    }
    let dir = a.out.resolve();
    let mut written = Vec::new();
    for path in expand_inputs(&a.inputs)? {
        let gray = load_rgb(&path)?.to_gray();
        let out = match a.method {
            Method::Otsu => evalkit::otsu(&gray)?.1,
            Method::Sauvola => evalkit::sauvola(
                &gray,
                a.window.unwrap_or(evalkit::threshold::SAUVOLA_WINDOW),
                a.k,
                a.r,
            )?,
            Method::Bradley => evalkit::bradley(
                &gray,
                a.window.unwrap_or_else(|| evalkit::threshold::bradley_default_window(gray.width)),
                a.t_percent,
            )?,
        };
        let s = stem(&path);
        for ext in ["png", "pgm"] {
            let p = dir.join(format!("{s}.{ext}"));
            save_binary(&out, &p)?;
            written.push(p.display().to_string());
        }
    }
    #[derive(Serialize)]
    struct BaselineEcho {
        method: Method,
        window: Option<usize>,
        k: f64,
        r: f64,
        t_percent: f64,
    }
    let report = OutputsReport {
        config: BaselineEcho {
            method: a.method,
            window: a.window,
            k: a.k,
            r: a.r,
            t_percent: a.t_percent,
        },
        outputs: &written,
    };
    write_atomic(dir.join("baseline_report.json"), to_json(&report)?.as_bytes())?;
    println!("wrote {} images to {}", written.len() / 2, dir.display());
    Ok(())
}
