//! Command-line front end. Subcommands: `train`, `infer`, `eval`, `flops`,
//! `synth`, `config`. Configuration is a flat `key = value` file using the
//! same dotted keys everywhere (`model.*`, `train.*`, `loss.*`, `eval.*`);
//! `--set key=value` overrides individual entries and the `NBED_SEED`
//! environment variable overrides both seeds last.
//!
//! Exit codes: 0 success, 2 usage or configuration problems, 3 runtime
//! numeric failures (divergence, shape blowups mid-run).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::data;
use crate::error::{Error, Result};
use crate::eval::{self, report, EvalConfig, DEFAULT_SCALES};
use crate::model::profile::{count_parameters, estimate_flops};
use crate::model::{ModelConfig, SIZE_MULTIPLE};
use crate::train::{self, Checkpoint, TrainConfig};

/// Merged settings for a whole run.
///
/// Precedence, lowest to highest: built-in defaults, config file, `--set`
/// overrides in order, `NBED_SEED`.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        if key.starts_with("model.") {
            self.model.apply_kv(key, value)
        } else if key.starts_with("train.") || key.starts_with("loss.") {
            self.train.apply_kv(key, value)
        } else if key.starts_with("eval.") {
            fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("cannot parse `{v}` for {key}")))
            }
            match key {
                "eval.tolerance_fraction" => self.eval.tolerance_fraction = parse(key, value)?,
                "eval.threshold_count" => self.eval.threshold_count = parse(key, value)?,
                "eval.use_nms" => self.eval.use_nms = parse(key, value)?,
                other => return Err(Error::Config(format!("unknown eval key `{other}`"))),
            }
            Ok(())
        } else {
            Err(Error::Config(format!("unknown config key `{key}`")))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_kv() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in self.train.to_kv() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("eval.tolerance_fraction = {}\n", self.eval.tolerance_fraction));
        out.push_str(&format!("eval.threshold_count = {}\n", self.eval.threshold_count));
        out.push_str(&format!("eval.use_nms = {}\n", self.eval.use_nms));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}

fn split_set(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{spec}`")))
}

/// Build the effective config from file, overrides, and environment.
fn assemble(file: Option<&Path>, sets: &[String], env_seed: Option<String>) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for spec in sets {
        let (k, v) = split_set(spec)?;
        cfg.apply_kv(k, v)?;
    }
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("NBED_SEED must be an integer, got `{s}`")))?;
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn env_seed() -> Option<String> {
    std::env::var("NBED_SEED").ok()
}

#[derive(Parser)]
#[command(name = "nbed", version, about = "Bilateral edge detector: train, infer, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. --set train.batch_size=2. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the samples named by a list file.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// List file: `image.png gt1.png [gt2.png ...]` per line.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, loss log, effective config.
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a trained model over images, writing probability-map PNGs.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Average over scales 0.5/1.0/1.5 before writing.
        #[arg(long)]
        ms: bool,
        /// Explicit scale list for --ms, e.g. 0.75,1.0,1.25.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        /// Input images.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score predictions against ground truth; prints `ODS=... OIS=...`.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Directory of prediction PNGs named `{sample id}.png`.
        #[arg(long)]
        pred: PathBuf,
        /// Where to write pr.csv and pr.svg (omit to skip the artifacts).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Match tolerance as a fraction of the image diagonal.
        #[arg(long)]
        tol: Option<f64>,
        /// Score the raw maps without thinning first.
        #[arg(long = "no-nms")]
        no_nms: bool,
    },
    /// Report parameter count and FLOPs for a configuration.
    Flops {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 481)]
        height: usize,
        #[arg(long, default_value_t = 321)]
        width: usize,
    },
    /// Generate a synthetic shape dataset plus its list file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Square image side, multiple of 16 recommended.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Shapes per image.
        #[arg(long, default_value_t = 4)]
        shapes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration after file/overrides/environment.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Exit code for a failed subcommand.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::Shape(_) => 3,
        _ => 2,
    }
}

/// Parse and dispatch. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // help/version go to stdout with success, real usage errors to
            // stderr with the usage exit code
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { cfg, data, out, resume } => cmd_train(cfg, &data, &out, resume.as_deref()),
        Command::Infer { ckpt, out, ms, scales, inputs } => {
            cmd_infer(&ckpt, &out, ms, scales, &inputs)
        }
        Command::Eval { cfg, data, pred, out, tol, no_nms } => {
            cmd_eval(cfg, &data, &pred, out.as_deref(), tol, no_nms)
        }
        Command::Flops { cfg, height, width } => cmd_flops(cfg, height, width),
        Command::Synth { out, count, size, shapes, seed } => {
            cmd_synth(&out, count, size, shapes, seed)
        }
        Command::Config { cfg } => {
            let rc = assemble(cfg.config.as_deref(), &cfg.set, env_seed())?;
            print!("{}", rc.to_text());
            Ok(())
        }
    }
}

fn cmd_train(cfg: ConfigArgs, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let rc = assemble(cfg.config.as_deref(), &cfg.set, env_seed())?;
    let samples = data::load_listfile(data)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("list file {} names no samples", data.display())));
    }
    fs::create_dir_all(out)?;

    let (ckpt, log) = match resume {
        Some(p) => {
            let prev = Checkpoint::load(p)?;
            train::resume(&prev, &samples, &rc.train)?
        }
        None => train::train(rc.model.clone(), &samples, &rc.train)?,
    };
    ckpt.save(&out.join("checkpoint.nbed"))?;
    fs::write(out.join("log.csv"), train::log_to_csv(&log))?;
    fs::write(out.join("config.cfg"), rc.to_text())?;
    if let Some(last) = log.last() {
        println!("trained {} iterations, final loss {:.6}", ckpt.iteration, last.loss);
    } else {
        println!("trained {} iterations", ckpt.iteration);
    }
    Ok(())
}

fn cmd_infer(
    ckpt: &Path,
    out: &Path,
    ms: bool,
    scales: Option<Vec<f64>>,
    inputs: &[PathBuf],
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let model = train::model_from_checkpoint(&ckpt)?;
    fs::create_dir_all(out)?;
    let scales = match (ms, scales) {
        (_, Some(s)) => Some(s),
        (true, None) => Some(DEFAULT_SCALES.to_vec()),
        (false, None) => None,
    };
    for input in inputs {
        let img = data::load_image_input(input)?;
        let map = match &scales {
            Some(s) => eval::multi_scale_infer(&model, &img, s)?,
            None => model.forward(&img)?,
        };
        let stem = input
            .file_stem()
            .ok_or_else(|| Error::Data(format!("no file name in {}", input.display())))?;
        let dest = out.join(Path::new(stem).with_extension("png"));
        data::save_probability_png(&dest, &map)?;
        println!("{} -> {}", input.display(), dest.display());
    }
    Ok(())
}

fn cmd_eval(
    cfg: ConfigArgs,
    data: &Path,
    pred: &Path,
    out: Option<&Path>,
    tol: Option<f64>,
    no_nms: bool,
) -> Result<()> {
    let mut rc = assemble(cfg.config.as_deref(), &cfg.set, env_seed())?;
    if let Some(t) = tol {
        rc.eval.tolerance_fraction = t;
    }
    if no_nms {
        rc.eval.use_nms = false;
    }
    rc.eval.validate()?;

    let samples = data::load_listfile(data)?;
    let preds: Vec<Array2<f64>> = samples
        .iter()
        .map(|s| data::load_probability_png(&pred.join(format!("{}.png", s.id))))
        .collect::<Result<_>>()?;
    let tally = eval::accumulate_tallies(&preds, &samples, &rc.eval)?;
    let (ods, ois, points) = eval::ods_ois(&tally)?;
    println!("{}", report::summary_line(ods, ois));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("pr.csv"), report::pr_csv(&points, ods, ois))?;
        fs::write(dir.join("pr.svg"), report::pr_svg(&points, ods, ois))?;
    }
    Ok(())
}

fn cmd_flops(cfg: ConfigArgs, height: usize, width: usize) -> Result<()> {
    let rc = assemble(cfg.config.as_deref(), &cfg.set, env_seed())?;
    let pad = |n: usize| n.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
    println!("input={height}x{width} padded={}x{}", pad(height), pad(width));
    println!("parameters={}", count_parameters(&rc.model));
    println!("flops={:.0}", estimate_flops(&rc.model, height, width));
    Ok(())
}

fn cmd_synth(out: &Path, count: usize, size: usize, shapes: usize, seed: u64) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("synth: --count must be >= 1".into()));
    }
    fs::create_dir_all(out)?;
    let mut list = String::new();
    for i in 0..count {
        let s = data::synth_sample(size, shapes, seed.wrapping_add(i as u64));
        let img_name = format!("img_{i:03}.png");
        let gt_name = format!("gt_{i:03}.png");
        data::save_rgb_png(&out.join(&img_name), &s.image)?;
        data::save_binary_png(&out.join(&gt_name), &s.annotator_gts[0])?;
        list.push_str(&format!("{img_name} {gt_name}\n"));
    }
    let list_path = out.join("synth.lst");
    fs::write(&list_path, list)?;
    println!("wrote {count} samples and {}", list_path.display());
    Ok(())
}
