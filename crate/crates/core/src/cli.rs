//! The `dsmap` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::imageops::FilterType;

use crate::checkpoint;
use crate::config::{parse_assignment, RunConfig};
use crate::data::{self, DatasetSpec, ImagePool, Split, ToySpec};
use crate::error::Error;
use crate::evaluation::{diversity_score, fid_protocol, RandomConvExtractor};
use crate::inference;
use crate::model::{DomainId, ImageBatch, Model};
use crate::training::{fit, ModelState, RunDir};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit status for bad arguments, configuration or missing inputs.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dsmap", version, about = "Two-domain image translation with domain-specific content mappings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override, applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Domain {
    A,
    B,
}

impl From<Domain> for DomainId {
    fn from(d: Domain) -> Self {
        match d {
            Domain::A => DomainId::A,
            Domain::B => DomainId::B,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpMode {
    Style,
    Content,
    CrossDomain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the synthetic two-domain toy dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        /// Images per domain, test split included.
        #[arg(long)]
        n: usize,
        /// Images per domain held out for testing (default: a quarter).
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trains a model on a dataset folder.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset root with trainA/trainB/testA/testB.
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translates images, guided by a reference image or by sampled styles.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Content image or folder of images.
        #[arg(long)]
        input: PathBuf,
        /// Reference image of the target domain; without it styles are sampled.
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long, value_enum)]
        src: Domain,
        #[arg(long, value_enum)]
        dst: Domain,
        /// Number of sampled styles when no reference is given.
        #[arg(long, default_value_t = 1)]
        n_styles: usize,
    },
    /// Renders an interpolation sequence.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: InterpMode,
        /// First content image (domain A for cross-domain mode).
        #[arg(long)]
        x1: PathBuf,
        /// Second content image (domain B for cross-domain mode); unused in style mode.
        #[arg(long)]
        x2: Option<PathBuf>,
        /// Reference style image; in style mode a second sampled style is
        /// used when omitted.
        #[arg(long)]
        style: Option<PathBuf>,
        /// Source domain of the content images (style and content modes).
        #[arg(long, value_enum, default_value = "a")]
        src: Domain,
        /// Domain the frames are rendered in.
        #[arg(long, value_enum, default_value = "b")]
        dst: Domain,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Example-guided FID on the test split.
    EvalFid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        src: Domain,
        #[arg(long, value_enum)]
        dst: Domain,
    },
    /// Paired-output diversity on the test split.
    EvalDiversity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        src: Domain,
        #[arg(long, value_enum)]
        dst: Domain,
    },
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Dataset(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn effective_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg = cfg.with_file(path)?;
    }
    let sets = common
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()?;
    cfg = cfg.with_overrides(sets.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_overrides([("seed", toml::Value::Integer(seed_to_i64(seed)?))])?;
    }
    cfg.validate()?;
    cfg.echo_to(&common.out)?;
    Ok(cfg)
}

fn seed_to_i64(seed: u64) -> CliResult<i64> {
    i64::try_from(seed).map_err(|_| CliError::usage(format!("seed {seed} is too large")))
}

fn dataset(root: &Path, cfg: &RunConfig) -> CliResult<DatasetSpec> {
    let spec = DatasetSpec::new(root, cfg.augment(), cfg.seed);
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(spec)
}

fn load_checkpoint_model(path: &Path) -> CliResult<Model> {
    if !path.is_file() {
        return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(checkpoint::load_model(path)?)
}

/// Loads one image or every image of a folder, resized to the model size.
fn load_images(path: &Path, size: usize) -> CliResult<ImageBatch> {
    if !path.exists() {
        return Err(CliError::usage(format!("{} not found", path.display())));
    }
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let s = size as u32;
    let imgs = files
        .iter()
        .map(|f| {
            let img = image::open(f).map_err(Error::from)?.to_rgb8();
            Ok(if img.dimensions() == (s, s) {
                img
            } else {
                image::imageops::resize(&img, s, s, FilterType::Triangle)
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if imgs.is_empty() {
        return Err(CliError::usage(format!("no images in {}", path.display())));
    }
    Ok(data::images_to_batch(&imgs)?)
}

fn cmd_make_toy(out: &Path, n: usize, n_test: Option<usize>, image_size: usize, seed: u64) -> CliResult<()> {
    let mut spec = ToySpec::new(n, image_size, seed);
    if let Some(k) = n_test {
        spec.n_test = k;
    }
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let records = data::make_toy_dataset(&spec, out)?;
    println!("wrote {} images and {} to {}", records.len(), data::MANIFEST_FILE, out.display());
    Ok(())
}

fn cmd_train(common: &Common, data_root: &Path, resume: Option<&Path>) -> CliResult<()> {
    let cfg = effective_config(common)?;
    let spec = dataset(data_root, &cfg)?;
    let train = cfg.train_config();
    let mut state = match resume {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
            }
            let (state, _) = checkpoint::load(path)?;
            if state.model.config() != &cfg.model_config() {
                return Err(CliError::usage("the resumed checkpoint was trained with a different model configuration"));
            }
            state
        }
        None => ModelState::new(cfg.model_config(), train.adam())?,
    };
    let pool_a = ImagePool::load(&spec, Split::Train, DomainId::A)?;
    let pool_b = ImagePool::load(&spec, Split::Train, DomainId::B)?;
    let run = RunDir::new(&common.out)?;
    let start = state.step;
    let reports = fit(&mut state, &pool_a, &pool_b, &train, Some(&run))?;
    match reports.last() {
        Some(r) => println!("trained steps {}..={}: {}", start + 1, r.step, r.to_log_line()),
        None => println!("checkpoint already at step {start}; nothing to do"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_translate(
    common: &Common,
    ckpt: &Path,
    input: &Path,
    style: Option<&Path>,
    src: DomainId,
    dst: DomainId,
    n_styles: usize,
) -> CliResult<()> {
    let cfg = effective_config(common)?;
    let model = load_checkpoint_model(ckpt)?;
    let size = model.config().image_size;
    let x = load_images(input, size)?;
    let frames = match style {
        Some(path) => {
            let s = load_images(path, size)?;
            let s = if s.batch() == 1 && x.batch() > 1 {
                ImageBatch::concat(&vec![&s; x.batch()])?
            } else {
                s
            };
            if s.batch() != x.batch() {
                return Err(CliError::usage("give one style image or one per content image"));
            }
            vec![inference::example_guided(&model, &x, &s, src, dst)?]
        }
        None => {
            if n_styles == 0 {
                return Err(CliError::usage("--n-styles must be >= 1"));
            }
            inference::multimodal(&model, &x, src, dst, n_styles, cfg.seed)?
        }
    };
    let mode = if style.is_some() { "guided" } else { "multimodal" };
    let written = inference::save_sequence(&common.out, mode, cfg.seed, &frames)?;
    println!("wrote {} images to {}", written.len(), common.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_interpolate(
    common: &Common,
    ckpt: &Path,
    mode: InterpMode,
    x1: &Path,
    x2: Option<&Path>,
    style: Option<&Path>,
    src: DomainId,
    dst: DomainId,
    steps: usize,
) -> CliResult<()> {
    if steps < 2 {
        return Err(CliError::usage(format!("--steps must be >= 2, got {steps}")));
    }
    let cfg = effective_config(common)?;
    let model = load_checkpoint_model(ckpt)?;
    let size = model.config().image_size;
    let x1 = load_images(x1, size)?;
    let (name, frames) = match mode {
        InterpMode::Style => {
            let n = x1.batch();
            let s1 = match style {
                Some(p) => {
                    let s = load_images(p, size)?;
                    let s = ImageBatch::concat(&vec![&s.slice(0, 1)?; n])?;
                    model.encode_style(&s, dst)?
                }
                None => model.sample_style(n, cfg.seed)?,
            };
            let s2 = model.sample_style(n, cfg.seed.wrapping_add(1))?;
            ("style", inference::interpolate_style(&model, &x1, src, &s1, &s2, steps, dst)?)
        }
        InterpMode::Content => {
            let x2 = load_images(need(x2, "--x2")?, size)?;
            let s = load_images(need(style, "--style")?, size)?;
            ("content", inference::interpolate_content(&model, &x1, &x2, &s, src, steps)?)
        }
        InterpMode::CrossDomain => {
            let x2 = load_images(need(x2, "--x2")?, size)?;
            let s = load_images(need(style, "--style")?, size)?;
            (
                "cross",
                inference::interpolate_content_cross_domain(&model, &x1, &x2, &s, dst, steps)?,
            )
        }
    };
    let written = inference::save_sequence(&common.out, name, cfg.seed, &frames)?;
    println!("wrote {} images to {}", written.len(), common.out.display());
    Ok(())
}

fn need<'a>(p: Option<&'a Path>, what: &str) -> CliResult<&'a Path> {
    p.ok_or_else(|| CliError::usage(format!("{what} is required in this mode")))
}

fn cmd_eval_fid(common: &Common, ckpt: &Path, data_root: &Path, src: DomainId, dst: DomainId) -> CliResult<()> {
    let cfg = effective_config(common)?;
    let model = load_checkpoint_model(ckpt)?;
    let spec = dataset(data_root, &cfg)?;
    let content = ImagePool::load(&spec, Split::Test, src)?;
    let real = ImagePool::load(&spec, Split::Test, dst)?;
    let extractor = RandomConvExtractor::new(cfg.eval.extractor_seed);
    let report = fid_protocol(&model, &content, &real, &cfg.fid_protocol(), &extractor)?;
    let path = common.out.join("fid.toml");
    fs::write(&path, report.to_text()?).map_err(|e| Error::io(&path, e))?;
    println!("FID {src}->{dst}: {} +- {}", report.mean, report.std);
    Ok(())
}

fn cmd_eval_diversity(common: &Common, ckpt: &Path, data_root: &Path, src: DomainId, dst: DomainId) -> CliResult<()> {
    let cfg = effective_config(common)?;
    let model = load_checkpoint_model(ckpt)?;
    let spec = dataset(data_root, &cfg)?;
    let pool = ImagePool::load(&spec, Split::Test, src)?;
    let all: Vec<usize> = (0..pool.len()).collect();
    let x = pool.get(&all)?;
    let extractor = RandomConvExtractor::new(cfg.eval.extractor_seed);
    let score = diversity_score(&model, &x, src, dst, cfg.eval.n_pairs, &extractor, cfg.seed)?;
    let path = common.out.join("diversity.toml");
    let text = format!(
        "src = \"{src}\"\ndst = \"{dst}\"\nextractor = \"{}\"\nn_content = {}\nn_pairs = {}\nseed = {}\nscore = {score}\n",
        crate::evaluation::FeatureExtractor::id(&extractor),
        x.batch(),
        cfg.eval.n_pairs,
        cfg.seed
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("diversity {src}->{dst}: {score}");
    Ok(())
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::MakeToy {
            out,
            n,
            n_test,
            image_size,
            seed,
        } => cmd_make_toy(&out, n, n_test, image_size, seed),
        Command::Train { common, data, resume } => cmd_train(&common, &data, resume.as_deref()),
        Command::Translate {
            common,
            checkpoint,
            input,
            style,
            src,
            dst,
            n_styles,
        } => cmd_translate(&common, &checkpoint, &input, style.as_deref(), src.into(), dst.into(), n_styles),
        Command::Interpolate {
            common,
            checkpoint,
            mode,
            x1,
            x2,
            style,
            src,
            dst,
            steps,
        } => cmd_interpolate(
            &common,
            &checkpoint,
            mode,
            &x1,
            x2.as_deref(),
            style.as_deref(),
            src.into(),
            dst.into(),
            steps,
        ),
        Command::EvalFid {
            common,
            checkpoint,
            data,
            src,
            dst,
        } => cmd_eval_fid(&common, &checkpoint, &data, src.into(), dst.into()),
        Command::EvalDiversity {
            common,
            checkpoint,
            data,
            src,
            dst,
        } => cmd_eval_diversity(&common, &checkpoint, &data, src.into(), dst.into()),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["dsmap", "no-such-command"]), EXIT_USAGE);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("toy");
        let code = main_with_args(["dsmap", "make-toy", "--out", out.to_str().unwrap(), "--n", "2"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
