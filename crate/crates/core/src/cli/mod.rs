//! Command-line front end. Every stage reads a JSON config, writes its
//! outputs into a fresh directory next to a `resolved_config.json`, and maps
//! failures to an error class and exit code.

mod stages;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "hvla", version, about = "Motion tokenization, dataset building and motion language model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub(crate) struct Common {
    /// JSON config; keys it omits take the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Must not exist or be empty.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from the tiny smoke-test profile instead of the full defaults.
    #[arg(long)]
    smoke: bool,
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural motion corpus.
    Synth(Common),
    /// Make low-tier copies of clips with positional noise and no captions.
    Degrade(Common),
    /// Train the five part codecs.
    TrainVq(Common),
    /// Tokenize clips and write their reconstructions.
    Tokenize(Common),
    /// Build the unified vocabulary.
    BuildVocab(Common),
    /// Instantiate templates into a prompt/answer dataset.
    Augment(Common),
    /// Train the motion language model.
    TrainLm(Common),
    /// Train vision adapters on the toy scene task against a frozen model.
    FinetuneVla(Common),
    /// Decode motion from prompts.
    Generate(Common),
    /// Fit robot joint parameters to keypoint clips.
    Retarget(Common),
    /// Score predicted clips against references.
    Eval(Common),
    /// Summarize a clip directory.
    Stats(Common),
}

/// Failure classes with distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Class {
    Config,
    MissingArtifact,
    Divergence,
    Io,
    Invalid,
}

impl Class {
    fn name(self) -> &'static str {
        match self {
            Class::Config => "config-schema",
            Class::MissingArtifact => "missing-artifact",
            Class::Divergence => "numeric-divergence",
            Class::Io => "io",
            Class::Invalid => "invalid-input",
        }
    }

    fn code(self) -> i32 {
        match self {
            Class::Config => 2,
            Class::MissingArtifact => 3,
            Class::Divergence => 4,
            Class::Io => 5,
            Class::Invalid => 1,
        }
    }
}

/// A CLI-level failure with an explicit class.
#[derive(Debug)]
pub(crate) struct CliError {
    pub class: Class,
    pub msg: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

pub(crate) fn fail(class: Class, msg: impl Into<String>) -> anyhow::Error {
    CliError { class, msg: msg.into() }.into()
}

fn classify(err: &anyhow::Error) -> Class {
    use hvla::Error as E;
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.class;
        }
        if let Some(e) = cause.downcast_ref::<hvla::Error>() {
            return match e {
                E::Config(_) => Class::Config,
                E::MissingArtifact(_) => Class::MissingArtifact,
                E::Divergence { .. } | E::NonFinite(_) => Class::Divergence,
                E::Io(_) => Class::Io,
                _ => Class::Invalid,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Class::Io;
        }
    }
    Class::Invalid
}

/// Parses arguments, runs the stage and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Synth(c)
        | Command::Degrade(c)
        | Command::TrainVq(c)
        | Command::TrainLm(c)
        | Command::Tokenize(c)
        | Command::BuildVocab(c)
        | Command::Augment(c)
        | Command::FinetuneVla(c)
        | Command::Generate(c)
        | Command::Retarget(c)
        | Command::Eval(c)
        | Command::Stats(c) => c.clone(),
    };
    env_logger::Builder::new().filter_level(common.log_level).format_timestamp(None).init();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Synth(c) => execute::<stages::SynthConfig>(&c, stages::synth),
        Command::Degrade(c) => execute::<stages::DegradeConfig>(&c, stages::degrade),
        Command::TrainVq(c) => execute::<stages::TrainVqConfig>(&c, stages::train_vq),
        Command::Tokenize(c) => execute::<stages::TokenizeConfig>(&c, stages::tokenize),
        Command::BuildVocab(c) => execute::<stages::BuildVocabConfig>(&c, stages::build_vocab),
        Command::Augment(c) => execute::<stages::AugmentConfig>(&c, stages::augment),
        Command::TrainLm(c) => execute::<stages::TrainLmConfig>(&c, stages::train_lm),
        Command::FinetuneVla(c) => execute::<stages::FinetuneVlaConfig>(&c, stages::finetune_vla),
        Command::Generate(c) => execute::<stages::GenerateConfig>(&c, stages::generate),
        Command::Retarget(c) => execute::<stages::RetargetConfig>(&c, stages::retarget),
        Command::Eval(c) => execute::<stages::EvalRunConfig>(&c, stages::eval),
        Command::Stats(c) => execute::<stages::StatsConfig>(&c, stages::stats),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let class = classify(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", class.name());
            class.code()
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("HVLA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(Class::Config, format!("HVLA_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    Ok(())
}

/// A stage's config: defaults for the full and smoke profiles, and the seed
/// plumbing.
pub(crate) trait StageConfig: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;

    fn smoke() -> Self {
        Self::default()
    }

    /// The master seed, for stages that draw random numbers.
    fn seed_mut(&mut self) -> Option<&mut u64> {
        None
    }

    /// Pushes the master seed into nested configs and checks the result.
    fn resolve(&mut self) -> anyhow::Result<()> {
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base`. Objects merge key by key; any
/// other value replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn load_config<C: StageConfig>(common: &Common) -> anyhow::Result<C> {
    let defaults = if common.smoke { C::smoke() } else { C::default() };
    let mut value = serde_json::to_value(&defaults)?;
    if let Some(path) = &common.config {
        if !path.exists() {
            return Err(hvla::Error::MissingArtifact(path.clone()).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| fail(Class::Config, format!("{} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(fail(Class::Config, format!("{} must hold a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    let mut cfg: C =
        serde_json::from_value(value).map_err(|e| fail(Class::Config, format!("{} config: {e}", C::NAME)))?;
    if let Some(seed) = common.seed {
        match cfg.seed_mut() {
            Some(slot) => *slot = seed,
            None => log::warn!("{} draws no random numbers; --seed is ignored", C::NAME),
        }
    }
    cfg.resolve()?;
    Ok(cfg)
}

/// Creates `dir`, refusing to reuse a non-empty one.
fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() {
        let empty = dir.is_dir() && std::fs::read_dir(dir)?.next().is_none();
        if !empty {
            return Err(fail(Class::Io, format!("output path {} already exists and is not empty", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Resolved<'a, C> {
    subcommand: &'a str,
    version: &'a str,
    smoke: bool,
    log_level: String,
    config: &'a C,
}

fn execute<C: StageConfig>(common: &Common, stage: fn(&C, &Path) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let cfg: C = load_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(C::NAME));
    let created = !out.exists();
    prepare_out(&out)?;
    let result = run_stage(common, &cfg, &out, stage);
    if result.is_err() {
        // Leave no partial outputs behind; the directory was empty or absent.
        let cleanup = if created { std::fs::remove_dir_all(&out) } else { clear_dir(&out) };
        if let Err(e) = cleanup {
            log::warn!("could not clean up {}: {e}", out.display());
        }
    }
    result
}

fn clear_dir(dir: &Path) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            std::fs::remove_dir_all(p)?;
        } else {
            std::fs::remove_file(p)?;
        }
    }
    Ok(())
}

fn run_stage<C: StageConfig>(
    common: &Common,
    cfg: &C,
    out: &Path,
    stage: fn(&C, &Path) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let resolved = Resolved {
        subcommand: C::NAME,
        version: env!("CARGO_PKG_VERSION"),
        smoke: common.smoke,
        log_level: common.log_level.to_string(),
        config: cfg,
    };
    stages::write_json(&out.join("resolved_config.json"), &resolved)?;
    log::info!("{}: writing to {}", C::NAME, out.display());
    stage(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overlays_nested_objects() {
        let mut base = serde_json::json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, serde_json::json!({"b": {"d": 4}, "e": [1]}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": {"c": 2, "d": 4}, "e": [1]}));
    }

    #[test]
    fn library_errors_map_to_classes() {
        let e: anyhow::Error = hvla::Error::MissingArtifact("x".into()).into();
        assert_eq!(classify(&e.context("loading")), Class::MissingArtifact);
        let e: anyhow::Error = hvla::Error::Divergence { step: 3, what: "loss".into() }.into();
        assert_eq!(classify(&e).code(), 4);
        assert_eq!(classify(&fail(Class::Config, "bad")).code(), 2);
        let e: anyhow::Error = std::io::Error::other("disk").into();
        assert_eq!(classify(&e).code(), 5);
    }
}
