use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};

use hvla::augment::{
    build_dataset, default_templates, lm_prompt, lm_record, load_templates, parse_motion_stream, read_jsonl,
    vocab_texts, write_jsonl, AugmentOptions, Template,
};
use hvla::corpus::{
    degrade_clip, generate_corpus, list_clip_files, load_corpus, save_clip, ClipRecord, CorpusManifest,
    GenParams, GeneratorConfig, MotionFamily, QualityTier,
};
use hvla::metrics::{self, MetricsReport};
use hvla::motion::MotionSequence;
use hvla::partvq::{
    detokenize_sequence, load_codecs, save_codecs, tokenize_sequence, train_vq_with, training_frames, TokenSequence,
    VqConfig,
};
use hvla::retarget::{poses_to_csv, retarget_sequence, PoseParams, RobotSkeleton, SequenceOptions};
use hvla::rng::derive_seed;
use hvla::tinylm::{
    curve_csv, evaluate, generate as lm_generate, load_lm, save_lm, train_with, DecodeConfig, LmParams, LmRecord,
    ModelConfig, TrainConfig,
};
use hvla::uvocab::{TrackBox, UnifiedVocab};
use hvla::visfuse::{
    evaluate_bearing, finetune_with, generate_vla, load_vla, reference_tokens, render_scene, sample_scenes,
    save_scene, save_vla, toy_dataset, toy_instructions, Bearing, FusionParams, ToyTask, VisConfig,
};

use super::{fail, Class, StageConfig};

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, key: &str) -> anyhow::Result<()> {
    if path.as_os_str().is_empty() {
        return Err(fail(Class::Config, format!("`{key}` is required")));
    }
    if !path.exists() {
        return Err(hvla::Error::MissingArtifact(path.to_path_buf()).into());
    }
    Ok(())
}

fn load_clips(dir: &Path, key: &str) -> anyhow::Result<Vec<ClipRecord>> {
    require(dir, key)?;
    if list_clip_files(dir)?.is_empty() {
        return Err(fail(Class::MissingArtifact, format!("no clip files in {}", dir.display())));
    }
    Ok(load_corpus(dir).with_context(|| format!("loading clips from {}", dir.display()))?)
}

fn save_clips(dir: &Path, clips: &[ClipRecord]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    for c in clips {
        save_clip(&dir.join(format!("{}.hvla", c.clip_id)), c, None)?;
    }
    Ok(())
}

fn load_vocab(path: &Path) -> anyhow::Result<UnifiedVocab> {
    require(path, "vocab")?;
    Ok(UnifiedVocab::load(path)?)
}

fn load_templates_or_default(path: &Option<PathBuf>) -> anyhow::Result<Vec<Template>> {
    match path {
        Some(p) => {
            require(p, "templates")?;
            Ok(load_templates(p)?)
        }
        None => Ok(default_templates()),
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct SynthConfig {
    pub generators: Vec<GeneratorConfig>,
    pub seed: u64,
}

fn generators(per_family: &[usize], params: GenParams) -> Vec<GeneratorConfig> {
    MotionFamily::ALL
        .iter()
        .zip(per_family)
        .map(|(&family, &clips)| GeneratorConfig { family, clips, params: params.clone() })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { generators: generators(&[40; 6], GenParams { frames: 90, ..Default::default() }), seed: 0 }
    }
}

impl StageConfig for SynthConfig {
    const NAME: &'static str = "synth";

    fn smoke() -> Self {
        Self { generators: generators(&[4, 4, 3, 3, 3, 3], GenParams { frames: 24, ..Default::default() }), seed: 0 }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

pub(crate) fn synth(cfg: &SynthConfig, out: &Path) -> anyhow::Result<()> {
    let clips = generate_corpus(&cfg.generators, cfg.seed)?;
    save_clips(&out.join("clips"), &clips)?;
    let mut manifest = CorpusManifest::from_clips(&clips);
    manifest.generators = cfg.generators.clone();
    manifest.master_seed = Some(cfg.seed);
    write_json(&out.join("manifest.json"), &manifest)?;
    print!("{}", manifest.render_table());
    Ok(())
}

// ---------------------------------------------------------------- degrade

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct DegradeConfig {
    pub clips: PathBuf,
    /// Positional noise in meters.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self { clips: PathBuf::new(), noise_std: 0.01, seed: 0 }
    }
}

impl StageConfig for DegradeConfig {
    const NAME: &'static str = "degrade";

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

pub(crate) fn degrade(cfg: &DegradeConfig, out: &Path) -> anyhow::Result<()> {
    let clips = load_clips(&cfg.clips, "clips")?;
    let low = clips
        .iter()
        .enumerate()
        .map(|(i, c)| degrade_clip(c, cfg.noise_std, derive_seed(cfg.seed, i as u64)))
        .collect::<hvla::Result<Vec<_>>>()?;
    save_clips(&out.join("clips"), &low)?;
    let manifest = CorpusManifest::from_clips(&low);
    write_json(&out.join("manifest.json"), &manifest)?;
    print!("{}", manifest.render_table());
    Ok(())
}

// ---------------------------------------------------------------- train-vq

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct TrainVqConfig {
    pub clips: PathBuf,
    /// Master seed; overrides `vq.seed`.
    pub seed: u64,
    pub vq: VqConfig,
}

impl Default for TrainVqConfig {
    fn default() -> Self {
        Self { clips: PathBuf::new(), seed: 0, vq: VqConfig::default() }
    }
}

impl StageConfig for TrainVqConfig {
    const NAME: &'static str = "train-vq";

    fn smoke() -> Self {
        Self { vq: VqConfig { codebook_size: 16, latent_dim: 8, steps: 400, ..Default::default() }, ..Default::default() }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }

    fn resolve(&mut self) -> anyhow::Result<()> {
        self.vq.seed = self.seed;
        self.vq.validate()?;
        Ok(())
    }
}

pub(crate) fn train_vq(cfg: &TrainVqConfig, out: &Path) -> anyhow::Result<()> {
    let clips = load_clips(&cfg.clips, "clips")?;
    let frames = training_frames(&clips);
    let every = (cfg.vq.steps / 10).max(1);
    let (codecs, report) = train_vq_with(&frames, &cfg.vq, |step, l| {
        if step % every == 0 {
            log::info!("step {step}: rec {:.5} total {:.5}", l.rec, l.total);
        }
    })?;
    save_codecs(&out.join("codecs.hvq"), &codecs)?;
    let mut csv = String::from("step,rec,emb,com,total\n");
    for (i, l) in report.curve.iter().enumerate() {
        csv.push_str(&format!("{i},{:.9},{:.9},{:.9},{:.9}\n", l.rec, l.emb, l.com, l.total));
    }
    std::fs::write(out.join("loss_curve.csv"), csv)?;
    write_json(&out.join("vq_report.json"), &report)?;
    println!(
        "rec loss {:.5} -> {:.5}; reconstruction bound {:.3} mm over {} frames",
        report.initial.rec, report.final_loss.rec, report.rec_bound_mm, report.frames
    );
    Ok(())
}

// ---------------------------------------------------------------- tokenize

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct TokenizeConfig {
    pub clips: PathBuf,
    pub codecs: PathBuf,
}

impl StageConfig for TokenizeConfig {
    const NAME: &'static str = "tokenize";
}

/// One line of `tokens.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TokenEntry {
    pub clip_id: String,
    pub tokens: TokenSequence,
}

#[derive(Serialize)]
struct TokenizeReport {
    clips: usize,
    frames: usize,
    /// Distinct codes used by each part.
    codes_used: Vec<usize>,
    codebook_size: usize,
}

pub(crate) fn tokenize(cfg: &TokenizeConfig, out: &Path) -> anyhow::Result<()> {
    let clips = load_clips(&cfg.clips, "clips")?;
    require(&cfg.codecs, "codecs")?;
    let codecs = load_codecs(&cfg.codecs)?;
    let mut lines = String::new();
    let mut detok = Vec::with_capacity(clips.len());
    let mut used = vec![std::collections::BTreeSet::new(); hvla::motion::NUM_PARTS];
    for c in &clips {
        let tokens = tokenize_sequence(&c.sequence, &codecs)?;
        for f in &tokens.frames {
            for (p, &code) in f.0.iter().enumerate() {
                used[p].insert(code);
            }
        }
        detok.push(ClipRecord { sequence: detokenize_sequence(&tokens, &codecs)?, ..c.clone() });
        lines.push_str(&serde_json::to_string(&TokenEntry { clip_id: c.clip_id.clone(), tokens })?);
        lines.push('\n');
    }
    std::fs::write(out.join("tokens.jsonl"), lines)?;
    save_clips(&out.join("detok"), &detok)?;
    let report = TokenizeReport {
        clips: clips.len(),
        frames: clips.iter().map(|c| c.sequence.len()).sum(),
        codes_used: used.iter().map(|s| s.len()).collect(),
        codebook_size: codecs.codebook_size,
    };
    write_json(&out.join("tokenize_report.json"), &report)?;
    println!("tokenized {} clips ({} frames); codes used per part {:?}", report.clips, report.frames, report.codes_used);
    Ok(())
}

fn read_tokens(path: &Path) -> anyhow::Result<BTreeMap<String, TokenSequence>> {
    require(path, "tokens")?;
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e: TokenEntry = serde_json::from_str(line)
            .map_err(|e| fail(Class::Invalid, format!("{} line {}: {e}", path.display(), i + 1)))?;
        map.insert(e.clip_id, e.tokens);
    }
    Ok(map)
}

// ---------------------------------------------------------------- build-vocab

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct BuildVocabConfig {
    /// Clip directory whose captions and durations the word table must cover.
    pub clips: Option<PathBuf>,
    /// Template file; the shipped templates when absent.
    pub templates: Option<PathBuf>,
    /// Codec checkpoint fixing the codebook size; `codebook_size` is used
    /// when absent.
    pub codecs: Option<PathBuf>,
    pub codebook_size: usize,
    pub bins: usize,
    pub track_box: TrackBox,
}

impl Default for BuildVocabConfig {
    fn default() -> Self {
        Self { clips: None, templates: None, codecs: None, codebook_size: 1024, bins: 32, track_box: TrackBox::default() }
    }
}

impl StageConfig for BuildVocabConfig {
    const NAME: &'static str = "build-vocab";

    fn smoke() -> Self {
        Self { codebook_size: 16, bins: 16, ..Default::default() }
    }
}

pub(crate) fn build_vocab(cfg: &BuildVocabConfig, out: &Path) -> anyhow::Result<()> {
    let templates = load_templates_or_default(&cfg.templates)?;
    let clips = match &cfg.clips {
        Some(d) => load_clips(d, "clips")?,
        None => Vec::new(),
    };
    let codebook_size = match &cfg.codecs {
        Some(p) => {
            require(p, "codecs")?;
            load_codecs(p)?.codebook_size
        }
        None => cfg.codebook_size,
    };
    let mut texts = vocab_texts(&templates, &clips);
    texts.extend(toy_instructions().iter().map(|s| s.to_string()));
    let vocab = UnifiedVocab::build(texts.iter().map(|s| s.as_str()), codebook_size, cfg.bins, cfg.track_box)?;
    vocab.save(&out.join("vocab.tsv"))?;
    write_json(&out.join("vocab_sizes.json"), &vocab.sizes())?;
    let s = vocab.sizes();
    println!("vocabulary: {} words, {} motion, {} track, {} special, {} total", s.words, s.motion, s.track, s.special, s.total);
    Ok(())
}

// ---------------------------------------------------------------- augment

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct AugmentConfig {
    pub clips: PathBuf,
    /// `tokens.jsonl` written by `tokenize`.
    pub tokens: PathBuf,
    pub vocab: PathBuf,
    pub templates: Option<PathBuf>,
    /// Template draws per clip.
    pub quota: usize,
    pub seed: u64,
    pub options: AugmentOptions,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            clips: PathBuf::new(),
            tokens: PathBuf::new(),
            vocab: PathBuf::new(),
            templates: None,
            quota: 8,
            seed: 0,
            options: AugmentOptions::default(),
        }
    }
}

impl StageConfig for AugmentConfig {
    const NAME: &'static str = "augment";

    fn smoke() -> Self {
        Self { quota: 3, ..Default::default() }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

pub(crate) fn augment(cfg: &AugmentConfig, out: &Path) -> anyhow::Result<()> {
    let clips = load_clips(&cfg.clips, "clips")?;
    let mut tokens = read_tokens(&cfg.tokens)?;
    let vocab = load_vocab(&cfg.vocab)?;
    let templates = load_templates_or_default(&cfg.templates)?;
    let items = clips
        .into_iter()
        .map(|c| match tokens.remove(&c.clip_id) {
            Some(t) => Ok((c, t)),
            None => Err(fail(Class::MissingArtifact, format!("no tokens for clip {}", c.clip_id))),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (pairs, stats) = build_dataset(&items, &templates, &vocab, cfg.quota, cfg.seed, &cfg.options)?;
    write_jsonl(&out.join("dataset.jsonl"), &pairs)?;
    write_json(&out.join("dataset_stats.json"), &stats)?;
    println!("{} pairs from {} clips across {} task families", stats.pairs, stats.clips, stats.per_task.len());
    Ok(())
}

// ---------------------------------------------------------------- train-lm

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct TrainLmConfig {
    pub vocab: PathBuf,
    pub dataset: PathBuf,
    /// `vocab_size` is taken from the vocabulary.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Master seed; overrides `model.seed` and `train.seed`.
    pub seed: u64,
    /// Use only the first N records.
    pub max_records: Option<usize>,
    /// Skip records longer than the context instead of failing.
    pub drop_overlong: bool,
}

impl Default for TrainLmConfig {
    fn default() -> Self {
        Self {
            vocab: PathBuf::new(),
            dataset: PathBuf::new(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            max_records: None,
            drop_overlong: true,
        }
    }
}

impl StageConfig for TrainLmConfig {
    const NAME: &'static str = "train-lm";

    fn smoke() -> Self {
        Self {
            model: ModelConfig { layers: 2, heads: 4, d_model: 32, d_ff: 128, context: 512, ..Default::default() },
            train: TrainConfig { lr: 3e-3, steps: 300, batch_size: 4, warmup_ratio: 0.02, ..Default::default() },
            ..Default::default()
        }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }

    fn resolve(&mut self) -> anyhow::Result<()> {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainLmReport {
    records: usize,
    dropped_overlong: usize,
    num_params: usize,
    steps: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
    /// Mean answer NLL over the training records after training.
    train_nll: f64,
}

pub(crate) fn train_lm(cfg: &TrainLmConfig, out: &Path) -> anyhow::Result<()> {
    let vocab = load_vocab(&cfg.vocab)?;
    require(&cfg.dataset, "dataset")?;
    let pairs = read_jsonl(&cfg.dataset)?;
    let mut model = cfg.model.clone();
    if model.vocab_size != 0 && model.vocab_size != vocab.len() {
        return Err(fail(
            Class::Config,
            format!("model.vocab_size {} disagrees with the vocabulary ({})", model.vocab_size, vocab.len()),
        ));
    }
    model.vocab_size = vocab.len();
    let take = cfg.max_records.unwrap_or(pairs.len());
    let all: Vec<LmRecord> = pairs
        .iter()
        .take(take)
        .map(|p| {
            let (ids, answer_start) = lm_record(p, &vocab);
            LmRecord { ids, answer_start }
        })
        .collect();
    let (records, dropped): (Vec<LmRecord>, Vec<LmRecord>) =
        all.into_iter().partition(|r| !cfg.drop_overlong || r.ids.len() <= model.context);
    if !dropped.is_empty() {
        log::warn!("dropped {} records longer than the {}-token context", dropped.len(), model.context);
    }
    if records.is_empty() {
        return Err(fail(Class::Invalid, "no training records"));
    }
    let mut params = LmParams::new(&model)?;
    let every = (cfg.train.steps / 10).max(1);
    let curve = train_with(&mut params, &records, &cfg.train, |p| {
        if p.step % every == 0 {
            log::info!("step {}: loss {:.5} lr {:.2e}", p.step, p.loss, p.lr);
        }
    })?;
    save_lm(&out.join("lm.hlm"), &params)?;
    std::fs::write(out.join("loss_curve.csv"), curve_csv(&curve))?;
    let report = TrainLmReport {
        records: records.len(),
        dropped_overlong: dropped.len(),
        num_params: hvla::params::ParamSet::num_params(&params),
        steps: curve.len(),
        first_loss: curve.first().map(|c| c.loss),
        last_loss: curve.last().map(|c| c.loss),
        train_nll: evaluate(&params, &records, cfg.train.loss_on_prompt)?,
    };
    write_json(&out.join("train_report.json"), &report)?;
    println!("{} records, {} steps; answer NLL {:.5}", report.records, report.steps, report.train_nll);
    Ok(())
}

// ---------------------------------------------------------------- finetune-vla

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct FinetuneVlaConfig {
    pub vocab: PathBuf,
    pub lm: PathBuf,
    /// Codecs that tokenize the reference motions.
    pub codecs: PathBuf,
    pub task: ToyTask,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Frames of reference motion per answer.
    pub frames: usize,
    pub vision: VisConfig,
    pub train: TrainConfig,
    /// Master seed; overrides `vision.seed` and `train.seed` and draws the scenes.
    pub seed: u64,
    /// Number of training scenes written out as images.
    pub write_scenes: usize,
}

impl Default for FinetuneVlaConfig {
    fn default() -> Self {
        Self {
            vocab: PathBuf::new(),
            lm: PathBuf::new(),
            codecs: PathBuf::new(),
            task: ToyTask::Turn,
            train_scenes: 400,
            test_scenes: 100,
            frames: 4,
            vision: VisConfig::default(),
            train: TrainConfig { lr: 3e-3, steps: 600, batch_size: 8, ..Default::default() },
            seed: 0,
            write_scenes: 8,
        }
    }
}

impl StageConfig for FinetuneVlaConfig {
    const NAME: &'static str = "finetune-vla";

    fn smoke() -> Self {
        Self {
            train_scenes: 100,
            test_scenes: 40,
            train: TrainConfig { lr: 3e-3, steps: 300, batch_size: 8, ..Default::default() },
            write_scenes: 4,
            ..Default::default()
        }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }

    fn resolve(&mut self) -> anyhow::Result<()> {
        self.vision.seed = self.seed;
        self.train.seed = self.seed;
        self.train.validate()?;
        if self.frames == 0 {
            return Err(fail(Class::Config, "frames must be positive"));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct FinetuneVlaSummary {
    task: ToyTask,
    train_scenes: usize,
    before: hvla::visfuse::BearingEval,
    after: hvla::visfuse::BearingEval,
    base_checksum_before: String,
    base_checksum_after: String,
    last_loss: Option<f64>,
}

pub(crate) fn finetune_vla(cfg: &FinetuneVlaConfig, out: &Path) -> anyhow::Result<()> {
    let vocab = load_vocab(&cfg.vocab)?;
    require(&cfg.lm, "lm")?;
    let base = load_lm(&cfg.lm)?;
    require(&cfg.codecs, "codecs")?;
    let codecs = load_codecs(&cfg.codecs)?;
    let refs = reference_tokens(cfg.task, cfg.frames, &codecs)?;
    for (i, a) in refs.iter().enumerate() {
        for b in &refs[i + 1..] {
            if a.1[0] == b.1[0] {
                log::warn!("{} and {} reference motions share their first-frame codes", a.0, b.0);
            }
        }
    }
    let train_set = sample_scenes(cfg.train_scenes, derive_seed(cfg.seed, 0));
    let test_set = sample_scenes(cfg.test_scenes, derive_seed(cfg.seed, 1));
    let data = toy_dataset(cfg.task, &train_set, &refs, &vocab)?;
    let scene_dir = out.join("scenes");
    std::fs::create_dir_all(&scene_dir)?;
    for (i, r) in data.iter().take(cfg.write_scenes).enumerate() {
        save_scene(&scene_dir, &format!("train_{i:03}"), &r.image)?;
    }
    let mut fusion = FusionParams::new(&cfg.vision, &base.config)?;
    let before = evaluate_bearing(&base, &fusion, &vocab, cfg.task, &test_set, &refs)?;
    let every = (cfg.train.steps / 10).max(1);
    let report = finetune_with(&base, &mut fusion, &data, &cfg.train, |p| {
        if p.step % every == 0 {
            log::info!("step {}: loss {:.5}", p.step, p.loss);
        }
    })?;
    let after = evaluate_bearing(&base, &fusion, &vocab, cfg.task, &test_set, &refs)?;
    save_vla(&out.join("vla.hva"), &base, &fusion)?;
    std::fs::write(out.join("loss_curve.csv"), curve_csv(&report.curve))?;
    let summary = FinetuneVlaSummary {
        task: cfg.task,
        train_scenes: data.len(),
        before,
        after,
        base_checksum_before: report.base_checksum_before.clone(),
        base_checksum_after: report.base_checksum_after.clone(),
        last_loss: report.curve.last().map(|c| c.loss),
    };
    write_json(&out.join("finetune_report.json"), &summary)?;
    println!(
        "held-out bearing accuracy {:.1}% -> {:.1}% over {} scenes",
        100.0 * summary.before.accuracy,
        100.0 * summary.after.accuracy,
        summary.after.scenes
    );
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SceneSpec {
    pub bearing: Bearing,
    pub distance: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct GenerateConfig {
    pub vocab: PathBuf,
    /// Language-model checkpoint; exclusive with `vla`.
    pub lm: Option<PathBuf>,
    /// Fine-tuned vision checkpoint; needs `scene`.
    pub vla: Option<PathBuf>,
    pub scene: Option<SceneSpec>,
    /// When set, motion answers are decoded to clips.
    pub codecs: Option<PathBuf>,
    pub prompts: Vec<String>,
    pub decode: DecodeConfig,
    /// Master seed; prompt `i` samples with `derive_seed(seed, i)`.
    pub seed: u64,
    /// Frame rate of decoded clips.
    pub fps: u32,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            vocab: PathBuf::new(),
            lm: None,
            vla: None,
            scene: None,
            codecs: None,
            prompts: Vec::new(),
            decode: DecodeConfig::default(),
            seed: 0,
            fps: 30,
        }
    }
}

impl StageConfig for GenerateConfig {
    const NAME: &'static str = "generate";

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }

    fn resolve(&mut self) -> anyhow::Result<()> {
        match (&self.lm, &self.vla) {
            (Some(_), Some(_)) | (None, None) => Err(fail(Class::Config, "set exactly one of `lm` and `vla`")),
            (None, Some(_)) if self.scene.is_none() => Err(fail(Class::Config, "`vla` needs a `scene`")),
            _ if self.prompts.is_empty() => Err(fail(Class::Config, "`prompts` is empty")),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct GenerationLine {
    prompt: String,
    ids: Vec<u32>,
    text: String,
    stopped_at_eos: bool,
    motion_frames: Option<usize>,
}

pub(crate) fn generate(cfg: &GenerateConfig, out: &Path) -> anyhow::Result<()> {
    let vocab = load_vocab(&cfg.vocab)?;
    let codecs = match &cfg.codecs {
        Some(p) => {
            require(p, "codecs")?;
            Some(load_codecs(p)?)
        }
        None => None,
    };
    let (base, vla) = match (&cfg.lm, &cfg.vla) {
        (Some(p), _) => {
            require(p, "lm")?;
            (load_lm(p)?, None)
        }
        (None, Some(p)) => {
            require(p, "vla")?;
            let (b, f) = load_vla(p)?;
            let s = cfg.scene.as_ref().expect("checked in resolve");
            let img = render_scene(s.bearing, s.distance, s.seed)?;
            save_scene(out, "scene", &img)?;
            (b, Some((f, img)))
        }
        (None, None) => unreachable!("checked in resolve"),
    };
    let clip_dir = out.join("clips");
    let mut lines = String::new();
    for (i, text) in cfg.prompts.iter().enumerate() {
        let prompt = lm_prompt(&vocab.encode_text(text)?, &vocab);
        let dc = DecodeConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.decode.clone() };
        let g = match &vla {
            Some((fusion, img)) => generate_vla(&base, fusion, &vocab, img, &prompt, &dc)?,
            None => lm_generate(&base, &vocab, &prompt, &dc, None)?,
        };
        let motion = parse_motion_stream(&g.ids, &vocab).ok().filter(|f| !f.is_empty());
        if let (Some(frames), Some(codecs)) = (&motion, &codecs) {
            let tokens = TokenSequence { fps: cfg.fps, frames: frames.clone(), root: Vec::new() };
            let clip = ClipRecord {
                clip_id: format!("gen_{i:03}"),
                sequence: detokenize_sequence(&tokens, codecs)?,
                caption: Some(text.clone()),
                quality_tier: QualityTier::High,
                family: "generated".into(),
                seed: dc.seed,
            };
            save_clips(&clip_dir, std::slice::from_ref(&clip))?;
        }
        let line = GenerationLine {
            prompt: text.clone(),
            text: vocab.render(&g.ids)?,
            ids: g.ids,
            stopped_at_eos: g.stopped_at_eos,
            motion_frames: motion.map(|m| m.len()),
        };
        println!("[{i}] {} -> {}", line.prompt, line.text);
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    std::fs::write(out.join("generations.jsonl"), lines)?;
    Ok(())
}

// ---------------------------------------------------------------- retarget

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct RetargetConfig {
    pub clips: PathBuf,
    /// Robot description; the shipped 24-joint humanoid when absent.
    pub skeleton: Option<PathBuf>,
    pub options: SequenceOptions,
    pub max_clips: Option<usize>,
    /// Retarget only the first N frames of each clip.
    pub max_frames: Option<usize>,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self { clips: PathBuf::new(), skeleton: None, options: SequenceOptions::default(), max_clips: None, max_frames: None }
    }
}

impl StageConfig for RetargetConfig {
    const NAME: &'static str = "retarget";

    fn smoke() -> Self {
        Self { max_clips: Some(2), max_frames: Some(12), ..Default::default() }
    }
}

#[derive(Serialize)]
struct RetargetClipSummary {
    clip_id: String,
    frames: usize,
    mean_residual_mm: f64,
    max_residual_mm: f64,
    total_iterations: usize,
}

pub(crate) fn retarget(cfg: &RetargetConfig, out: &Path) -> anyhow::Result<()> {
    let clips = load_clips(&cfg.clips, "clips")?;
    let skeleton = match &cfg.skeleton {
        Some(p) => {
            require(p, "skeleton")?;
            RobotSkeleton::load(p)?
        }
        None => RobotSkeleton::humanoid24(),
    };
    let init = PoseParams::rest(&skeleton);
    let pose_dir = out.join("poses");
    std::fs::create_dir_all(&pose_dir)?;
    let mut summaries = Vec::new();
    for c in clips.iter().take(cfg.max_clips.unwrap_or(usize::MAX)) {
        let n = cfg.max_frames.unwrap_or(c.sequence.len()).min(c.sequence.len());
        let seq = MotionSequence::new(c.sequence.fps(), c.sequence.frames()[..n].to_vec())?;
        let (poses, report) = retarget_sequence(&seq, &skeleton, &init, &cfg.options)?;
        std::fs::write(pose_dir.join(format!("{}.csv", c.clip_id)), poses_to_csv(&skeleton, &poses))?;
        println!("{}: {} frames, mean residual {:.2} mm", c.clip_id, n, report.mean_residual_mm);
        summaries.push(RetargetClipSummary {
            clip_id: c.clip_id.clone(),
            frames: n,
            mean_residual_mm: report.mean_residual_mm,
            max_residual_mm: report.max_residual_mm,
            total_iterations: report.total_iterations,
        });
    }
    write_json(&out.join("retarget_report.json"), &summaries)?;
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct EvalRunConfig {
    /// Predicted clips, paired with references by clip id.
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub metrics: metrics::EvalConfig,
    /// Master seed; overrides the feature and diversity seeds.
    pub seed: u64,
}

impl StageConfig for EvalRunConfig {
    const NAME: &'static str = "eval";

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }

    fn resolve(&mut self) -> anyhow::Result<()> {
        self.metrics.features.seed = self.seed;
        self.metrics.diversity_seed = self.seed;
        Ok(())
    }
}

pub(crate) fn eval(cfg: &EvalRunConfig, out: &Path) -> anyhow::Result<()> {
    let pred = load_clips(&cfg.pred, "pred")?;
    let gt = load_clips(&cfg.gt, "gt")?;
    let gt_by_id: BTreeMap<&str, &ClipRecord> = gt.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let mut p_seq = Vec::with_capacity(pred.len());
    let mut g_seq = Vec::with_capacity(pred.len());
    for p in &pred {
        let g = gt_by_id
            .get(p.clip_id.as_str())
            .ok_or_else(|| fail(Class::Invalid, format!("no reference clip with id {}", p.clip_id)))?;
        p_seq.push(p.sequence.clone());
        g_seq.push(g.sequence.clone());
    }
    if pred.len() != gt.len() {
        log::warn!("{} reference clips have no prediction", gt.len() - pred.len());
    }
    let report: MetricsReport = metrics::evaluate(&p_seq, &g_seq, &cfg.metrics)?;
    write_json(&out.join("metrics.json"), &report)?;
    print!("{}", report.render_table());
    Ok(())
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct StatsConfig {
    pub clips: PathBuf,
}

impl StageConfig for StatsConfig {
    const NAME: &'static str = "stats";
}

pub(crate) fn stats(cfg: &StatsConfig, out: &Path) -> anyhow::Result<()> {
    require(&cfg.clips, "clips")?;
    let manifest = hvla::corpus::corpus_stats(&cfg.clips)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    print!("{}", manifest.render_table());
    for (file, why) in &manifest.unreadable {
        log::warn!("unreadable: {file}: {why}");
    }
    Ok(())
}
