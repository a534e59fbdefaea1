use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::instantiate::{instantiate, AugmentOptions, QAPair};
use super::template::Template;
use crate::corpus::ClipRecord;
use crate::error::{Error, Result};
use crate::partvq::TokenSequence;
use crate::rng::{self, derive_seed};
use crate::uvocab::UnifiedVocab;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clips: usize,
    pub pairs: usize,
    pub per_task: BTreeMap<String, usize>,
    /// Skipped (clip, template) draws by reason.
    pub skipped: BTreeMap<String, usize>,
    /// Token counts by kind over all prompts and answers.
    pub token_kinds: BTreeMap<String, usize>,
    pub max_prompt_len: usize,
    pub max_answer_len: usize,
}

fn skip_reason(e: &Error) -> &'static str {
    match e {
        Error::Precondition(m) if m.contains("caption") => "missing caption",
        Error::Precondition(m) if m.contains("short") => "clip too short",
        Error::Precondition(_) => "precondition",
        _ => "vocabulary",
    }
}

/// Draws `quota` templates per clip and instantiates them. Clips are ordered
/// by clip id; clip `i` uses seed `derive_seed(master, i)` and its `q`-th draw
/// uses `derive_seed(clip_seed, q)`. Draws whose preconditions fail are
/// skipped and counted.
pub fn build_dataset(
    clips: &[(ClipRecord, TokenSequence)],
    templates: &[Template],
    vocab: &UnifiedVocab,
    quota: usize,
    master_seed: u64,
    options: &AugmentOptions,
) -> Result<(Vec<QAPair>, DatasetStats)> {
    let mut order: Vec<&(ClipRecord, TokenSequence)> = clips.iter().collect();
    order.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));
    if templates.is_empty() {
        return Ok((Vec::new(), DatasetStats { clips: clips.len(), ..Default::default() }));
    }
    let per_clip: Vec<Vec<Result<QAPair>>> = order
        .par_iter()
        .enumerate()
        .map(|(i, (clip, tokens))| {
            let clip_seed = derive_seed(master_seed, i as u64);
            (0..quota)
                .map(|q| {
                    let seed = derive_seed(clip_seed, q as u64);
                    let tpl = &templates[rng::rng(seed).random_range(0..templates.len())];
                    instantiate(tpl, clip, tokens, vocab, options, seed)
                })
                .collect()
        })
        .collect();

    let mut stats = DatasetStats { clips: clips.len(), ..Default::default() };
    let mut pairs = Vec::new();
    for r in per_clip.into_iter().flatten() {
        match r {
            Ok(p) => {
                *stats.per_task.entry(p.task.clone()).or_default() += 1;
                for &id in p.prompt_ids.iter().chain(&p.answer_ids) {
                    *stats.token_kinds.entry(vocab.kind(id)?.class().to_string()).or_default() += 1;
                }
                stats.max_prompt_len = stats.max_prompt_len.max(p.prompt_ids.len());
                stats.max_answer_len = stats.max_answer_len.max(p.answer_ids.len());
                pairs.push(p);
            }
            Err(e @ (Error::Precondition(_) | Error::Vocabulary(_))) => {
                *stats.skipped.entry(skip_reason(&e).to_string()).or_default() += 1;
            }
            Err(e) => return Err(e),
        }
    }
    stats.pairs = pairs.len();
    for (reason, n) in &stats.skipped {
        log::info!("skipped {n} draws: {reason}");
    }
    Ok((pairs, stats))
}

pub fn write_jsonl(path: &Path, pairs: &[QAPair]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QAPair>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
