//! Synthetic motion corpus: procedural clip families, clip files, and
//! per-tier dataset statistics.

mod generate;
mod io;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generate::{degrade_clip, generate_clip, keypoints_of, GenParams, MotionFamily, PELVIS_HEIGHT};
pub use io::{
    clip_from_json, clip_to_json, decode_binary, encode_binary, list_clip_files, load_clip, load_corpus, save_clip,
    ClipFormat, ClipJson, CLIP_MAGIC, CLIP_VERSION,
};

use crate::error::Result;
use crate::motion::MotionSequence;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityTier {
    Low,
    High,
}

impl QualityTier {
    pub fn name(self) -> &'static str {
        match self {
            QualityTier::Low => "low",
            QualityTier::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub sequence: MotionSequence,
    pub caption: Option<String>,
    pub quality_tier: QualityTier,
    pub family: String,
    pub seed: u64,
}

/// One generator entry of a corpus recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub family: MotionFamily,
    pub clips: usize,
    #[serde(default)]
    pub params: GenParams,
}

/// Generates `clips` clips per generator entry. Clip `i` of the whole recipe
/// uses seed `derive_seed(master_seed, i)`, so any subset can be regenerated
/// independently.
pub fn generate_corpus(generators: &[GeneratorConfig], master_seed: u64) -> Result<Vec<ClipRecord>> {
    let jobs: Vec<(MotionFamily, &GenParams, u64)> = generators
        .iter()
        .flat_map(|g| std::iter::repeat_n((g.family, &g.params), g.clips))
        .enumerate()
        .map(|(i, (f, p))| (f, p, derive_seed(master_seed, i as u64)))
        .collect();
    use rayon::prelude::*;
    jobs.par_iter().map(|(f, p, s)| generate_clip(*f, p, *s)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub clips: usize,
    pub frames: usize,
    pub hours: f64,
    /// Clips carrying a caption.
    pub captioned: usize,
}

impl TierStats {
    fn add(&mut self, seq: &MotionSequence, captioned: bool) {
        self.clips += 1;
        self.frames += seq.len();
        self.hours += seq.len() as f64 / (seq.fps() as f64 * 3600.0);
        self.captioned += captioned as usize;
    }

    fn merge(&mut self, other: &TierStats) {
        self.clips += other.clips;
        self.frames += other.frames;
        self.hours += other.hours;
        self.captioned += other.captioned;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub tiers: BTreeMap<QualityTier, TierStats>,
    pub total: TierStats,
    #[serde(default)]
    pub generators: Vec<GeneratorConfig>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    /// Files that could not be read, with the reason.
    #[serde(default)]
    pub unreadable: Vec<(String, String)>,
}

impl CorpusManifest {
    pub fn from_clips<'a>(clips: impl IntoIterator<Item = &'a ClipRecord>) -> Self {
        let mut m = CorpusManifest::default();
        for c in clips {
            m.tiers.entry(c.quality_tier).or_default().add(&c.sequence, c.caption.is_some());
        }
        m.recompute_total();
        m
    }

    fn recompute_total(&mut self) {
        let mut total = TierStats::default();
        for s in self.tiers.values() {
            total.merge(s);
        }
        self.total = total;
    }

    /// Table in the layout of a dataset-statistics report.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<8} {:>8} {:>10} {:>10} {:>6}\n", "tier", "clips", "frames", "hours", "text");
        let row = |name: &str, s: &TierStats| {
            let text = if s.clips == 0 {
                "-"
            } else if s.captioned == s.clips {
                "yes"
            } else if s.captioned == 0 {
                "no"
            } else {
                "part"
            };
            format!("{:<8} {:>8} {:>10} {:>10.4} {:>6}\n", name, s.clips, s.frames, s.hours, text)
        };
        for (tier, s) in &self.tiers {
            out.push_str(&row(tier.name(), s));
        }
        out.push_str(&row("total", &self.total));
        out
    }
}

/// Scans every clip file in `dir`. Unreadable files are listed in the report
/// rather than aborting the scan.
pub fn corpus_stats(dir: &Path) -> Result<CorpusManifest> {
    let mut m = CorpusManifest::default();
    for path in list_clip_files(dir)? {
        match load_clip(&path, None) {
            Ok(c) => m.tiers.entry(c.quality_tier).or_default().add(&c.sequence, c.caption.is_some()),
            Err(e) => m.unreadable.push((path.display().to_string(), e.to_string())),
        }
    }
    m.recompute_total();
    Ok(m)
}
