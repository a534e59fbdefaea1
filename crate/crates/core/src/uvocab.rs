//! One id space for words, per-part motion codes, track bins, and special
//! tokens.
//!
//! Layout for `L` words, codebook size `K`, and `B` bins per axis:
//!
//! ```text
//! [0, L)                 words, sorted
//! [L, L + 5K)            motion code `c` of part `p` at L + p*K + c
//! [L + 5K, L + 5K + 3B)  track bin `b` on axis `a` at L + 5K + a*B + b
//! then                   <bos> <eos> <sep> <mask> <frame>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BodyPart, NUM_PARTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Special {
    Bos,
    Eos,
    Sep,
    Mask,
    Frame,
}

impl Special {
    pub const ALL: [Special; 5] = [Special::Bos, Special::Eos, Special::Sep, Special::Mask, Special::Frame];

    pub fn surface(self) -> &'static str {
        match self {
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Sep => "<sep>",
            Special::Mask => "<mask>",
            Special::Frame => "<frame>",
        }
    }
}

/// What an id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind<'a> {
    Word(&'a str),
    Motion { part: BodyPart, code: usize },
    Track { axis: usize, bin: usize },
    Special(Special),
}

impl TokenKind<'_> {
    pub fn class(&self) -> &'static str {
        match self {
            TokenKind::Word(_) => "word",
            TokenKind::Motion { .. } => "motion",
            TokenKind::Track { .. } => "track",
            TokenKind::Special(_) => "special",
        }
    }
}

/// Axis-aligned box that track waypoints are binned over. Values outside are
/// clamped to the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for TrackBox {
    fn default() -> Self {
        Self { min: [-5.0, -5.0, 0.0], max: [5.0, 5.0, 2.0] }
    }
}

/// Splits text into lowercase word tokens. Punctuation marks become tokens of
/// their own, except a `.` or `,` between two digits, which stays inside the
/// numeral. `<...>` runs are kept whole so callers can spot slot markers.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        if !cur.is_empty() {
            out.push(std::mem::take(cur));
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '<' {
            if let Some(len) = chars[i..].iter().position(|&x| x == '>') {
                let inner: String = chars[i + 1..i + len].iter().collect();
                if !inner.is_empty() && inner.chars().all(|x| x.is_ascii_alphanumeric() || x == '_') {
                    flush(&mut cur, &mut out);
                    out.push(format!("<{inner}>"));
                    i += len + 1;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || c == '_' || c == '\'' {
            cur.extend(c.to_lowercase());
        } else if (c == '.' || c == ',')
            && cur.chars().last().is_some_and(|p| p.is_ascii_digit())
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
            && cur.chars().all(|p| p.is_ascii_digit() || p == '.')
        {
            cur.push(c);
        } else {
            flush(&mut cur, &mut out);
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        i += 1;
    }
    flush(&mut cur, &mut out);
    out
}

pub fn is_slot_marker(token: &str) -> bool {
    token.len() > 2 && token.starts_with('<') && token.ends_with('>')
}

/// Normal form compared by the text round trip: tokens joined by one space.
pub fn normalize_text(text: &str) -> String {
    split_words(text).join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedVocab {
    words: Vec<String>,
    word_ids: BTreeMap<String, u32>,
    codebook_size: usize,
    bins: usize,
    track_box: TrackBox,
}

/// Sizes of each id range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub words: usize,
    pub motion: usize,
    pub track: usize,
    pub special: usize,
    pub total: usize,
}

impl UnifiedVocab {
    /// Builds the word table from every non-slot token of `texts`.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        codebook_size: usize,
        bins: usize,
        track_box: TrackBox,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(split_words(t).into_iter().filter(|w| !is_slot_marker(w)));
        }
        if set.is_empty() {
            return Err(Error::Vocabulary("cannot build a vocabulary from an empty text corpus".into()));
        }
        Self::from_words(set.into_iter().collect(), codebook_size, bins, track_box)
    }

    fn from_words(words: Vec<String>, codebook_size: usize, bins: usize, track_box: TrackBox) -> Result<Self> {
        if codebook_size == 0 || bins == 0 {
            return Err(Error::Vocabulary("codebook size and bin count must be positive".into()));
        }
        if (0..3).any(|a| !(track_box.max[a] > track_box.min[a])) {
            return Err(Error::Vocabulary("track box must have positive extent on every axis".into()));
        }
        let word_ids: BTreeMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        if word_ids.len() != words.len() {
            return Err(Error::Vocabulary("duplicate word".into()));
        }
        let v = Self { words, word_ids, codebook_size, bins, track_box };
        if v.len() > u32::MAX as usize {
            return Err(Error::Vocabulary("vocabulary too large".into()));
        }
        Ok(v)
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn track_box(&self) -> TrackBox {
        self.track_box
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn motion_base(&self) -> usize {
        self.words.len()
    }

    pub fn track_base(&self) -> usize {
        self.motion_base() + NUM_PARTS * self.codebook_size
    }

    pub fn special_base(&self) -> usize {
        self.track_base() + 3 * self.bins
    }

    pub fn len(&self) -> usize {
        self.special_base() + Special::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            words: self.num_words(),
            motion: NUM_PARTS * self.codebook_size,
            track: 3 * self.bins,
            special: Special::ALL.len(),
            total: self.len(),
        }
    }

    pub fn special(&self, s: Special) -> u32 {
        (self.special_base() + s as usize) as u32
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.word_ids.get(word).copied()
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        split_words(text)
            .into_iter()
            .map(|w| {
                if is_slot_marker(&w) {
                    return Err(Error::Vocabulary(format!("unexpanded slot marker `{w}` in text")));
                }
                self.word_id(&w).ok_or_else(|| Error::Vocabulary(format!("unknown word `{w}`")))
            })
            .collect()
    }

    pub fn decode_text(&self, ids: &[u32]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| match self.kind(id)? {
                TokenKind::Word(w) => Ok(w),
                other => Err(Error::Vocabulary(format!("id {id} is a {} token, not a word", other.class()))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    pub fn motion_token_id(&self, part: usize, code: usize) -> Result<u32> {
        if part >= NUM_PARTS || code >= self.codebook_size {
            return Err(Error::Vocabulary(format!(
                "motion token (part {part}, code {code}) outside 5 x {}",
                self.codebook_size
            )));
        }
        Ok((self.motion_base() + part * self.codebook_size + code) as u32)
    }

    pub fn motion_token(&self, id: u32) -> Result<(BodyPart, usize)> {
        match self.kind(id)? {
            TokenKind::Motion { part, code } => Ok((part, code)),
            other => Err(Error::Vocabulary(format!("id {id} is a {} token, not motion", other.class()))),
        }
    }

    pub fn track_token_id(&self, axis: usize, bin: usize) -> Result<u32> {
        if axis >= 3 || bin >= self.bins {
            return Err(Error::Vocabulary(format!("track token (axis {axis}, bin {bin}) outside 3 x {}", self.bins)));
        }
        Ok((self.track_base() + axis * self.bins + bin) as u32)
    }

    pub fn track_token(&self, id: u32) -> Result<(usize, usize)> {
        match self.kind(id)? {
            TokenKind::Track { axis, bin } => Ok((axis, bin)),
            other => Err(Error::Vocabulary(format!("id {id} is a {} token, not track", other.class()))),
        }
    }

    pub fn kind(&self, id: u32) -> Result<TokenKind<'_>> {
        let i = id as usize;
        if i < self.motion_base() {
            Ok(TokenKind::Word(&self.words[i]))
        } else if i < self.track_base() {
            let off = i - self.motion_base();
            Ok(TokenKind::Motion {
                part: BodyPart::from_index(off / self.codebook_size)?,
                code: off % self.codebook_size,
            })
        } else if i < self.special_base() {
            let off = i - self.track_base();
            Ok(TokenKind::Track { axis: off / self.bins, bin: off % self.bins })
        } else if i < self.len() {
            Ok(TokenKind::Special(Special::ALL[i - self.special_base()]))
        } else {
            Err(Error::Vocabulary(format!("id {id} outside vocabulary of size {}", self.len())))
        }
    }

    pub fn surface(&self, id: u32) -> Result<String> {
        Ok(match self.kind(id)? {
            TokenKind::Word(w) => w.to_string(),
            TokenKind::Motion { part, code } => format!("<m{}_{code}>", part.index()),
            TokenKind::Track { axis, bin } => format!("<t{}_{bin}>", ["x", "y", "z"][axis]),
            TokenKind::Special(s) => s.surface().to_string(),
        })
    }

    /// Space-joined surfaces of `ids`.
    pub fn render(&self, ids: &[u32]) -> Result<String> {
        Ok(ids.iter().map(|&id| self.surface(id)).collect::<Result<Vec<_>>>()?.join(" "))
    }

    /// Bin of `value` on `axis`, clamped into `[0, B)`.
    pub fn quantize(&self, axis: usize, value: f64) -> usize {
        let (lo, hi) = (self.track_box.min[axis], self.track_box.max[axis]);
        let t = ((value - lo) / (hi - lo) * self.bins as f64).floor();
        if t.is_nan() {
            0
        } else {
            t.clamp(0.0, (self.bins - 1) as f64) as usize
        }
    }

    pub fn bin_center(&self, axis: usize, bin: usize) -> f64 {
        let (lo, hi) = (self.track_box.min[axis], self.track_box.max[axis]);
        lo + (bin as f64 + 0.5) * (hi - lo) / self.bins as f64
    }

    /// Vocabulary file: a `#` header line with the layout parameters, then
    /// one `surface<TAB>id<TAB>kind` line per id.
    pub fn to_tsv(&self) -> String {
        let b = &self.track_box;
        let mut out = format!(
            "# codebook_size={} bins={} box={},{},{},{},{},{}\n",
            self.codebook_size, self.bins, b.min[0], b.max[0], b.min[1], b.max[1], b.min[2], b.max[2]
        );
        for id in 0..self.len() as u32 {
            let kind = self.kind(id).expect("id in range").class();
            let _ = writeln!(out, "{}\t{id}\t{kind}", self.surface(id).expect("id in range"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Malformed(format!("vocabulary line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let fields: BTreeMap<&str, &str> = header
            .strip_prefix('#')
            .ok_or_else(|| bad(1, "missing header"))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let num = |k: &str| -> Result<usize> {
            fields.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(1, &format!("missing `{k}`")))
        };
        let (codebook_size, bins) = (num("codebook_size")?, num("bins")?);
        let bx: Vec<f64> = fields
            .get("box")
            .map(|v| v.split(',').filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        if bx.len() != 6 {
            return Err(bad(1, "box needs six numbers"));
        }
        let track_box = TrackBox { min: [bx[0], bx[2], bx[4]], max: [bx[1], bx[3], bx[5]] };
        let mut words = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(i + 1, "expected three tab-separated fields"));
            }
            let id: usize = parts[1].parse().map_err(|_| bad(i + 1, "bad id"))?;
            if id != rows.len() {
                return Err(bad(i + 1, "ids must be consecutive from 0"));
            }
            if parts[2] == "word" {
                if id != words.len() {
                    return Err(bad(i + 1, "words must come first"));
                }
                words.push(parts[0].to_string());
            }
            rows.push((parts[0].to_string(), parts[2].to_string()));
        }
        let v = Self::from_words(words, codebook_size, bins, track_box)?;
        if rows.len() != v.len() {
            return Err(Error::Malformed(format!("vocabulary lists {} ids, layout implies {}", rows.len(), v.len())));
        }
        for (id, (surface, kind)) in rows.iter().enumerate() {
            if v.surface(id as u32)? != *surface || v.kind(id as u32)?.class() != kind {
                return Err(bad(id + 2, "entry disagrees with the layout"));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(k: usize, b: usize) -> UnifiedVocab {
        UnifiedVocab::build(["raise left arm"], k, b, TrackBox::default()).unwrap()
    }

    #[test]
    fn layout_arithmetic() {
        let v = toy(16, 8);
        assert_eq!(v.num_words(), 3);
        assert_eq!(v.motion_base(), 3);
        assert_eq!(v.track_base(), 83);
        assert_eq!(v.special_base(), 107);
        assert_eq!(v.len(), 112);
        assert_eq!(v.motion_token_id(0, 0).unwrap(), 3);
        assert!(v.motion_token_id(5, 0).is_err());
        assert!(v.track_token_id(0, 8).is_err());
    }

    #[test]
    fn build_is_deterministic_and_closed() {
        let a = UnifiedVocab::build(["b a, c", "a d."], 4, 4, TrackBox::default()).unwrap();
        let b = UnifiedVocab::build(["a d.", "b a, c"], 4, 4, TrackBox::default()).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        assert_eq!(a.words(), [",", ".", "a", "b", "c", "d"]);
        assert!(a.encode_text("a e").is_err());
        assert!(UnifiedVocab::build([""], 4, 4, TrackBox::default()).is_err());
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(split_words("Walk 2.0 m, then STOP."), ["walk", "2.0", "m", ",", "then", "stop", "."]);
        assert_eq!(split_words("go to <Track>."), ["go", "to", "<Track>", "."]);
        assert_eq!(split_words("end."), ["end", "."]);
        assert_eq!(split_words("a < b"), ["a", "<", "b"]);
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let v = UnifiedVocab::build(["please move your center position"], 4, 4, TrackBox::default()).unwrap();
        let s = "Please move your  center position";
        assert_eq!(v.decode_text(&v.encode_text(s).unwrap()).unwrap(), normalize_text(s));
        assert!(v.decode_text(&[v.motion_token_id(0, 0).unwrap()]).is_err());
        let slot = UnifiedVocab::build(["follow <Track>"], 4, 4, TrackBox::default()).unwrap();
        assert_eq!(slot.num_words(), 1);
        assert!(matches!(slot.encode_text("follow <Track>"), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn exhaustive_bijection() {
        let v = toy(32, 16);
        let mut seen = BTreeSet::new();
        for id in 0..v.len() as u32 {
            assert!(seen.insert(v.surface(id).unwrap()));
            match v.kind(id).unwrap() {
                TokenKind::Motion { part, code } => assert_eq!(v.motion_token_id(part.index(), code).unwrap(), id),
                TokenKind::Track { axis, bin } => assert_eq!(v.track_token_id(axis, bin).unwrap(), id),
                TokenKind::Special(s) => assert_eq!(v.special(s), id),
                TokenKind::Word(w) => assert_eq!(v.word_id(w), Some(id)),
            }
        }
        for p in 0..5 {
            for c in 0..32 {
                let (bp, cc) = v.motion_token(v.motion_token_id(p, c).unwrap()).unwrap();
                assert_eq!((bp.index(), cc), (p, c));
            }
        }
        assert!(v.kind(v.len() as u32).is_err());
    }

    #[test]
    fn tsv_roundtrip() {
        let v = UnifiedVocab::build(["walk 2.0 seconds", "turn"], 8, 6, TrackBox::default()).unwrap();
        let back = UnifiedVocab::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        let broken = v.to_tsv().replace("\t3\tword", "\t4\tword");
        assert!(UnifiedVocab::from_tsv(&broken).is_err());
    }

    #[test]
    fn quantize_clamps() {
        let v = toy(4, 10);
        assert_eq!(v.quantize(0, -100.0), 0);
        assert_eq!(v.quantize(0, 100.0), 9);
        assert_eq!(v.quantize(0, 0.0), 5);
        assert!((v.bin_center(2, 0) - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn quantized_value_lies_in_its_bin(x in -5.0f64..5.0, bins in 1usize..40) {
            let v = toy(2, bins);
            let b = v.quantize(0, x);
            let w = 10.0 / bins as f64;
            prop_assert!((v.bin_center(0, b) - x).abs() <= w / 2.0 + 1e-9);
        }
    }
}
