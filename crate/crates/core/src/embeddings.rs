//! String-side word embeddings (DCToW and PHOC) and cosine similarity.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of DCT coefficients kept per alphabet channel.
pub const DCTOW_COEFFS: usize = 3;
/// Number of PHOC pyramid levels.
pub const PHOC_LEVELS: usize = 5;

const DEFAULT_CHARS: &str = "0123456789abcdefghijklmnopqrstuvwxyz";

/// Ordered character set with a character-to-index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Default for Alphabet {
    fn default() -> Self {
        Self { chars: DEFAULT_CHARS.chars().collect() }
    }
}

impl Alphabet {
    pub fn new(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        let mut sorted = chars.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if chars.is_empty() || sorted.len() != chars.len() {
            return Err(Error::invalid("alphabet must be non-empty with distinct characters"));
        }
        Ok(Self { chars })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> Option<usize> {
        // 36 entries; a linear scan is as fast as a map here
        self.chars.iter().position(|&x| x == c)
    }

    fn indices(&self, word: &str) -> Result<Vec<usize>> {
        if word.is_empty() {
            return Err(Error::invalid("cannot embed an empty word"));
        }
        word.chars()
            .map(|c| {
                self.index(c)
                    .ok_or_else(|| Error::invalid(format!("character {c:?} is not in the alphabet")))
            })
            .collect()
    }

    pub fn dctow_dim(&self) -> usize {
        DCTOW_COEFFS * self.len()
    }

    pub fn phoc_dim(&self) -> usize {
        self.len() * PHOC_LEVELS * (PHOC_LEVELS + 1) / 2
    }
}

/// Lowercases and drops everything outside the default alphabet.
pub fn normalize_label(raw: &str) -> String {
    raw.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_digit() || c.is_ascii_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Dctow,
    Phoc,
}

impl EmbeddingKind {
    pub fn dim(self) -> usize {
        let a = Alphabet::default();
        match self {
            EmbeddingKind::Dctow => a.dctow_dim(),
            EmbeddingKind::Phoc => a.phoc_dim(),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EmbeddingKind::Dctow => 0,
            EmbeddingKind::Phoc => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EmbeddingKind::Dctow),
            1 => Some(EmbeddingKind::Phoc),
            _ => None,
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingKind::Dctow => "dctow",
            EmbeddingKind::Phoc => "phoc",
        })
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dctow" => Ok(EmbeddingKind::Dctow),
            "phoc" => Ok(EmbeddingKind::Phoc),
            other => Err(Error::invalid(format!("unknown embedding kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbedding {
    pub kind: EmbeddingKind,
    pub values: Vec<f64>,
}

impl WordEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Unit-length copy of the values. Errors on the zero vector.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        normalize(&self.values)
    }
}

pub(crate) fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Discrete cosine transform of words with the default alphabet.
pub fn dctow(word: &str) -> Result<WordEmbedding> {
    dctow_with(&Alphabet::default(), word)
}

/// DCToW: orthonormal DCT-II along the character-position axis of the one-hot
/// matrix, first three coefficients per alphabet channel, channel-major.
pub fn dctow_with(alphabet: &Alphabet, word: &str) -> Result<WordEmbedding> {
    let idx = alphabet.indices(word)?;
    let m = idx.len();
    let mut values = vec![0.0; alphabet.dctow_dim()];
    let kept = m.min(DCTOW_COEFFS);
    let mf = m as f64;
    for (pos, &ch) in idx.iter().enumerate() {
        for k in 0..kept {
            let scale = if k == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
            values[ch * DCTOW_COEFFS + k] += scale * (PI / mf * (pos as f64 + 0.5) * k as f64).cos();
        }
    }
    Ok(WordEmbedding { kind: EmbeddingKind::Dctow, values })
}

/// Pyramidal histogram of characters with the default alphabet.
pub fn phoc(word: &str) -> Result<WordEmbedding> {
    phoc_with(&Alphabet::default(), word)
}

/// PHOC over levels 1..=5. A character sets the bit of a region when at least
/// half of its normalized occupancy interval falls inside the region.
pub fn phoc_with(alphabet: &Alphabet, word: &str) -> Result<WordEmbedding> {
    let idx = alphabet.indices(word)?;
    let m = idx.len();
    let k = alphabet.len();
    let mut values = vec![0.0; alphabet.phoc_dim()];
    let mut offset = 0;
    for level in 1..=PHOC_LEVELS {
        for region in 0..level {
            // scaled by m * level so every endpoint is an integer
            let (r0, r1) = (region * m, (region + 1) * m);
            for (pos, &ch) in idx.iter().enumerate() {
                let (c0, c1) = (pos * level, (pos + 1) * level);
                let overlap = r1.min(c1).saturating_sub(r0.max(c0));
                if 2 * overlap >= level {
                    values[offset + region * k + ch] = 1.0;
                }
            }
        }
        offset += level * k;
    }
    Ok(WordEmbedding { kind: EmbeddingKind::Phoc, values })
}

/// Embeds a raw query string: normalizes, embeds with `kind`, L2-normalizes.
pub fn embed_query(kind: EmbeddingKind, raw: &str) -> Result<Vec<f64>> {
    let word = normalize_label(raw);
    if word.is_empty() {
        return Err(Error::invalid(format!("query {raw:?} is empty after normalization")));
    }
    let e = match kind {
        EmbeddingKind::Dctow => dctow(&word)?,
        EmbeddingKind::Phoc => phoc(&word)?,
    };
    e.normalized()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}
