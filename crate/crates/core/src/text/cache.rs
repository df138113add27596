//! Label-text embedding caches and deterministic pseudo-embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, json_err, Error, Result};

/// How action labels are turned into text before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptStrategy {
    /// Raw label.
    #[serde(rename = "TLE")]
    Tle,
    /// One context-enriched sentence.
    #[serde(rename = "TCE")]
    Tce,
    /// Several elaborated description sentences.
    #[serde(rename = "TDE")]
    Tde,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 3] = [PromptStrategy::Tle, PromptStrategy::Tce, PromptStrategy::Tde];

    pub fn tag(self) -> &'static str {
        match self {
            PromptStrategy::Tle => "TLE",
            PromptStrategy::Tce => "TCE",
            PromptStrategy::Tde => "TDE",
        }
    }

    /// Descriptions per label (`L`).
    pub fn descriptions(self) -> usize {
        match self {
            PromptStrategy::Tle | PromptStrategy::Tce => 1,
            PromptStrategy::Tde => 3,
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TLE" => Ok(PromptStrategy::Tle),
            "TCE" => Ok(PromptStrategy::Tce),
            "TDE" => Ok(PromptStrategy::Tde),
            other => Err(invalid(format!("unknown prompt strategy {other:?}"))),
        }
    }
}

/// Precomputed label embeddings: `label -> L vectors of length dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    #[serde(rename = "encoder")]
    pub encoder_name: String,
    pub strategy: PromptStrategy,
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingCache {
    /// Descriptions per label, the common `L`.
    pub fn descriptions(&self) -> usize {
        self.entries.values().next().map_or(0, Vec::len)
    }

    pub fn get(&self, label: &str) -> Option<&[Vec<f64>]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("embedding dim must be >= 1"));
        }
        if self.entries.is_empty() {
            return Err(invalid("embedding cache has no entries"));
        }
        let l = self.descriptions();
        for (label, vectors) in &self.entries {
            if vectors.is_empty() || vectors.len() != l {
                return Err(Error::RaggedEntries {
                    label: label.clone(),
                    expected: l.max(1),
                    got: vectors.len(),
                });
            }
            for (index, v) in vectors.iter().enumerate() {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        label: label.clone(),
                        index,
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                if let Some(position) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        label: label.clone(),
                        index,
                        position,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn load_embedding_cache(path: &Path) -> Result<EmbeddingCache> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cache: EmbeddingCache = serde_json::from_str(&text).map_err(json_err(path))?;
    cache.validate()?;
    Ok(cache)
}

pub fn write_embedding_cache(path: &Path, cache: &EmbeddingCache) -> Result<()> {
    cache.validate()?;
    let text = serde_json::to_string(cache).map_err(json_err(path))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Top 53 bits mapped to `[-1, 1)`.
    fn next_signed_unit(&mut self) -> f64 {
        let u = (self.next() >> 11) as f64 / (1u64 << 53) as f64;
        2.0 * u - 1.0
    }
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Deterministic unit-norm stand-in for a text encoder.
///
/// Seeded by FNV-1a-64 of `"<strategy>/<label>"`, values streamed from
/// splitmix64.
pub fn pseudo_embed(label: &str, dim: usize, strategy: PromptStrategy) -> Result<Vec<f64>> {
    if label.is_empty() {
        return Err(invalid("label must be non-empty"));
    }
    if dim == 0 {
        return Err(invalid("dim must be >= 1"));
    }
    let key = format!("{}/{}", strategy.tag(), label);
    let mut rng = SplitMix64(fnv1a_64(key.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_signed_unit()).collect();
    l2_normalize(&mut v);
    Ok(v)
}

/// Weight of the per-description component relative to the shared label
/// component in multi-description pseudo caches.
const DESCRIPTION_SPREAD: f64 = 0.5;

/// A full cache built from [`pseudo_embed`]. With `L > 1` descriptions each
/// vector is the label's own embedding plus a smaller description-specific
/// one, renormalised, so descriptions of one label stay correlated.
pub fn pseudo_cache(labels: &[String], dim: usize, strategy: PromptStrategy) -> Result<EmbeddingCache> {
    let l = strategy.descriptions();
    let mut entries = BTreeMap::new();
    for label in labels {
        let shared = pseudo_embed(label, dim, strategy)?;
        let vectors = if l == 1 {
            vec![shared]
        } else {
            (0..l)
                .map(|i| {
                    let own = pseudo_embed(&format!("{label}#{i}"), dim, strategy)?;
                    let mut v: Vec<f64> = shared
                        .iter()
                        .zip(&own)
                        .map(|(s, o)| s + DESCRIPTION_SPREAD * o)
                        .collect();
                    l2_normalize(&mut v);
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?
        };
        if entries.insert(label.clone(), vectors).is_some() {
            return Err(invalid(format!("duplicate label {label:?}")));
        }
    }
    let cache = EmbeddingCache {
        encoder_name: "pseudo".to_string(),
        strategy,
        dim,
        entries,
    };
    cache.validate()?;
    Ok(cache)
}
