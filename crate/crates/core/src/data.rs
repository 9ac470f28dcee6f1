//! Character-level corpus handling: vocabulary, train/validation split and
//! next-token batch sampling.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::TokenBatch;

pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// Bijection between the distinct characters of a corpus and `0..size`,
/// ordered by code point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Vocab {
        let set: BTreeSet<char> = text.chars().collect();
        Vocab::from_chars(set.into_iter().collect())
    }

    /// `chars` must be sorted and distinct.
    pub fn from_chars(chars: Vec<char>) -> Vocab {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocab { chars, index }
    }

    pub fn size(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::InvalidInput(format!("character {c:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.chars.get(id).copied().ok_or(Error::Vocabulary {
                    id,
                    vocab_size: self.size(),
                })
            })
            .collect()
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.chars.iter().collect::<String>().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let chars: Vec<char> = s.chars().collect();
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(serde::de::Error::custom("vocabulary must be sorted and distinct"));
        }
        Ok(Vocab::from_chars(chars))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub vocab: Vocab,
}

impl SplitDataset {
    /// Encodes `corpus` and splits it into a training prefix holding
    /// `floor((1 − val_fraction)·n)` ids and a validation suffix.
    pub fn build(corpus: &str, val_fraction: f64) -> Result<SplitDataset> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()));
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::InvalidInput(format!("val_fraction {val_fraction} must lie in (0, 1)")));
        }
        let vocab = Vocab::from_text(corpus);
        if vocab.size() < 2 {
            return Err(Error::DegenerateVocabulary(vocab.chars[0]));
        }
        let ids = vocab.encode(corpus)?;
        let n_train = ((1.0 - val_fraction) * ids.len() as f64).floor() as usize;
        if n_train == 0 || n_train == ids.len() {
            return Err(Error::InvalidInput(format!(
                "corpus of {} characters is too short for a {val_fraction} validation split",
                ids.len()
            )));
        }
        let mut train_ids = ids;
        let val_ids = train_ids.split_off(n_train);
        Ok(SplitDataset {
            train_ids,
            val_ids,
            vocab,
        })
    }

    pub fn from_file(path: &Path, val_fraction: f64) -> Result<SplitDataset> {
        let text = fs::read_to_string(path)?;
        SplitDataset::build(&text, val_fraction)
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_ids,
            Split::Val => &self.val_ids,
        }
    }

    /// `batch` windows of `seq` ids with uniformly random starts; targets are
    /// the same windows shifted one position right.
    pub fn sample_batch(&self, split: Split, batch: usize, seq: usize, rng: &mut RngState) -> Result<(TokenBatch, TokenBatch)> {
        let src = self.split(split);
        if batch == 0 || seq == 0 {
            return Err(Error::InvalidInput("batch and seq must be positive".into()));
        }
        if src.len() < seq + 1 {
            return Err(Error::InvalidInput(format!(
                "{split:?} split has {} ids, need at least {}",
                src.len(),
                seq + 1
            )));
        }
        let n_starts = src.len() - seq;
        let mut x = Vec::with_capacity(batch * seq);
        let mut y = Vec::with_capacity(batch * seq);
        for _ in 0..batch {
            let start = rng.below(n_starts);
            x.extend_from_slice(&src[start..start + seq]);
            y.extend_from_slice(&src[start + 1..start + seq + 1]);
        }
        Ok((TokenBatch::new(batch, seq, x)?, TokenBatch::new(batch, seq, y)?))
    }

    /// Writes all ids (train then val) as little-endian `u16` to `ids_path`,
    /// with a JSON sidecar at `ids_path` + `.json` holding the vocabulary and
    /// split point.
    pub fn write_cache(&self, ids_path: &Path) -> Result<()> {
        if self.vocab.size() > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput("vocabulary too large for a u16 cache".into()));
        }
        let mut bytes = Vec::with_capacity(2 * (self.train_ids.len() + self.val_ids.len()));
        for &id in self.train_ids.iter().chain(&self.val_ids) {
            bytes.extend_from_slice(&(id as u16).to_le_bytes());
        }
        fs::write(ids_path, bytes)?;
        let meta = CacheMeta {
            vocab: self.vocab.clone(),
            n_train: self.train_ids.len(),
        };
        fs::write(sidecar(ids_path), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read_cache(ids_path: &Path) -> Result<SplitDataset> {
        let meta: CacheMeta = serde_json::from_slice(&fs::read(sidecar(ids_path))?)?;
        let bytes = fs::read(ids_path)?;
        if bytes.len() % 2 != 0 {
            return Err(Error::InvalidInput("id cache has odd length".into()));
        }
        let mut ids: Vec<usize> = bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
            .collect();
        if let Some(&id) = ids.iter().find(|&&id| id >= meta.vocab.size()) {
            return Err(Error::Vocabulary {
                id,
                vocab_size: meta.vocab.size(),
            });
        }
        if meta.n_train == 0 || meta.n_train >= ids.len() {
            return Err(Error::InvalidInput("id cache split point out of range".into()));
        }
        let val_ids = ids.split_off(meta.n_train);
        Ok(SplitDataset {
            train_ids: ids,
            val_ids,
            vocab: meta.vocab,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    vocab: Vocab,
    n_train: usize,
}

fn sidecar(ids_path: &Path) -> std::path::PathBuf {
    let mut s = ids_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
