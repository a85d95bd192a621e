//! Corpus loading, vocabulary, train/test split and equidistant-offset
//! batching.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::TokenId;

pub const DEFAULT_TEST_LEN: usize = 11_100;
pub const DEFAULT_LANES: usize = 64;

/// Distinct characters of a corpus sorted by code point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl Vocabulary {
    pub fn from_text(text: &str) -> Self {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_sorted(chars)
    }

    /// Rebuilds a vocabulary from its stored character list, which must be
    /// strictly increasing.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "vocabulary characters must be strictly increasing".into(),
            ));
        }
        Ok(Self::from_sorted(chars))
    }

    fn from_sorted(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocabulary { chars, index }
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

    pub fn id(&self, c: char) -> Option<TokenId> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: TokenId) -> Option<char> {
        self.chars.get(id).copied()
    }

    /// Fails on the first character outside the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .map(|c| self.id(c).ok_or(Error::UnknownCharacter(c)))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char_of(id).ok_or(Error::TokenOutOfRange {
                    token: id,
                    vocab_size: self.len(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub tokens: Vec<TokenId>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Corpus {
            name: name.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Decodes raw bytes as UTF-8 text and tokenizes them with a vocabulary
/// built from the text itself.
pub fn corpus_from_bytes(name: &str, bytes: &[u8]) -> Result<(Vocabulary, Corpus)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidEncoding {
        path: name.into(),
        offset: e.valid_up_to(),
    })?;
    if text.is_empty() {
        return Err(Error::EmptyCorpus(name.to_string()));
    }
    let vocab = Vocabulary::from_text(text);
    let tokens = vocab.encode(text)?;
    Ok((vocab, Corpus::new(name, tokens)))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Vocabulary, Corpus)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    corpus_from_bytes(&path.display().to_string(), &bytes)
}

/// Reads a text file and tokenizes it with an existing vocabulary.
pub fn load_corpus_with(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::InvalidEncoding {
        path: path.into(),
        offset: e.valid_up_to(),
    })?;
    if text.is_empty() {
        return Err(Error::EmptyCorpus(path.display().to_string()));
    }
    Ok(Corpus::new(path.display().to_string(), vocab.encode(text)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Corpus,
    pub test: Corpus,
}

/// Rotates the corpus left by `rotation`, then takes the last `test_len`
/// tokens as the test set and the rest as the train set.
pub fn split_dataset(corpus: &Corpus, rotation: usize, test_len: usize) -> Result<Split> {
    if test_len >= corpus.len() {
        return Err(Error::Config(format!(
            "test length {test_len} must be smaller than the corpus ({} tokens)",
            corpus.len()
        )));
    }
    let rotated = circular_shift(corpus, rotation);
    let cut = corpus.len() - test_len;
    Ok(Split {
        train: Corpus::new(
            format!("{}[train]", corpus.name),
            rotated.tokens[..cut].to_vec(),
        ),
        test: Corpus::new(
            format!("{}[test]", corpus.name),
            rotated.tokens[cut..].to_vec(),
        ),
    })
}

/// Left rotation by `amount` modulo the corpus length.
pub fn circular_shift(corpus: &Corpus, amount: usize) -> Corpus {
    let mut tokens = corpus.tokens.clone();
    if !tokens.is_empty() {
        tokens.rotate_left(amount % corpus.len());
    }
    Corpus::new(corpus.name.clone(), tokens)
}

/// Start offsets of the lanes of batch `i`:
/// `floor(j · train_len / lanes) + i · k1 (mod train_len)` for every lane `j`.
pub fn batch_offsets(i: usize, k1: usize, train_len: usize, lanes: usize) -> Vec<usize> {
    assert!(lanes >= 1, "at least one lane");
    assert!(train_len >= 1, "empty train set");
    let advance = (i as u128 * k1 as u128) % train_len as u128;
    (0..lanes)
        .map(|j| {
            let base = j as u128 * train_len as u128 / lanes as u128;
            ((base + advance) % train_len as u128) as usize
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lane {
    pub offset: usize,
    pub inputs: Vec<TokenId>,
    /// `targets[t]` is the token following `inputs[t]`.
    pub targets: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub lanes: Vec<Lane>,
}

impl Batch {
    pub fn seq_len(&self) -> usize {
        self.lanes.first().map_or(0, |l| l.inputs.len())
    }
}

/// Each lane reads `k2 + 1` consecutive tokens from its offset, wrapping
/// around the end of the train set.
pub fn make_batch(train: &Corpus, offsets: &[usize], k2: usize) -> Batch {
    assert!(k2 >= 1, "k2 must be at least 1");
    assert!(!train.is_empty(), "empty train set");
    let n = train.len();
    let lanes = offsets
        .iter()
        .map(|&offset| {
            let window: Vec<TokenId> = (0..=k2).map(|t| train.tokens[(offset + t) % n]).collect();
            Lane {
                offset,
                inputs: window[..k2].to_vec(),
                targets: window[1..].to_vec(),
            }
        })
        .collect();
    Batch { lanes }
}

/// Produces successive batches, advancing every lane by `k1` tokens per
/// batch. An epoch ends once the lanes have swept one inter-lane stride
/// (`i · k1 ≥ floor(train_len / lanes)`); the train set is then rotated by a
/// random amount and `i` restarts at zero.
#[derive(Clone, Debug)]
pub struct BatchStream {
    train: Corpus,
    k1: usize,
    k2: usize,
    lanes: usize,
    index: usize,
    epoch: usize,
    started: bool,
    rng: Rng,
}

/// One batch and whether it opens a new epoch.
#[derive(Clone, Debug)]
pub struct StreamItem {
    pub batch: Batch,
    pub epoch: usize,
    pub epoch_start: bool,
}

impl BatchStream {
    pub fn new(train: Corpus, k1: usize, k2: usize, lanes: usize, rng: Rng) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus(train.name));
        }
        if k1 == 0 || k2 == 0 || lanes == 0 {
            return Err(Error::Config("k1, k2 and lanes must be at least 1".into()));
        }
        Ok(BatchStream {
            train,
            k1,
            k2,
            lanes,
            index: 0,
            epoch: 0,
            started: false,
            rng,
        })
    }

    pub fn train(&self) -> &Corpus {
        &self.train
    }

    /// Batches per epoch: the smallest `i` with `i · k1 ≥ stride`, at least 1.
    pub fn batches_per_epoch(&self) -> usize {
        let stride = self.train.len() / self.lanes;
        stride.div_ceil(self.k1).max(1)
    }

    pub fn next_batch(&mut self) -> StreamItem {
        let mut epoch_start = !self.started;
        self.started = true;
        if self.index >= self.batches_per_epoch() {
            let amount = self.rng.below(self.train.len());
            self.train = circular_shift(&self.train, amount);
            self.index = 0;
            self.epoch += 1;
            epoch_start = true;
        }
        let offsets = batch_offsets(self.index, self.k1, self.train.len(), self.lanes);
        let batch = make_batch(&self.train, &offsets, self.k2);
        self.index += 1;
        StreamItem {
            batch,
            epoch: self.epoch,
            epoch_start,
        }
    }
}
