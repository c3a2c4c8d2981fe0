//! Token corpora with train/valid/test splits.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const BUNDLED_TRAIN: &str = include_str!("../data/tiny/train.txt");
const BUNDLED_VALID: &str = include_str!("../data/tiny/valid.txt");
const BUNDLED_TEST: &str = include_str!("../data/tiny/test.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    #[default]
    Char,
    Word,
}

impl std::str::FromStr for Tokenization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(Tokenization::Char),
            "word" => Ok(Tokenization::Word),
            other => Err(format!("unknown tokenization `{other}` (expected char or word)")),
        }
    }
}

/// Dense token ↔ id mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub vocab: Vocab,
    pub tokenization: Tokenization,
    /// Content digest, stable across runs.
    pub id: String,
}

fn tokenize(text: &str, level: Tokenization) -> Vec<String> {
    match level {
        Tokenization::Char => text.chars().map(|c| c.to_string()).collect(),
        Tokenization::Word => text.split_whitespace().map(str::to_string).collect(),
    }
}

impl Corpus {
    pub fn from_texts(train: &str, valid: &str, test: &str, level: Tokenization) -> Result<Corpus, CorpusError> {
        let splits = [
            ("train", tokenize(train, level)),
            ("valid", tokenize(valid, level)),
            ("test", tokenize(test, level)),
        ];
        for (name, toks) in &splits {
            if toks.is_empty() {
                return Err(CorpusError::EmptySplit(name));
            }
        }
        let vocab: BTreeSet<&String> = splits.iter().flat_map(|(_, t)| t.iter()).collect();
        let vocab = Vocab::new(vocab.into_iter().cloned().collect());
        let ids = |toks: &[String]| -> Vec<usize> { toks.iter().map(|t| vocab.id(t).unwrap()).collect() };
        let mut hasher = Sha256::new();
        for text in [train, valid, test] {
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
        }
        hasher.update(format!("{level:?}").as_bytes());
        let id = hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Corpus {
            train: ids(&splits[0].1),
            valid: ids(&splits[1].1),
            test: ids(&splits[2].1),
            vocab,
            tokenization: level,
            id,
        })
    }

    /// Reads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load(dir: &Path, level: Tokenization) -> Result<Corpus, CorpusError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Corpus::from_texts(&read("train.txt")?, &read("valid.txt")?, &read("test.txt")?, level)
    }

    /// The small public-domain character corpus shipped with the crate.
    pub fn bundled() -> Corpus {
        Corpus::from_texts(BUNDLED_TRAIN, BUNDLED_VALID, BUNDLED_TEST, Tokenization::Char)
            .expect("bundled corpus is non-empty")
    }

    /// Prefixes of each split; the vocabulary and id are kept from the full
    /// corpus so that truncated corpora stay comparable.
    pub fn truncated(&self, train: usize, valid: usize, test: usize) -> Corpus {
        let mut c = self.clone();
        c.train.truncate(train);
        c.valid.truncate(valid);
        c.test.truncate(test);
        c.id = format!("{}-{}x{}x{}", self.id, c.train.len(), c.valid.len(), c.test.len());
        c
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}
