//! Corpus and vocabulary file formats.
//!
//! A corpus file is UTF-8 text, one pair per line, source and target
//! separated by one tab, tokens separated by single spaces. A vocabulary
//! file has one token per line; the line number is the token id and line 0
//! is reserved for padding.

pub mod synth;

use std::collections::HashMap;
use std::path::Path;

use crate::batching::SentencePair;
use crate::error::{Error, Result};
use crate::model::PAD_ID;

/// Token string to id mapping. Id 0 is the pad token.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < 2 {
            return Err(Error::Data("vocabulary needs the pad token plus at least one token".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn read(path: &Path) -> Result<Vocab> {
        let body = std::fs::read_to_string(path)?;
        Vocab::new(body.lines().map(str::to_string).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    fn encode_side(&self, text: &str, line: usize) -> Result<Vec<u32>> {
        let ids: Result<Vec<u32>> = text
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| {
                self.id_of(t).ok_or_else(|| {
                    Error::Data(format!("line {line}: token {t:?} not in vocabulary"))
                })
            })
            .collect();
        let ids = ids?;
        if ids.is_empty() {
            return Err(Error::Data(format!("line {line}: empty side")));
        }
        if ids.contains(&PAD_ID) {
            return Err(Error::Data(format!("line {line}: pad token used as text")));
        }
        Ok(ids)
    }
}

/// Parse a corpus file. Pair ids are the 0-based line numbers.
pub fn read_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<SentencePair>> {
    let body = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!("line {}: expected a single tab separator", lineno + 1))
        })?;
        out.push(SentencePair::new(
            lineno as u64,
            vocab.encode_side(src, lineno + 1)?,
            vocab.encode_side(tgt, lineno + 1)?,
        ));
    }
    Ok(out)
}

/// Write pairs back out in corpus format.
pub fn write_corpus(path: &Path, pairs: &[SentencePair], vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let decode = |ids: &[u32]| -> Result<String> {
            let toks: Result<Vec<&str>> = ids
                .iter()
                .map(|&id| {
                    vocab
                        .token_of(id)
                        .ok_or_else(|| Error::Data(format!("id {id} not in vocabulary")))
                })
                .collect();
            Ok(toks?.join(" "))
        };
        out.push_str(&decode(&p.src)?);
        out.push('\t');
        out.push_str(&decode(&p.tgt)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
