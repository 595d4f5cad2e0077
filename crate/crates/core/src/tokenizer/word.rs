use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{check_max_len, TokenSequence, Tokenizer};
use crate::error::{Error, Result};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Whitespace tokenizer with an id map built from a corpus. Id 0 is reserved
/// for words that were not seen when the map was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenizer {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl WordTokenizer {
    /// Assigns ids in order of first appearance across `texts`.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tok = Self {
            token_to_id: HashMap::from([(UNKNOWN_TOKEN.to_string(), 0)]),
            id_to_token: vec![UNKNOWN_TOKEN.to_string()],
        };
        for text in texts {
            for word in text.split_whitespace() {
                if !tok.token_to_id.contains_key(word) {
                    let id = tok.id_to_token.len() as u32;
                    tok.token_to_id.insert(word.to_string(), id);
                    tok.id_to_token.push(word.to_string());
                }
            }
        }
        tok
    }

    /// Reads a `{token: id}` JSON map with dense ids.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, u32> = serde_json::from_str(&text).map_err(|e| {
            Error::format(
                path.display().to_string(),
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        let mut id_to_token = vec![None; map.len()];
        for (token, &id) in &map {
            match id_to_token.get_mut(id as usize) {
                Some(slot @ None) => *slot = Some(token.clone()),
                Some(Some(prev)) => {
                    return Err(Error::Integrity(format!(
                        "duplicate id {id} for {prev:?} and {token:?}"
                    )))
                }
                None => {
                    return Err(Error::Integrity(format!(
                        "id {id} of {token:?} outside [0, {})",
                        map.len()
                    )))
                }
            }
        }
        if id_to_token.first().cloned().flatten().as_deref() != Some(UNKNOWN_TOKEN) {
            return Err(Error::Integrity(format!("id 0 must be {UNKNOWN_TOKEN}")));
        }
        Ok(Self {
            token_to_id: map.into_iter().collect(),
            id_to_token: id_to_token.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// The `{token: id}` map as a JSON document.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self
            .token_to_id
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        check_max_len(max_len)?;
        let ids: Vec<u32> = text
            .split_whitespace()
            .take(max_len)
            .map(|w| self.token_to_id.get(w).copied().unwrap_or(0))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyInput("text has no words".into()));
        }
        TokenSequence::new(ids, self.vocab_size())
    }

    fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let words = seq
            .ids()
            .iter()
            .map(|&id| {
                self.token(id).ok_or(Error::Range {
                    id: id as usize,
                    vocab_size: self.vocab_size(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_first_appearance() {
        let tok = WordTokenizer::from_corpus(["the cat sat", "the dog"]);
        assert_eq!(tok.vocab_size(), 5);
        assert_eq!(tok.encode("the dog sat", 512).unwrap().ids(), &[1, 4, 3]);
        assert_eq!(tok.encode("a zebra", 512).unwrap().ids(), &[0, 0]);
    }

    #[test]
    fn round_trip_and_truncation() {
        let tok = WordTokenizer::from_corpus(["one two three four"]);
        let seq = tok.encode("one  two\tthree four", 3).unwrap();
        assert_eq!(tok.decode(&seq).unwrap(), "one two three");
        assert!(matches!(tok.encode("   ", 8), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn json_round_trip() {
        let tok = WordTokenizer::from_corpus(["alpha beta", "gamma"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("words.json");
        fs::write(&path, tok.to_json()).unwrap();
        assert_eq!(WordTokenizer::load(&path).unwrap(), tok);
    }
}
