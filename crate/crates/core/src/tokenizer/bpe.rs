use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::{check_max_len, TokenSequence, Tokenizer};
use crate::error::{Error, Result};

/// GPT-2 pretokenization pattern without its `\s+(?!\S)` lookahead branch,
/// which the `regex` crate cannot express. [`pretokenize`] restores that
/// behaviour by trimming whitespace runs that precede a non-space character.
const PRETOKEN_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+";

fn pretoken_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(PRETOKEN_PATTERN).expect("static pattern compiles"))
}

/// Splits text into GPT-2 pretokens. The concatenation of the pieces is
/// always the input.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let re = pretoken_regex();
    let mut pieces = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let m = match re.find_at(text, pos) {
            Some(m) => m,
            None => break,
        };
        debug_assert_eq!(m.start(), pos, "pattern covers every character");
        let mut end = m.end();
        let piece = m.as_str();
        // `\s+(?!\S)`: a whitespace run followed by a non-space gives up its
        // last character to the next pretoken.
        if piece.chars().all(char::is_whitespace) && end < text.len() {
            let mut chars = piece.char_indices();
            if piece.chars().count() > 1 {
                if let Some((last_start, _)) = chars.next_back() {
                    end = m.start() + last_start;
                }
            }
        }
        pieces.push(&text[pos..end]);
        pos = end;
    }
    pieces
}

/// GPT-2's reversible map from the 256 byte values to printable characters.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = Vec::with_capacity(256);
    printable.extend(u32::from(b'!')..=u32::from(b'~'));
    printable.extend(0xA1..=0xAC);
    printable.extend(0xAE..=0xFF);
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..256u32 {
        let c = if printable.contains(&b) {
            b
        } else {
            let c = 256 + extra;
            extra += 1;
            c
        };
        table[b as usize] = char::from_u32(c).expect("valid code point");
    }
    table
}

/// A GPT-2 style byte-level BPE vocabulary.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    merges: Vec<(String, String)>,
    /// (left id, right id) -> (rank, merged id)
    merge_table: HashMap<(u32, u32), (usize, u32)>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
}

impl Vocabulary {
    /// Reads a `{token: id}` JSON vocabulary and a merges file whose first
    /// line is a `#` header followed by one `left right` rule per line.
    pub fn load(vocab_file: impl AsRef<Path>, merges_file: impl AsRef<Path>) -> Result<Self> {
        let vocab_path = vocab_file.as_ref();
        let merges_path = merges_file.as_ref();
        let vocab_text = fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let merges_text =
            fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        Self::from_strs(
            &vocab_text,
            &merges_text,
            &vocab_path.display().to_string(),
            &merges_path.display().to_string(),
        )
    }

    /// Same as [`Vocabulary::load`] but from in-memory file contents.
    pub fn from_strs(
        vocab_json: &str,
        merges_text: &str,
        vocab_name: &str,
        merges_name: &str,
    ) -> Result<Self> {
        let raw: serde_json::Map<String, serde_json::Value> = serde_json::from_str(vocab_json)
            .map_err(|e| {
                Error::format(
                    vocab_name,
                    format!("line {} column {}", e.line(), e.column()),
                    e.to_string(),
                )
            })?;
        let mut entries = Vec::with_capacity(raw.len());
        for (token, value) in raw {
            let id = value
                .as_u64()
                .filter(|&v| v <= u64::from(u32::MAX))
                .ok_or_else(|| {
                    Error::format(
                        vocab_name,
                        format!("entry {token:?}"),
                        format!("id must be a non-negative integer, got {value}"),
                    )
                })?;
            entries.push((token, id as u32));
        }
        let mut merges = Vec::new();
        for (idx, line) in merges_text.lines().enumerate() {
            if idx == 0 && line.starts_with('#') {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        merges_name,
                        format!("line {}", idx + 1),
                        format!("expected `left right`, got {line:?}"),
                    ))
                }
            }
        }
        Self::from_parts(entries, merges)
    }

    /// Builds a vocabulary from `(token, id)` entries and ordered merge rules.
    /// Ids must be exactly `0..entries.len()`.
    pub fn from_parts(entries: Vec<(String, u32)>, merges: Vec<(String, String)>) -> Result<Self> {
        let vocab_size = entries.len();
        let mut id_to_token: Vec<Option<String>> = vec![None; vocab_size];
        let mut token_to_id = HashMap::with_capacity(vocab_size);
        for (token, id) in entries {
            let slot = id_to_token.get_mut(id as usize).ok_or_else(|| {
                Error::Integrity(format!(
                    "token {token:?} has id {id}, outside [0, {vocab_size})"
                ))
            })?;
            if let Some(prev) = slot {
                return Err(Error::Integrity(format!(
                    "duplicate id {id} for tokens {prev:?} and {token:?}"
                )));
            }
            *slot = Some(token.clone());
            token_to_id.insert(token, id);
        }
        // Every slot is filled: ids are distinct and all below vocab_size.
        let id_to_token: Vec<String> = id_to_token.into_iter().map(Option::unwrap).collect();

        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                token_to_id.get(t).copied().ok_or_else(|| {
                    Error::Integrity(format!(
                        "merge rule {} ({left} {right}) references {t:?}, absent from the vocabulary",
                        rank + 1
                    ))
                })
            };
            let l = lookup(left)?;
            let r = lookup(right)?;
            let merged = lookup(&format!("{left}{right}"))?;
            merge_table.entry((l, r)).or_insert((rank, merged));
        }

        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        Ok(Self {
            token_to_id,
            id_to_token,
            merges,
            merge_table,
            byte_encoder,
            byte_decoder,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn byte_encoder(&self) -> &[char; 256] {
        &self.byte_encoder
    }

    /// Maps raw bytes to their printable surrogate string.
    pub fn encode_bytes(&self, bytes: &[u8]) -> String {
        bytes
            .iter()
            .map(|&b| self.byte_encoder[b as usize])
            .collect()
    }

    fn bpe(&self, piece: &str, out: &mut Vec<u32>) -> Result<()> {
        let mut word: Vec<u32> = Vec::with_capacity(piece.len());
        for b in piece.bytes() {
            let c = self.byte_encoder[b as usize];
            let mut buf = [0u8; 4];
            let s = c.encode_utf8(&mut buf);
            let id = self.token_to_id.get(&*s).copied().ok_or_else(|| {
                Error::Integrity(format!("byte token {s:?} (byte {b:#04x}) missing from vocabulary"))
            })?;
            word.push(id);
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| self.merge_table.get(&(w[0], w[1])).map(|&(rank, _)| (rank, w[0], w[1])))
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, left, right)) = best else {
                break;
            };
            let merged = self.merge_table[&(left, right)].1;
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            word = next;
        }
        out.extend(word);
        Ok(())
    }
}

impl Tokenizer for Vocabulary {
    fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        check_max_len(max_len)?;
        if text.is_empty() {
            return Err(Error::EmptyInput("cannot encode empty text".into()));
        }
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            self.bpe(piece, &mut ids)?;
            if ids.len() >= max_len {
                break;
            }
        }
        ids.truncate(max_len);
        TokenSequence::new(ids, self.vocab_size())
    }

    fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let mut bytes = Vec::with_capacity(seq.len() * 4);
        for &id in seq.ids() {
            let token = self.id_to_token.get(id as usize).ok_or(Error::Range {
                id: id as usize,
                vocab_size: self.vocab_size(),
            })?;
            for c in token.chars() {
                let b = self.byte_decoder.get(&c).ok_or_else(|| {
                    Error::Integrity(format!("token {token:?} contains non-byte character {c:?}"))
                })?;
                bytes.push(*b);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    fn display_token(&self, id: u32) -> String {
        match self.token(id) {
            Some(t) => {
                let bytes: Vec<u8> = t
                    .chars()
                    .filter_map(|c| self.byte_decoder.get(&c).copied())
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            None => "<?>".to_string(),
        }
    }
}
