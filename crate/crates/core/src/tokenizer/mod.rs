//! Text to token-id conversion.
//!
//! Two tokenizers share the [`Tokenizer`] trait:
//!
//! * [`Vocabulary`]: GPT-2 compatible byte-level BPE. Its ids index the rows
//!   of a GPT-2 word-embedding table, so an imported table lines up with the
//!   ids produced here.
//! * [`WordTokenizer`]: whitespace split over a corpus-built id map, used for
//!   self-contained runs when no GPT-2 vocabulary files are at hand.
//!
//! Neither tokenizer inserts special tokens. Sequences are hard-truncated to
//! `max_len`, keeping the prefix.

mod bpe;
mod word;

pub use bpe::{bytes_to_unicode, pretokenize, Vocabulary};
pub use word::WordTokenizer;

use crate::error::{Error, Result};

/// Default maximum sequence length.
pub const DEFAULT_MAX_LEN: usize = 512;

/// A validated, non-empty list of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Builds a sequence, checking it is non-empty and every id is below
    /// `vocab_size`.
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("token sequence has no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Range {
                id: bad as usize,
                vocab_size,
            });
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Shared interface of the tokenizers. Implementations are immutable after
/// construction and safe to share across threads.
pub trait Tokenizer: Send + Sync {
    /// Encodes `text`, truncating to at most `max_len` ids.
    fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence>;

    /// Decodes ids back to text.
    fn decode(&self, seq: &TokenSequence) -> Result<String>;

    fn vocab_size(&self) -> usize;

    /// The surface string of a token id, if it exists.
    fn token(&self, id: u32) -> Option<&str>;

    /// Human-readable rendering of a token for attribution output.
    fn display_token(&self, id: u32) -> String {
        self.token(id).unwrap_or("<?>").to_string()
    }
}

pub(crate) fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    Ok(())
}
