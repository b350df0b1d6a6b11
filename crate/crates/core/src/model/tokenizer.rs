use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
const RESERVED: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSide {
    /// Drop tokens from the start and keep the end of the statement.
    Head,
    /// Drop tokens from the end.
    Tail,
}

/// Language-agnostic hashing tokenizer.
///
/// Words are maximal alphanumeric runs, each Han or kana character is its
/// own token, every other non-space character is a one-character token.
/// Token ids are hash buckets, so no vocabulary file is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashTokenizer {
    pub vocab_size: u32,
    /// Includes the leading CLS token.
    pub max_sequence_length: usize,
    pub lowercase: bool,
    pub truncation: TruncationSide,
}

/// Token ids of one statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

fn is_ideographic(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF   // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FFFF)
}

impl HashTokenizer {
    pub fn new(vocab_size: u32, max_sequence_length: usize) -> Self {
        HashTokenizer {
            vocab_size,
            max_sequence_length,
            lowercase: true,
            truncation: TruncationSide::Head,
        }
    }

    pub fn pieces(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() && !is_ideographic(c) {
                if self.lowercase {
                    word.extend(c.to_lowercase());
                } else {
                    word.push(c);
                }
                continue;
            }
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
        out
    }

    pub fn token_id(&self, piece: &str) -> u32 {
        let h = Sha256::digest(piece.as_bytes());
        let v = u32::from_le_bytes([h[0], h[1], h[2], h[3]]);
        RESERVED + v % (self.vocab_size - RESERVED)
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut ids: Vec<u32> = self.pieces(text).iter().map(|p| self.token_id(p)).collect();
        let room = self.max_sequence_length.saturating_sub(1);
        let truncated = ids.len() > room;
        if truncated {
            match self.truncation {
                TruncationSide::Head => {
                    ids.drain(..ids.len() - room);
                }
                TruncationSide::Tail => ids.truncate(room),
            }
        }
        ids.insert(0, CLS);
        Encoding { ids, truncated }
    }
}
