//! Byte-pair-encoding tokenizer compatible with the CLIP text encoder.
//!
//! Text is whitespace-normalized and lowercased, split with CLIP's pre-tokenizer
//! pattern, mapped byte-wise onto the printable byte alphabet, and merged per word by
//! repeatedly applying the lowest-ranked applicable merge. The last symbol of each word
//! carries the `</w>` end-of-word marker.
//!
//! Token ids follow CLIP's construction unless a vocabulary JSON is supplied:
//! 256 byte symbols, the same 256 with `</w>`, one id per merge in rank order, then
//! the two sentinels.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const START_OF_TEXT: &str = "<|startoftext|>";
pub const END_OF_TEXT: &str = "<|endoftext|>";
/// CLIP's context length, including both sentinels.
pub const CONTEXT_LENGTH: usize = 77;

const PRETOKENIZE: &str =
    r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+";

/// GPT-2/CLIP reversible byte → printable-char table.
fn bytes_to_unicode() -> Vec<(u8, char)> {
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars = printable.clone();
    let mut extra = 0;
    for b in 0..=255u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    printable
        .into_iter()
        .zip(chars)
        .map(|(b, c)| (b as u8, char::from_u32(c).expect("valid scalar")))
        .collect()
}

/// Ordered merge rules plus the symbol → id table.
#[derive(Debug, Clone)]
pub struct BpeVocabulary {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    token_table: HashMap<String, u32>,
    end_of_word_marker: String,
}

impl BpeVocabulary {
    /// Parses the standard merges format: one `left right` pair per line, an optional
    /// `#version:` header, blank lines ignored.
    pub fn parse_merges(text: &str, origin: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if (i == 0 && line.starts_with("#version:")) || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                });
            }
            merges.push((fields[0].to_string(), fields[1].to_string()));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: 0,
                    message: format!("duplicate merge {} {}", pair.0, pair.1),
                });
            }
        }
        let token_table = clip_token_table(&merges);
        Ok(BpeVocabulary {
            merges,
            ranks,
            token_table,
            end_of_word_marker: END_OF_WORD.to_string(),
        })
    }

    /// Replaces the derived id table with an explicit `{"symbol": id}` JSON map.
    pub fn with_token_table_json(mut self, json: &str) -> Result<Self> {
        self.token_table = serde_json::from_str(json)?;
        Ok(self)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    pub fn token_id(&self, symbol: &str) -> Option<u32> {
        self.token_table.get(symbol).copied()
    }

    pub fn len(&self) -> usize {
        self.token_table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_table.is_empty()
    }

    pub fn end_of_word_marker(&self) -> &str {
        &self.end_of_word_marker
    }
}

fn clip_token_table(merges: &[(String, String)]) -> HashMap<String, u32> {
    let byte_chars: Vec<String> = bytes_to_unicode().into_iter().map(|(_, c)| c.to_string()).collect();
    let symbols = byte_chars
        .iter()
        .cloned()
        .chain(byte_chars.iter().map(|c| format!("{c}{END_OF_WORD}")))
        .chain(merges.iter().map(|(a, b)| format!("{a}{b}")))
        .chain([START_OF_TEXT.to_string(), END_OF_TEXT.to_string()]);
    let mut table = HashMap::new();
    for (id, sym) in symbols.enumerate() {
        // first occurrence wins, matching dict construction order in the reference encoder
        table.entry(sym).or_insert(id as u32);
    }
    table
}

pub fn load_vocabulary(merges_file: &Path) -> Result<BpeVocabulary> {
    let text = std::fs::read_to_string(merges_file).map_err(|e| Error::io(merges_file, e))?;
    BpeVocabulary::parse_merges(&text, &merges_file.display().to_string())
}

/// Encoder bound to one vocabulary. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: BpeVocabulary,
    pattern: Regex,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    id_to_symbol: HashMap<u32, String>,
}

impl BpeTokenizer {
    pub fn new(vocab: BpeVocabulary) -> Self {
        let mut byte_encoder = ['\0'; 256];
        let mut byte_decoder = HashMap::new();
        for (b, c) in bytes_to_unicode() {
            byte_encoder[b as usize] = c;
            byte_decoder.insert(c, b);
        }
        let id_to_symbol = vocab.token_table.iter().map(|(s, &id)| (id, s.clone())).collect();
        BpeTokenizer {
            vocab,
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
            byte_encoder,
            byte_decoder,
            id_to_symbol,
        }
    }

    pub fn vocabulary(&self) -> &BpeVocabulary {
        &self.vocab
    }

    /// Lowercased, whitespace-collapsed form the pre-tokenizer sees.
    pub fn normalize(text: &str) -> String {
        text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
    }

    /// Pre-tokenized words of `text`.
    pub fn words(&self, text: &str) -> Vec<String> {
        let normalized = Self::normalize(text);
        self.pattern
            .find_iter(&normalized)
            .map(|m| m.as_str().to_string())
            .collect()
    }

    /// BPE symbols for `text`, in order.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in self.words(text) {
            if word == START_OF_TEXT || word == END_OF_TEXT {
                out.push(word);
                continue;
            }
            let mapped: String = word.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            out.extend(self.merge_word(&mapped));
        }
        out
    }

    fn merge_word(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut symbols: Vec<String> = chars.iter().map(char::to_string).collect();
        if let Some(last) = symbols.last_mut() {
            last.push_str(&self.vocab.end_of_word_marker);
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.vocab.rank(&w[0], &w[1]).map(|r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, left, right)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
            if symbols.len() == 1 {
                break;
            }
        }
        symbols
    }

    /// Token ids for `text` without sentinels.
    ///
    /// Symbols missing from a custom id table fall back to their single-byte symbols.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for sym in self.tokens(text) {
            if let Some(id) = self.vocab.token_id(&sym) {
                ids.push(id);
                continue;
            }
            let (body, eow) = match sym.strip_suffix(END_OF_WORD) {
                Some(body) => (body, true),
                None => (sym.as_str(), false),
            };
            let chars: Vec<char> = body.chars().collect();
            for (k, c) in chars.iter().enumerate() {
                let piece = if eow && k + 1 == chars.len() {
                    format!("{c}{END_OF_WORD}")
                } else {
                    c.to_string()
                };
                if let Some(id) = self.vocab.token_id(&piece) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    /// Content tokens, sentinels excluded.
    pub fn count_tokens(&self, text: &str) -> usize {
        self.tokens(text)
            .iter()
            .filter(|t| *t != START_OF_TEXT && *t != END_OF_TEXT)
            .count()
    }

    /// Inverse of [`encode`](Self::encode): word boundaries become single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        let joined: String = ids
            .iter()
            .filter_map(|id| self.id_to_symbol.get(id))
            .map(String::as_str)
            .collect();
        let mut bytes = Vec::with_capacity(joined.len());
        for piece in joined.split_inclusive(END_OF_WORD) {
            let (body, eow) = match piece.strip_suffix(END_OF_WORD) {
                Some(b) => (b, true),
                None => (piece, false),
            };
            bytes.extend(body.chars().filter_map(|c| self.byte_decoder.get(&c)));
            if eow {
                bytes.push(b' ');
            }
        }
        String::from_utf8_lossy(&bytes).trim_end().to_string()
    }
}

pub fn encode(text: &str, vocab: &BpeVocabulary) -> Vec<u32> {
    BpeTokenizer::new(vocab.clone()).encode(text)
}

pub fn count_tokens(text: &str, vocab: &BpeVocabulary) -> usize {
    BpeTokenizer::new(vocab.clone()).count_tokens(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "#version: 0.2\nl o\nlo w\nlo w</w>\n";

    fn toy() -> BpeTokenizer {
        BpeTokenizer::new(BpeVocabulary::parse_merges(TOY, "toy").unwrap())
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let table = bytes_to_unicode();
        assert_eq!(table.len(), 256);
        let mut chars: Vec<char> = table.iter().map(|(_, c)| *c).collect();
        chars.sort();
        chars.dedup();
        assert_eq!(chars.len(), 256);
        assert_eq!(table[0], (b'!', '!'));
    }

    #[test]
    fn loads_toy_merges_with_header() {
        let v = BpeVocabulary::parse_merges("#version: 0.2\na b\nab c\nc d</w>\nx y\n", "t").unwrap();
        assert_eq!(v.merges().len(), 4);
        assert_eq!(v.rank("a", "b"), Some(0));
        assert_eq!(v.rank("x", "y"), Some(3));
        assert_eq!(v.token_id("ab"), Some(512));
        assert_eq!(v.token_id(START_OF_TEXT), Some(516));
    }

    #[test]
    fn rejects_malformed_line_with_number() {
        let err = BpeVocabulary::parse_merges("a b\nc d e\n", "m.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(BpeVocabulary::parse_merges("a b\na b\n", "m").is_err());
    }

    #[test]
    fn toy_encodings_match_hand_run() {
        let t = toy();
        assert!(t.encode("").is_empty());
        assert_eq!(t.tokens("low low"), ["low</w>", "low</w>"]);
        let ids = t.encode("low low");
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0], ids[1]);
        // l o w e r</w> -> lo w e r</w> -> low e r</w>
        assert_eq!(t.tokens("low lower"), ["low</w>", "low", "e", "r</w>"]);
        assert_eq!(t.count_tokens("LOW"), 1);
    }

    #[test]
    fn punctuation_and_digits_split() {
        let t = toy();
        assert_eq!(
            t.words("Hello,  World! 42 don't"),
            ["hello", ",", "world", "!", "4", "2", "don", "'t"]
        );
    }

    #[test]
    fn sentinels_are_not_counted() {
        let t = toy();
        assert_eq!(t.count_tokens("<|startoftext|>low<|endoftext|>"), 1);
    }

    #[test]
    fn decode_inverts_encode_on_words() {
        let t = toy();
        assert_eq!(t.decode(&t.encode("  Low   LOWER lo ")), "low lower lo");
    }

    #[test]
    fn custom_table_falls_back_to_bytes() {
        let v = BpeVocabulary::parse_merges(TOY, "toy")
            .unwrap()
            .with_token_table_json(r#"{"l": 1, "o": 2, "w</w>": 3, "lo": 4}"#)
            .unwrap();
        let t = BpeTokenizer::new(v);
        assert_eq!(t.encode("low"), [1, 2, 3]);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> BpeTokenizer {
        BpeTokenizer::new(BpeVocabulary::parse_merges("l o\nlo w\nlo w</w>\ne r</w>\n", "toy").unwrap())
    }

    proptest! {
        #[test]
        fn encode_is_total_and_deterministic(s in any::<String>()) {
            let t = toy();
            prop_assert_eq!(t.encode(&s), t.encode(&s));
        }

        #[test]
        fn concatenation_bound(a in "[a-z ,.!0-9]{0,30}", b in "[a-z ,.!0-9]{0,30}") {
            let t = toy();
            let joined = format!("{a} {b}");
            prop_assert!(t.count_tokens(&joined) <= t.count_tokens(&a) + t.count_tokens(&b) + 1);
        }

        #[test]
        fn ascii_words_round_trip(words in prop::collection::vec("[a-zA-Z]{1,8}", 0..8), sep in "[ \t\n]{1,3}") {
            let t = toy();
            let text = words.join(&sep);
            prop_assert_eq!(t.decode(&t.encode(&text)), BpeTokenizer::normalize(&text));
        }
    }
}
