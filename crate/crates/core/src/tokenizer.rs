//! WordPiece vocabulary construction and greedy longest-match encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const CONTINUATION: &str = "##";
pub const DEFAULT_VOCAB_SIZE: usize = 8000;
pub const MIN_VOCAB_SIZE: usize = 300;
pub const DEFAULT_MAX_LEN: usize = 128;

/// Words longer than this many characters become `[UNK]` without segmentation.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list; ids follow list order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::format(
                    "vocabulary",
                    format!("id {i} must be {r}"),
                ));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::format(
                    "vocabulary",
                    format!("line {}: token `{t}` is empty or contains whitespace", i + 1),
                ));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format(
                    "vocabulary",
                    format!("line {}: duplicate token `{t}`", i + 1),
                ));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Reads the one-token-per-line format; line number (from 0) is the id.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::format("vocabulary", e.to_string()))?;
            tokens.push(line.strip_suffix('\r').unwrap_or(&line).to_string());
        }
        Vocabulary::from_tokens(tokens)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Vocabulary::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || !(c.is_alphanumeric() || c.is_whitespace())
}

/// Lowercases and splits on whitespace; each punctuation character becomes its own word.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Frequency-ranked vocabulary: reserved tokens, every character seen (both as
/// a word start and as a `##` continuation), then whole words and `##` suffixes
/// by descending corpus frequency, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Empty("vocabulary corpus".into()));
    }
    if target_size < MIN_VOCAB_SIZE {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size {target_size} below the minimum {MIN_VOCAB_SIZE}"
        )));
    }
    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    for text in corpus {
        for w in pre_tokenize(text.as_ref()) {
            *words.entry(w).or_default() += 1;
        }
    }

    let mut chars = BTreeSet::new();
    let mut candidates: BTreeMap<String, u64> = BTreeMap::new();
    for (word, &count) in &words {
        let letters: Vec<char> = word.chars().collect();
        for &c in &letters {
            chars.insert(c.to_string());
            chars.insert(format!("{CONTINUATION}{c}"));
        }
        if letters.len() < 2 || letters.len() > MAX_WORD_CHARS {
            continue;
        }
        *candidates.entry(word.clone()).or_default() += count;
        for start in 1..letters.len() - 1 {
            let suffix: String = letters[start..].iter().collect();
            *candidates
                .entry(format!("{CONTINUATION}{suffix}"))
                .or_default() += count;
        }
    }

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().cloned());
    let mut ranked: Vec<(String, u64)> = candidates
        .into_iter()
        .filter(|(t, _)| !chars.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = target_size.saturating_sub(tokens.len());
    tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

/// Greedy longest-match segmentation of one word. `None` when some position
/// has no matching piece.
pub fn wordpiece(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((id, end));
                break;
            }
        }
        let (id, end) = found?;
        pieces.push(id);
        start = end;
    }
    Some(pieces)
}

/// Fixed-length encoded input: `[CLS] pieces [SEP]` followed by padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn active_ids(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    /// Checks the structural invariants, returning a description of the first violation.
    pub fn check(&self, vocab_size: usize) -> std::result::Result<(), String> {
        let n = self.ids.len();
        if self.mask.len() != n {
            return Err(format!("mask length {} != ids length {n}", self.mask.len()));
        }
        if self.true_length < 2 || self.true_length > n {
            return Err(format!("true_length {} outside 2..={n}", self.true_length));
        }
        if self.ids[0] != CLS_ID || self.ids[self.true_length - 1] != SEP_ID {
            return Err("sequence must start with [CLS] and end with [SEP]".into());
        }
        for i in 0..n {
            let real = i < self.true_length;
            if self.mask[i] != u8::from(real) {
                return Err(format!("mask[{i}] = {}", self.mask[i]));
            }
            if !real && self.ids[i] != PAD_ID {
                return Err(format!("ids[{i}] past true_length is not [PAD]"));
            }
            if self.ids[i] as usize >= vocab_size {
                return Err(format!("ids[{i}] = {} out of range", self.ids[i]));
            }
        }
        Ok(())
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_len {max_len} cannot hold [CLS] and [SEP]"
        )));
    }
    let mut ids = vec![CLS_ID];
    let budget = max_len - 2;
    'words: for word in pre_tokenize(text) {
        let pieces = wordpiece(&word, vocab).unwrap_or_else(|| vec![UNK_ID]);
        for p in pieces {
            if ids.len() - 1 == budget {
                break 'words;
            }
            ids.push(p);
        }
    }
    ids.push(SEP_ID);
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| u8::from(i < true_length)).collect();
    Ok(TokenSequence {
        ids,
        mask,
        true_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(extra: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for c in "abcdefghijklmnopqrstuvwxyz".chars() {
            tokens.push(c.to_string());
            tokens.push(format!("##{c}"));
        }
        tokens.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens).unwrap()
    }

    #[test]
    fn single_word_corpus() {
        let v = build_vocab(&["aaa"], 300).unwrap();
        for t in ["a", "##a", "aaa"] {
            assert!(v.id(t).is_some(), "missing {t}");
        }
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i as u32));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = ["Apple beats earnings | Apple Inc.", "Tesla slumps, again!"];
        assert_eq!(build_vocab(&corpus, 300).unwrap(), build_vocab(&corpus, 300).unwrap());
        assert!(build_vocab::<&str>(&[], 300).is_err());
        assert!(build_vocab(&corpus, 10).is_err());
    }

    #[test]
    fn empty_text() {
        let v = vocab_of(&[]);
        let seq = encode("", &v, 8).unwrap();
        assert_eq!(seq.true_length, 2);
        assert_eq!(seq.ids, vec![CLS_ID, SEP_ID, 0, 0, 0, 0, 0, 0]);
        seq.check(v.len()).unwrap();
    }

    #[test]
    fn unhappy_splits_into_two_pieces() {
        let v = vocab_of(&["un", "##happy"]);
        let pieces = wordpiece("unhappy", &v).unwrap();
        let names: Vec<&str> = pieces.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(names, ["un", "##happy"]);
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = vocab_of(&[]);
        let seq = encode("ümlaut 東京", &v, 8).unwrap();
        assert_eq!(&seq.ids[..seq.true_length], &[CLS_ID, UNK_ID, UNK_ID, SEP_ID]);
    }

    #[test]
    fn truncation_keeps_sep() {
        let v = vocab_of(&[]);
        let seq = encode("abcdefghij", &v, 5).unwrap();
        assert_eq!(seq.true_length, 5);
        assert_eq!(seq.ids[4], SEP_ID);
        seq.check(v.len()).unwrap();
        assert!(encode("a", &v, 1).is_err());
    }

    #[test]
    fn punctuation_is_split_and_lowercased() {
        assert_eq!(pre_tokenize("Apple, Inc. | UP!"), ["apple", ",", "inc", ".", "|", "up", "!"]);
    }

    #[test]
    fn vocab_file_rejects_duplicates_and_missing_reserved() {
        let bad = "[PAD]\n[UNK]\n[CLS]\n[SEP]\na\na\n";
        assert!(Vocabulary::read(bad.as_bytes()).is_err());
        assert!(Vocabulary::read("a\nb\n".as_bytes()).is_err());
        let v = vocab_of(&["un"]);
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
    }
}
