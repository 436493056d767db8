//! Shared WordPiece-style vocabulary: training by likelihood-scored pair
//! merges and greedy longest-match-first tokenization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::LanguagePartition;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;
pub const NUM_SPECIALS: usize = SPECIALS.len();

/// Prefix marking word-internal pieces.
pub const CONTINUATION: &str = "##";

/// Default vocabulary size for desk-scale corpora.
pub const DEFAULT_VOCAB_SIZE: usize = 8_000;

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

/// Token ids plus the character span each one covers in the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    /// Half-open `(start, end)` spans in Unicode scalar values.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl SubwordVocabulary {
    /// Builds a vocabulary from an ordered token list whose first five
    /// entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::invalid(format!(
                "vocabulary must start with the specials {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 1;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("token {i} is empty or has whitespace")));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token '{tok}'")));
            }
            if i >= NUM_SPECIALS {
                let body = tok.strip_prefix(CONTINUATION).unwrap_or(tok);
                max_piece_chars = max_piece_chars.max(body.chars().count());
            }
        }
        Ok(SubwordVocabulary {
            tokens,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_SPECIALS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Stable identity used to tie models to the vocabulary they were
    /// trained with.
    pub fn fingerprint(&self) -> u64 {
        crate::rng::fnv1a(self.to_text().as_bytes())
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    /// Greedy longest-match-first tokenization within each whitespace word.
    /// Characters that cannot start any piece become `[UNK]`.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut seq = TokenSequence::default();
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            self.tokenize_word(&chars[start..i], start, &mut seq);
        }
        seq
    }

    fn tokenize_word(&self, word: &[char], base: usize, seq: &mut TokenSequence) {
        let mut pos = 0;
        let mut buf = String::new();
        while pos < word.len() {
            let longest = self.max_piece_chars.min(word.len() - pos);
            let mut matched = None;
            for len in (1..=longest).rev() {
                buf.clear();
                if pos > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&word[pos..pos + len]);
                if let Some(id) = self.id(&buf) {
                    matched = Some((id, len));
                    break;
                }
            }
            let (id, len) = matched.unwrap_or((UNK_ID, 1));
            seq.ids.push(id);
            seq.offsets.push((base + pos, base + pos + len));
            pos += len;
        }
    }

    /// Total and distinct non-special token counts of `text`.
    pub fn count_tokens(&self, text: &str) -> (usize, usize) {
        let seq = self.tokenize(text);
        let mut unique = HashSet::new();
        let mut total = 0;
        for id in seq.ids.into_iter().filter(|id| !is_special(*id)) {
            total += 1;
            unique.insert(id);
        }
        (total, unique.len())
    }
}

/// Total and unique non-special token counts for a partition.
pub fn token_stats(vocab: &SubwordVocabulary, partition: &LanguagePartition) -> (usize, usize) {
    vocab.count_tokens(&partition.text)
}

/// Trains one vocabulary over all partitions jointly.
pub fn train_vocabulary(partitions: &[LanguagePartition], vocab_size: usize) -> Result<SubwordVocabulary> {
    train_on_texts(partitions.iter().map(|p| p.text.as_str()), vocab_size)
}

/// Trains a vocabulary with greedy pair merges.
///
/// Each step merges the adjacent pair maximizing
/// `count(pair) / (count(left) * count(right))` among pairs seen at least
/// twice; equal scores go to the lexicographically smallest merged token.
/// Training stops at `vocab_size` tokens or when no pair repeats.
pub fn train_on_texts<'a, I>(texts: I, vocab_size: usize) -> Result<SubwordVocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for text in texts {
        for w in text.split_whitespace() {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }

    let mut alphabet = BTreeSet::new();
    for w in word_counts.keys() {
        for c in w.chars() {
            alphabet.insert(c.to_string());
            alphabet.insert(format!("{CONTINUATION}{c}"));
        }
    }
    if vocab_size < alphabet.len() + NUM_SPECIALS {
        return Err(Error::invalid(format!(
            "vocab_size {vocab_size} is smaller than the {} observed alphabet pieces plus {NUM_SPECIALS} specials",
            alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);
    let mut ids: HashMap<String, TokenId> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    let mut words: Vec<(Vec<TokenId>, u64)> = word_counts
        .iter()
        .map(|(w, &n)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    let key = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    ids[&key]
                })
                .collect();
            (pieces, n)
        })
        .collect();

    let mut piece_freq: Vec<u64> = vec![0; tokens.len()];
    let mut pair_freq: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    let mut pair_words: HashMap<(TokenId, TokenId), BTreeSet<usize>> = HashMap::new();
    for (wi, (pieces, n)) in words.iter().enumerate() {
        for &p in pieces {
            piece_freq[p as usize] += n;
        }
        for pair in pieces.windows(2) {
            let key = (pair[0], pair[1]);
            *pair_freq.entry(key).or_insert(0) += n;
            pair_words.entry(key).or_default().insert(wi);
        }
    }

    let merged_name = |tokens: &[String], (l, r): (TokenId, TokenId)| -> String {
        let right = &tokens[r as usize];
        let right = right.strip_prefix(CONTINUATION).unwrap_or(right);
        format!("{}{}", tokens[l as usize], right)
    };

    while tokens.len() < vocab_size {
        let mut best: Option<((TokenId, TokenId), f64, String)> = None;
        for (&pair, &freq) in &pair_freq {
            if freq < 2 {
                continue;
            }
            let denom = piece_freq[pair.0 as usize] as f64 * piece_freq[pair.1 as usize] as f64;
            let score = freq as f64 / denom;
            let better = match &best {
                None => true,
                Some((best_pair, s, name)) => {
                    score > *s || (score == *s && (merged_name(&tokens, pair), pair) < (name.clone(), *best_pair))
                }
            };
            if better {
                best = Some((pair, score, merged_name(&tokens, pair)));
            }
        }
        let Some((pair, _, name)) = best else { break };

        let new_id = match ids.get(&name) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as TokenId;
                tokens.push(name.clone());
                ids.insert(name, id);
                piece_freq.push(0);
                id
            }
        };

        let affected = pair_words.remove(&pair).unwrap_or_default();
        for wi in affected {
            let (pieces, n) = &mut words[wi];
            let n = *n;
            if !pieces.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            for w in pieces.windows(2) {
                let key = (w[0], w[1]);
                if let Some(f) = pair_freq.get_mut(&key) {
                    *f -= n;
                    if *f == 0 {
                        pair_freq.remove(&key);
                    }
                }
            }
            for &p in pieces.iter() {
                piece_freq[p as usize] -= n;
            }
            let mut merged = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && (pieces[i], pieces[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(pieces[i]);
                    i += 1;
                }
            }
            *pieces = merged;
            for &p in pieces.iter() {
                piece_freq[p as usize] += n;
            }
            for w in pieces.windows(2) {
                let key = (w[0], w[1]);
                *pair_freq.entry(key).or_insert(0) += n;
                pair_words.entry(key).or_default().insert(wi);
            }
        }
        pair_freq.remove(&pair);
    }

    SubwordVocabulary::from_tokens(tokens)
}
