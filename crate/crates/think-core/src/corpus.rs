//! Dialogue pairs, token vocabularies, fixed-length encoding and n-gram sets.
//!
//! Text is lowercased and split on whitespace. Ids `0..3` are reserved for
//! [`PAD`], [`UNK`] and [`EOS`]; every other token is ordered by descending
//! corpus frequency with ties broken lexicographically.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

const SPECIALS: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialoguePair {
    pub context: Vec<String>,
    pub response: Vec<String>,
}

impl DialoguePair {
    pub fn new(context: Vec<String>, response: Vec<String>) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::EmptyText("context"));
        }
        if response.is_empty() {
            return Err(Error::EmptyText("response"));
        }
        Ok(Self { context, response })
    }

    pub fn from_text(context: &str, response: &str) -> Result<Self> {
        Self::new(tokenize(context), tokenize(response))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds the vocabulary from both sides of every pair, keeping at most
    /// `max_size` entries including the three specials.
    pub fn build(pairs: &[DialoguePair], max_size: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_token_stream(
            pairs
                .iter()
                .flat_map(|p| p.context.iter().chain(&p.response))
                .map(String::as_str),
            max_size,
        )
    }

    pub fn from_token_stream<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        max_size: usize,
    ) -> Result<Self> {
        if max_size < 4 {
            return Err(Error::InvalidConfig(alloc::format!(
                "vocabulary max_size must be at least 4, got {max_size}"
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            if SPECIALS.contains(&t) {
                continue;
            }
            *counts.entry(t).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        // BTreeMap iteration is already lexicographic, so a stable sort on count keeps ties ordered.
        ranked.sort_by_key(|&(_, c)| core::cmp::Reverse(c));
        ranked.truncate(max_size - SPECIALS.len());
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary from an ordered list of non-special tokens (ids assigned from 3).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: BTreeMap<String, usize> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for t in tokens {
            if token_to_id.contains_key(&t) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
            token_to_id.insert(t.clone(), id_to_token.len());
            id_to_token.push(t);
        }
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    /// Reads the one-token-per-line listing produced by [`Vocabulary::tokens`].
    pub fn from_listing(all_tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut it = all_tokens.into_iter();
        for (i, special) in SPECIALS.iter().enumerate() {
            match it.next() {
                Some(t) if t == *special => {}
                other => {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "vocabulary line {} must be {special:?}, found {other:?}",
                        i + 1
                    )))
                }
            }
        }
        Self::from_tokens(it)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All tokens in id order, specials first.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get_id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Maps ids to tokens, stopping at the first EOS and dropping PAD.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    pub fn decode_text(&self, ids: &[usize]) -> String {
        self.decode(ids).join(" ")
    }
}

/// Context and response ids at fixed lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub context: Vec<usize>,
    pub response: Vec<usize>,
    /// Context length before padding or truncation.
    pub context_len: usize,
    /// Response length before padding or truncation (EOS excluded).
    pub response_len: usize,
}

/// Encodes a context: truncate the tail, then right-pad with PAD.
pub fn encode_context(tokens: &[String], vocab: &Vocabulary, c_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().take(c_len).map(|t| vocab.id(t)).collect();
    ids.resize(c_len, PAD);
    ids
}

/// Encodes a response: truncate the tail; when room remains append EOS, then pad.
pub fn encode_response(tokens: &[String], vocab: &Vocabulary, r_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().take(r_len).map(|t| vocab.id(t)).collect();
    if ids.len() < r_len {
        ids.push(EOS);
    }
    ids.resize(r_len, PAD);
    ids
}

pub fn encode_pair(pair: &DialoguePair, vocab: &Vocabulary, c_len: usize, r_len: usize) -> EncodedPair {
    EncodedPair {
        context: encode_context(&pair.context, vocab, c_len),
        response: encode_response(&pair.response, vocab, r_len),
        context_len: pair.context.len(),
        response_len: pair.response.len(),
    }
}

/// Row-major id matrices for a batch of encoded pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedBatch {
    pub c_len: usize,
    pub r_len: usize,
    pub context_ids: Vec<usize>,
    pub response_ids: Vec<usize>,
    pub context_lens: Vec<usize>,
    pub response_lens: Vec<usize>,
}

impl TokenizedBatch {
    pub fn from_pairs(pairs: &[EncodedPair], c_len: usize, r_len: usize) -> Result<Self> {
        let mut batch = Self {
            c_len,
            r_len,
            context_ids: Vec::with_capacity(pairs.len() * c_len),
            response_ids: Vec::with_capacity(pairs.len() * r_len),
            context_lens: Vec::with_capacity(pairs.len()),
            response_lens: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            if p.context.len() != c_len {
                return Err(Error::shape("context row", c_len, p.context.len()));
            }
            if p.response.len() != r_len {
                return Err(Error::shape("response row", r_len, p.response.len()));
            }
            batch.context_ids.extend_from_slice(&p.context);
            batch.response_ids.extend_from_slice(&p.response);
            batch.context_lens.push(p.context_len);
            batch.response_lens.push(p.response_len);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.context_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context_lens.is_empty()
    }

    pub fn context(&self, i: usize) -> &[usize] {
        &self.context_ids[i * self.c_len..(i + 1) * self.c_len]
    }

    pub fn response(&self, i: usize) -> &[usize] {
        &self.response_ids[i * self.r_len..(i + 1) * self.r_len]
    }
}

/// The set of n-grams observed in a reference corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramVocabulary {
    n: usize,
    grams: BTreeSet<Vec<String>>,
}

impl NgramVocabulary {
    pub fn build<S: AsRef<[String]>>(references: &[S], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        let grams = references
            .iter()
            .flat_map(|r| r.as_ref().windows(n))
            .map(<[String]>::to_vec)
            .collect();
        Ok(Self { n, grams })
    }

    /// Builds from explicit grams; each must have exactly `n` tokens.
    pub fn from_grams(n: usize, grams: impl IntoIterator<Item = Vec<String>>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for g in grams {
            if g.len() != n {
                return Err(Error::shape("n-gram", n, g.len()));
            }
            set.insert(g);
        }
        Ok(Self { n, grams: set })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &[String]) -> bool {
        gram.len() == self.n && self.grams.contains(gram)
    }

    /// Grams in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = &[String]> {
        self.grams.iter().map(Vec::as_slice)
    }
}
