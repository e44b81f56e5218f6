use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

/// Index of a token in a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const BOS: TokenId = TokenId(1);
    pub const EOS: TokenId = TokenId(2);
    pub const UNK: TokenId = TokenId(3);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// An owned run of token ids: a prompt, a prefix or a generated continuation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    pub fn starts_with(&self, prefix: &[TokenId]) -> bool {
        self.0.starts_with(prefix)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Splits text into word tokens: lowercased, whitespace separated, with every
/// comma emitted as its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut words = Vec::new();
    for chunk in lowered.split_whitespace() {
        let mut rest = chunk;
        while let Some(pos) = rest.find(',') {
            if pos > 0 {
                words.push(rest[..pos].to_string());
            }
            words.push(",".to_string());
            rest = &rest[pos + 1..];
        }
        if !rest.is_empty() {
            words.push(rest.to_string());
        }
    }
    words
}

/// Renders word tokens to a surface string. Commas attach to the preceding
/// word; everything else is separated by one space.
pub fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    render_words(words).0
}

/// Like [`join_words`], also returning the `[start, end)` character offsets of
/// every token in the rendered string.
pub fn render_words<S: AsRef<str>>(words: &[S]) -> (String, Vec<(usize, usize)>) {
    let mut out = String::new();
    let mut offsets = Vec::with_capacity(words.len());
    let mut chars = 0usize;
    for (i, word) in words.iter().enumerate() {
        let word = word.as_ref();
        if i > 0 && word != "," {
            out.push(' ');
            chars += 1;
        }
        let start = chars;
        out.push_str(word);
        chars += word.chars().count();
        offsets.push((start, chars));
    }
    (out, offsets)
}

/// Word-level token alphabet. Ids `0..4` are always the reserved PAD, BOS,
/// EOS and UNK tokens; ordinary words follow in insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from words, skipping duplicates and the reserved
    /// special spellings.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for special in SPECIALS {
            vocab.insert(special);
        }
        for word in words {
            let word = word.as_ref();
            if !word.is_empty() && !word.chars().any(char::is_whitespace) {
                vocab.insert(word);
            }
        }
        vocab
    }

    /// Collects every word of every text (after [`split_words`]).
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = Vec::new();
        for text in texts {
            words.extend(split_words(text.as_ref()));
        }
        Self::new(words)
    }

    fn insert(&mut self, word: &str) {
        if !self.ids.contains_key(word) {
            let id = TokenId(self.tokens.len() as u32);
            self.tokens.push(word.to_string());
            self.ids.insert(word.to_string(), id);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        TokenId::PAD
    }

    pub fn bos(&self) -> TokenId {
        TokenId::BOS
    }

    pub fn eos(&self) -> TokenId {
        TokenId::EOS
    }

    pub fn unk(&self) -> TokenId {
        TokenId::UNK
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id.index() < SPECIALS.len()
    }

    /// Tokens a language model may assign probability to: everything except
    /// PAD and BOS.
    pub fn is_generatable(&self, id: TokenId) -> bool {
        id != TokenId::PAD && id != TokenId::BOS && self.contains_id(id)
    }

    /// Number of generatable tokens.
    pub fn support_size(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    /// Id of `word`, or UNK.
    pub fn lookup(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(TokenId::UNK)
    }

    /// Ordinary (non-special) words in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[SPECIALS.len()..].iter().map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        (0..self.tokens.len() as u32).map(TokenId)
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        split_words(text).iter().map(|w| self.lookup(w)).collect()
    }

    /// Tokenizes without falling back to UNK; returns the first unknown word
    /// on failure.
    pub fn tokenize_strict(&self, text: &str) -> Result<TokenSequence, String> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(w))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect();
        join_words(&words)
    }
}
