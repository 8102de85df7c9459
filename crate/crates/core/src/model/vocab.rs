use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const YES: TokenId = 2;
pub const NO: TokenId = 3;
pub const IS: TokenId = 4;
pub const THERE: TokenId = 5;
pub const A: TokenId = 6;
pub const DESCRIBE: TokenId = 7;

const SPECIALS: [&str; 8] = ["<bos>", "<eos>", "yes", "no", "is", "there", "a", "describe"];

const PATCH_PREFIX: &str = "<img:";
const BACKGROUND_PREFIX: &str = "<bg";

/// Fixed word table.
///
/// Layout: the eight special/template words, then object words, then one
/// patch token `<img:word>` per object word, then background patch tokens
/// `<bg0>`, `<bg1>`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    n_objects: usize,
    n_background: usize,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(objects: &[S], n_background: usize) -> Result<Self> {
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for o in objects {
            let o = o.as_ref().to_lowercase();
            if o.is_empty() || !o.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(Error::InvalidInput(format!(
                    "object word `{o}` must be a nonempty alphanumeric word"
                )));
            }
            words.push(o);
        }
        for o in objects {
            words.push(format!("{PATCH_PREFIX}{}>", o.as_ref().to_lowercase()));
        }
        for b in 0..n_background {
            words.push(format!("{BACKGROUND_PREFIX}{b}>"));
        }
        Self::from_words(words)
    }

    /// Rebuilds a vocabulary from its word table, validating the layout.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(Error::InvalidInput("word table must start with the special words".into()));
        }
        let rest = &words[SPECIALS.len()..];
        let n_objects = rest
            .iter()
            .take_while(|w| !w.starts_with(PATCH_PREFIX) && !w.starts_with(BACKGROUND_PREFIX))
            .count();
        for (i, o) in rest[..n_objects].iter().enumerate() {
            let expected = format!("{PATCH_PREFIX}{o}>");
            if rest.get(n_objects + i) != Some(&expected) {
                return Err(Error::InvalidInput(format!("missing patch token {expected}")));
            }
        }
        let bg = &rest[2 * n_objects..];
        for (b, w) in bg.iter().enumerate() {
            if *w != format!("{BACKGROUND_PREFIX}{b}>") {
                return Err(Error::InvalidInput(format!("unexpected word `{w}` in background block")));
            }
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate word `{w}`")));
            }
        }
        Ok(Self {
            n_background: bg.len(),
            words,
            index,
            n_objects,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_background(&self) -> usize {
        self.n_background
    }

    /// Object word names in table order.
    pub fn object_words(&self) -> &[String] {
        &self.words[SPECIALS.len()..SPECIALS.len() + self.n_objects]
    }

    /// Token id of the `k`-th object word.
    pub fn object_token(&self, k: usize) -> TokenId {
        SPECIALS.len() + k
    }

    /// Object index of `id` if it is an object word.
    pub fn object_index(&self, id: TokenId) -> Option<usize> {
        let k = id.checked_sub(SPECIALS.len())?;
        (k < self.n_objects).then_some(k)
    }

    pub fn is_object_word(&self, id: TokenId) -> bool {
        self.object_index(id).is_some()
    }

    /// Patch token carrying the `k`-th object.
    pub fn patch_token(&self, k: usize) -> TokenId {
        SPECIALS.len() + self.n_objects + k
    }

    pub fn background_token(&self, b: usize) -> TokenId {
        SPECIALS.len() + 2 * self.n_objects + b
    }

    /// Object index carried by a patch token, `None` for background.
    pub fn patch_object(&self, id: TokenId) -> Option<usize> {
        let k = id.checked_sub(SPECIALS.len() + self.n_objects)?;
        (k < self.n_objects).then_some(k)
    }

    pub fn is_background_token(&self, id: TokenId) -> bool {
        let start = SPECIALS.len() + 2 * self.n_objects;
        (start..start + self.n_background).contains(&id)
    }

    /// Maps the known words of free text to token ids, skipping unknown
    /// words and punctuation.
    pub fn encode_known(&self, text: &str) -> Vec<TokenId> {
        words_of(text).filter_map(|w| self.id(&w)).collect()
    }
}

/// Lowercased alphanumeric words of `text`.
pub(crate) fn words_of(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.words.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        Vocabulary::from_words(words).map_err(serde::de::Error::custom)
    }
}
