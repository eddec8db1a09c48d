use std::collections::HashMap;

/// Token id reserved for padding.
pub const PAD_ID: u32 = 0;
pub const PAD_TOKEN: &str = "<pad>";

/// Token string to id mapping. Id 0 is always [`PAD_TOKEN`]; other ids are
/// handed out in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(PAD_TOKEN.to_string(), PAD_ID);
        Vocabulary {
            words: vec![PAD_TOKEN.to_string()],
            index,
        }
    }

    /// Rebuilds a vocabulary from its word list, as stored in a checkpoint.
    /// Returns `None` when the list does not start with the pad token or
    /// contains duplicates.
    pub fn from_words(words: Vec<String>) -> Option<Self> {
        if words.first().map(String::as_str) != Some(PAD_TOKEN) {
            return None;
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return None;
            }
        }
        Some(Vocabulary { words, index })
    }

    pub fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn extend<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) {
        for w in words {
            self.insert(w);
        }
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Id of `word`, or [`PAD_ID`] for unknown words.
    pub fn id_or_pad(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(PAD_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// True when only the pad token is present.
    pub fn is_empty(&self) -> bool {
        self.words.len() == 1
    }
}
