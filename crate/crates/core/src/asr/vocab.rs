use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
const BLANK_NAME: &str = "<blank>";
const SPACE_NAME: &str = "<space>";

/// Character vocabulary with the CTC blank at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn new(chars: &str) -> Result<Self> {
        let mut index = HashMap::new();
        let mut list = Vec::new();
        for c in chars.chars() {
            if index.insert(c, list.len() + 1).is_some() {
                return Err(Error::invalid(format!("duplicate token {c:?}")));
            }
            list.push(c);
        }
        if list.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one token"));
        }
        Ok(Self { chars: list, index })
    }

    /// Space plus the letters `a`-`h`.
    pub fn desk() -> Self {
        Self::new(" abcdefgh").expect("static vocabulary")
    }

    /// Number of symbols including blank.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, token: usize) -> Option<char> {
        token.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }

    pub fn space(&self) -> Option<usize> {
        self.token(' ')
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.token(c)
                    .ok_or_else(|| Error::invalid(format!("token {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens.iter().filter_map(|&t| self.char_of(t)).collect()
    }

    /// Non-blank token ids.
    pub fn symbols(&self) -> impl Iterator<Item = usize> {
        1..self.len()
    }

    /// One token per line, blank first.
    pub fn to_text(&self) -> String {
        let mut out = String::from(BLANK_NAME);
        out.push('\n');
        for &c in &self.chars {
            if c == ' ' {
                out.push_str(SPACE_NAME);
            } else {
                out.push(c);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(BLANK_NAME) {
            return Err(Error::Data("vocabulary file must start with <blank>".into()));
        }
        let mut chars = String::new();
        for line in lines {
            match line {
                SPACE_NAME => chars.push(' '),
                l if l.chars().count() == 1 => chars.push_str(l),
                "" => {}
                l => return Err(Error::Data(format!("bad vocabulary line {l:?}"))),
            }
        }
        Self::new(&chars)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_is_zero_and_round_trips() {
        let v = Vocabulary::desk();
        assert_eq!(v.len(), 10);
        assert_eq!(v.char_of(BLANK), None);
        let ids = v.encode("bad cab").unwrap();
        assert!(ids.iter().all(|&i| i != BLANK));
        assert_eq!(v.decode(&ids), "bad cab");
        assert!(v.encode("xyz").is_err());
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Vocabulary::new("aba").is_err());
    }
}
