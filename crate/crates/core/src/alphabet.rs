use crate::error::{invalid, Result};

/// Dense class ids `0..len` with one display character each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<char>,
}

impl Alphabet {
    pub fn new(labels: Vec<char>) -> Result<Self> {
        if labels.is_empty() {
            return invalid("alphabet is empty");
        }
        for (i, c) in labels.iter().enumerate() {
            if labels[..i].contains(c) {
                return invalid(format!("label {:?} appears twice", c));
            }
        }
        Ok(Self { labels })
    }

    /// `n` consecutive lowercase letters starting at `a` (then digits).
    pub fn latin(n: usize) -> Result<Self> {
        let pool: Vec<char> = ('a'..='z').chain('0'..='9').collect();
        if n > pool.len() {
            return invalid(format!("at most {} toy labels available", pool.len()));
        }
        Self::new(pool[..n].to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> char {
        self.labels[id]
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.labels.iter().position(|&l| l == c)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| crate::Error::Data(format!("label {:?} not in alphabet", c)))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.labels[i]).collect()
    }
}
