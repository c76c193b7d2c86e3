//! Character trigram language model with add-k smoothing and backoff to the
//! longest context seen in training.

use std::collections::BTreeMap;
use std::path::Path;

use diffnet::checkpoint::Reader;
use rand::Rng;

use crate::alphabet::Alphabet;
use crate::error::{invalid, io_err, Error, Result};

pub const DEFAULT_ADD_K: f64 = 0.01;

const MAGIC: &[u8; 8] = b"TRIGRAM\0";
const VERSION: u32 = 1;

/// Counts are indexed by class id; the value `vocab_size` stands for the
/// start-of-line padding symbol and only ever appears as context.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    vocab_size: usize,
    add_k: f64,
    unigram: Vec<u64>,
    bigram: BTreeMap<u32, Vec<u64>>,
    trigram: BTreeMap<(u32, u32), Vec<u64>>,
}

/// Which table answered a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextLevel {
    Trigram,
    Bigram,
    Unigram,
}

impl NGramModel {
    pub fn train(corpus: &[Vec<usize>], vocab_size: usize, add_k: f64) -> Result<Self> {
        if vocab_size == 0 {
            return invalid("language model vocabulary is empty");
        }
        if corpus.iter().all(Vec::is_empty) {
            return invalid("language model corpus is empty");
        }
        if !(add_k > 0.0) {
            return invalid(format!("add-k constant must be positive, got {}", add_k));
        }
        let bos = vocab_size as u32;
        let mut m = Self {
            vocab_size,
            add_k,
            unigram: vec![0; vocab_size],
            bigram: BTreeMap::new(),
            trigram: BTreeMap::new(),
        };
        for line in corpus {
            let (mut c2, mut c1) = (bos, bos);
            for &l in line {
                if l >= vocab_size {
                    return invalid(format!("corpus label {} outside vocabulary of {}", l, vocab_size));
                }
                m.unigram[l] += 1;
                m.bigram.entry(c1).or_insert_with(|| vec![0; vocab_size])[l] += 1;
                m.trigram.entry((c2, c1)).or_insert_with(|| vec![0; vocab_size])[l] += 1;
                c2 = c1;
                c1 = l as u32;
            }
        }
        Ok(m)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn padded(&self, context: &[usize]) -> (u32, u32) {
        let bos = self.vocab_size as u32;
        let n = context.len();
        let c1 = if n >= 1 { context[n - 1] as u32 } else { bos };
        let c2 = if n >= 2 { context[n - 2] as u32 } else { bos };
        (c2, c1)
    }

    /// Count row of the longest seen context among the last two labels.
    fn counts_for(&self, context: &[usize]) -> (&[u64], ContextLevel) {
        let (c2, c1) = self.padded(context);
        if let Some(row) = self.trigram.get(&(c2, c1)) {
            return (row, ContextLevel::Trigram);
        }
        if let Some(row) = self.bigram.get(&c1) {
            return (row, ContextLevel::Bigram);
        }
        (&self.unigram, ContextLevel::Unigram)
    }

    pub fn context_level(&self, context: &[usize]) -> ContextLevel {
        self.counts_for(context).1
    }

    /// Smoothed conditional probability. `context` holds preceding labels,
    /// most recent last; only the final two are used and missing ones are
    /// treated as start-of-line padding.
    pub fn prob(&self, label: usize, context: &[usize]) -> f64 {
        if label >= self.vocab_size {
            let total: u64 = self.unigram.iter().sum();
            return self.add_k / (total as f64 + self.add_k * self.vocab_size as f64);
        }
        let (row, _) = self.counts_for(context);
        let total: u64 = row.iter().sum();
        (row[label] as f64 + self.add_k) / (total as f64 + self.add_k * self.vocab_size as f64)
    }

    pub fn logp(&self, label: usize, context: &[usize]) -> f64 {
        self.prob(label, context).ln()
    }

    /// Draws the next label from the unsmoothed relative frequencies of the
    /// longest seen context, so unseen continuations are never produced.
    pub fn sample_next<R: Rng + ?Sized>(&self, context: &[usize], rng: &mut R) -> usize {
        let (row, _) = self.counts_for(context);
        let total: u64 = row.iter().sum();
        let mut pick = rng.gen_range(0..total);
        for (l, &c) in row.iter().enumerate() {
            if pick < c {
                return l;
            }
            pick -= c;
        }
        unreachable!("pick below total count")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&self.add_k.to_le_bytes());
        let row = |out: &mut Vec<u8>, r: &[u64]| r.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
        row(&mut out, &self.unigram);
        out.extend_from_slice(&(self.bigram.len() as u32).to_le_bytes());
        for (c1, r) in &self.bigram {
            out.extend_from_slice(&c1.to_le_bytes());
            row(&mut out, r);
        }
        out.extend_from_slice(&(self.trigram.len() as u32).to_le_bytes());
        for ((c2, c1), r) in &self.trigram {
            out.extend_from_slice(&c2.to_le_bytes());
            out.extend_from_slice(&c1.to_le_bytes());
            row(&mut out, r);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a language model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "language model version {} unsupported (expected {})",
                version, VERSION
            )));
        }
        let v = r.u32()? as usize;
        let add_k = r.f64()?;
        if v == 0 || !(add_k > 0.0) {
            return Err(Error::Data("language model header is invalid".into()));
        }
        let read_row = |r: &mut Reader| -> Result<Vec<u64>> { (0..v).map(|_| Ok(r.u64()?)).collect() };
        let unigram = read_row(&mut r)?;
        let mut bigram = BTreeMap::new();
        for _ in 0..r.u32()? {
            let c1 = r.u32()?;
            bigram.insert(c1, read_row(&mut r)?);
        }
        let mut trigram = BTreeMap::new();
        for _ in 0..r.u32()? {
            let c2 = r.u32()?;
            let c1 = r.u32()?;
            trigram.insert((c2, c1), read_row(&mut r)?);
        }
        if !r.is_done() {
            return Err(Error::Data("trailing bytes after language model".into()));
        }
        if unigram.iter().all(|&c| c == 0) {
            return Err(Error::Data("language model has no counts".into()));
        }
        Ok(Self {
            vocab_size: v,
            add_k,
            unigram,
            bigram,
            trigram,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

/// Plain-text corpus: one line per sequence, one alphabet label per character.
/// Blank lines are skipped.
pub fn parse_corpus(text: &str, alphabet: &Alphabet) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| alphabet.encode(l))
        .collect()
}

pub fn format_corpus(lines: &[Vec<usize>], alphabet: &Alphabet) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&alphabet.decode(l));
        s.push('\n');
    }
    s
}
