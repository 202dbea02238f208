use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{BOUNDARY, UNK};

pub const BOUNDARY_TOKEN: &str = "<bnd>";
pub const UNK_TOKEN: &str = "UNK";

/// Default minimum occurrence count for a word to get its own id.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Lowercases, turns ASCII punctuation into separators and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Bijective token/id map. Ids 0 and 1 are the boundary and unknown
/// tokens; kept words follow in descending count, then lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    counts: Vec<usize>,
}

impl Vocabulary {
    pub fn build<'a, I>(captions: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_captions = 0usize;
        for text in captions {
            n_captions += 1;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if n_captions == 0 {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> = Vec::new();
        let mut unk_count = 0;
        for (tok, n) in counts {
            if n >= min_count.max(1) && tok != BOUNDARY_TOKEN && tok != UNK_TOKEN {
                kept.push((tok, n));
            } else {
                unk_count += n;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut rows = vec![(BOUNDARY_TOKEN.to_owned(), 0), (UNK_TOKEN.to_owned(), unk_count)];
        rows.extend(kept);
        Ok(Self::from_rows(rows))
    }

    fn from_rows(rows: Vec<(String, usize)>) -> Self {
        let (id_to_token, counts): (Vec<String>, Vec<usize>) = rows.into_iter().unzip();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
            counts,
        }
    }

    /// Vocabulary over explicit word strings, each with count zero.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut rows = vec![(BOUNDARY_TOKEN.to_owned(), 0), (UNK_TOKEN.to_owned(), 0)];
        rows.extend(words.iter().map(|w| (w.as_ref().to_owned(), 0)));
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<usize> {
        self.counts.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins token strings with single spaces; unknown ids render as `UNK`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `token<TAB>count` per line, reserved rows first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, n) in self.id_to_token.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{n}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, n) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("vocab line {}: missing tab", lineno + 1)))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("vocab line {}: bad count `{n}`", lineno + 1)))?;
            rows.push((tok.to_owned(), n));
        }
        if rows.len() < 2 || rows[BOUNDARY].0 != BOUNDARY_TOKEN || rows[UNK].0 != UNK_TOKEN {
            return Err(Error::Data(format!(
                "vocab file must start with `{BOUNDARY_TOKEN}` and `{UNK_TOKEN}` rows"
            )));
        }
        let vocab = Self::from_rows(rows);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(Error::Data("vocab file contains duplicate tokens".into()));
        }
        Ok(vocab)
    }
}
