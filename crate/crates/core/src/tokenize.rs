//! Text ingestion: vocabularies, word units, bags and random initial orders.
//!
//! Text is split on whitespace, and each punctuation character becomes a
//! word of its own. A word is looked up whole in the vocabulary; failing
//! that it is segmented greedily into a head piece and `##`-prefixed
//! continuation pieces. In word-atomic mode all pieces of one word form a
//! single [`WordUnit`] that search moves never split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng_from_seed;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const CONTINUATION: &str = "##";

/// Characters split off as standalone word units.
pub const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '—', '(', ')', '"', '\''];

pub fn is_punctuation(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bidirectional map between surface strings and token ids.
///
/// Ids are dense and assigned in insertion order, so the line number of a
/// vocabulary file is the id of its entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// A vocabulary holding only the reserved start and end tokens, plus the
    /// unknown-word token when `with_unk` is set.
    pub fn new(with_unk: bool) -> Self {
        let mut vocab = Vocab { surfaces: Vec::new(), index: HashMap::new() };
        vocab.insert(BOS);
        vocab.insert(EOS);
        if with_unk {
            vocab.insert(UNK);
        }
        vocab
    }

    /// Builds a vocabulary from every word of every line, in order of first
    /// occurrence.
    pub fn from_corpus<S: AsRef<str>>(lines: &[S], with_unk: bool) -> Self {
        let mut vocab = Vocab::new(with_unk);
        for line in lines {
            for word in split_words(line.as_ref()) {
                vocab.insert(word);
            }
        }
        vocab
    }

    pub fn from_surfaces<I, S>(surfaces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab { surfaces: Vec::new(), index: HashMap::new() };
        for s in surfaces {
            vocab.insert(s.as_ref());
        }
        if vocab.get(BOS).is_none() {
            vocab.insert(BOS);
        }
        if vocab.get(EOS).is_none() {
            vocab.insert(EOS);
        }
        vocab
    }

    /// Reads one surface form per line. Missing reserved tokens are appended
    /// after the file's entries so existing ids are unchanged.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut surfaces = Vec::new();
        for line in reader.lines() {
            surfaces.push(line?);
        }
        Ok(Self::from_surfaces(surfaces))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.surfaces {
            writeln!(out, "{s}")?;
        }
        Ok(())
    }

    /// Returns the id of `surface`, adding it if absent.
    pub fn insert(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = TokenId(self.surfaces.len() as u32);
        self.surfaces.push(surface.to_owned());
        self.index.insert(surface.to_owned(), id);
        id
    }

    pub fn get(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.get(BOS).expect("vocabulary always holds the start token")
    }

    pub fn eos(&self) -> TokenId {
        self.get(EOS).expect("vocabulary always holds the end token")
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.get(UNK)
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.surfaces.len() as u32).map(TokenId)
    }

    /// Adds every word of `text` that cannot be tokenized yet.
    pub fn extend_from_text(&mut self, text: &str) {
        for word in split_words(text) {
            if self.segment(word).is_none() {
                self.insert(word);
            }
        }
    }

    /// Whole-word lookup, then greedy longest-match segmentation into a head
    /// piece followed by `##` continuation pieces.
    fn segment(&self, word: &str) -> Option<Vec<TokenId>> {
        if let Some(id) = self.get(word) {
            return Some(vec![id]);
        }
        let mut pieces = Vec::new();
        let mut rest = word;
        while !rest.is_empty() {
            let boundaries: Vec<usize> =
                rest.char_indices().map(|(i, _)| i).skip(1).chain([rest.len()]).collect();
            let found = boundaries.iter().rev().find_map(|&end| {
                let piece = &rest[..end];
                let id = if pieces.is_empty() {
                    self.get(piece)
                } else {
                    self.get(&format!("{CONTINUATION}{piece}"))
                };
                id.map(|id| (id, end))
            });
            let (id, end) = found?;
            pieces.push(id);
            rest = &rest[end..];
        }
        Some(pieces)
    }
}

/// Splits text into words: whitespace-delimited runs with every punctuation
/// character separated out.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// The whitespace normalization under which detokenization is lossless:
/// words and punctuation separated by single spaces.
pub fn normalize_whitespace(text: &str) -> String {
    split_words(text).join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every subtoken is its own unit.
    Subtoken,
    /// The subtokens of one word form one unit.
    WordAtomic,
}

/// An atomic group of one or more subtokens.
///
/// A unit's index within its sequence is its position; units compare by
/// their token ids, which is also the identity used by [`Bag`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordUnit {
    tokens: Vec<TokenId>,
}

impl WordUnit {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("word unit with no tokens".into()));
        }
        Ok(WordUnit { tokens })
    }

    pub fn single(token: TokenId) -> Self {
        WordUnit { tokens: vec![token] }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn first(&self) -> TokenId {
        self.tokens[0]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// An ordered sequence of word units following a fixed token context.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordUnitSeq {
    pub units: Vec<WordUnit>,
    pub context: Vec<TokenId>,
}

impl WordUnitSeq {
    pub fn new(units: Vec<WordUnit>) -> Self {
        WordUnitSeq { units, context: Vec::new() }
    }

    pub fn with_context(units: Vec<WordUnit>, context: Vec<TokenId>) -> Self {
        WordUnitSeq { units, context }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn flatten(&self) -> Vec<TokenId> {
        flatten(&self.units)
    }

    pub fn token_count(&self) -> usize {
        self.units.iter().map(WordUnit::len).sum()
    }
}

pub fn flatten(units: &[WordUnit]) -> Vec<TokenId> {
    units.iter().flat_map(|u| u.tokens.iter().copied()).collect()
}

/// Tokenizes `text`. Unknown words map to the vocabulary's unknown token when
/// `permissive` is set and the vocabulary has one; otherwise they are errors.
pub fn tokenize(text: &str, mode: Mode, vocab: &Vocab, permissive: bool) -> Result<WordUnitSeq> {
    let words = split_words(text);
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut units = Vec::with_capacity(words.len());
    for word in words {
        let pieces = match vocab.segment(word) {
            Some(p) => p,
            None => match (permissive, vocab.unk()) {
                (true, Some(unk)) => vec![unk],
                _ => return Err(Error::UnknownToken(word.to_owned())),
            },
        };
        match mode {
            Mode::WordAtomic => units.push(WordUnit { tokens: pieces }),
            Mode::Subtoken => units.extend(pieces.into_iter().map(WordUnit::single)),
        }
    }
    Ok(WordUnitSeq::new(units))
}

/// Joins tokens with single spaces, gluing `##` continuation pieces onto
/// the preceding token.
pub fn detokenize_tokens(tokens: &[TokenId], vocab: &Vocab) -> String {
    let mut out = String::new();
    for &t in tokens {
        let s = vocab.surface(t).unwrap_or(UNK);
        match s.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() && !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(s);
            }
        }
    }
    out
}

pub fn detokenize(seq: &WordUnitSeq, vocab: &Vocab) -> String {
    detokenize_tokens(&seq.flatten(), vocab)
}

pub fn unit_surface(unit: &WordUnit, vocab: &Vocab) -> String {
    detokenize_tokens(unit.tokens(), vocab)
}

/// A multiset of word units.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bag {
    counts: BTreeMap<WordUnit, usize>,
}

impl Bag {
    pub fn from_units<I: IntoIterator<Item = WordUnit>>(units: I) -> Self {
        let mut counts = BTreeMap::new();
        for u in units {
            *counts.entry(u).or_insert(0) += 1;
        }
        Bag { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, unit: &WordUnit) -> usize {
        self.counts.get(unit).copied().unwrap_or(0)
    }

    /// Distinct units with multiplicities, in canonical (token id) order.
    pub fn distinct(&self) -> impl Iterator<Item = (&WordUnit, usize)> {
        self.counts.iter().map(|(u, &c)| (u, c))
    }

    pub fn distinct_len(&self) -> usize {
        self.counts.len()
    }

    /// All units with repeats, in canonical order. Positions in this list are
    /// the "unit indices" used for lexicographic tie-breaking.
    pub fn expand(&self) -> Vec<WordUnit> {
        self.counts
            .iter()
            .flat_map(|(u, &c)| std::iter::repeat_n(u.clone(), c))
            .collect()
    }

    pub fn has_duplicates(&self) -> bool {
        self.counts.values().any(|&c| c > 1)
    }

    pub fn token_count(&self) -> usize {
        self.counts.iter().map(|(u, &c)| u.len() * c).sum()
    }

    pub fn union(&self, other: &Bag) -> Bag {
        let mut counts = self.counts.clone();
        for (u, &c) in &other.counts {
            *counts.entry(u.clone()).or_insert(0) += c;
        }
        Bag { counts }
    }
}

pub fn bag_of(seq: &WordUnitSeq) -> Bag {
    Bag::from_units(seq.units.iter().cloned())
}

/// Uniformly random permutation of the bag's units drawn from `rng`.
pub fn shuffle_bag<R: Rng + ?Sized>(bag: &Bag, rng: &mut R) -> Vec<WordUnit> {
    let mut units = bag.expand();
    units.shuffle(rng);
    units
}

/// Uniformly random order of `bag`, deterministic in `seed`.
pub fn random_order(bag: &Bag, seed: u64) -> WordUnitSeq {
    let mut rng = rng_from_seed(seed);
    WordUnitSeq::new(shuffle_bag(bag, &mut rng))
}
