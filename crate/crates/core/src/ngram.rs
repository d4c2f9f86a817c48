//! Count-based n-gram language models.
//!
//! Every training sentence is wrapped in start/end tokens. The start token
//! is only ever conditioned on; the outcome space is the rest of the
//! vocabulary, end token included. Contexts are truncated at the start of
//! the sentence rather than padded, so under a trigram model the first word
//! is conditioned on `<s>` alone.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::scorer::{validate_batch, validate_candidate_set, NllMatrix, Scorer};
use crate::tokenize::{flatten, Bag, TokenId, Vocab, WordUnit, WordUnitSeq};

pub const DEFAULT_KAPPA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    /// Add-κ smoothing of the full-order counts.
    AddK(f64),
    /// Jelinek-Mercer interpolation down to an add-κ unigram. `lambdas[j-1]`
    /// weights the maximum-likelihood estimate for contexts of length `j`.
    Interpolated { lambdas: Vec<f64>, kappa: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AddK(DEFAULT_KAPPA)
    }
}

impl Smoothing {
    fn kappa(&self) -> f64 {
        match self {
            Smoothing::AddK(k) => *k,
            Smoothing::Interpolated { kappa, .. } => *kappa,
        }
    }

    fn validate(&self, order: usize) -> Result<()> {
        let kappa = self.kappa();
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("smoothing constant must be positive, got {kappa}")));
        }
        if let Smoothing::Interpolated { lambdas, .. } = self {
            if lambdas.len() != order - 1 {
                return Err(Error::InvalidConfig(format!(
                    "interpolation needs {} weights for order {order}, got {}",
                    order - 1,
                    lambdas.len()
                )));
            }
            if lambdas.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
                return Err(Error::InvalidConfig("interpolation weights must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    smoothing: Smoothing,
    /// Counts for every context length from 0 to `order - 1`.
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl NGramModel {
    /// Trains on token sequences (without start/end tokens).
    pub fn train(corpus: &[Vec<TokenId>], vocab: Vocab, order: usize, smoothing: Smoothing) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut model = NGramModel::uniform(vocab, order, smoothing)?;
        let bos = model.vocab.bos();
        let eos = model.vocab.eos();
        for sentence in corpus {
            let mut history = Vec::with_capacity(sentence.len() + 2);
            history.push(bos);
            for &t in sentence {
                if t == bos || t.index() >= model.vocab.len() {
                    return Err(Error::InvalidInput(format!("token id {t} cannot be a training outcome")));
                }
                history.push(t);
            }
            history.push(eos);
            for i in 1..history.len() {
                let w = history[i];
                for ctx_len in 0..order.min(i + 1) {
                    let ctx = &history[i - ctx_len..i];
                    let entry = model.counts.entry(ctx.to_vec()).or_default();
                    entry.total += 1;
                    *entry.next.entry(w).or_insert(0) += 1;
                }
            }
        }
        Ok(model)
    }

    /// Tokenizes each line of text with `vocab` and trains on the result.
    pub fn train_on_text<S: AsRef<str>>(lines: &[S], vocab: Vocab, order: usize, smoothing: Smoothing) -> Result<Self> {
        let corpus = lines
            .iter()
            .filter(|l| !l.as_ref().trim().is_empty())
            .map(|l| {
                crate::tokenize::tokenize(l.as_ref(), crate::tokenize::Mode::Subtoken, &vocab, true).map(|s| s.flatten())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::train(&corpus, vocab, order, smoothing)
    }

    /// A model with no counts: every conditional is uniform.
    pub fn uniform(vocab: Vocab, order: usize, smoothing: Smoothing) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        smoothing.validate(order)?;
        Ok(NGramModel { order, vocab, smoothing, counts: HashMap::new() })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    /// Number of possible outcomes: the vocabulary minus the start token.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn outcome_ids(&self) -> Vec<TokenId> {
        let bos = self.vocab.bos();
        self.vocab.ids().filter(|&t| t != bos).collect()
    }

    pub fn bos(&self) -> TokenId {
        self.vocab.bos()
    }

    pub fn eos(&self) -> TokenId {
        self.vocab.eos()
    }

    /// Maps ids outside the vocabulary to the unknown token when the model
    /// has one.
    fn resolve(&self, t: TokenId) -> Result<TokenId> {
        if t.index() < self.vocab.len() {
            return Ok(t);
        }
        self.vocab.unk().ok_or_else(|| Error::UnknownToken(format!("id {t}")))
    }

    fn count(&self, ctx: &[TokenId], w: TokenId) -> (u64, u64) {
        match self.counts.get(ctx) {
            Some(c) => (c.next.get(&w).copied().unwrap_or(0), c.total),
            None => (0, 0),
        }
    }

    /// Conditional probability of `w` given the full history (which starts
    /// with the start token).
    pub fn prob(&self, history: &[TokenId], w: TokenId) -> Result<f64> {
        let w = self.resolve(w)?;
        if w == self.bos() {
            return Err(Error::InvalidInput("the start token is never predicted".into()));
        }
        let v = self.outcome_count() as f64;
        let ctx_len = (self.order - 1).min(history.len());
        let ctx_start = history.len() - ctx_len;
        let raw = &history[ctx_start..];
        let owned: Vec<TokenId>;
        let resolved: &[TokenId] = if raw.iter().all(|t| t.index() < self.vocab.len()) {
            raw
        } else {
            owned = raw.iter().map(|&t| self.resolve(t)).collect::<Result<_>>()?;
            &owned
        };
        Ok(match &self.smoothing {
            Smoothing::AddK(kappa) => {
                let (c, total) = self.count(resolved, w);
                (c as f64 + kappa) / (total as f64 + kappa * v)
            }
            Smoothing::Interpolated { lambdas, kappa } => {
                let (c, total) = self.count(&[], w);
                let mut p = (c as f64 + kappa) / (total as f64 + kappa * v);
                for j in 1..=ctx_len {
                    let (c, total) = self.count(&resolved[ctx_len - j..], w);
                    if total > 0 {
                        let l = lambdas[j - 1];
                        p = l * c as f64 / total as f64 + (1.0 - l) * p;
                    }
                }
                p
            }
        })
    }

    /// Unigram marginal: add-κ relative frequency of `w` as an outcome.
    pub fn unigram_prob(&self, w: TokenId) -> Result<f64> {
        let w = self.resolve(w)?;
        let (c, total) = self.count(&[], w);
        let kappa = self.smoothing.kappa();
        Ok((c as f64 + kappa) / (total as f64 + kappa * self.outcome_count() as f64))
    }

    /// −Σ log p(tᵢ | start, context, t₀…tᵢ₋₁) over `tokens`.
    pub fn prefix_nll(&self, context: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
        let mut history = Vec::with_capacity(1 + context.len() + tokens.len());
        history.push(self.bos());
        history.extend_from_slice(context);
        let start = history.len();
        history.extend_from_slice(tokens);
        let mut nll = 0.0;
        for i in start..history.len() {
            nll -= self.prob(&history[..i], history[i])?.ln();
        }
        Ok(nll)
    }

    /// NLL of a complete sequence, end token included.
    pub fn seq_nll(&self, seq: &WordUnitSeq) -> Result<f64> {
        let mut tokens = seq.flatten();
        tokens.push(self.eos());
        self.prefix_nll(&seq.context, &tokens)
    }

    /// Sum of unigram NLLs of every subtoken in `remaining`.
    pub fn unigram_future_cost(&self, remaining: &Bag) -> Result<f64> {
        let mut cost = 0.0;
        for (unit, count) in remaining.distinct() {
            let mut unit_cost = 0.0;
            for &t in unit.tokens() {
                unit_cost -= self.unigram_prob(t)?.ln();
            }
            cost += unit_cost * count as f64;
        }
        Ok(cost)
    }

    /// Writes the model as text: header lines, the vocabulary, then one
    /// `context<TAB>next<TAB>count` line per count in sorted order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "order\t{}", self.order)?;
        match &self.smoothing {
            Smoothing::AddK(k) => writeln!(out, "smoothing\tadd-k\t{k:?}")?,
            Smoothing::Interpolated { lambdas, kappa } => {
                let ls: Vec<String> = lambdas.iter().map(|l| format!("{l:?}")).collect();
                writeln!(out, "smoothing\tinterpolated\t{kappa:?}\t{}", ls.join(","))?
            }
        }
        writeln!(out, "vocab\t{}", self.vocab.len())?;
        self.vocab.write(&mut out)?;
        let mut sorted: BTreeMap<(&[TokenId], TokenId), u64> = BTreeMap::new();
        for (ctx, c) in &self.counts {
            for (&w, &n) in &c.next {
                sorted.insert((ctx.as_slice(), w), n);
            }
        }
        for ((ctx, w), n) in sorted {
            let ctx: Vec<String> = ctx.iter().map(|t| t.0.to_string()).collect();
            writeln!(out, "{}\t{}\t{}", ctx.join(" "), w.0, n)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| Error::Format(format!("model file ends before {what}")))?.map_err(Error::from)
        };
        let bad = |what: &str, line: &str| Error::Format(format!("bad {what} line: {line:?}"));

        let line = next_line("order")?;
        let order: usize = line
            .strip_prefix("order\t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("order", &line))?;

        let line = next_line("smoothing")?;
        let fields: Vec<&str> = line.split('\t').collect();
        let smoothing = match fields.as_slice() {
            ["smoothing", "add-k", k] => Smoothing::AddK(k.parse().map_err(|_| bad("smoothing", &line))?),
            ["smoothing", "interpolated", k, ls] => Smoothing::Interpolated {
                kappa: k.parse().map_err(|_| bad("smoothing", &line))?,
                lambdas: ls
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("smoothing", &line))?,
            },
            _ => return Err(bad("smoothing", &line)),
        };

        let line = next_line("vocab")?;
        let vocab_len: usize = line
            .strip_prefix("vocab\t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("vocab", &line))?;
        let mut surfaces = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            surfaces.push(next_line("vocabulary entries")?);
        }
        let vocab = Vocab::from_surfaces(&surfaces);
        if vocab.len() != vocab_len {
            return Err(Error::Format("vocabulary lacks reserved tokens or has duplicates".into()));
        }

        let mut model = NGramModel::uniform(vocab, order, smoothing)?;
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [ctx, w, n] = parts.as_slice() else {
                return Err(bad("count", &line));
            };
            let parse_id = |s: &str| -> Result<TokenId> {
                let id: u32 = s.parse().map_err(|_| bad("count", &line))?;
                if id as usize >= vocab_len {
                    return Err(bad("count", &line));
                }
                Ok(TokenId(id))
            };
            let ctx: Vec<TokenId> = ctx.split(' ').filter(|s| !s.is_empty()).map(parse_id).collect::<Result<_>>()?;
            if ctx.len() >= order {
                return Err(bad("count", &line));
            }
            let w = parse_id(w)?;
            let n: u64 = n.parse().map_err(|_| bad("count", &line))?;
            let entry = model.counts.entry(ctx).or_default();
            entry.total += n;
            entry.next.insert(w, n);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

impl Scorer for NGramModel {
    fn score_batch(&self, context: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        validate_batch(candidates)?;
        par::try_map(candidates, |c| self.prefix_nll(context, c))
    }

    fn next_token_matrix(
        &self,
        context: &[TokenId],
        sequence: &[WordUnit],
        candidate_set: &[WordUnit],
    ) -> Result<NllMatrix> {
        validate_candidate_set(candidate_set)?;
        let mut history = Vec::with_capacity(1 + context.len());
        history.push(self.bos());
        history.extend_from_slice(context);
        let base = history.len();
        history.extend(flatten(sequence));
        let mut row_ends = vec![base];
        for u in sequence {
            row_ends.push(row_ends.last().unwrap() + u.len());
        }
        let rows = par::try_map(&row_ends, |&end| {
            candidate_set
                .iter()
                .map(|c| self.prob(&history[..end], c.first()).map(|p| -p.ln()))
                .collect::<Result<Vec<f64>>>()
        })?;
        NllMatrix::from_rows(rows)
    }

    fn end_token(&self) -> Option<TokenId> {
        Some(self.eos())
    }
}
