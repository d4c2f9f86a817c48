//! Reconstruction metrics and experiment runners.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::scorer::{sequence_nll, Scorer};
use crate::search::{step::search_from_order, Algorithm, SearchConfig, SearchState};
use crate::tokenize::{bag_of, is_punctuation, shuffle_bag, Vocab, WordUnit, WordUnitSeq};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 in `[0, 100]` with brevity penalty and no smoothing;
/// one reference per hypothesis.
pub fn corpus_bleu<T: Hash + Eq>(references: &[Vec<T>], hypotheses: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("no hypotheses to score".into()));
    }
    if references.len() != hypotheses.len() {
        return Err(Error::InvalidInput(format!(
            "{} references for {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            matched[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..MAX_ORDER)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * bp * log_p.exp())
}

/// BLEU over the units of aligned sequence pairs.
pub fn bleu(references: &[WordUnitSeq], hypotheses: &[WordUnitSeq]) -> Result<f64> {
    let r: Vec<&[WordUnit]> = references.iter().map(|s| s.units.as_slice()).collect();
    let h: Vec<&[WordUnit]> = hypotheses.iter().map(|s| s.units.as_slice()).collect();
    let r: Vec<Vec<&WordUnit>> = r.iter().map(|s| s.iter().collect()).collect();
    let h: Vec<Vec<&WordUnit>> = h.iter().map(|s| s.iter().collect()).collect();
    corpus_bleu(&r, &h)
}

/// Per-token perplexity of `reconstruction` over that of `original`; below
/// 1 when the reconstruction is the likelier order.
pub fn perplexity_ratio<S: Scorer + ?Sized>(
    scorer: &S,
    original: &WordUnitSeq,
    reconstruction: &WordUnitSeq,
) -> Result<f64> {
    if bag_of(original) != bag_of(reconstruction) {
        return Err(Error::BagMismatch);
    }
    let tokens = original.token_count().max(1) as f64;
    let o = sequence_nll(scorer, original)?;
    let r = sequence_nll(scorer, reconstruction)?;
    Ok(((r - o) / tokens).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanMode {
    /// Whole lines that contain no punctuation, without context.
    PunctuationlessSentence,
    /// Runs of units between two consecutive punctuation marks, with the
    /// preceding text as ordered context.
    BetweenPunctuation,
}

impl std::str::FromStr for SpanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "punctuationless-sentence" | "sentence" => Ok(SpanMode::PunctuationlessSentence),
            "between-punctuation" | "between" => Ok(SpanMode::BetweenPunctuation),
            other => Err(Error::InvalidConfig(format!("unknown span mode {other:?}"))),
        }
    }
}

/// Inclusive `lo-hi` ranges separated by commas, e.g. `5-9,10-19`.
pub fn parse_buckets(spec: &str) -> Result<Vec<(usize, usize)>> {
    let mut buckets = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = part
            .split_once('-')
            .ok_or_else(|| Error::InvalidConfig(format!("bucket {part:?} is not of the form lo-hi")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad bucket bound {s:?}")))
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("empty bucket {part:?}")));
        }
        buckets.push((lo, hi));
    }
    if buckets.is_empty() {
        return Err(Error::InvalidConfig("no buckets given".into()));
    }
    let mut sorted = buckets.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[1].0 <= w[0].1) {
        return Err(Error::InvalidConfig(format!("buckets {spec:?} overlap")));
    }
    Ok(buckets)
}

pub const DEFAULT_BUCKETS: &str = "5-9,10-19,20-29,30-39,40-49";
pub const CONTEXT_WORDS: usize = 50;

#[derive(Debug, Clone)]
pub struct BucketOptions {
    pub buckets: Vec<(usize, usize)>,
    pub mode: SpanMode,
    pub context_words: usize,
    /// Spans per bucket, in corpus order.
    pub max_per_bucket: usize,
    pub algorithm: Algorithm,
}

impl Default for BucketOptions {
    fn default() -> Self {
        BucketOptions {
            buckets: parse_buckets(DEFAULT_BUCKETS).expect("default buckets parse"),
            mode: SpanMode::PunctuationlessSentence,
            context_words: CONTEXT_WORDS,
            max_per_bucket: usize::MAX,
            algorithm: Algorithm::Ibis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bucket: (usize, usize),
    pub n_examples: usize,
    pub bleu: f64,
    /// Mean over reconstructions.
    pub nll_per_token: f64,
    /// Mean over reconstructions.
    pub perplexity_ratio: f64,
}

fn is_punct_unit(unit: &WordUnit, vocab: &Vocab) -> bool {
    unit.len() == 1
        && vocab
            .surface(unit.first())
            .is_some_and(|s| s.chars().count() == 1 && s.chars().all(is_punctuation))
}

/// Spans to reorder, as sequences carrying their ordered context.
pub fn extract_spans(corpus: &[WordUnitSeq], vocab: &Vocab, mode: SpanMode, context_words: usize) -> Vec<WordUnitSeq> {
    let mut spans = Vec::new();
    for line in corpus {
        let units = &line.units;
        match mode {
            SpanMode::PunctuationlessSentence => {
                if !units.is_empty() && !units.iter().any(|u| is_punct_unit(u, vocab)) {
                    spans.push(WordUnitSeq::new(units.clone()));
                }
            }
            SpanMode::BetweenPunctuation => {
                let marks: Vec<usize> = (0..units.len()).filter(|&i| is_punct_unit(&units[i], vocab)).collect();
                for w in marks.windows(2) {
                    let (open, close) = (w[0], w[1]);
                    if close > open + 1 {
                        let start = (open + 1).saturating_sub(context_words + 1);
                        let mut context = line.context.clone();
                        context.extend(crate::tokenize::flatten(&units[start..=open]));
                        spans.push(WordUnitSeq::with_context(units[open + 1..close].to_vec(), context));
                    }
                }
            }
        }
    }
    spans
}

/// Reorders a seeded shuffle of every span in each length bucket and
/// reports BLEU against the originals and the mean perplexity ratio. Span
/// `i` of the whole run is searched with seed `config.seed + i`.
pub fn length_bucket_eval<S: Scorer + ?Sized>(
    corpus: &[WordUnitSeq],
    vocab: &Vocab,
    scorer: &S,
    config: &SearchConfig,
    options: &BucketOptions,
) -> Result<Vec<EvalReport>> {
    let spans = extract_spans(corpus, vocab, options.mode, options.context_words);
    let mut jobs: Vec<(usize, WordUnitSeq)> = Vec::new();
    for (b, &(lo, hi)) in options.buckets.iter().enumerate() {
        jobs.extend(
            spans
                .iter()
                .filter(|s| (lo..=hi).contains(&s.len()))
                .take(options.max_per_bucket)
                .map(|s| (b, s.clone())),
        );
    }
    let results: Vec<(SearchState, f64)> = par::try_map_range(jobs.len(), |i| {
        let original = &jobs[i].1;
        let cfg = SearchConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let state = reconstruct(original, scorer, &cfg, options.algorithm)?;
        let pr = perplexity_ratio(scorer, original, &state.best)?;
        Ok::<_, Error>((state, pr))
    })?;

    let mut reports = Vec::new();
    for (b, &bucket) in options.buckets.iter().enumerate() {
        let idx: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].0 == b).collect();
        if idx.is_empty() {
            log::warn!("bucket {}-{} has no spans; skipped", bucket.0, bucket.1);
            continue;
        }
        let refs: Vec<WordUnitSeq> = idx.iter().map(|&i| jobs[i].1.clone()).collect();
        let hyps: Vec<WordUnitSeq> = idx.iter().map(|&i| results[i].0.best.clone()).collect();
        let n = idx.len() as f64;
        reports.push(EvalReport {
            bucket,
            n_examples: idx.len(),
            bleu: bleu(&refs, &hyps)?,
            nll_per_token: idx.iter().map(|&i| results[i].0.nll_per_token()).sum::<f64>() / n,
            perplexity_ratio: idx.iter().map(|&i| results[i].1).sum::<f64>() / n,
        });
    }
    Ok(reports)
}

/// Searches from a seeded shuffle of `original` (keeping its context).
pub fn reconstruct<S: Scorer + ?Sized>(
    original: &WordUnitSeq,
    scorer: &S,
    config: &SearchConfig,
    algorithm: Algorithm,
) -> Result<SearchState> {
    let mut rng = crate::rng_from_seed(config.seed);
    let order = shuffle_bag(&bag_of(original), &mut rng);
    search_from_order(WordUnitSeq::with_context(order, original.context.clone()), scorer, config, algorithm, &mut rng)
}

pub fn format_reports(reports: &[EvalReport]) -> String {
    let mut out = String::from("bucket\tn\tbleu\tnll-per-token\tperplexity-ratio\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}-{}\t{}\t{:.4}\t{:.6}\t{:.6}",
            r.bucket.0, r.bucket.1, r.n_examples, r.bleu, r.nll_per_token, r.perplexity_ratio
        );
    }
    out
}

/// Mean NLL per token after each step across searches; a finished search
/// keeps contributing its final value.
pub fn search_curve(states: &[SearchState]) -> Vec<(usize, f64)> {
    let len = states.iter().map(|s| s.trace.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let sum: f64 = states
                .iter()
                .map(|s| s.trace.get(i).unwrap_or_else(|| s.trace.last().expect("traces are nonempty")).nll_per_token)
                .sum();
            (i, sum / states.len() as f64)
        })
        .collect()
}

pub fn format_curve(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("step\tnll-per-token\n");
    for (step, v) in curve {
        let _ = writeln!(out, "{step}\t{v:.6}");
    }
    out
}
