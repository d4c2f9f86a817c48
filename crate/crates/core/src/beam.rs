//! Left-to-right beam search over orders of a bag, optionally guided by
//! unigram future costs of the units not yet placed.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::scorer::Scorer;
use crate::tokenize::{Bag, TokenId, WordUnit, WordUnitSeq};

#[derive(Debug, Clone)]
struct Hypothesis {
    /// Indices into the bag's distinct units.
    prefix: Vec<usize>,
    remaining: Vec<usize>,
    nll: f64,
    score: f64,
}

#[derive(Debug, Clone)]
pub struct BeamResult {
    pub order: WordUnitSeq,
    pub nll: f64,
    pub scorer_calls: usize,
}

/// Beam search with `width` hypotheses kept per step. Each step issues one
/// batch request for every expansion of the beam; the final step scores
/// complete sequences. With `future_costs`, hypotheses are ranked by NLL
/// plus the unigram NLL of their unused units; the returned order is the
/// finished hypothesis with the lowest plain NLL. Ties are broken by the
/// unit sequence.
pub fn beam_order<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    width: usize,
    future_costs: Option<&NGramModel>,
) -> Result<BeamResult> {
    if width == 0 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    if bag.is_empty() {
        return Err(Error::EmptyInput);
    }
    let units: Vec<&WordUnit> = bag.distinct().map(|(u, _)| u).collect();
    let counts: Vec<usize> = bag.distinct().map(|(_, c)| c).collect();
    let unit_cost: Vec<f64> = match future_costs {
        Some(lm) => units
            .iter()
            .map(|&u| lm.unigram_future_cost(&Bag::from_units([u.clone()])))
            .collect::<Result<_>>()?,
        None => vec![0.0; units.len()],
    };
    let n = bag.len();
    let end = scorer.end_token();
    let mut beam = vec![Hypothesis { prefix: Vec::new(), remaining: counts, nll: 0.0, score: 0.0 }];
    let mut calls = 0;

    for step in 0..n {
        let last = step + 1 == n;
        let mut expansions = Vec::new();
        for h in &beam {
            for (d, &c) in h.remaining.iter().enumerate() {
                if c > 0 {
                    let mut next = h.clone();
                    next.prefix.push(d);
                    next.remaining[d] -= 1;
                    expansions.push(next);
                }
            }
        }
        let candidates: Vec<Vec<TokenId>> = expansions
            .iter()
            .map(|h| {
                let mut tokens: Vec<TokenId> = h.prefix.iter().flat_map(|&d| units[d].tokens().iter().copied()).collect();
                if last {
                    tokens.extend(end);
                }
                tokens
            })
            .collect();
        let nlls = scorer.score_batch(context, &candidates)?;
        calls += 1;
        for (h, nll) in expansions.iter_mut().zip(nlls) {
            h.nll = nll;
            h.score = nll + h.remaining.iter().zip(&unit_cost).map(|(&c, &u)| c as f64 * u).sum::<f64>();
        }
        expansions.sort_by(|a, b| by_key(a.score, b.score, a, b));
        expansions.truncate(width);
        beam = expansions;
    }

    let best = beam
        .into_iter()
        .min_by(|a, b| by_key(a.nll, b.nll, a, b))
        .expect("beam is never empty");
    let order = best.prefix.iter().map(|&d| units[d].clone()).collect();
    Ok(BeamResult { order: WordUnitSeq::with_context(order, context.to_vec()), nll: best.nll, scorer_calls: calls })
}

fn by_key(x: f64, y: f64, a: &Hypothesis, b: &Hypothesis) -> Ordering {
    x.total_cmp(&y).then_with(|| a.prefix.cmp(&b.prefix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::Smoothing;
    use crate::scorer::sequence_nll;
    use crate::tokenize::{bag_of, tokenize, Mode, Vocab};

    fn setup() -> (NGramModel, Vocab) {
        let lines = ["the cat chased the mouse", "the mouse ran home"];
        let vocab = Vocab::from_corpus(&lines, false);
        (NGramModel::train_on_text(&lines, vocab.clone(), 2, Smoothing::AddK(0.1)).unwrap(), vocab)
    }

    #[test]
    fn width_zero_is_invalid() {
        let (lm, vocab) = setup();
        let bag = bag_of(&tokenize("the cat", Mode::WordAtomic, &vocab, false).unwrap());
        assert!(matches!(beam_order(&bag, &[], &lm, 0, None), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn reported_nll_is_exact() {
        let (lm, vocab) = setup();
        let bag = bag_of(&tokenize("mouse the chased cat the", Mode::WordAtomic, &vocab, false).unwrap());
        for future in [None, Some(&lm)] {
            let r = beam_order(&bag, &[], &lm, 3, future).unwrap();
            assert_eq!(bag_of(&r.order), bag);
            assert!((sequence_nll(&lm, &r.order).unwrap() - r.nll).abs() < 1e-9);
            assert_eq!(r.scorer_calls, 5);
        }
    }

    #[test]
    fn width_one_is_greedy() {
        let (lm, vocab) = setup();
        let seq = tokenize("mouse the cat", Mode::WordAtomic, &vocab, false).unwrap();
        let r = beam_order(&bag_of(&seq), &[], &lm, 1, None).unwrap();
        // Greedy: pick the likeliest next unit at each step.
        let mut remaining = seq.units.clone();
        remaining.sort();
        let mut prefix: Vec<TokenId> = Vec::new();
        let mut greedy = Vec::new();
        while !remaining.is_empty() {
            let last = remaining.len() == 1;
            let scores: Vec<f64> = remaining
                .iter()
                .map(|u| {
                    let mut t = prefix.clone();
                    t.push(u.first());
                    if last {
                        t.push(lm.eos());
                    }
                    lm.prefix_nll(&[], &t).unwrap()
                })
                .collect();
            let i = (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
            let u = remaining.remove(i);
            prefix.push(u.first());
            greedy.push(u);
        }
        assert_eq!(r.order.units, greedy);
    }
}
