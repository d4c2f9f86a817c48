//! Next-token prediction when the order of the last `n` context tokens is
//! unknown: integrate the order out (latent), commit to the most likely
//! order (top), or average over all orders uniformly (random).

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::distinct_orders;
use crate::par;
use crate::scorer::Scorer;
use crate::tokenize::{flatten, Bag, TokenId, WordUnit};

pub const MAX_BAG: usize = 8;
pub const CONTEXT_TOTAL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Latent,
    Top,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Latent, Scheme::Top, Scheme::Random];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Latent => "latent",
            Scheme::Top => "top",
            Scheme::Random => "random",
        }
    }
}

/// Normalized posterior over the distinct orders of a bag. Orders that
/// differ only by swapping identical units are merged; each merged class
/// has the same multiplicity, so the weights are unaffected.
#[derive(Debug, Clone)]
pub struct OrderPosterior {
    pub orders: Vec<Vec<WordUnit>>,
    pub log_weights: Vec<f64>,
}

impl OrderPosterior {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Most probable order; ties go to the lexicographically first.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.log_weights.iter().enumerate() {
            if w > self.log_weights[best] {
                best = i;
            }
        }
        best
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_bag(bag: &Bag) -> Result<()> {
    if bag.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bag.len() > MAX_BAG {
        return Err(Error::TooLarge { size: bag.len(), max: MAX_BAG });
    }
    Ok(())
}

/// p(π | C, B) ∝ p(C, π(B)), from the NLL of each order following `context`.
pub fn posterior_over_orders<S: Scorer + ?Sized>(scorer: &S, context: &[TokenId], bag: &Bag) -> Result<OrderPosterior> {
    check_bag(bag)?;
    let orders = distinct_orders(bag);
    let flat: Vec<Vec<TokenId>> = orders.iter().map(|o| flatten(o)).collect();
    let nlls = scorer.score_batch(context, &flat)?;
    let neg: Vec<f64> = nlls.iter().map(|n| -n).collect();
    let z = log_sum_exp(&neg);
    Ok(OrderPosterior { orders, log_weights: neg.iter().map(|l| l - z).collect() })
}

/// The posterior together with the next-token distribution under each order.
#[derive(Debug, Clone)]
pub struct LatentPredictions {
    pub posterior: OrderPosterior,
    /// `per_order[i][j]`: probability of `outcomes[j]` after order `i`.
    pub per_order: Vec<Vec<f64>>,
}

impl LatentPredictions {
    pub fn compute<S: Scorer + ?Sized>(
        scorer: &S,
        context: &[TokenId],
        bag: &Bag,
        outcomes: &[TokenId],
    ) -> Result<Self> {
        let posterior = posterior_over_orders(scorer, context, bag)?;
        let set: Vec<WordUnit> = outcomes.iter().map(|&t| WordUnit::single(t)).collect();
        let per_order = par::try_map(&posterior.orders, |order| {
            let mut ctx = context.to_vec();
            ctx.extend(flatten(order));
            let m = scorer.next_token_matrix(&ctx, &[], &set)?;
            Ok::<_, Error>(normalize(m.row(0).iter().map(|nll| (-nll).exp()).collect()))
        })?;
        Ok(LatentPredictions { posterior, per_order })
    }

    pub fn predict(&self, scheme: Scheme) -> Vec<f64> {
        match scheme {
            Scheme::Top => self.per_order[self.posterior.argmax()].clone(),
            Scheme::Latent => mix(&self.per_order, &self.posterior.weights()),
            Scheme::Random => {
                let m = self.per_order.len();
                mix(&self.per_order, &vec![1.0 / m as f64; m])
            }
        }
    }
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn mix(rows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (row, &w) in rows.iter().zip(weights) {
        for (o, &p) in out.iter_mut().zip(row) {
            *o += w * p;
        }
    }
    normalize(out)
}

pub fn predict_latent<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    bag: &Bag,
    outcomes: &[TokenId],
) -> Result<Vec<f64>> {
    Ok(LatentPredictions::compute(scorer, context, bag, outcomes)?.predict(Scheme::Latent))
}

pub fn predict_top<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    bag: &Bag,
    outcomes: &[TokenId],
) -> Result<Vec<f64>> {
    Ok(LatentPredictions::compute(scorer, context, bag, outcomes)?.predict(Scheme::Top))
}

pub fn predict_random<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    bag: &Bag,
    outcomes: &[TokenId],
) -> Result<Vec<f64>> {
    Ok(LatentPredictions::compute(scorer, context, bag, outcomes)?.predict(Scheme::Random))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRow {
    pub n: usize,
    pub scheme: Scheme,
    pub perplexity: f64,
    pub token_acc: f64,
    pub pi_acc: f64,
    pub positions: usize,
}

/// Evaluation positions: every index `t ≥ context_total` of each sequence.
/// At most `max_positions` are used, in corpus order.
pub fn eval_positions(corpus: &[Vec<TokenId>], context_total: usize, max_positions: usize) -> Vec<(usize, usize)> {
    corpus
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (context_total..seq.len()).map(move |t| (s, t)))
        .take(max_positions)
        .collect()
}

/// Perplexity, top-1 accuracy over `outcomes` and order accuracy of each
/// scheme, predicting token `t` from the `context_total` tokens before it
/// with the last `n` of them given as an unordered bag.
pub fn eval_latent_schemes<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &[Vec<TokenId>],
    n_values: &[usize],
    context_total: usize,
    max_positions: usize,
    outcomes: &[TokenId],
) -> Result<Vec<SchemeRow>> {
    let positions = eval_positions(corpus, context_total, max_positions);
    if positions.is_empty() {
        return Err(Error::InvalidInput(format!("no sequence is longer than {context_total} tokens")));
    }
    let mut rows = Vec::new();
    for &n in n_values {
        if n == 0 || n > context_total.min(MAX_BAG) {
            return Err(Error::InvalidConfig(format!("bag size {n} must lie in 1..={}", context_total.min(MAX_BAG))));
        }
        // Per position: (−ln p(target), hit) per scheme, and whether the top order is the true one.
        let per_position = par::try_map(&positions, |&(s, t)| {
            let seq = &corpus[s];
            let window = &seq[t - context_total..t];
            let (ctx, tail) = window.split_at(context_total - n);
            let units: Vec<WordUnit> = tail.iter().map(|&w| WordUnit::single(w)).collect();
            let bag = Bag::from_units(units.iter().cloned());
            let preds = LatentPredictions::compute(scorer, ctx, &bag, outcomes)?;
            let target = outcomes.iter().position(|&o| o == seq[t]).ok_or_else(|| {
                Error::InvalidInput(format!("target token {} is not a scorer outcome", seq[t].0))
            })?;
            let scored: Vec<(f64, bool)> = Scheme::ALL
                .iter()
                .map(|&scheme| {
                    let p = preds.predict(scheme);
                    let mut arg = 0;
                    for (i, &v) in p.iter().enumerate() {
                        if v > p[arg] {
                            arg = i;
                        }
                    }
                    (-p[target].ln(), arg == target)
                })
                .collect();
            let pi_hit = preds.posterior.orders[preds.posterior.argmax()] == units;
            Ok::<_, Error>((scored, pi_hit))
        })?;
        let count = per_position.len() as f64;
        let pi_acc = per_position.iter().filter(|(_, hit)| *hit).count() as f64 / count;
        for (i, &scheme) in Scheme::ALL.iter().enumerate() {
            let nll: f64 = per_position.iter().map(|(s, _)| s[i].0).sum();
            let hits = per_position.iter().filter(|(s, _)| s[i].1).count();
            rows.push(SchemeRow {
                n,
                scheme,
                perplexity: (nll / count).exp(),
                token_acc: hits as f64 / count,
                pi_acc,
                positions: per_position.len(),
            });
        }
    }
    Ok(rows)
}

/// Tab-separated table with a header line.
pub fn format_report(rows: &[SchemeRow]) -> String {
    let mut out = String::from("n\tscheme\tperplexity\ttoken-acc\tpi-acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.n,
            r.scheme.name(),
            r.perplexity,
            r.token_acc,
            r.pi_acc
        );
    }
    out
}
