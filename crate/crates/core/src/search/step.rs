use rand::seq::index;
use rand::Rng;

use super::moves::{self, allowed_cut_range, sample_span_perm, CutStrategy, KOptMove};
use super::{AuxGraph, SearchConfig, SearchState, StepKind, ACCEPT_EPS};
use crate::error::{Error, Result};
use crate::oracle;
use crate::scorer::{score_complete, sequence_nll, Scorer};
use crate::tokenize::{flatten, shuffle_bag, Bag, TokenId, WordUnitSeq};
use crate::{rng_from_seed, SeedRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Proposals drawn from the graph-ranked top of the move list.
    Ibis,
    /// Proposals are uniformly random moves; no graph.
    RandomKopt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// Nothing to do; no step was counted.
    NoOp,
}

/// Order search starting from a seeded random order of `bag`.
pub fn ibis_search<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    config: &SearchConfig,
) -> Result<SearchState> {
    search_bag(bag, context, scorer, config, Algorithm::Ibis)
}

/// The ablation baseline: same loop, random proposals.
pub fn random_kopt_search<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    config: &SearchConfig,
) -> Result<SearchState> {
    search_bag(bag, context, scorer, config, Algorithm::RandomKopt)
}

fn search_bag<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    config: &SearchConfig,
    algorithm: Algorithm,
) -> Result<SearchState> {
    if bag.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.validate()?;
    if bag.len() <= 2 && !config.has_frozen() {
        let (best, nll) = oracle::exhaustive_argmax(bag, context, scorer, oracle::DEFAULT_N_MAX)?;
        return Ok(SearchState::new(best, nll, None));
    }
    let mut rng = rng_from_seed(config.seed);
    let order = shuffle_bag(bag, &mut rng);
    search_from_order(WordUnitSeq::with_context(order, context.to_vec()), scorer, config, algorithm, &mut rng)
}

/// Runs the search loop from a given order until patience or the step cap
/// is exhausted. Inputs too short for any configured move come back
/// unchanged.
pub fn search_from_order<S: Scorer + ?Sized>(
    seq: WordUnitSeq,
    scorer: &S,
    config: &SearchConfig,
    algorithm: Algorithm,
    rng: &mut SeedRng,
) -> Result<SearchState> {
    config.validate()?;
    let mut state = init_state(seq, scorer, algorithm)?;
    if feasible_ks(config, state.best.len()).is_empty() {
        return Ok(state);
    }
    while !state.finished(config) {
        kopt_step(&mut state, scorer, config, algorithm, rng)?;
    }
    Ok(state)
}

pub(crate) fn init_state<S: Scorer + ?Sized>(seq: WordUnitSeq, scorer: &S, algorithm: Algorithm) -> Result<SearchState> {
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let nll = sequence_nll(scorer, &seq)?;
    let graph = match algorithm {
        Algorithm::Ibis => Some(AuxGraph::build(scorer, &seq)?),
        Algorithm::RandomKopt => None,
    };
    Ok(SearchState::new(seq, nll, graph))
}

pub(crate) fn feasible_ks(config: &SearchConfig, n: usize) -> Vec<usize> {
    let available = allowed_cut_range(n, config.frozen_prefix, config.frozen_suffix).map_or(0, |r| r.count());
    config.k_set.iter().copied().filter(|&k| k <= available).collect()
}

pub fn ibis_step<S: Scorer + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    scorer: &S,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    kopt_step(state, scorer, config, Algorithm::Ibis, rng)
}

pub fn random_kopt_step<S: Scorer + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    scorer: &S,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    kopt_step(state, scorer, config, Algorithm::RandomKopt, rng)
}

pub(crate) fn kopt_step<S: Scorer + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    scorer: &S,
    config: &SearchConfig,
    algorithm: Algorithm,
    rng: &mut R,
) -> Result<StepOutcome> {
    let n = state.best.len();
    let ks = feasible_ks(config, n);
    if ks.is_empty() {
        return Err(Error::DegenerateInput(format!("{n} units leave no room for a k-opt move")));
    }
    let k = ks[rng.gen_range(0..ks.len())];
    let perm = sample_span_perm(k, rng);
    let strategy = if state.kopt_steps.is_multiple_of(2) { CutStrategy::Random } else { CutStrategy::Consecutive };
    state.kopt_steps += 1;

    let check_noop = has_duplicates(&state.best);
    let is_noop = |mv: &KOptMove| check_noop && mv.apply_to(&state.best.units) == state.best.units;

    let proposals: Vec<(KOptMove, Option<f64>)> = match algorithm {
        Algorithm::Ibis => {
            if state.graph.is_none() {
                state.graph = Some(AuxGraph::build(scorer, &state.best)?);
                state.matrix_calls += 1;
            }
            let graph = state.graph.as_ref().expect("graph was just built");
            let candidates =
                moves::enumerate_cut_candidates(n, k, strategy, config.frozen_prefix, config.frozen_suffix, rng)?;
            let ranked = moves::rank_kopt_moves(graph, &candidates, k, &perm);
            let mut pool = Vec::with_capacity(config.pool_size.min(ranked.len()));
            for r in ranked {
                if pool.len() == config.pool_size {
                    break;
                }
                let mv = r.cuts.to_move(&perm);
                if !is_noop(&mv) {
                    pool.push((mv, Some(r.delta)));
                }
            }
            let take = config.batch.min(pool.len());
            let mut picked = index::sample(rng, pool.len(), take).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| pool[i].clone()).collect()
        }
        Algorithm::RandomKopt => {
            let range = allowed_cut_range(n, config.frozen_prefix, config.frozen_suffix).expect("k is feasible");
            let lo = *range.start();
            let available = range.count();
            let mut out = Vec::with_capacity(config.batch);
            let mut attempts = 0;
            while out.len() < config.batch && attempts < 10 * config.batch {
                attempts += 1;
                let mut cuts: Vec<usize> = index::sample(rng, available, k).into_iter().map(|i| lo + i).collect();
                cuts.sort_unstable();
                let mv = KOptMove::new(cuts, perm.clone());
                if !is_noop(&mv) {
                    out.push((mv, None));
                }
            }
            out
        }
    };

    state.steps += 1;
    if proposals.is_empty() {
        state.steps_since_improvement += 1;
        state.record(false, k, None, StepKind::KOpt);
        return Ok(StepOutcome::Rejected);
    }

    let orders: Vec<_> = proposals.iter().map(|(mv, _)| mv.apply_to(&state.best.units)).collect();
    let flat: Vec<Vec<TokenId>> = orders.iter().map(|o| flatten(o)).collect();
    let nlls = score_complete(scorer, &state.best.context, &flat)?;
    state.scorer_calls += 1;
    let (best_i, best_nll) = argmin(&nlls);

    if best_nll < state.best_nll - ACCEPT_EPS {
        let (mv, delta) = &proposals[best_i];
        let replaceable = mv.apply_to(&state.replaceable);
        let seq = WordUnitSeq::with_context(orders[best_i].clone(), state.best.context.clone());
        state.accept(seq, best_nll, replaceable);
        if algorithm == Algorithm::Ibis {
            state.graph = Some(AuxGraph::build(scorer, &state.best)?);
            state.matrix_calls += 1;
        }
        state.record(true, k, *delta, StepKind::KOpt);
        Ok(StepOutcome::Accepted)
    } else {
        state.steps_since_improvement += 1;
        state.record(false, k, None, StepKind::KOpt);
        Ok(StepOutcome::Rejected)
    }
}

/// Index and value of the first minimum.
pub(crate) fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn has_duplicates(seq: &WordUnitSeq) -> bool {
    let mut units: Vec<_> = seq.units.iter().collect();
    units.sort();
    units.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{NGramModel, Smoothing};
    use crate::tokenize::{bag_of, tokenize, Mode, Vocab, WordUnit};

    fn model() -> (NGramModel, Vocab) {
        let lines = ["the cat chased the mouse", "the mouse ran home", "a dog chased the cat"];
        let vocab = Vocab::from_corpus(&lines, false);
        let lm = NGramModel::train_on_text(&lines, vocab.clone(), 2, Smoothing::AddK(0.01)).unwrap();
        (lm, vocab)
    }

    #[test]
    fn singleton_needs_no_steps() {
        let (lm, vocab) = model();
        let bag = Bag::from_units([WordUnit::single(vocab.get("cat").unwrap())]);
        let s = ibis_search(&bag, &[], &lm, &SearchConfig::default()).unwrap();
        assert_eq!(s.steps, 0);
        assert_eq!(s.best.len(), 1);
        assert_eq!(s.trace.len(), 1);
    }

    #[test]
    fn search_is_monotone_and_conserves_bag() {
        let (lm, vocab) = model();
        let seq = tokenize("mouse the cat the chased", Mode::WordAtomic, &vocab, false).unwrap();
        let bag = bag_of(&seq);
        for algorithm in [Algorithm::Ibis, Algorithm::RandomKopt] {
            let config = SearchConfig { patience: 8, seed: 5, ..Default::default() };
            let mut rng = rng_from_seed(5);
            let s = search_from_order(seq.clone(), &lm, &config, algorithm, &mut rng).unwrap();
            assert_eq!(bag_of(&s.best), bag);
            assert!(s.trace.windows(2).all(|w| w[1].nll <= w[0].nll));
            assert!((sequence_nll(&lm, &s.best).unwrap() - s.best_nll).abs() < 1e-9);
            assert_eq!(s.steps_since_improvement, 8);
        }
    }

    #[test]
    fn patience_one_stops_after_one_failure() {
        let (lm, vocab) = model();
        let seq = tokenize("the cat chased the mouse", Mode::WordAtomic, &vocab, false).unwrap();
        let config = SearchConfig { patience: 1, ..Default::default() };
        let s = search_from_order(seq, &lm, &config, Algorithm::RandomKopt, &mut rng_from_seed(0)).unwrap();
        let rejections = s.trace.iter().filter(|r| r.kind == StepKind::KOpt && !r.accepted).count();
        assert_eq!(rejections, 1);
    }

    #[test]
    fn frozen_units_stay_put() {
        let (lm, vocab) = model();
        let seq = tokenize("mouse the home cat ran the chased a dog", Mode::WordAtomic, &vocab, false).unwrap();
        let config = SearchConfig { frozen_prefix: 2, frozen_suffix: 3, patience: 20, ..Default::default() };
        let s = search_from_order(seq.clone(), &lm, &config, Algorithm::Ibis, &mut rng_from_seed(1)).unwrap();
        assert_eq!(s.best.units[..2], seq.units[..2]);
        assert_eq!(s.best.units[6..], seq.units[6..]);
    }

    #[test]
    fn short_inputs_come_back_unchanged() {
        let (lm, vocab) = model();
        let seq = tokenize("cat the", Mode::WordAtomic, &vocab, false).unwrap();
        let config = SearchConfig { frozen_prefix: 1, ..Default::default() };
        let s = search_from_order(seq.clone(), &lm, &config, Algorithm::Ibis, &mut rng_from_seed(1)).unwrap();
        assert_eq!(s.best, seq);
        assert_eq!(s.steps, 0);
    }

    #[test]
    fn bad_config_is_rejected() {
        let (lm, vocab) = model();
        let bag = bag_of(&tokenize("the cat ran", Mode::WordAtomic, &vocab, false).unwrap());
        for config in [
            SearchConfig { batch: 600, ..Default::default() },
            SearchConfig { patience: 0, ..Default::default() },
            SearchConfig { k_set: vec![2], ..Default::default() },
        ] {
            assert!(matches!(ibis_search(&bag, &[], &lm, &config), Err(Error::InvalidConfig(_))));
        }
    }
}
