//! Exact solvers for small instances.

use crate::error::{Error, Result};
use crate::par;
use crate::scorer::{score_complete, Scorer};
use crate::search::moves::next_permutation;
use crate::search::AuxGraph;
use crate::tokenize::{flatten, Bag, TokenId, WordUnit, WordUnitSeq};

pub const DEFAULT_N_MAX: usize = 8;
pub const HELD_KARP_MAX: usize = 16;
const CHUNK: usize = 1024;

/// Distinct orders of the bag in lexicographic order of units.
pub fn distinct_orders(bag: &Bag) -> Vec<Vec<WordUnit>> {
    let mut order = bag.expand();
    let mut out = vec![order.clone()];
    while next_permutation(&mut order) {
        out.push(order.clone());
    }
    out
}

/// Complete-sequence NLL of every distinct order, in [`distinct_orders`]
/// order, scored in bounded chunks.
pub fn score_all_orders<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    n_max: usize,
) -> Result<(Vec<Vec<WordUnit>>, Vec<f64>)> {
    if bag.len() > n_max {
        return Err(Error::TooLarge { size: bag.len(), max: n_max });
    }
    if bag.is_empty() {
        return Err(Error::EmptyInput);
    }
    let orders = distinct_orders(bag);
    let chunks: Vec<&[Vec<WordUnit>]> = orders.chunks(CHUNK).collect();
    let scored = par::try_map(&chunks, |chunk| {
        let flat: Vec<Vec<TokenId>> = chunk.iter().map(|o| flatten(o)).collect();
        score_complete(scorer, context, &flat)
    })?;
    Ok((orders, scored.into_iter().flatten().collect()))
}

/// The most likely order of `bag`; ties go to the lexicographically first.
pub fn exhaustive_argmax<S: Scorer + ?Sized>(
    bag: &Bag,
    context: &[TokenId],
    scorer: &S,
    n_max: usize,
) -> Result<(WordUnitSeq, f64)> {
    let (mut orders, nlls) = score_all_orders(bag, context, scorer, n_max)?;
    let mut best = 0;
    for (i, &v) in nlls.iter().enumerate() {
        if v < nlls[best] {
            best = i;
        }
    }
    let order = orders.swap_remove(best);
    Ok((WordUnitSeq::with_context(order, context.to_vec()), nlls[best]))
}

/// Minimum-weight start-to-end path through every node of `graph`, by
/// dynamic programming over subsets. Exact when the weights do not depend
/// on deeper history, as with a bigram scorer over single-token units.
pub fn held_karp_bigram(graph: &AuxGraph) -> Result<(Vec<usize>, f64)> {
    let n = graph.len();
    if n > HELD_KARP_MAX {
        return Err(Error::TooLarge { size: n, max: HELD_KARP_MAX });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let full = (1usize << n) - 1;
    let idx = |mask: usize, last: usize| mask * n + last;
    let mut cost = vec![f64::INFINITY; (full + 1) * n];
    let mut parent = vec![u8::MAX; (full + 1) * n];
    for j in 0..n {
        cost[idx(1 << j, j)] = graph.start_weight(j);
    }
    for mask in 1..=full {
        for last in 0..n {
            let c = cost[idx(mask, last)];
            if mask & (1 << last) == 0 || !c.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let m2 = mask | (1 << next);
                let cand = c + graph.weight(last, next);
                if cand < cost[idx(m2, next)] {
                    cost[idx(m2, next)] = cand;
                    parent[idx(m2, next)] = last as u8;
                }
            }
        }
    }
    let (mut last, mut best) = (0, f64::INFINITY);
    for j in 0..n {
        let total = cost[idx(full, j)] + graph.end_weight(j);
        if total < best {
            best = total;
            last = j;
        }
    }
    let mut tour = Vec::with_capacity(n);
    let mut mask = full;
    loop {
        tour.push(last);
        let p = parent[idx(mask, last)];
        mask &= !(1 << last);
        if p == u8::MAX {
            break;
        }
        last = p as usize;
    }
    tour.reverse();
    Ok((tour, best))
}
