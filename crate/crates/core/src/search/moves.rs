//! k-opt moves: cut a sequence at k positions and permute the k−1 spans
//! between the cuts.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::graph::AuxGraph;
use crate::tokenize::WordUnitSeq;
use crate::par;

pub const MIN_K: usize = 3;
pub const MAX_K: usize = 5;

/// Cut positions index gaps between units: position `c` cuts just before
/// unit `c`, so `0` is before the first unit and `n` after the last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KOptMove {
    pub cuts: Vec<usize>,
    /// New order of the spans: span `span_perm[t]` is placed t-th.
    pub span_perm: Vec<usize>,
}

impl KOptMove {
    pub fn new(cuts: Vec<usize>, span_perm: Vec<usize>) -> Self {
        KOptMove { cuts, span_perm }
    }

    pub fn k(&self) -> usize {
        self.cuts.len()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let k = self.cuts.len();
        if !(MIN_K..=MAX_K).contains(&k) {
            return Err(Error::MoveInvalid(format!("k = {k} is outside {MIN_K}..={MAX_K}")));
        }
        if self.cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MoveInvalid(format!("cuts {:?} are not strictly increasing", self.cuts)));
        }
        if self.cuts[k - 1] > len {
            return Err(Error::MoveInvalid(format!("cut {} beyond sequence of length {len}", self.cuts[k - 1])));
        }
        if !is_permutation(&self.span_perm, k - 1) {
            return Err(Error::MoveInvalid(format!("{:?} is not a permutation of {} spans", self.span_perm, k - 1)));
        }
        if is_identity(&self.span_perm) {
            return Err(Error::MoveInvalid("identity span permutation".into()));
        }
        Ok(())
    }

    /// Rearranges `items`; the move must be valid for `items.len()`.
    pub fn apply_to<T: Clone>(&self, items: &[T]) -> Vec<T> {
        let cuts = &self.cuts;
        let k = cuts.len();
        let mut out = Vec::with_capacity(items.len());
        out.extend_from_slice(&items[..cuts[0]]);
        for &s in &self.span_perm {
            out.extend_from_slice(&items[cuts[s]..cuts[s + 1]]);
        }
        out.extend_from_slice(&items[cuts[k - 1]..]);
        out
    }

    /// The move that restores the original order after this one.
    pub fn inverse(&self) -> KOptMove {
        let lens: Vec<usize> = self.cuts.windows(2).map(|w| w[1] - w[0]).collect();
        let mut cuts = vec![self.cuts[0]];
        for &s in &self.span_perm {
            cuts.push(cuts.last().unwrap() + lens[s]);
        }
        let mut inv = vec![0; self.span_perm.len()];
        for (t, &s) in self.span_perm.iter().enumerate() {
            inv[s] = t;
        }
        KOptMove { cuts, span_perm: inv }
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &s)| i == s)
}

pub fn apply_move(seq: &WordUnitSeq, mv: &KOptMove) -> Result<WordUnitSeq> {
    mv.validate(seq.len())?;
    Ok(WordUnitSeq::with_context(mv.apply_to(&seq.units), seq.context.clone()))
}

/// Every non-identity permutation of `spans` spans, in lexicographic order.
pub fn non_identity_perms(spans: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..spans).collect();
    let mut out = Vec::new();
    loop {
        if !is_identity(&perm) {
            out.push(perm.clone());
        }
        if !next_permutation(&mut perm) {
            return out;
        }
    }
}

/// Advances to the next lexicographic permutation (multiset-aware); returns
/// false after the last one.
pub fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Uniform draw from the (k−1)! − 1 non-identity span permutations.
pub fn sample_span_perm<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<usize> {
    let perms = non_identity_perms(k - 1);
    perms[rng.gen_range(0..perms.len())].clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutStrategy {
    /// A fixed budget of distinct positions drawn uniformly.
    Random,
    /// A run of 7 to 14 adjacent positions at a random offset.
    Consecutive,
}

/// Candidate-position budget of the random strategy.
pub fn random_cut_budget(k: usize) -> usize {
    if k >= 5 {
        20
    } else {
        40
    }
}

pub const CONSECUTIVE_MIN: usize = 7;
pub const CONSECUTIVE_MAX: usize = 14;

/// Positions a cut may use when `frozen_prefix` leading and `frozen_suffix`
/// trailing units of an `n`-unit sequence must stay in place.
pub fn allowed_cut_range(n: usize, frozen_prefix: usize, frozen_suffix: usize) -> Option<std::ops::RangeInclusive<usize>> {
    let hi = n.checked_sub(frozen_suffix)?;
    (frozen_prefix <= hi).then_some(frozen_prefix..=hi)
}

/// Sorted, distinct candidate cut positions for one step.
pub fn enumerate_cut_candidates<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    strategy: CutStrategy,
    frozen_prefix: usize,
    frozen_suffix: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let range = allowed_cut_range(n, frozen_prefix, frozen_suffix)
        .ok_or_else(|| Error::DegenerateInput(format!("frozen regions cover all {n} units")))?;
    let lo = *range.start();
    let available = range.end() - lo + 1;
    if available < k {
        return Err(Error::DegenerateInput(format!("{available} cut positions cannot hold a {k}-opt move")));
    }
    Ok(match strategy {
        CutStrategy::Random => {
            let budget = random_cut_budget(k).min(available);
            let mut picked: Vec<usize> = index::sample(rng, available, budget).into_iter().map(|i| lo + i).collect();
            picked.sort_unstable();
            picked
        }
        CutStrategy::Consecutive => {
            let run = rng.gen_range(CONSECUTIVE_MIN..=CONSECUTIVE_MAX).max(k).min(available);
            let offset = rng.gen_range(0..=available - run);
            (lo + offset..lo + offset + run).collect()
        }
    })
}

/// Cut positions of a candidate move, stored inline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cuts {
    pos: [u32; MAX_K],
    k: u8,
}

impl Cuts {
    pub fn as_slice(&self) -> &[u32] {
        &self.pos[..self.k as usize]
    }

    pub fn to_move(self, span_perm: &[usize]) -> KOptMove {
        KOptMove::new(self.as_slice().iter().map(|&c| c as usize).collect(), span_perm.to_vec())
    }
}

/// All k-subsets of `candidates` in lexicographic order.
pub fn cut_sets(candidates: &[usize], k: usize) -> Vec<Cuts> {
    let m = candidates.len();
    let mut out = Vec::new();
    if k == 0 || k > m || k > MAX_K {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut pos = [0u32; MAX_K];
        for (slot, &i) in idx.iter().enumerate() {
            pos[slot] = candidates[i] as u32;
        }
        out.push(Cuts { pos, k: k as u8 });
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedMove {
    pub cuts: Cuts,
    pub delta: f64,
}

/// Change in auxiliary-graph tour weight caused by cutting at `cuts` and
/// reordering the spans by `span_perm`. Only the k removed and k inserted
/// edges contribute.
pub fn move_delta(graph: &AuxGraph, cuts: &[u32], span_perm: &[usize]) -> f64 {
    let k = cuts.len();
    let c = |i: usize| cuts[i] as usize;
    let mut old = 0.0;
    for i in 0..k {
        old += graph.edge_at(c(i), c(i));
    }
    // The edge into position `to` leaves from row `from_row` (= position of
    // the predecessor + 1).
    let mut new = 0.0;
    let mut from_row = c(0);
    for &s in span_perm {
        new += graph.edge_at(from_row, c(s));
        from_row = c(s + 1);
    }
    new += graph.edge_at(from_row, c(k - 1));
    new - old
}

/// Ranks every k-subset of `cut_candidates` under one span permutation by
/// graph-predicted change in tour weight, best (most negative) first. Ties
/// keep lexicographic cut order.
pub fn rank_kopt_moves(graph: &AuxGraph, cut_candidates: &[usize], k: usize, span_perm: &[usize]) -> Vec<RankedMove> {
    let sets = cut_sets(cut_candidates, k);
    let deltas = par::map(&sets, |cuts| move_delta(graph, cuts.as_slice(), span_perm));
    let mut ranked: Vec<(usize, RankedMove)> = sets
        .into_iter()
        .zip(deltas)
        .map(|(cuts, delta)| RankedMove { cuts, delta })
        .enumerate()
        .collect();
    par::sort_by(&mut ranked, |a, b| a.1.delta.total_cmp(&b.1.delta).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(_, m)| m).collect()
}
