//! The auxiliary graph: next-unit NLLs along the current order.
//!
//! Node `p` is the unit currently at position `p`; node `n` stands for the
//! end of the sequence. Row `r` holds NLLs conditioned on the first `r`
//! units of the current order, so the edge from the unit at position `p` to
//! the unit at position `q` is `weight(p + 1, q)` and the edge from the
//! start is `weight(0, q)`. Under a bigram scorer every row depends only on
//! its predecessor and the tour weight of any order is its exact NLL.

use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::tokenize::{WordUnit, WordUnitSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct AuxGraph {
    n: usize,
    /// `(n + 1) x (n + 1)`, row-major.
    weights: Vec<f64>,
}

impl AuxGraph {
    /// One matrix query over the distinct units of `seq` (plus the end
    /// token when the scorer has one). Repeated units share a column.
    pub fn build<S: Scorer + ?Sized>(scorer: &S, seq: &WordUnitSeq) -> Result<Self> {
        let n = seq.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut set: Vec<WordUnit> = seq.units.clone();
        set.sort();
        set.dedup();
        let distinct = set.len();
        let end = scorer.end_token();
        if let Some(end) = end {
            if set.iter().any(|u| u.tokens().contains(&end)) {
                return Err(Error::InvalidInput("bag contains the end-of-sequence token".into()));
            }
            set.push(WordUnit::single(end));
        }
        let m = scorer.next_token_matrix(&seq.context, &seq.units, &set)?;
        if m.rows() != n + 1 || m.cols() != set.len() {
            return Err(Error::Protocol(format!(
                "expected a {}x{} matrix, got {}x{}",
                n + 1,
                set.len(),
                m.rows(),
                m.cols()
            )));
        }
        let cols: Vec<usize> = seq
            .units
            .iter()
            .map(|u| set[..distinct].binary_search(u).expect("unit is in the candidate set"))
            .collect();
        let mut weights = Vec::with_capacity((n + 1) * (n + 1));
        for r in 0..=n {
            let row = m.row(r);
            weights.extend(cols.iter().map(|&c| row[c]));
            weights.push(if end.is_some() { row[distinct] } else { 0.0 });
        }
        Ok(AuxGraph { n, weights })
    }

    /// A graph with explicit weights; `weights[r][q]` follows the layout
    /// described at module level and must be `(n + 1) x (n + 1)`.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let side = weights.len();
        if side < 2 || weights.iter().any(|r| r.len() != side) {
            return Err(Error::InvalidInput("graph weights must form a square matrix of side n + 1 ≥ 2".into()));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("graph weights must be finite and nonnegative".into()));
        }
        Ok(AuxGraph { n: side - 1, weights: flat })
    }

    /// Number of units.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// NLL of the unit at position `to` (or the end, when `to == n`) after
    /// the first `row` units of the current order.
    #[inline]
    pub fn edge_at(&self, row: usize, to: usize) -> f64 {
        self.weights[row * (self.n + 1) + to]
    }

    pub fn start_weight(&self, to: usize) -> f64 {
        self.edge_at(0, to)
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.edge_at(from + 1, to)
    }

    pub fn end_weight(&self, from: usize) -> f64 {
        self.edge_at(from + 1, self.n)
    }

    /// Weight of visiting the current positions in the given order.
    pub fn tour_weight(&self, order: &[usize]) -> f64 {
        let Some((&first, rest)) = order.split_first() else {
            return self.edge_at(0, self.n);
        };
        let mut w = self.start_weight(first);
        let mut prev = first;
        for &p in rest {
            w += self.weight(prev, p);
            prev = p;
        }
        w + self.end_weight(prev)
    }

    /// Tour weight of the current order itself.
    pub fn current_weight(&self) -> f64 {
        (0..=self.n).map(|p| self.edge_at(p, p)).sum()
    }
}
